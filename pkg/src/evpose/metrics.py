"""Pose-error metrics, occlusion augmentation, and evaluation reports.

MPJPE averages per-joint Euclidean error in millimeters. PCK is the
fraction of joints whose error is strictly below a threshold (150 mm by
default); the strict inequality follows the sign-based counting rule, so
a zero threshold scores 0 even for perfect joints. AUC averages PCK over
30 thresholds evenly spaced from 0 to 500 mm inclusive, which puts a
perfect prediction at exactly 29/30.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyInput, JointCountMismatch
from .gating import MaskPredictorBackend, schedule_masks
from .pose_math import Pose3D, read_pose_csv
from .representations import ToreVolume

PCK_THRESHOLD_MM = 150.0
AUC_MAX_MM = 500.0
AUC_STEPS = 30
NUM_JOINTS = 13

CONDITION_AXES = {
    "lighting": ("high", "medium", "low"),
    "background": ("static", "dynamic"),
    "view": ("front", "back", "left", "right"),
}


def _joints(pose) -> np.ndarray:
    a = pose.joints if isinstance(pose, Pose3D) else np.asarray(pose, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise JointCountMismatch(f"pose must be (J, 3), got {a.shape}")
    return a


def joint_errors(pred, gt) -> np.ndarray:
    p, g = _joints(pred), _joints(gt)
    if p.shape != g.shape:
        raise JointCountMismatch(f"joint counts differ: {p.shape[0]} vs {g.shape[0]}")
    return np.linalg.norm(p - g, axis=1)


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in millimeters."""
    return float(joint_errors(pred, gt).mean())


def pck(pred, gt, alpha_mm: float = PCK_THRESHOLD_MM) -> float:
    """Fraction of joints with error strictly below alpha_mm."""
    if alpha_mm < 0:
        raise ConfigError(f"alpha_mm must be non-negative, got {alpha_mm}")
    err = joint_errors(pred, gt)
    return float(np.mean(err < alpha_mm))


def auc_thresholds() -> np.ndarray:
    return np.linspace(0.0, AUC_MAX_MM, AUC_STEPS)


def auc(pred, gt) -> float:
    """Mean PCK over the standard 30-threshold sweep."""
    err = joint_errors(pred, gt)
    return float(np.mean([np.mean(err < a) for a in auc_thresholds()]))


# -- occlusion augmentation -------------------------------------------------------


def occlude(vol: ToreVolume, prob: float, rng,
            max_height: int = 80, max_width: int = 80) -> ToreVolume:
    """With probability prob, zero one random axis-aligned rectangle
    across all channels.

    Side lengths are uniform in [1, max] (clipped to the frame), the
    location uniform over in-bounds placements. Draw order is fixed
    (occlude?, height, width, top, left) so a seeded run replays exactly.
    """
    if not 0.0 <= prob <= 1.0:
        raise ConfigError(f"prob must lie in [0, 1], got {prob}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if gen.random() >= prob:
        return vol
    h_img, w_img = vol.geometry.height, vol.geometry.width
    h = int(gen.integers(1, min(max_height, h_img) + 1))
    w = int(gen.integers(1, min(max_width, w_img) + 1))
    top = int(gen.integers(0, h_img - h + 1))
    left = int(gen.integers(0, w_img - w + 1))
    data = vol.data.copy()
    data[:, top : top + h, left : left + w] = 0.0
    return ToreVolume(geometry=vol.geometry, data=data,
                      query_time_us=vol.query_time_us)


# -- grouped evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    frame_id: int
    pred: Pose3D
    gt: Pose3D
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        for pose, which in ((self.pred, "pred"), (self.gt, "gt")):
            if pose.num_joints != NUM_JOINTS:
                raise JointCountMismatch(
                    f"{which} pose has {pose.num_joints} joints, expected {NUM_JOINTS}")
        for axis, allowed in CONDITION_AXES.items():
            v = self.tags.get(axis)
            if v is not None and v not in allowed:
                raise DataError(f"tag {axis}={v!r} not in {allowed}")


@dataclass(frozen=True)
class GroupMetrics:
    count: int
    mpjpe: float
    pck: float
    auc: float


@dataclass(frozen=True)
class EvalReport:
    overall: GroupMetrics
    groups: dict  # group label -> GroupMetrics
    per_joint_mpjpe: np.ndarray = field(repr=False)
    group_by: tuple = ()


def _metrics_over(records: Sequence[EvalRecord]) -> GroupMetrics:
    return GroupMetrics(
        count=len(records),
        mpjpe=float(np.mean([mpjpe(r.pred, r.gt) for r in records])),
        pck=float(np.mean([pck(r.pred, r.gt) for r in records])),
        auc=float(np.mean([auc(r.pred, r.gt) for r in records])),
    )


def evaluate(records: Sequence[EvalRecord], group_by: Sequence[str] = ()) -> EvalReport:
    """Overall, per-group and per-joint metrics over a record set.

    group_by names condition axes; records grouped by their tag tuple.
    With no axes, the report holds a single overall row.
    """
    records = list(records)
    if not records:
        raise EmptyInput("no evaluation records")
    group_by = tuple(group_by)
    groups: dict = {}
    if group_by:
        buckets: dict = {}
        for r in records:
            key = tuple(r.tags.get(a, "?") for a in group_by)
            buckets.setdefault(key, []).append(r)
        for key in sorted(buckets):
            groups["/".join(key)] = _metrics_over(buckets[key])
    per_joint = np.mean([joint_errors(r.pred, r.gt) for r in records], axis=0)
    return EvalReport(overall=_metrics_over(records), groups=groups,
                      per_joint_mpjpe=per_joint, group_by=group_by)


def report_to_csv(report: EvalReport, path, joint_names: Sequence[str] | None = None) -> None:
    names = list(joint_names) if joint_names else [
        f"j{i:02d}" for i in range(len(report.per_joint_mpjpe))]
    with open(path, "w") as f:
        f.write("scope,key,count,mpjpe_mm,pck,auc\n")
        o = report.overall
        f.write(f"overall,,{o.count},{o.mpjpe!r},{o.pck!r},{o.auc!r}\n")
        for key, g in report.groups.items():
            f.write(f"group,{key},{g.count},{g.mpjpe!r},{g.pck!r},{g.auc!r}\n")
        for name, err in zip(names, report.per_joint_mpjpe):
            f.write(f"joint,{name},{o.count},{float(err)!r},,\n")


def format_report(report: EvalReport, joint_names: Sequence[str] | None = None) -> str:
    names = list(joint_names) if joint_names else [
        f"j{i:02d}" for i in range(len(report.per_joint_mpjpe))]
    lines = []
    o = report.overall
    lines.append(f"{'scope':24s} {'n':>6s} {'MPJPE(mm)':>12s} {'PCK':>8s} {'AUC':>8s}")
    lines.append(f"{'overall':24s} {o.count:6d} {o.mpjpe:12.3f} {o.pck:8.4f} {o.auc:8.4f}")
    for key, g in report.groups.items():
        lines.append(f"{key:24s} {g.count:6d} {g.mpjpe:12.3f} {g.pck:8.4f} {g.auc:8.4f}")
    lines.append("")
    lines.append("per-joint MPJPE(mm):")
    for name, err in zip(names, report.per_joint_mpjpe):
        lines.append(f"  {name:14s} {float(err):10.3f}")
    return "\n".join(lines)


def load_eval_manifest(path) -> list[EvalRecord]:
    """Manifest JSON: {"records": [{"frame": i, "pred": path, "gt": path,
    "lighting"/"background"/"view": tag}, ...]}; pose paths are relative
    to the manifest."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if "records" not in doc or not isinstance(doc["records"], list):
        raise DataError(f"{path}: manifest lacks a records list")
    out = []
    for i, entry in enumerate(doc["records"]):
        tags = {a: entry[a] for a in CONDITION_AXES if a in entry}
        _, pred = read_pose_csv(path.parent / entry["pred"])
        _, gt = read_pose_csv(path.parent / entry["gt"])
        out.append(EvalRecord(frame_id=int(entry.get("frame", i)),
                              pred=pred, gt=gt, tags=tags))
    return out


# -- early-exit threshold sweep -------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    beta: float
    backend_calls: int
    elapsed_s: float
    mask_mae: float | None = None


def threshold_sweep(frames: Sequence[ToreVolume], backend: MaskPredictorBackend,
                    betas: Sequence[float],
                    gt_masks: np.ndarray | None = None) -> list[SweepPoint]:
    """Run the mask schedule once per beta over the same frames.

    Reports backend call counts, wall time, and (when ground-truth masks
    are supplied) the mean absolute error of the masks actually used.
    MAE stands in for pose accuracy here since no trained pose backend
    is part of the toolkit.
    """
    frames = list(frames)
    betas = list(betas)
    if not frames or not betas:
        raise EmptyInput("need at least one frame and one beta")
    if gt_masks is not None and len(gt_masks) != len(frames):
        raise DataError(f"{len(gt_masks)} ground-truth masks for {len(frames)} frames")
    out = []
    for beta in betas:
        start = time.perf_counter()
        result = schedule_masks(frames, backend, beta)
        elapsed = time.perf_counter() - start
        mae = None
        if gt_masks is not None:
            diffs = [np.abs(result.masks[i].astype(np.float64)
                            - np.asarray(gt_masks[i]).astype(np.float64)).mean()
                     for i in range(len(frames))]
            mae = float(np.mean(diffs))
        out.append(SweepPoint(beta=float(beta), backend_calls=result.backend_calls,
                              elapsed_s=elapsed, mask_mae=mae))
    return out
