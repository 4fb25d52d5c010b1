"""Marginal-heatmap triangulation and training losses.

A joint's 3D position is represented by three marginal heatmaps, one per
coordinate plane. Grids are indexed [row, col] and each plane name gives
the column axis first: xy holds col=x/row=y, xz holds col=x/row=z, zy
holds col=z/row=y. Cell centers sit at (2k + 1) / R - 1 so a symmetric
grid soft-argmaxes to exactly 0.

Triangulation takes x and y from the xy plane and averages the two z
readings (rows of xz, columns of zy). Losses: a per-block sum of L2
joint error plus Jensen-Shannon divergences per plane, and a mask loss
of BCE over the whole mask series, BCE over the current mask again, and
an MSE between predicted quality scores and their targets. Every loss
here has an analytic gradient that gradient_check verifies against
central finite differences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .camera import CameraModel, denormalize_camera_points
from .errors import (
    DataError,
    InvalidDistribution,
    LengthMismatch,
    NonFinite,
    ProbabilityOutOfRange,
    ZeroMass,
)

BCE_CLIP = 1e-7
DISTRIBUTION_ATOL = 1e-6


def cell_centers(resolution: int) -> np.ndarray:
    """Normalized coordinates of grid cell centers, in [-1, 1]."""
    return (2.0 * np.arange(resolution) + 1.0) / resolution - 1.0


@dataclass(frozen=True)
class HeatmapTriplet:
    """Marginal heatmaps of one joint on the xy, xz and zy planes.

    Each plane is a square probability grid: non-negative, summing to 1
    within 1e-6. Enforced at construction, so downstream consumers can
    trust any triplet they receive.
    """

    xy: np.ndarray = field(repr=False)
    xz: np.ndarray = field(repr=False)
    zy: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = np.shape(self.xy)
        for name in ("xy", "xz", "zy"):
            g = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape != shape:
                raise InvalidDistribution(f"{name} plane must be square, got {g.shape}")
            if np.any(g < 0):
                raise InvalidDistribution(f"{name} plane has negative mass")
            if abs(float(g.sum()) - 1.0) > DISTRIBUTION_ATOL:
                raise InvalidDistribution(
                    f"{name} plane sums to {float(g.sum()):.9f}, expected 1")
            g.setflags(write=False)
            object.__setattr__(self, name, g)

    @property
    def resolution(self) -> int:
        return self.xy.shape[0]

    def planes(self):
        return (("xy", self.xy), ("xz", self.xz), ("zy", self.zy))


@dataclass(frozen=True)
class Pose3D:
    """Joint coordinates, either normalized cube units or millimeters."""

    joints: np.ndarray = field(repr=False)
    frame: str = "camera"  # "normalized" | "camera" | "world"

    def __post_init__(self):
        j = np.ascontiguousarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise DataError(f"joints must be (J, 3), got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise NonFinite("joint coordinates must be finite")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]


def soft_argmax(h: np.ndarray) -> np.ndarray:
    """Expected (col, row) cell-center coordinates under the grid.

    The grid is normalized internally, so any non-negative grid with
    positive mass works; the result lives in (-1, 1)^2.
    """
    g = np.asarray(h, dtype=np.float64)
    if np.any(g < 0):
        raise InvalidDistribution("grid has negative entries")
    total = float(g.sum())
    if total <= 0:
        raise ZeroMass("grid has no mass")
    c = cell_centers(g.shape[1])
    r = cell_centers(g.shape[0])
    a = float(g.sum(axis=0) @ c) / total
    b = float(g.sum(axis=1) @ r) / total
    return np.array([a, b])


def soft_argmax_grad(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Value and Jacobian (2, R, R) of soft_argmax w.r.t. the grid."""
    g = np.asarray(h, dtype=np.float64)
    ab = soft_argmax(g)
    total = float(g.sum())
    c = cell_centers(g.shape[1])
    r = cell_centers(g.shape[0])
    jac = np.empty((2,) + g.shape)
    jac[0] = (c[None, :] - ab[0]) / total
    jac[1] = (r[:, None] - ab[1]) / total
    return ab, jac


def fuse_planes(t: HeatmapTriplet) -> np.ndarray:
    """Triangulate (x, y, z): x and y from the xy plane, z averaged from
    the xz rows and zy columns."""
    x, y = soft_argmax(t.xy)
    _, z_from_xz = soft_argmax(t.xz)
    z_from_zy, _ = soft_argmax(t.zy)
    return np.array([x, y, (z_from_xz + z_from_zy) / 2.0])


# -- divergences and elementwise losses -----------------------------------------


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence, natural log, 0*log(0) = 0.

    Defined for any pair of same-shaped non-negative arrays; for
    probability distributions the value lies in [0, ln 2].
    """
    a = np.asarray(p, dtype=np.float64).ravel()
    b = np.asarray(q, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidDistribution("negative mass")
    m = 0.5 * (a + b)
    term_a = np.where(a > 0, a * (np.log(np.where(a > 0, a, 1.0)) -
                                  np.log(np.where(m > 0, m, 1.0))), 0.0)
    term_b = np.where(b > 0, b * (np.log(np.where(b > 0, b, 1.0)) -
                                  np.log(np.where(m > 0, m, 1.0))), 0.0)
    return float(0.5 * (term_a.sum() + term_b.sum()))


def jsd_grad(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of jsd w.r.t. both arguments; requires strictly positive
    entries (the divergence is not differentiable at zeros)."""
    a = np.asarray(p, dtype=np.float64)
    b = np.asarray(q, dtype=np.float64)
    if np.any(a <= 0) or np.any(b <= 0):
        raise InvalidDistribution("gradient needs strictly positive entries")
    m = 0.5 * (a + b)
    return 0.5 * np.log(a / m), 0.5 * np.log(b / m)


def bce(target: np.ndarray, prob: np.ndarray) -> float:
    """Mean binary cross entropy; probabilities are clipped away from
    {0, 1} by 1e-7 before the logs."""
    y = np.asarray(target, dtype=np.float64)
    p = np.asarray(prob, dtype=np.float64)
    if y.shape != p.shape:
        raise LengthMismatch(f"shape mismatch {y.shape} vs {p.shape}")
    if np.any(p < 0) or np.any(p > 1):
        raise ProbabilityOutOfRange("probabilities must lie in [0, 1]")
    pc = np.clip(p, BCE_CLIP, 1.0 - BCE_CLIP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def bce_grad(target: np.ndarray, prob: np.ndarray) -> np.ndarray:
    """Gradient of bce w.r.t. prob, exact where the clip is inactive."""
    y = np.asarray(target, dtype=np.float64)
    p = np.clip(np.asarray(prob, dtype=np.float64), BCE_CLIP, 1.0 - BCE_CLIP)
    return (-(y / p) + (1.0 - y) / (1.0 - p)) / p.size


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    return 2.0 * (a - b) / a.size


# -- composite losses ------------------------------------------------------------


@dataclass(frozen=True)
class BlockPrediction:
    """One refinement block's output: a pose and per-joint heatmaps."""

    pose: np.ndarray = field(repr=False)             # (J, 3) normalized
    heatmaps: Sequence[HeatmapTriplet] = field(repr=False)


def hpe_loss(blocks: Sequence[BlockPrediction], gt_pose: np.ndarray,
             gt_heatmaps: Sequence[HeatmapTriplet]) -> float:
    """Sum over blocks of L2 joint error plus the three per-plane JSDs.

    The L2 term sums Euclidean distances over joints within each block.
    Zero exactly when every block reproduces the ground truth. Heatmap
    validity (InvalidDistribution) is enforced by the HeatmapTriplet type.
    """
    gt = np.asarray(gt_pose, dtype=np.float64)
    n_joints = gt.shape[0]
    if len(gt_heatmaps) != n_joints:
        raise LengthMismatch(
            f"{len(gt_heatmaps)} ground-truth triplets for {n_joints} joints")
    total = 0.0
    for blk in blocks:
        pose = np.asarray(blk.pose, dtype=np.float64)
        if pose.shape != gt.shape or len(blk.heatmaps) != n_joints:
            raise LengthMismatch("block prediction does not match ground truth shape")
        total += float(np.linalg.norm(pose - gt, axis=1).sum())
        for pred_t, gt_t in zip(blk.heatmaps, gt_heatmaps):
            for (_, hp), (_, hg) in zip(pred_t.planes(), gt_t.planes()):
                total += jsd(hg, hp)
    return total


def score_targets(pred_masks: np.ndarray, gt_masks: np.ndarray) -> np.ndarray:
    """Quality-score targets: 1 - MAE per mask, higher = better."""
    p = np.asarray(pred_masks, dtype=np.float64)
    g = np.asarray(gt_masks, dtype=np.float64)
    if p.shape != g.shape:
        raise LengthMismatch(f"shape mismatch {p.shape} vs {g.shape}")
    return 1.0 - np.abs(p - g).reshape(p.shape[0], -1).mean(axis=1)


def mask_loss(pred_masks: np.ndarray, gt_masks: np.ndarray,
              pred_scores: np.ndarray) -> float:
    """BCE over the mask series, BCE over the current mask again (so the
    current frame is double-weighted), plus MSE between the predicted
    quality scores and their 1 - MAE targets.

    pred_masks holds pre-binarization probabilities, shape (N, H, W) with
    mask 0 the current frame.
    """
    p = np.asarray(pred_masks, dtype=np.float64)
    g = np.asarray(gt_masks, dtype=np.float64)
    s = np.asarray(pred_scores, dtype=np.float64)
    if p.ndim != 3:
        raise LengthMismatch(f"pred_masks must be (N, H, W), got {p.shape}")
    if p.shape != g.shape or s.shape != (p.shape[0],):
        raise LengthMismatch(
            f"series mismatch: masks {p.shape} vs {g.shape}, scores {s.shape}")
    if np.any(s < 0) or np.any(s > 1):
        raise ProbabilityOutOfRange("scores must lie in [0, 1]")
    return (bce(g, p) + bce(g[0], p[0]) + mse(s, score_targets(p, g)))


# -- numeric gradient verification ------------------------------------------------


def gradient_check(f: Callable[[np.ndarray], float],
                   grad: Callable[[np.ndarray], np.ndarray] | np.ndarray,
                   point: np.ndarray, step: float = 1e-5) -> float:
    """Max relative deviation between an analytic gradient and central
    finite differences, over all coordinates of `point`.

    Relative deviation per coordinate is |analytic - fd| / (|fd| + 1e-8).
    """
    if not 1e-6 <= step <= 1e-3:
        raise DataError(f"step must lie in [1e-6, 1e-3], got {step}")
    x = np.array(point, dtype=np.float64)
    analytic = np.asarray(grad(x) if callable(grad) else grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise LengthMismatch(f"gradient shape {analytic.shape} vs point {x.shape}")
    if not np.all(np.isfinite(analytic)):
        raise NonFinite("analytic gradient is not finite")
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(f(x))
        flat[i] = keep - step
        lo = float(f(x))
        flat[i] = keep
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFinite(f"function not finite near coordinate {i}")
        fd = (hi - lo) / (2.0 * step)
        dev = abs(analytic.reshape(-1)[i] - fd) / (abs(fd) + 1e-8)
        worst = max(worst, dev)
    return worst


# -- denormalization ---------------------------------------------------------------


def denormalize(pose, cam: CameraModel, head_depth_mm: float) -> Pose3D:
    """Map a normalized-cube pose back to camera-frame millimeters.

    Exact inverse of the label normalization for the same camera and
    head depth.
    """
    joints = pose.joints if isinstance(pose, Pose3D) else np.asarray(pose, dtype=np.float64)
    return Pose3D(joints=denormalize_camera_points(cam, joints, head_depth_mm),
                  frame="camera")


# -- pose CSV ----------------------------------------------------------------------


def write_pose_csv(path, pose: Pose3D, names: Sequence[str]) -> None:
    if len(names) != pose.num_joints:
        raise LengthMismatch(f"{len(names)} names for {pose.num_joints} joints")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["joint", "x", "y", "z"])
        for name, (x, y, z) in zip(names, pose.joints):
            w.writerow([name, repr(float(x)), repr(float(y)), repr(float(z))])


def read_pose_csv(path, frame: str = "camera") -> tuple[list[str], Pose3D]:
    names, rows = [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["joint", "x", "y", "z"]:
            raise DataError(f"unexpected pose CSV header: {header}")
        for row in r:
            if not row:
                continue
            names.append(row[0])
            rows.append([float(v) for v in row[1:4]])
    return names, Pose3D(joints=np.asarray(rows, dtype=np.float64), frame=frame)
