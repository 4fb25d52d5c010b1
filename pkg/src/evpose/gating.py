"""Human-body mask gating of decay volumes with early-exit reuse.

A mask predictor returns, per invocation, a plan: masks for the current
frame and a few future frames, each with a quality score in [0, 1]
(higher is better; scores are oriented as 1 - MAE against ground truth).
The scheduler reuses a planned future mask whenever its score clears the
threshold beta, and only invokes the predictor again when the plan runs
out or the score falls short. beta = 0 therefore minimizes predictor
calls at ceil(F / horizon); beta = 1 with imperfect scores recomputes on
every frame.

The trained predictor itself is a pluggable backend. A deterministic
reference backend (activity percentile, morphological closing, largest
connected component, dilated future masks with decaying scores) stands
in so the pipeline runs end to end without a network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from .errors import (
    BadMagic,
    ConfigError,
    EmptyPlan,
    GeometryMismatch,
    ProbabilityOutOfRange,
    TruncatedRecord,
)
from .events import SensorGeometry
from .representations import ToreVolume

MASK_THRESHOLD = 0.1  # binarization cut for predicted soft masks


@dataclass(frozen=True)
class MaskPlan:
    """Masks for the issuing frame plus following frames, with scores."""

    masks: np.ndarray = field(repr=False)   # (N, H, W) bool
    scores: np.ndarray = field(repr=False)  # (N,) in [0, 1]
    issued_at: int = 0

    def __post_init__(self):
        m = np.ascontiguousarray(self.masks).astype(bool)
        s = np.ascontiguousarray(self.scores, dtype=np.float64)
        if m.ndim != 3:
            raise GeometryMismatch(f"masks must be (N, H, W), got {m.shape}")
        if m.shape[0] == 0:
            raise EmptyPlan("plan must hold at least one mask")
        if s.shape != (m.shape[0],):
            raise EmptyPlan(f"{m.shape[0]} masks but {s.shape} scores")
        if np.any(s < 0) or np.any(s > 1):
            raise ProbabilityOutOfRange("plan scores must lie in [0, 1]")
        m.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "masks", m)
        object.__setattr__(self, "scores", s)

    @property
    def horizon(self) -> int:
        return self.masks.shape[0]


@runtime_checkable
class MaskPredictorBackend(Protocol):
    """Seam for the trained predictor; must be deterministic."""

    horizon: int

    def predict(self, vol: ToreVolume) -> MaskPlan: ...


def binarize_mask(soft: np.ndarray, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Strictly-above-threshold cut of a soft mask in [0, 1].

    The threshold is deliberately small so the binary mask errs toward
    covering the whole body; leaked background beats missing limbs.
    """
    a = np.asarray(soft, dtype=np.float64)
    if np.any(a < 0) or np.any(a > 1):
        raise ProbabilityOutOfRange("soft mask values must lie in [0, 1]")
    return a > threshold


def apply_mask(vol: ToreVolume, mask: np.ndarray) -> ToreVolume:
    """Zero every channel outside the mask."""
    m = np.asarray(mask)
    if m.shape != (vol.geometry.height, vol.geometry.width):
        raise GeometryMismatch(
            f"mask {m.shape} does not match volume {vol.geometry}")
    data = vol.data * m.astype(vol.data.dtype)
    return ToreVolume(geometry=vol.geometry, data=data,
                      query_time_us=vol.query_time_us)


def mask_quality_ground_truth(pred: np.ndarray, gt: np.ndarray) -> float:
    """1 - MAE between binary masks, so identical masks score 1.0 and
    complementary masks score 0.0."""
    a = np.asarray(pred).astype(np.float64)
    b = np.asarray(gt).astype(np.float64)
    if a.shape != b.shape:
        raise GeometryMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return 1.0 - float(np.abs(a - b).mean())


# -- scheduling ----------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleEntry:
    frame: int
    recompute: bool
    score_used: float


@dataclass(frozen=True)
class ScheduleResult:
    entries: list[ScheduleEntry]
    masks: np.ndarray = field(repr=False)  # (F, H, W) bool, mask used per frame
    backend_calls: int = 0


def schedule_masks(frames: Sequence[ToreVolume], backend: MaskPredictorBackend,
                   beta: float) -> ScheduleResult:
    """Run the early-exit mask schedule over a frame sequence.

    Frame 0 always invokes the backend. Frame k reuses the most recent
    plan's mask for k when that mask's score is >= beta; otherwise the
    backend runs on frame k's volume and starts a new plan. Only the
    newest plan is retained.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    entries: list[ScheduleEntry] = []
    masks = []
    plan: MaskPlan | None = None
    calls = 0
    for k, vol in enumerate(frames):
        offset = k - plan.issued_at if plan is not None else None
        if plan is not None and offset < plan.horizon and plan.scores[offset] >= beta:
            entries.append(ScheduleEntry(frame=k, recompute=False,
                                         score_used=float(plan.scores[offset])))
            masks.append(plan.masks[offset])
            continue
        new_plan = backend.predict(vol)
        if new_plan is None or new_plan.horizon < 1:
            raise EmptyPlan("backend returned an empty plan")
        if new_plan.masks.shape[1:] != (vol.geometry.height, vol.geometry.width):
            raise GeometryMismatch("backend plan does not match volume geometry")
        plan = replace(new_plan, issued_at=k)
        calls += 1
        entries.append(ScheduleEntry(frame=k, recompute=True,
                                     score_used=float(plan.scores[0])))
        masks.append(plan.masks[0])
    stack = np.stack(masks) if masks else np.zeros((0, 0, 0), dtype=bool)
    return ScheduleResult(entries=entries, masks=stack, backend_calls=calls)


def write_schedule_csv(path, entries: Sequence[ScheduleEntry]) -> None:
    with open(path, "w") as f:
        f.write("frame,recompute,score_used\n")
        for e in entries:
            f.write(f"{e.frame},{int(e.recompute)},{e.score_used!r}\n")


def read_schedule_csv(path) -> list[ScheduleEntry]:
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "frame,recompute,score_used":
            raise ConfigError(f"unexpected schedule header: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            frame, rec, score = line.split(",")
            out.append(ScheduleEntry(frame=int(frame), recompute=bool(int(rec)),
                                     score_used=float(score)))
    return out


# -- deterministic reference backend --------------------------------------------


@dataclass(frozen=True)
class ReferenceBackendParams:
    horizon: int = 4
    activity_percentile: float = 80.0
    closing_iterations: int = 1
    dilation_iterations: int = 1     # growth per future step
    score_decay: float = 0.1
    score_floor: float = 0.2

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 <= self.activity_percentile <= 100.0:
            raise ConfigError("activity_percentile must lie in [0, 100]")
        if not 0.0 <= self.score_floor <= 1.0 or self.score_decay < 0:
            raise ConfigError("score parameters out of range")


_CONN8 = np.ones((3, 3), dtype=bool)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=_CONN8)
    if n == 0:
        return np.zeros_like(mask)
    sizes = ndimage.sum_labels(np.ones_like(mask, dtype=np.int64), labels,
                               index=np.arange(1, n + 1))
    return labels == (1 + int(np.argmax(sizes)))


class ReferenceMaskBackend:
    """Stand-in predictor: no training, pure image morphology.

    Foreground is the set of pixels whose max channel activity exceeds
    the configured percentile of the activity image, cleaned by a binary
    closing, reduced to the single largest connected component (the
    toolkit is single-person). Future masks dilate the current one to
    absorb plausible motion, with scores decaying per step down to a
    floor; an empty mask scores the floor everywhere.
    """

    def __init__(self, params: ReferenceBackendParams | None = None):
        self.params = params or ReferenceBackendParams()

    @property
    def horizon(self) -> int:
        return self.params.horizon

    def predict(self, vol: ToreVolume) -> MaskPlan:
        p = self.params
        activity = vol.data.max(axis=0)
        threshold = float(np.percentile(activity, p.activity_percentile))
        fg = activity > threshold
        if p.closing_iterations > 0 and fg.any():
            fg = ndimage.binary_closing(fg, structure=_CONN8,
                                        iterations=p.closing_iterations)
        fg = _largest_component(fg)
        masks = np.empty((p.horizon,) + fg.shape, dtype=bool)
        masks[0] = fg
        for k in range(1, p.horizon):
            grown = masks[k - 1]
            if p.dilation_iterations > 0 and grown.any():
                grown = ndimage.binary_dilation(grown, structure=_CONN8,
                                                iterations=p.dilation_iterations)
            masks[k] = grown
        if fg.any():
            scores = np.maximum(p.score_floor,
                                1.0 - p.score_decay * np.arange(p.horizon))
        else:
            scores = np.full(p.horizon, p.score_floor)
        return MaskPlan(masks=masks, scores=scores, issued_at=0)


def reference_mask_backend(vol: ToreVolume,
                           params: ReferenceBackendParams | None = None) -> MaskPlan:
    """One-shot convenience wrapper around ReferenceMaskBackend."""
    return ReferenceMaskBackend(params).predict(vol)


# -- MSK1 mask stack format -------------------------------------------------------
# Same header shape as EVT1: magic, version u16, width u16, height u16,
# count u64; then count masks, each ceil(W*H/8) bytes, bit-packed row-major.

MSK1_MAGIC = b"MSK1"
MSK1_VERSION = 1
_MSK_HEADER = struct.Struct("<4sHHHQ")


def serialize_masks(geometry: SensorGeometry, masks: np.ndarray) -> bytes:
    m = np.ascontiguousarray(masks).astype(bool)
    if m.ndim != 3 or m.shape[1:] != (geometry.height, geometry.width):
        raise GeometryMismatch(f"masks {m.shape} do not match geometry {geometry}")
    header = _MSK_HEADER.pack(MSK1_MAGIC, MSK1_VERSION, geometry.width,
                              geometry.height, m.shape[0])
    return header + np.packbits(m.reshape(m.shape[0], -1), axis=1).tobytes()


def parse_masks(blob: bytes) -> tuple[SensorGeometry, np.ndarray]:
    if len(blob) < _MSK_HEADER.size or blob[:4] != MSK1_MAGIC:
        raise BadMagic("not an MSK1 blob")
    _, version, width, height, count = _MSK_HEADER.unpack_from(blob, 0)
    if version != MSK1_VERSION:
        raise BadMagic(f"unsupported MSK1 version {version}")
    geometry = SensorGeometry(width=width, height=height)
    stride = -(-width * height // 8)
    expect = count * stride
    if len(blob) - _MSK_HEADER.size != expect:
        raise TruncatedRecord(
            f"mask payload {len(blob) - _MSK_HEADER.size} bytes, expected {expect}")
    bits = np.frombuffer(blob, dtype=np.uint8, offset=_MSK_HEADER.size)
    unpacked = np.unpackbits(bits.reshape(count, stride), axis=1)[:, : width * height]
    return geometry, unpacked.reshape(count, height, width).astype(bool)


def write_masks(path, geometry: SensorGeometry, masks: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(serialize_masks(geometry, masks))


def read_masks(path) -> tuple[SensorGeometry, np.ndarray]:
    with open(path, "rb") as f:
        return parse_masks(f.read())
