"""Dense representations built from event streams.

The primary representation keeps, per pixel and per polarity, a FIFO of
the K most recent event timestamps (TORE, time-ordered recent events,
Baldwin et al. 2021) and materializes them into a 2K-channel volume with
a flipped and rescaled log-age transform:

    delta = max(t_query - t, 1us)
    v     = ln(delta)
    v'    = clamp(1 - v / ln(tau), 0, 0.7) / 0.7

so a just-fired pixel reads 1, anything older than tau reads 0, and a
pixel that never fired reads exactly 0 in all channels. Values are
computed in float64 and stored as float32.

Channel layout of the materialized volume: channels [0, K) hold positive
polarity, [K, 2K) negative, ordered newest first within each polarity.

Three baselines used for comparisons are also provided: per-polarity
count frames, signed voxel grids, and per-polarity time surfaces.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    GeometryMismatch,
    InvalidTau,
    OutOfBounds,
    TimeRegression,
    TruncatedRecord,
    ZeroBins,
    ZeroWindow,
)
from .events import Event, EventStream, SensorGeometry

DEFAULT_K = 4
DEFAULT_TAU_US = 5_000_000  # retain history up to five seconds
DEFAULT_VOXEL_BINS = 4

_POL_INDEX = {1: 0, -1: 1}


def decay_value(delta_us, tau_us):
    """Log-age transform of one event age. Accepts scalars or arrays.

    Ages at or beyond tau_us map to exactly 0; ages at or below the 1us
    floor map to exactly 1; the saturation edge sits at tau_us**0.3.
    """
    if tau_us <= 1:
        raise InvalidTau(f"tau_us must exceed 1us, got {tau_us}")
    delta = np.maximum(np.asarray(delta_us, dtype=np.float64), 1.0)
    v = np.log(delta)
    vp = np.clip(1.0 - v / math.log(tau_us), 0.0, 0.7) / 0.7
    return vp if vp.shape else float(vp)


@dataclass
class ToreState:
    """Per-pixel, per-polarity FIFO queues of absolute event timestamps.

    Single-writer: ingest order is the event order. The fifo array has
    shape (2, H, W, K) with slot 0 the newest timestamp; fill counts how
    many slots are valid. Timestamps of unused slots are meaningless.
    """

    geometry: SensorGeometry
    k: int = DEFAULT_K
    tau_us: int = DEFAULT_TAU_US
    fifo: np.ndarray = field(default=None, repr=False)
    fill: np.ndarray = field(default=None, repr=False)
    last_t: int = 0

    def __post_init__(self):
        if self.k <= 0:
            raise InvalidTau(f"K must be positive, got {self.k}")
        if self.tau_us <= 1:
            raise InvalidTau(f"tau_us must exceed 1us, got {self.tau_us}")
        h, w = self.geometry.height, self.geometry.width
        if self.fifo is None:
            self.fifo = np.zeros((2, h, w, self.k), dtype=np.uint64)
        if self.fill is None:
            self.fill = np.zeros((2, h, w), dtype=np.uint8)

    @property
    def num_channels(self) -> int:
        return 2 * self.k

    def ingest(self, e: Event) -> "ToreState":
        """Push one event; the oldest timestamp falls off a full FIFO."""
        if not (0 <= e.x < self.geometry.width and 0 <= e.y < self.geometry.height):
            raise OutOfBounds(f"event at ({e.x},{e.y}) outside geometry")
        if e.polarity not in _POL_INDEX:
            raise OutOfBounds(f"polarity {e.polarity} not in (+1, -1)")
        if e.t < self.last_t:
            raise TimeRegression(f"event at {e.t}us precedes latest {self.last_t}us")
        pi = _POL_INDEX[e.polarity]
        row = self.fifo[pi, e.y, e.x]
        shifted = row[:-1].copy()
        row[0] = e.t
        row[1:] = shifted
        if self.fill[pi, e.y, e.x] < self.k:
            self.fill[pi, e.y, e.x] += 1
        self.last_t = int(e.t)
        return self

    def ingest_stream(self, s: EventStream) -> "ToreState":
        """Bulk ingest of a whole stream; equivalent to per-event ingest.

        Runs in O(N log N): a stable sort groups events by pixel and
        polarity while preserving time order, then the newest <=K
        timestamps of each group land in the FIFO slots directly.
        """
        if s.geometry != self.geometry:
            raise GeometryMismatch(f"stream is {s.geometry}, state is {self.geometry}")
        n = len(s)
        if n == 0:
            return self
        if int(s.t[0]) < self.last_t:
            raise TimeRegression(
                f"stream starts at {int(s.t[0])}us, before latest {self.last_t}us")
        h, w = self.geometry.height, self.geometry.width
        pol_idx = (s.p < 0).astype(np.int64)  # +1 -> 0, -1 -> 1
        keys = (pol_idx * h + s.y.astype(np.int64)) * w + s.x.astype(np.int64)
        order = np.argsort(keys, kind="stable")
        skeys = keys[order]
        st = s.t[order]
        group_end = np.nonzero(np.concatenate((skeys[1:] != skeys[:-1], [True])))[0]
        group_keys = skeys[group_end]
        group_start = np.concatenate(([0], group_end[:-1] + 1))
        counts = group_end - group_start + 1

        fifo_flat = self.fifo.reshape(-1, self.k)
        fill_flat = self.fill.reshape(-1)
        old = fifo_flat[group_keys].copy()
        old_fill = fill_flat[group_keys].astype(np.int64)
        for slot in range(self.k):
            # newest incoming first, then surviving pre-existing entries
            from_new = counts > slot
            fifo_flat[group_keys[from_new], slot] = st[group_end[from_new] - slot]
            old_slot = slot - counts
            carry = (old_slot >= 0) & (old_slot < old_fill)
            if np.any(carry):
                fifo_flat[group_keys[carry], slot] = old[carry, old_slot[carry]]
        fill_flat[group_keys] = np.minimum(counts + old_fill, self.k).astype(np.uint8)
        self.last_t = int(s.t[-1])
        return self

    def materialize(self, t_query: int) -> "ToreVolume":
        """Dense 2K-channel volume of decay values at t_query."""
        if self.tau_us <= 1:
            raise InvalidTau(f"tau_us must exceed 1us, got {self.tau_us}")
        if t_query < self.last_t:
            raise TimeRegression(
                f"query at {t_query}us precedes latest ingested {self.last_t}us")
        delta = (np.uint64(t_query) - self.fifo).astype(np.float64)
        np.maximum(delta, 1.0, out=delta)
        vp = np.clip(1.0 - np.log(delta) / math.log(self.tau_us), 0.0, 0.7) / 0.7
        valid = np.arange(self.k, dtype=np.uint8) < self.fill[..., None]
        vp[~valid] = 0.0
        # (2, H, W, K) -> (2, K, H, W) -> (2K, H, W)
        h, w = self.geometry.height, self.geometry.width
        data = np.transpose(vp, (0, 3, 1, 2)).reshape(2 * self.k, h, w)
        return ToreVolume(geometry=self.geometry,
                          data=np.ascontiguousarray(data, dtype=np.float32),
                          query_time_us=int(t_query))


def tore_from_stream(s: EventStream, k: int = DEFAULT_K,
                     tau_us: int = DEFAULT_TAU_US) -> ToreState:
    state = ToreState(geometry=s.geometry, k=k, tau_us=tau_us)
    return state.ingest_stream(s)


@dataclass(frozen=True)
class ToreVolume:
    """Materialized decay volume; values in [0, 1], float32, immutable."""

    geometry: SensorGeometry
    data: np.ndarray = field(repr=False)
    query_time_us: int = 0

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[1:] != (self.geometry.height, self.geometry.width):
            raise GeometryMismatch(
                f"data shape {d.shape} does not match geometry {self.geometry}")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class DecayOrdering:
    """Witness that decay values only shrink as the query time advances."""

    holds: bool
    max_increase: float


def decay_ordering(state: ToreState, t1: int, t2: int) -> DecayOrdering:
    """Materialize at t1 < t2 and report whether every entry decayed."""
    if t2 < t1:
        raise TimeRegression(f"t2={t2} precedes t1={t1}")
    v1 = state.materialize(t1).data
    v2 = state.materialize(t2).data
    increase = float(np.max(v2.astype(np.float64) - v1.astype(np.float64), initial=0.0))
    return DecayOrdering(holds=increase <= 0.0, max_increase=increase)


# -- baseline representations ---------------------------------------------------


@dataclass(frozen=True)
class CountFrame:
    geometry: SensorGeometry
    counts: np.ndarray = field(repr=False)  # (2, H, W) int64, per polarity


@dataclass(frozen=True)
class VoxelGrid:
    geometry: SensorGeometry
    bins: np.ndarray = field(repr=False)  # (B, H, W) int64, signed by polarity
    t0_us: int = 0
    window_us: int = 0


@dataclass(frozen=True)
class TimeSurface:
    geometry: SensorGeometry
    last_t: np.ndarray = field(repr=False)  # (2, H, W) uint64
    valid: np.ndarray = field(repr=False)   # (2, H, W) bool
    query_time_us: int = 0


def _window_bounds(s: EventStream, window_us, origin_us):
    if window_us <= 0:
        raise ZeroWindow(f"window_us must be positive, got {window_us}")
    if origin_us is None:
        origin_us = int(s.t[0]) if len(s) else 0
    return int(origin_us), int(origin_us) + int(window_us)


def build_count_frame(s: EventStream, window_us: int,
                      origin_us: int | None = None) -> CountFrame:
    """Per-pixel, per-polarity event counts over [origin, origin+window)."""
    t0, t1 = _window_bounds(s, window_us, origin_us)
    sub = s.restrict(t0, t1)
    h, w = s.geometry.height, s.geometry.width
    counts = np.zeros((2, h, w), dtype=np.int64)
    pol_idx = (sub.p < 0).astype(np.int64)
    np.add.at(counts, (pol_idx, sub.y.astype(np.int64), sub.x.astype(np.int64)), 1)
    return CountFrame(geometry=s.geometry, counts=counts)


def build_voxel_grid(s: EventStream, window_us: int, bins: int,
                     origin_us: int | None = None) -> VoxelGrid:
    """Signed 3D histogram: the window splits into `bins` equal
    sub-intervals and each event adds its polarity to its bin."""
    if bins < 1:
        raise ZeroBins(f"bins must be >= 1, got {bins}")
    t0, t1 = _window_bounds(s, window_us, origin_us)
    sub = s.restrict(t0, t1)
    h, w = s.geometry.height, s.geometry.width
    grid = np.zeros((bins, h, w), dtype=np.int64)
    if len(sub):
        rel = (sub.t - np.uint64(t0)).astype(np.float64)
        b = np.minimum((rel * bins / window_us).astype(np.int64), bins - 1)
        np.add.at(grid, (b, sub.y.astype(np.int64), sub.x.astype(np.int64)),
                  sub.p.astype(np.int64))
    return VoxelGrid(geometry=s.geometry, bins=grid, t0_us=t0, window_us=int(window_us))


def build_time_surface(s: EventStream, t_query: int) -> TimeSurface:
    """Most recent event timestamp per pixel per polarity, up to t_query."""
    sub = s.restrict(0, int(t_query) + 1)
    h, w = s.geometry.height, s.geometry.width
    last = np.zeros((2, h, w), dtype=np.uint64)
    valid = np.zeros((2, h, w), dtype=bool)
    pol_idx = (sub.p < 0).astype(np.int64)
    yy = sub.y.astype(np.int64)
    xx = sub.x.astype(np.int64)
    # events arrive time-sorted, so plain assignment keeps the newest
    last[pol_idx, yy, xx] = sub.t
    valid[pol_idx, yy, xx] = True
    return TimeSurface(geometry=s.geometry, last_t=last, valid=valid,
                       query_time_us=int(t_query))


# -- tensor container -----------------------------------------------------------

TENSOR_MAGIC = b"TORE"
_TENSOR_HEADER = struct.Struct("<4sIII")


def serialize_tensor(data: np.ndarray) -> bytes:
    """Flat binary tensor: magic, dims C,H,W as u32, float32 row-major."""
    a = np.ascontiguousarray(data, dtype=np.float32)
    if a.ndim != 3:
        raise TruncatedRecord(f"tensor must be 3D, got shape {a.shape}")
    c, h, w = a.shape
    return _TENSOR_HEADER.pack(TENSOR_MAGIC, c, h, w) + a.tobytes()


def parse_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < _TENSOR_HEADER.size or blob[:4] != TENSOR_MAGIC:
        raise BadMagic("not a TORE tensor blob")
    _, c, h, w = _TENSOR_HEADER.unpack_from(blob, 0)
    expect = c * h * w * 4
    payload = len(blob) - _TENSOR_HEADER.size
    if payload != expect:
        raise TruncatedRecord(f"tensor payload {payload} bytes, expected {expect}")
    a = np.frombuffer(blob, dtype="<f4", count=c * h * w, offset=_TENSOR_HEADER.size)
    return a.reshape(c, h, w).copy()


def write_tensor(path, data: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(serialize_tensor(data))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_tensor(f.read())


def write_tensor_text(path, data: np.ndarray) -> None:
    """Lossless text dump for debugging; 9 significant digits round-trip
    float32 exactly."""
    a = np.ascontiguousarray(data, dtype=np.float32)
    c, h, w = a.shape
    with open(path, "w") as f:
        f.write(f"tore-text {c} {h} {w}\n")
        for v in a.reshape(-1):
            f.write(f"{v:.8e}\n")


def read_tensor_text(path) -> np.ndarray:
    with open(path, "r") as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != "tore-text":
            raise BadMagic("not a tore-text dump")
        c, h, w = (int(v) for v in header[1:])
        vals = np.array([np.float32(line) for line in f], dtype=np.float32)
    if vals.size != c * h * w:
        raise TruncatedRecord(f"expected {c * h * w} values, got {vals.size}")
    return vals.reshape(c, h, w)
