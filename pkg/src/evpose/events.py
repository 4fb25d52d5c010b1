"""Event streams, sensor geometry, the EVT1 binary format, and slicing.

An event is a (t, x, y, polarity) record produced by a dynamic vision
sensor pixel when its log intensity changes past a contrast threshold.
Timestamps are microseconds in an unsigned 64-bit range; equal timestamps
are allowed (many pixels can fire within the same microsecond).

EVT1 on-disk layout (little-endian):

    header  = magic b"EVT1" | version u16 (=1) | width u16 | height u16
              | event_count u64                               (18 bytes)
    record  = t u64 | x u16 | y u16 | polarity i8 | pad[3]    (16 bytes)

A CSV alternative (header line ``t_us,x,y,p``) is provided as a lossless
text path for interoperability.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    NonMonotonic,
    OutOfBounds,
    TruncatedRecord,
    ZeroCount,
    ZeroWindow,
)

EVT1_MAGIC = b"EVT1"
EVT1_VERSION = 1
_HEADER = struct.Struct("<4sHHHQ")
RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")]
)
HEADER_SIZE = _HEADER.size  # 18
RECORD_SIZE = RECORD_DTYPE.itemsize  # 16


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise OutOfBounds(f"geometry must be positive, got {self.width}x{self.height}")

    @property
    def num_pixels(self) -> int:
        return self.width * self.height


DAVIS346 = SensorGeometry(width=346, height=260)


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EventStream:
    """Immutable, time-ordered sequence of events on one sensor.

    Columns are stored as separate arrays (t: u64, x: u16, y: u16,
    p: i8 with values +1/-1). Validation happens once at construction;
    the arrays are marked read-only so streams can be shared across
    threads. tolerance_us relaxes the monotonicity check for sources
    with slightly out-of-order timestamps; slicing then treats the
    stream as approximately sorted.
    """

    geometry: SensorGeometry
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    tolerance_us: int = 0

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise TruncatedRecord("column lengths differ")
        object.__setattr__(self, "t", _as_readonly(self.t.astype(np.uint64, copy=False)))
        object.__setattr__(self, "x", _as_readonly(self.x.astype(np.uint16, copy=False)))
        object.__setattr__(self, "y", _as_readonly(self.y.astype(np.uint16, copy=False)))
        object.__setattr__(self, "p", _as_readonly(self.p.astype(np.int8, copy=False)))
        validate_columns(self.geometry, self.t, self.x, self.y, self.p,
                         tolerance_us=self.tolerance_us)

    @classmethod
    def empty(cls, geometry: SensorGeometry) -> "EventStream":
        z = np.zeros(0, dtype=np.uint64)
        return cls(geometry, z, z.astype(np.uint16), z.astype(np.uint16), z.astype(np.int8))

    @classmethod
    def from_arrays(cls, geometry, t, x, y, p, tolerance_us: int = 0) -> "EventStream":
        return cls(geometry, np.asarray(t), np.asarray(x), np.asarray(y),
                   np.asarray(p), tolerance_us)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def restrict(self, lo: int, hi: int) -> "EventStream":
        """Events with lo <= t < hi, order preserved."""
        bounds = np.asarray([lo, hi], dtype=np.uint64)
        i0, i1 = np.searchsorted(self.t, bounds, side="left")
        return EventStream(self.geometry, self.t[i0:i1], self.x[i0:i1],
                           self.y[i0:i1], self.p[i0:i1], self.tolerance_us)


def validate_columns(geometry, t, x, y, p, tolerance_us: int = 0) -> None:
    """Raise if the column arrays violate the stream contract."""
    if np.any(x >= geometry.width) or np.any(y >= geometry.height):
        bad = int(np.argmax((x >= geometry.width) | (y >= geometry.height)))
        raise OutOfBounds(
            f"event {bad} at ({int(x[bad])},{int(y[bad])}) outside "
            f"{geometry.width}x{geometry.height}"
        )
    if not np.all((p == 1) | (p == -1)):
        bad = int(np.argmax((p != 1) & (p != -1)))
        raise OutOfBounds(f"event {bad} has polarity {int(p[bad])}, expected +1/-1")
    if len(t) > 1:
        prev, nxt = t[:-1], t[1:]
        regressed = nxt < prev
        if np.any(regressed):
            # uint64-safe: subtract only where the earlier value is larger
            drop = np.zeros(len(t) - 1, dtype=np.uint64)
            drop[regressed] = prev[regressed] - nxt[regressed]
            beyond = drop > np.uint64(tolerance_us)
            if np.any(beyond):
                bad = int(np.argmax(beyond))
                raise NonMonotonic(
                    f"timestamp regresses by {int(drop[bad])}us at record {bad + 1} "
                    f"(tolerance {tolerance_us}us)"
                )


# -- EVT1 binary format --------------------------------------------------------


def parse_stream(blob: bytes, tolerance_us: int = 0) -> EventStream:
    """Parse an EVT1 blob into a validated EventStream.

    Raises BadMagic, TruncatedRecord, OutOfBounds or NonMonotonic. Event
    order is preserved from the file.
    """
    if len(blob) < HEADER_SIZE or blob[:4] != EVT1_MAGIC:
        raise BadMagic("not an EVT1 blob")
    magic, version, width, height, count = _HEADER.unpack_from(blob, 0)
    if version != EVT1_VERSION:
        raise BadMagic(f"unsupported EVT1 version {version}")
    payload = len(blob) - HEADER_SIZE
    if payload % RECORD_SIZE != 0:
        raise TruncatedRecord(f"payload of {payload} bytes is not a multiple of {RECORD_SIZE}")
    n = payload // RECORD_SIZE
    if n != count:
        raise TruncatedRecord(f"header declares {count} events, payload holds {n}")
    geometry = SensorGeometry(width=width, height=height)
    rec = np.frombuffer(blob, dtype=RECORD_DTYPE, count=n, offset=HEADER_SIZE)
    return EventStream(geometry, rec["t"].copy(), rec["x"].copy(),
                       rec["y"].copy(), rec["p"].copy(), tolerance_us)


def serialize_stream(s: EventStream) -> bytes:
    """Bit-exact inverse of parse_stream."""
    header = _HEADER.pack(EVT1_MAGIC, EVT1_VERSION, s.geometry.width,
                          s.geometry.height, len(s))
    rec = np.zeros(len(s), dtype=RECORD_DTYPE)
    rec["t"] = s.t
    rec["x"] = s.x
    rec["y"] = s.y
    rec["p"] = s.p
    return header + rec.tobytes()


def read_stream(path) -> EventStream:
    with open(path, "rb") as f:
        return parse_stream(f.read())


def write_stream(path, s: EventStream) -> None:
    with open(path, "wb") as f:
        f.write(serialize_stream(s))


# -- CSV text path -------------------------------------------------------------

CSV_HEADER = "t_us,x,y,p"


def write_csv(fp, s: EventStream) -> None:
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    out = open(fp, "w") if own else fp
    try:
        out.write(CSV_HEADER + "\n")
        for i in range(len(s)):
            out.write(f"{int(s.t[i])},{int(s.x[i])},{int(s.y[i])},{int(s.p[i])}\n")
    finally:
        if own:
            out.close()


def read_csv(fp, geometry: SensorGeometry) -> EventStream:
    own = isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__")
    inp = open(fp, "r") if own else fp
    try:
        header = inp.readline().strip()
        if header != CSV_HEADER:
            raise BadMagic(f"expected CSV header {CSV_HEADER!r}, got {header!r}")
        body = inp.read()
    finally:
        if own:
            inp.close()
    if not body.strip():
        return EventStream.empty(geometry)
    data = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
    return EventStream.from_arrays(geometry, data[:, 0], data[:, 1], data[:, 2], data[:, 3])


# -- slicing -------------------------------------------------------------------


def slice_constant_time(s: EventStream, window_us: int, origin_us: int = 0) -> list[EventStream]:
    """Partition events into consecutive half-open windows.

    Window k covers [origin + k*w, origin + (k+1)*w). Events before the
    origin are dropped. Every window from the origin through the window
    containing the last event is emitted, including empty ones, so the
    result is a gap-free partition of [origin, last event].
    """
    if window_us <= 0:
        raise ZeroWindow(f"window_us must be positive, got {window_us}")
    if origin_us < 0:
        raise ZeroWindow(f"origin_us must be non-negative, got {origin_us}")
    if len(s) == 0:
        return []
    start = int(np.searchsorted(s.t, np.uint64(origin_us), side="left"))
    if start == len(s):
        return []
    last = int(s.t[-1])
    n_windows = (last - origin_us) // window_us + 1
    # uint64 edges keep searchsorted exact over the full timestamp range
    edges = np.uint64(origin_us) + np.uint64(window_us) * np.arange(1, n_windows, dtype=np.uint64)
    cuts = np.searchsorted(s.t, edges, side="left")
    bounds = np.concatenate(([start], cuts, [len(s)]))
    out = []
    for k in range(n_windows):
        i0, i1 = int(bounds[k]), int(bounds[k + 1])
        out.append(EventStream(s.geometry, s.t[i0:i1], s.x[i0:i1], s.y[i0:i1],
                               s.p[i0:i1], s.tolerance_us))
    return out


@dataclass(frozen=True)
class CountChunk:
    stream: EventStream
    partial: bool


def slice_constant_count(s: EventStream, n: int) -> list[CountChunk]:
    """Consecutive chunks of exactly n events; a trailing remainder chunk
    is flagged partial. Concatenation of chunks equals the input."""
    if n <= 0:
        raise ZeroCount(f"chunk size must be positive, got {n}")
    out = []
    for i0 in range(0, len(s), n):
        i1 = min(i0 + n, len(s))
        chunk = EventStream(s.geometry, s.t[i0:i1], s.x[i0:i1], s.y[i0:i1],
                            s.p[i0:i1], s.tolerance_us)
        out.append(CountChunk(stream=chunk, partial=(i1 - i0) < n))
    return out


def concatenate(streams, geometry: SensorGeometry | None = None) -> EventStream:
    streams = list(streams)
    if not streams:
        if geometry is None:
            raise ValueError("geometry required to concatenate zero streams")
        return EventStream.empty(geometry)
    geo = streams[0].geometry
    return EventStream(
        geo,
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.p for s in streams]),
        max(s.tolerance_us for s in streams),
    )
