"""GPS fixes, trace interpolation and local planar geometry."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

M_PER_DEG_LAT = 111132.95
TRACE_COLUMNS = ("node_id", "t_us", "lat", "lon", "speed", "heading")


class TraceError(ValueError):
    pass


class OutOfRangeError(TraceError):
    pass


@dataclass(frozen=True)
class GpsFix:
    t_us: int
    lat: float
    lon: float
    speed: float = 0.0
    heading: float = 0.0


@dataclass(frozen=True)
class MobilityTrace:
    node_id: str
    fixes: tuple[GpsFix, ...]
    _times: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        fixes = tuple(self.fixes)
        if not fixes:
            raise TraceError(f"trace {self.node_id!r} has no fixes")
        times = tuple(f.t_us for f in fixes)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise TraceError(f"trace {self.node_id!r}: timestamps not strictly increasing")
        object.__setattr__(self, "fixes", fixes)
        object.__setattr__(self, "_times", times)

    @property
    def start_us(self) -> int:
        return self._times[0]

    @property
    def end_us(self) -> int:
        return self._times[-1]

    def covers(self, t_us: float) -> bool:
        return self._times[0] <= t_us <= self._times[-1]

    def last_fix(self, t_us: float) -> GpsFix:
        """Most recent fix at or before ``t_us``."""
        if not self.covers(t_us):
            raise OutOfRangeError(f"t={t_us} outside trace {self.node_id!r}")
        return self.fixes[bisect.bisect_right(self._times, t_us) - 1]


def interpolate(trace: MobilityTrace, t_us: float) -> tuple[float, float, float]:
    """Linear-in-time (lat, lon, speed) at ``t_us``; exact at fix timestamps."""
    times = trace._times
    if not times[0] <= t_us <= times[-1]:
        raise OutOfRangeError(f"t={t_us} outside trace {trace.node_id!r} "
                              f"[{times[0]}, {times[-1]}]")
    i = bisect.bisect_right(times, t_us) - 1
    a = trace.fixes[i]
    if a.t_us == t_us or i == len(times) - 1:
        return a.lat, a.lon, a.speed
    b = trace.fixes[i + 1]
    w = (t_us - a.t_us) / (b.t_us - a.t_us)
    return (
        a.lat + w * (b.lat - a.lat),
        a.lon + w * (b.lon - a.lon),
        a.speed + w * (b.speed - a.speed),
    )


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular projection anchored at an origin; fine for city extents."""

    origin_lat: float
    origin_lon: float
    k_lat: float = field(init=False)
    k_lon: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_lat", M_PER_DEG_LAT)
        object.__setattr__(self, "k_lon", M_PER_DEG_LAT * math.cos(math.radians(self.origin_lat)))

    def to_local(self, lat: float, lon: float) -> tuple[float, float]:
        return (lon - self.origin_lon) * self.k_lon, (lat - self.origin_lat) * self.k_lat

    def to_geo(self, x_m: float, y_m: float) -> tuple[float, float]:
        return self.origin_lat + y_m / self.k_lat, self.origin_lon + x_m / self.k_lon


def to_local(frame: LocalFrame, lat: float, lon: float) -> tuple[float, float]:
    return frame.to_local(lat, lon)


def distance_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Planar distance between two (lat, lon) points.

    The frame is anchored at the latitude midpoint so the result is exactly
    symmetric in its arguments.
    """
    mid_lat = 0.5 * (a[0] + b[0])
    dx = (b[1] - a[1]) * M_PER_DEG_LAT * math.cos(math.radians(mid_lat))
    dy = (b[0] - a[0]) * M_PER_DEG_LAT
    return math.hypot(dx, dy)


def haversine_m(a: tuple[float, float], b: tuple[float, float], radius_m: float = 6371008.8) -> float:
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius_m * math.asin(math.sqrt(h))


# --- trace files -------------------------------------------------------------

def read_traces(fh: TextIO, source: str = "<trace>") -> dict[str, MobilityTrace]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
        raise TraceError(f"{source}: expected header {','.join(TRACE_COLUMNS)}")
    per_node: dict[str, list[GpsFix]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(TRACE_COLUMNS):
            raise TraceError(f"{source}:{lineno}: expected {len(TRACE_COLUMNS)} columns")
        try:
            fix = GpsFix(int(row[1]), float(row[2]), float(row[3]), float(row[4]), float(row[5]))
        except ValueError as exc:
            raise TraceError(f"{source}:{lineno}: {exc}") from None
        per_node.setdefault(row[0].strip(), []).append(fix)
    return {nid: MobilityTrace(nid, tuple(fixes)) for nid, fixes in per_node.items()}


def write_traces(fh: TextIO, traces: Iterable[MobilityTrace]) -> None:
    fh.write(",".join(TRACE_COLUMNS) + "\n")
    for tr in traces:
        for f in tr.fixes:
            fh.write(f"{tr.node_id},{f.t_us},{f.lat!r},{f.lon!r},{f.speed!r},{f.heading!r}\n")
