"""RSU/OBU behaviour: CAM generation timing, frame contents and RX logging."""

from __future__ import annotations

import bisect
import itertools
import random
from dataclasses import dataclass, field
from enum import Enum

from .cam_codec import CamFrame, Nic, RxLogRecord, normalize_mac
from .channel import PROFILES, NicProfile
from .geo import MobilityTrace, interpolate

OBU_ANTENNA_HEIGHT_M = 1.5
NOMINAL_PERIOD_US = 10_000

# Reading of the measured interval distribution: mostly 12 or 14 ms, some 10/16 ms.
DEFAULT_EMPIRICAL = {12_000: 0.45, 14_000: 0.40, 10_000: 0.10, 16_000: 0.05}


class NodeKind(str, Enum):
    RSU = "RSU"
    OBU = "OBU"


@dataclass(frozen=True)
class JitterModel:
    mode: str = "none"
    empirical: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("none", "empirical"):
            raise ValueError(f"unknown jitter mode {self.mode!r}")
        if self.mode == "empirical":
            if not self.empirical:
                raise ValueError("empirical jitter needs a distribution")
            if any(k <= 0 for k in self.empirical):
                raise ValueError("intervals must be positive")
            if any(p < 0 for p in self.empirical.values()):
                raise ValueError("probabilities must be non-negative")
            if abs(sum(self.empirical.values()) - 1.0) > 1e-9:
                raise ValueError("probabilities must sum to 1")
        items = sorted(self.empirical.items())
        object.__setattr__(self, "_intervals", [k for k, _ in items])
        object.__setattr__(self, "_cum", list(itertools.accumulate(p for _, p in items)))

    @classmethod
    def default(cls) -> "JitterModel":
        return cls("empirical", dict(DEFAULT_EMPIRICAL))

    def mean_us(self, period_us: int = NOMINAL_PERIOD_US) -> float:
        if self.mode == "none":
            return float(period_us)
        return sum(k * p for k, p in self.empirical.items())

    def sample(self, rng: random.Random) -> int:
        u = rng.random() * self._cum[-1]
        return self._intervals[min(bisect.bisect_right(self._cum, u), len(self._intervals) - 1)]


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    kind: NodeKind
    nics: dict[Nic, NicProfile]
    macs: dict[Nic, str]
    position: tuple[float, float, float] | None = None  # RSU: lat, lon, height_m
    trace: MobilityTrace | None = None  # OBU
    beacon_period_us: int = NOMINAL_PERIOD_US
    jitter: JitterModel = field(default_factory=JitterModel)
    start_offset_us: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "macs", {Nic(k): normalize_mac(v) for k, v in self.macs.items()})
        object.__setattr__(self, "nics", {Nic(k): v for k, v in self.nics.items()})

    def problems(self) -> list[str]:
        out = []
        if not self.nics:
            out.append(f"node {self.node_id}: no NICs")
        for nic, prof in self.nics.items():
            if nic.value != prof.power_class.value:
                out.append(f"node {self.node_id}: NIC {nic.value} bound to profile {prof.name}")
            if prof.role.value != self.kind.value:
                out.append(f"node {self.node_id}: {self.kind.value} uses {prof.name} profile")
            if nic not in self.macs:
                out.append(f"node {self.node_id}: NIC {nic.value} has no MAC address")
        if self.kind is NodeKind.RSU:
            if self.position is None:
                out.append(f"node {self.node_id}: RSU needs a fixed position")
            elif not self.position[2] > 0:
                out.append(f"node {self.node_id}: RSU height must be > 0")
        elif self.trace is None:
            out.append(f"node {self.node_id}: OBU needs a mobility trace")
        if self.beacon_period_us <= 0:
            out.append(f"node {self.node_id}: beacon period must be positive")
        return out

    def covers(self, t_us: int) -> bool:
        return self.trace is None or self.trace.covers(t_us)

    def position_at(self, t_us: int) -> tuple[float, float, float]:
        """(lat, lon, antenna height) at ``t_us``; OBUs hold their end fixes outside the trace."""
        if self.kind is NodeKind.RSU:
            return self.position
        t = min(max(t_us, self.trace.start_us), self.trace.end_us)
        lat, lon, _ = interpolate(self.trace, t)
        return lat, lon, OBU_ANTENNA_HEIGHT_M


def profile(name: str) -> NicProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown NIC profile {name!r}; known: {', '.join(PROFILES)}") from None


@dataclass
class NodeState:
    seq: dict[Nic, int] = field(default_factory=dict)
    last_gen_us: int | None = None


def next_generation_time(cfg: NodeConfig, rng: random.Random, last_gen_us: int) -> int:
    if cfg.jitter.mode == "none":
        return last_gen_us + cfg.beacon_period_us
    return last_gen_us + cfg.jitter.sample(rng)


def generate_cam(cfg: NodeConfig, state: NodeState, t_us: int) -> list[CamFrame]:
    """One frame per NIC at ``t_us``; empty if the node has no position then."""
    if not cfg.covers(t_us):
        return []
    if cfg.kind is NodeKind.RSU:
        lat, lon, _ = cfg.position
        glat, glon, gspeed, ilat, ilon, ispeed, heading = lat, lon, 0.0, lat, lon, 0.0, 0.0
    else:
        fix = cfg.trace.last_fix(t_us)
        ilat, ilon, ispeed = interpolate(cfg.trace, t_us)
        glat, glon, gspeed, heading = fix.lat, fix.lon, fix.speed, fix.heading % 360.0
    frames = []
    for nic in sorted(cfg.nics, key=lambda n: n.value):
        seq = state.seq.get(nic, 0)
        state.seq[nic] = seq + 1
        frames.append(CamFrame(
            src_mac=cfg.macs[nic], nic=nic, seq_num=seq,
            gps_lon=glon, gps_lat=glat, inter_lon=ilon, inter_lat=ilat,
            gps_speed=gspeed, inter_speed=ispeed, heading=heading, timestamp_us=t_us,
        ))
    state.last_gen_us = t_us
    return frames


def on_receive(cfg: NodeConfig, state: NodeState, frame: CamFrame, t_us: int,
               nic: Nic | None = None) -> RxLogRecord | None:
    """RX log entry for a delivered frame; ``None`` for the node's own broadcasts."""
    nic = frame.nic if nic is None else nic
    own = cfg.macs.get(nic)
    if frame.src_mac in cfg.macs.values():
        return None
    lat, lon, _ = cfg.position_at(t_us)
    return RxLogRecord(
        rx_mac=frame.src_mac, rx_lon=frame.inter_lon, rx_lat=frame.inter_lat,
        inter_lon=lon, inter_lat=lat, seq_num=frame.seq_num,
        gps_speed=frame.gps_speed, inter_speed=frame.inter_speed,
        timestamp_us=t_us, local_rx_time_us=t_us, receiver_mac=own,
    )
