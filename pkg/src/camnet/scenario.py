"""Scenario configuration files and the built-in field-trial presets."""

from __future__ import annotations

import math
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .cam_codec import Nic
from .channel import PROFILES, ChannelParams, calibrate_exponent
from .engine import DEFAULT_START_US, Scenario
from .geo import GpsFix, LocalFrame, MobilityTrace, read_traces, write_traces
from .mac import MacParams
from .node import JitterModel, NodeConfig, NodeKind, profile


class ConfigError(ValueError):
    pass


# --- synthetic traces ----------------------------------------------------------

BRISTOL = (51.4545, -2.5879)


def route_trace(node_id: str, frame: LocalFrame, waypoints: list[tuple[float, float]],
                speed_mps: float, start_us: int, duration_us: int, *, loop: bool = False,
                offset_m: float = 0.0, fix_period_us: int = 1_000_000) -> MobilityTrace:
    """Constant-speed drive along a polyline of local (x, y) waypoints.

    ``offset_m`` is the distance already travelled at ``start_us``; ``loop``
    wraps around the closed polygon, otherwise the vehicle stops at the end.
    """
    pts = list(waypoints) + ([waypoints[0]] if loop else [])
    seg = [math.dist(a, b) for a, b in zip(pts, pts[1:])]
    total = sum(seg)

    def at(s: float) -> tuple[float, float, float]:
        if loop:
            s %= total
        s = min(max(s, 0.0), total)
        for i, ((a, b), length) in enumerate(zip(zip(pts, pts[1:]), seg)):
            if s <= length or i == len(seg) - 1:
                w = s / length if length else 0.0
                x, y = a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])
                heading = math.degrees(math.atan2(b[0] - a[0], b[1] - a[1])) % 360.0
                return x, y, heading
            s -= length
        raise AssertionError("unreachable")

    fixes = []
    n = duration_us // fix_period_us + 1
    for k in range(n + 1):  # one spare fix past the window end
        t = start_us + k * fix_period_us
        s = offset_m + speed_mps * (t - start_us) / 1e6
        moving = loop or 0 <= s < total
        x, y, heading = at(s)
        lat, lon = frame.to_geo(x, y)
        fixes.append(GpsFix(t, lat, lon, speed_mps if moving else 0.0, heading))
    return MobilityTrace(node_id, tuple(fixes))


def _macs(index: int) -> dict[Nic, str]:
    return {Nic.HP: f"02:00:00:00:{index:02x}:01", Nic.LP: f"02:00:00:00:{index:02x}:02"}


def _rsu(index: int, node_id: str, frame: LocalFrame, xy: tuple[float, float], height: float,
         jitter: JitterModel) -> NodeConfig:
    lat, lon = frame.to_geo(*xy)
    return NodeConfig(node_id, NodeKind.RSU, {Nic.HP: PROFILES["HP-RSU"], Nic.LP: PROFILES["LP-RSU"]},
                      _macs(index), position=(lat, lon, height), jitter=jitter)


def _obu(index: int, trace: MobilityTrace, jitter: JitterModel) -> NodeConfig:
    return NodeConfig(trace.node_id, NodeKind.OBU, {Nic.HP: PROFILES["HP-OBU"], Nic.LP: PROFILES["LP-OBU"]},
                      _macs(index), trace=trace, jitter=jitter)


# Local metres from BRISTOL. The vehicles circle the block around Lithium;
# Hydrogen and Helium sit across town so that one side of the loop lies in
# their HP fringe, where a link works only now and then.
V2I_LOOP = [(-300.0, -200.0), (300.0, -200.0), (300.0, 200.0), (-300.0, 200.0)]
V2I_RSUS = [
    ("hydrogen", (0.0, -1350.0), 8.0),
    ("helium", (1450.0, 0.0), 5.0),
    ("lithium", (0.0, 0.0), 25.0),
]
V2I_SPEED = 13.0
V2I_INTERFERER_LAG_M = 30.0


def v2i_channel() -> ChannelParams:
    base = ChannelParams(shadow_sigma_db=3.0)
    return replace(base, n_exp=calibrate_exponent(700.0, PROFILES["HP-RSU"], PROFILES["HP-OBU"], base))


def v2v_channel() -> ChannelParams:
    base = ChannelParams(shadow_sigma_db=2.0)
    return replace(base, n_exp=calibrate_exponent(80.0, PROFILES["LP-OBU"], PROFILES["LP-OBU"], base))


def _v2i(name: str, interferer: bool, duration_s: float, seed: int,
         jitter: JitterModel | None, channel: ChannelParams | None) -> Scenario:
    jitter = jitter or JitterModel.default()
    frame = LocalFrame(*BRISTOL)
    start, dur = DEFAULT_START_US, int(duration_s * 1e6)
    nodes = [_rsu(i + 1, nid, frame, xy, h, jitter) for i, (nid, xy, h) in enumerate(V2I_RSUS)]
    nodes.append(_obu(11, route_trace("vehicle1", frame, V2I_LOOP, V2I_SPEED, start, dur,
                                      loop=True, offset_m=V2I_INTERFERER_LAG_M), jitter))
    if interferer:
        nodes.append(_obu(12, route_trace("vehicle2", frame, V2I_LOOP, V2I_SPEED, start, dur,
                                          loop=True, offset_m=0.0), jitter))
    return Scenario(tuple(nodes), channel or v2i_channel(), MacParams(), dur, start, seed, 200, name)


def v2i_solo(duration_s: float = 60.0, seed: int = 1, jitter: JitterModel | None = None,
             channel: ChannelParams | None = None) -> Scenario:
    return _v2i("v2i-solo", False, duration_s, seed, jitter, channel)


def v2i_interferer(duration_s: float = 60.0, seed: int = 1, jitter: JitterModel | None = None,
                   channel: ChannelParams | None = None) -> Scenario:
    return _v2i("v2i-interferer", True, duration_s, seed, jitter, channel)


def v2v_highway(duration_s: float = 40.0, seed: int = 1, jitter: JitterModel | None = None,
                channel: ChannelParams | None = None) -> Scenario:
    """Two vehicles on opposing carriageways that pass each other mid-run."""
    jitter = jitter or JitterModel.default()
    frame = LocalFrame(51.5010, -2.5460)  # M32 approach
    start, dur = DEFAULT_START_US, int(duration_s * 1e6)
    speed = 25.0
    half = speed * duration_s / 2
    east = route_trace("vehicle1", frame, [(-half, -4.0), (half, -4.0)], speed, start, dur)
    west = route_trace("vehicle2", frame, [(half, 4.0), (-half, 4.0)], speed, start, dur)
    nodes = (_obu(11, east, jitter), _obu(12, west, jitter))
    return Scenario(nodes, channel or v2v_channel(), MacParams(), dur, start, seed, 200, "v2v-highway")


# Calibration for the larger interferer gap. With every interval a multiple of
# 4 ms and a 10 ms mean, two nodes generate on the same tick 40% of the time.
GAP_JITTER = {8_000: 0.5, 12_000: 0.5}
GAP_CAPTURE_DB = 10.0


def gap_calibration() -> tuple[JitterModel, ChannelParams]:
    return (JitterModel("empirical", dict(GAP_JITTER)),
            replace(v2i_channel(), capture_threshold_db=GAP_CAPTURE_DB))


def _calibrated(fn):
    def build(duration_s: float = 60.0, seed: int = 1) -> Scenario:
        jitter, channel = gap_calibration()
        sc = fn(duration_s=duration_s, seed=seed, jitter=jitter, channel=channel)
        return replace(sc, name=sc.name + "-gap")
    return build


PRESETS = {
    "v2i-interferer": v2i_interferer,
    "v2i-solo": v2i_solo,
    "v2v-highway": v2v_highway,
    "v2i-interferer-gap": _calibrated(v2i_interferer),
    "v2i-solo-gap": _calibrated(v2i_solo),
}


def preset(name: str, **kwargs: Any) -> Scenario:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


# --- config files ---------------------------------------------------------------

TRACE_FILE = "traces.csv"


def _jitter_table(j: JitterModel) -> dict[str, Any]:
    out: dict[str, Any] = {"mode": j.mode}
    if j.mode == "empirical":
        out["intervals_us"] = {str(k): v for k, v in sorted(j.empirical.items())}
    return out


def _jitter_from(table: dict[str, Any]) -> JitterModel:
    mode = table.get("mode", "none")
    intervals = {int(k): float(v) for k, v in table.get("intervals_us", {}).items()}
    return JitterModel(mode, intervals)


def to_config(sc: Scenario, trace_file: str = TRACE_FILE) -> dict[str, Any]:
    """Fully-resolved, serializable form of ``sc``; OBU traces are referenced by file."""
    nodes = []
    jitters = [n.jitter for n in sc.nodes]
    common = jitters[0] if jitters and all(j == jitters[0] for j in jitters) else None
    for n in sc.nodes:
        entry: dict[str, Any] = {
            "id": n.node_id,
            "kind": n.kind.value,
            "nics": [n.nics[nic].name for nic in sorted(n.nics, key=lambda x: x.value)],
            "macs": {nic.value: mac for nic, mac in sorted(n.macs.items(), key=lambda kv: kv[0].value)},
            "beacon_period_us": n.beacon_period_us,
            "start_offset_us": n.start_offset_us,
        }
        if n.kind is NodeKind.RSU:
            entry.update(lat=n.position[0], lon=n.position[1], height_m=n.position[2])
        else:
            entry["trace"] = trace_file
        if common is None:
            entry["jitter"] = _jitter_table(n.jitter)
        nodes.append(entry)
    cfg: dict[str, Any] = {
        "name": sc.name,
        "seed": sc.seed,
        "start_us": sc.start_us,
        "duration_us": sc.duration_us,
        "payload_bytes": sc.payload_bytes,
        "channel": asdict(sc.channel),
        "mac": asdict(sc.mac),
    }
    if common is not None:
        cfg["jitter"] = _jitter_table(common)
    cfg["nodes"] = nodes
    return cfg


def dumps_config(sc: Scenario, trace_file: str = TRACE_FILE) -> str:
    return tomli_w.dumps(to_config(sc, trace_file))


def export_scenario(sc: Scenario, out_dir: str | Path) -> Path:
    """Write ``scenario.toml`` plus the OBU trace file; returns the config path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces = [n.trace for n in sc.nodes if n.trace is not None]
    if traces:
        with (out_dir / TRACE_FILE).open("w", encoding="utf-8", newline="\n") as fh:
            write_traces(fh, traces)
    path = out_dir / "scenario.toml"
    path.write_text(dumps_config(sc), encoding="utf-8")
    return path


def _params(cls, table: dict[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {', '.join(sorted(unknown))}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    problems: list[str] = []
    trace_cache: dict[Path, dict[str, MobilityTrace]] = {}

    def traces_in(file: Path) -> dict[str, MobilityTrace]:
        if file not in trace_cache:
            with file.open(encoding="utf-8") as fh:
                trace_cache[file] = read_traces(fh, str(file))
        return trace_cache[file]

    default_jitter = _jitter_from(cfg.get("jitter", {"mode": "none"}))
    nodes = []
    for i, entry in enumerate(cfg.get("nodes", [])):
        nid = str(entry.get("id", f"node{i}"))
        try:
            nics = {}
            for pname in entry.get("nics", []):
                prof = profile(pname)
                nics[Nic(prof.power_class.value)] = prof
            macs = {Nic(k): v for k, v in entry.get("macs", {}).items()}
            kind = NodeKind(entry.get("kind", ""))
            jitter = _jitter_from(entry["jitter"]) if "jitter" in entry else default_jitter
        except ValueError as exc:
            problems.append(f"node {nid}: {exc}")
            continue
        position = trace = None
        if kind is NodeKind.RSU:
            try:
                position = (float(entry["lat"]), float(entry["lon"]), float(entry.get("height_m", 0.0)))
            except KeyError as exc:
                problems.append(f"node {nid}: missing {exc.args[0]}")
                continue
        else:
            tpath = base / entry.get("trace", "")
            if not tpath.is_file():
                problems.append(f"node {nid}: trace file not found: {tpath}")
                continue
            try:
                found = traces_in(tpath)
            except ValueError as exc:
                problems.append(f"node {nid}: {exc}")
                continue
            if nid not in found:
                problems.append(f"node {nid}: no fixes for this node in {tpath}")
                continue
            trace = found[nid]
        nodes.append(NodeConfig(
            nid, kind, nics, macs, position=position, trace=trace,
            beacon_period_us=int(entry.get("beacon_period_us", 10_000)),
            jitter=jitter, start_offset_us=int(entry.get("start_offset_us", 0)),
        ))
    if problems:
        raise ConfigError("; ".join(problems))
    if "duration_us" in cfg:
        duration = int(cfg["duration_us"])
    else:
        duration = int(float(cfg.get("duration_s", 60.0)) * 1e6)
    return Scenario(
        tuple(nodes),
        _params(ChannelParams, cfg.get("channel", {}), "channel"),
        _params(MacParams, cfg.get("mac", {}), "mac"),
        duration,
        int(cfg.get("start_us", DEFAULT_START_US)),
        int(cfg.get("seed", 0)),
        int(cfg.get("payload_bytes", 200)),
        str(cfg.get("name", path.stem)),
    )
