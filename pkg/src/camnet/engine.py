"""Deterministic discrete-event core tying nodes, MAC and channel together."""

from __future__ import annotations

import hashlib
import heapq
import io
import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from . import channel as ch
from .analysis import LogSet
from .cam_codec import CAM_LENGTH, Nic, RxLogRecord, TxLogRecord, write_rx_log, write_tx_log
from .geo import M_PER_DEG_LAT
from .mac import MacParams, NicMac
from .node import NodeConfig, NodeKind, NodeState, generate_cam, next_generation_time, on_receive

DEFAULT_START_US = 1_528_884_000_000_000  # 2018-06-13 10:00:00 UTC


class ScenarioError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid scenario:\n  " + "\n  ".join(violations))
        self.violations = violations


class Priority(IntEnum):
    GENERATION = 0
    TX_START = 2
    TX_END = 3
    RX_DECISION = 4


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeConfig, ...]
    channel: ch.ChannelParams = field(default_factory=ch.ChannelParams)
    mac: MacParams = field(default_factory=MacParams)
    duration_us: int = 60_000_000
    start_us: int = DEFAULT_START_US
    seed: int = 0
    payload_bytes: int = 200
    name: str = "custom"

    @property
    def end_us(self) -> int:
        return self.start_us + self.duration_us


def validate(scenario: Scenario) -> list[str]:
    out = []
    if not scenario.nodes:
        out.append("scenario has no nodes")
    if scenario.duration_us <= 0:
        out.append("duration must be positive")
    if scenario.payload_bytes < CAM_LENGTH:
        out.append(f"payload_bytes {scenario.payload_bytes} smaller than the {CAM_LENGTH}-byte CAM")
    seen_ids: set[str] = set()
    seen_macs: dict[str, str] = {}
    for node in scenario.nodes:
        if node.node_id in seen_ids:
            out.append(f"duplicate node_id {node.node_id!r}")
        seen_ids.add(node.node_id)
        for mac in node.macs.values():
            if mac in seen_macs and seen_macs[mac] != node.node_id:
                out.append(f"MAC {mac} used by both {seen_macs[mac]!r} and {node.node_id!r}")
            seen_macs[mac] = node.node_id
        out.extend(node.problems())
        if node.kind is NodeKind.OBU and node.trace is not None:
            tr = node.trace
            if tr.start_us > scenario.start_us or tr.end_us < scenario.end_us:
                out.append(f"node {node.node_id}: trace [{tr.start_us}, {tr.end_us}] does not "
                           f"cover simulation window [{scenario.start_us}, {scenario.end_us}]")
    return out


def rng_stream(seed: int, *keys: object) -> random.Random:
    """Independent RNG for (seed, keys); adding nodes never perturbs other streams."""
    digest = hashlib.blake2b(repr((seed, *keys)).encode(), digest_size=16).digest()
    return random.Random(int.from_bytes(digest, "little"))


@dataclass
class RunSummary:
    scenario: str
    seed: int
    generated: int = 0
    transmitted: int = 0
    queue_dropped: int = 0
    delivered: int = 0
    lost_noise: int = 0
    lost_collision: int = 0
    opportunities: int = 0
    events: int = 0
    wall_s: float = 0.0
    per_receiver: dict[str, Counter] = field(default_factory=dict)

    def conservation_ok(self) -> bool:
        if self.generated != self.transmitted + self.queue_dropped:
            return False
        if self.delivered + self.lost_noise + self.lost_collision != self.opportunities:
            return False
        return all(c["delivered"] + c["lost_noise"] + c["lost_collision"] == c["opportunities"]
                   for c in self.per_receiver.values())

    def report(self) -> str:
        lines = [
            f"scenario: {self.scenario}",
            f"seed: {self.seed}",
            f"generated: {self.generated}",
            f"transmitted: {self.transmitted}",
            f"queue_dropped: {self.queue_dropped}",
            f"reception_opportunities: {self.opportunities}",
            f"delivered: {self.delivered}",
            f"lost_noise: {self.lost_noise}",
            f"lost_collision: {self.lost_collision}",
            f"events_processed: {self.events}",
            f"wall_clock_s: {self.wall_s:.3f}",
        ]
        return "\n".join(lines) + "\n"


LogKey = tuple[str, Nic]


@dataclass
class SimResult:
    scenario: Scenario
    tx_logs: dict[LogKey, list[TxLogRecord]]
    rx_logs: dict[LogKey, list[RxLogRecord]]
    summary: RunSummary

    def log_texts(self) -> dict[str, str]:
        """File name -> contents for every TX/RX log, in canonical format."""
        out = {}
        for node in self.scenario.nodes:
            for nic in sorted(node.nics, key=lambda n: n.value):
                key = (node.node_id, nic)
                buf = io.StringIO()
                write_tx_log(buf, self.tx_logs.get(key, []))
                out[f"{node.node_id}_{nic.value}_tx.log"] = buf.getvalue()
                buf = io.StringIO()
                write_rx_log(buf, self.rx_logs.get(key, []))
                out[f"{node.node_id}_{nic.value}_rx.log"] = buf.getvalue()
        return out

    def logs(self) -> LogSet:
        kinds = {n.node_id: n.kind.value for n in self.scenario.nodes}
        return LogSet(self.tx_logs, self.rx_logs, kinds)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, text in sorted(self.log_texts().items()):
            h.update(name.encode())
            h.update(text.encode())
        return h.hexdigest()

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.log_texts().items():
            p = out_dir / name
            p.write_text(text, encoding="utf-8", newline="\n")
            written.append(p)
        manifest = out_dir / "nodes.csv"
        with manifest.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("node_id,kind,nic,mac\n")
            for node in self.scenario.nodes:
                for nic in sorted(node.nics, key=lambda n: n.value):
                    fh.write(f"{node.node_id},{node.kind.value},{nic.value},{node.macs[nic]}\n")
        written.append(manifest)
        summary = out_dir / "run_summary.txt"
        summary.write_text(self.summary.report(), encoding="utf-8", newline="\n")
        written.append(summary)
        return written


class _Tx:
    __slots__ = ("src", "nic", "frame", "start", "end", "powers", "overlaps")

    def __init__(self, src: int, nic: Nic, frame, start: int, end: int):
        self.src = src
        self.nic = nic
        self.frame = frame
        self.start = start
        self.end = end
        self.powers: dict[int, float] = {}
        self.overlaps: list[_Tx] = []


def _planar_3d(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    dx = (b[1] - a[1]) * M_PER_DEG_LAT * math.cos(math.radians(0.5 * (a[0] + b[0])))
    dy = (b[0] - a[0]) * M_PER_DEG_LAT
    return math.sqrt(dx * dx + dy * dy + (b[2] - a[2]) ** 2)


class _Engine:
    def __init__(self, scenario: Scenario, seed: int, event_log: list | None):
        self.sc = scenario
        self.seed = seed
        self.params = scenario.channel
        self.nodes = list(scenario.nodes)
        self.states = [NodeState() for _ in self.nodes]
        self.heap: list = []
        self.tiebreak = 0
        self.event_log = event_log
        self.now = scenario.start_us
        self._pos_at = -1
        self._pos: dict[int, tuple[float, float, float]] = {}
        self.summary = RunSummary(scenario.name, seed)
        self.tx_logs: dict[LogKey, list[TxLogRecord]] = {}
        self.rx_logs: dict[LogKey, list[RxLogRecord]] = {}
        self.jitter_rng = [rng_stream(seed, n.node_id, "jitter") for n in self.nodes]
        self.macs: list[dict[Nic, NicMac]] = []
        for n in self.nodes:
            self.macs.append({
                nic: NicMac(scenario.mac, rng_stream(seed, n.node_id, nic.value, "backoff"),
                            scenario.payload_bytes)
                for nic in n.nics
            })
            for nic in n.nics:
                self.tx_logs[(n.node_id, nic)] = []
                self.rx_logs[(n.node_id, nic)] = []
        self.active: dict[Nic, list[_Tx]] = {nic: [] for nic in Nic}
        self.link_rng: dict[tuple[int, int, Nic], random.Random] = {}
        self.link_shadow: dict[tuple[int, int, Nic], float] = {}
        # per channel: (src, dst) -> (link gain dB, in-range distance limit m)
        sigma3 = 3 * self.params.shadow_sigma_db
        self.links: dict[Nic, list[tuple[int, int, float, float]]] = {nic: [] for nic in Nic}
        for i, a in enumerate(self.nodes):
            for nic, pa in a.nics.items():
                for j, b in enumerate(self.nodes):
                    if i == j or nic not in b.nics:
                        continue
                    pb = b.nics[nic]
                    self.links[nic].append(
                        (i, j, ch.link_gain_db(pa, pb), ch.nominal_range_m(pa, pb, self.params, sigma3)))
        self.by_src: dict[tuple[int, Nic], list[tuple[int, float, float]]] = {}
        for nic, links in self.links.items():
            for i, j, gain, limit in links:
                self.by_src.setdefault((i, nic), []).append((j, gain, limit))
        for recv in self.nodes:
            self.summary.per_receiver[recv.node_id] = Counter(
                delivered=0, lost_noise=0, lost_collision=0, opportunities=0)

    # -- queue -----------------------------------------------------------------

    def push(self, t: int, prio: Priority, kind: str, payload) -> None:
        self.tiebreak += 1
        heapq.heappush(self.heap, (t, prio, self.tiebreak, kind, payload, self.now))

    def shadow(self, src: int, dst: int, nic: Nic) -> float:
        p = self.params
        if p.shadow_sigma_db <= 0:
            return 0.0
        key = (src, dst, nic)
        if p.shadow_mode == "link":
            if key not in self.link_shadow:
                r = rng_stream(p.seed, self.seed, self.nodes[src].node_id,
                               self.nodes[dst].node_id, nic.value, "shadow")
                self.link_shadow[key] = r.gauss(0.0, p.shadow_sigma_db)
            return self.link_shadow[key]
        r = self.link_rng.get(key)
        if r is None:
            r = self.link_rng[key] = rng_stream(p.seed, self.seed, self.nodes[src].node_id,
                                                self.nodes[dst].node_id, nic.value, "shadow")
        return r.gauss(0.0, p.shadow_sigma_db)

    def position(self, idx: int) -> tuple[float, float, float]:
        if self._pos_at != self.now:
            self._pos_at = self.now
            self._pos = {}
        pos = self._pos.get(idx)
        if pos is None:
            pos = self._pos[idx] = self.nodes[idx].position_at(self.now)
        return pos

    # -- handlers --------------------------------------------------------------

    def on_generation(self, idx: int) -> None:
        node, state = self.nodes[idx], self.states[idx]
        for frame in generate_cam(node, state, self.now):
            self.tx_logs[(node.node_id, frame.nic)].append(TxLogRecord.from_frame(frame))
            self.summary.generated += 1
            mac = self.macs[idx][frame.nic]
            start = mac.enqueue(frame, self.now)
            if start is not None:
                self.push(start, Priority.TX_START, "tx_start", (idx, frame.nic, mac.token))
        nxt = next_generation_time(node, self.jitter_rng[idx], self.now)
        if nxt < self.sc.end_us:
            self.push(nxt, Priority.GENERATION, "gen", idx)

    def on_tx_start(self, idx: int, nic: Nic, token: int) -> None:
        mac = self.macs[idx][nic]
        attempt = mac.start(self.now, token)
        if attempt is None:
            return
        self.summary.transmitted += 1
        tx = _Tx(idx, nic, attempt.frame, attempt.start_time_us, attempt.end_time_us)
        pos_a = self.position(idx)
        pl0, n10 = self.params.pl0_db, 10 * self.params.n_exp
        for j, gain, limit in self.by_src.get((idx, nic), ()):
            other = self.nodes[j]
            if not (other.covers(self.now) or self.now >= self.sc.end_us):
                continue
            d = _planar_3d(pos_a, self.position(j))
            if d > limit:
                continue
            loss = pl0 + n10 * math.log10(max(d, 1.0)) + self.shadow(idx, j, nic)
            tx.powers[j] = gain - loss
        active = self.active[nic]
        active[:] = [g for g in active if g.end > self.now]
        for g in active:
            g.overlaps.append(tx)
            tx.overlaps.append(g)
        active.append(tx)
        sens = self.params.sensitivity_dbm
        for j, p in tx.powers.items():
            if p >= sens:
                self.macs[j][nic].sense_start(self.now)
        self.push(tx.end, Priority.TX_END, "tx_end", tx)

    def on_tx_end(self, tx: _Tx) -> None:
        sens = self.params.sensitivity_dbm
        for j, p in sorted(tx.powers.items()):
            if p >= sens:
                mac = self.macs[j][tx.nic]
                start = mac.sense_end(self.now)
                if start is not None:
                    self.push(start, Priority.TX_START, "tx_start", (j, tx.nic, mac.token))
        mac = self.macs[tx.src][tx.nic]
        start = mac.finish(self.now)
        if start is not None:
            self.push(start, Priority.TX_START, "tx_start", (tx.src, tx.nic, mac.token))
        self.push(self.now, Priority.RX_DECISION, "rx", tx)

    def on_rx_decision(self, tx: _Tx) -> None:
        s = self.summary
        for j in sorted(tx.powers):
            recv = self.nodes[j]
            counts = s.per_receiver[recv.node_id]
            counts["opportunities"] += 1
            s.opportunities += 1
            if any(g.src == j for g in tx.overlaps):
                verdict = ch.Verdict.LOST_COLLISION  # half duplex
            else:
                interference = [g.powers[j] for g in tx.overlaps if j in g.powers]
                verdict = ch.deliver(tx.powers[j], interference, self.params)
            counts[verdict.value] += 1
            setattr(s, verdict.value, getattr(s, verdict.value) + 1)
            if verdict is ch.Verdict.DELIVERED:
                rec = on_receive(recv, self.states[j], tx.frame, self.now, tx.nic)
                if rec is not None:
                    self.rx_logs[(recv.node_id, tx.nic)].append(rec)

    # -- loop ------------------------------------------------------------------

    def run(self) -> SimResult:
        t0 = time.perf_counter()
        for idx, node in enumerate(self.nodes):
            first = self.sc.start_us + node.start_offset_us
            if first < self.sc.end_us:
                self.push(first, Priority.GENERATION, "gen", idx)
        heap = self.heap
        while heap:
            t, prio, tb, kind, payload, scheduled_at = heapq.heappop(heap)
            self.now = t
            self.summary.events += 1
            if self.event_log is not None:
                self.event_log.append((scheduled_at, t, int(prio), tb, kind))
            if kind == "gen":
                self.on_generation(payload)
            elif kind == "tx_start":
                self.on_tx_start(*payload)
            elif kind == "tx_end":
                self.on_tx_end(payload)
            else:
                self.on_rx_decision(payload)
        for macs in self.macs:
            for mac in macs.values():
                self.summary.queue_dropped += mac.queue_dropped
        self.summary.wall_s = time.perf_counter() - t0
        return SimResult(self.sc, self.tx_logs, self.rx_logs, self.summary)


def run(scenario: Scenario, seed: int | None = None, *, event_log: list | None = None) -> SimResult:
    """Simulate ``scenario`` until every generated frame has left the air.

    Generation stops at the end of the window; frames still queued then are
    transmitted (and decided) before the run returns.
    """
    problems = validate(scenario)
    if problems:
        raise ScenarioError(problems)
    seed = scenario.seed if seed is None else seed
    return _Engine(scenario, seed, event_log).run()
