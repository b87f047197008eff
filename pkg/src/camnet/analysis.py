"""KPIs over TX/RX log sets: PDR heatmaps, interval histograms, awareness horizon."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .cam_codec import Nic, RxLogRecord, TxLogRecord, read_rx_log, read_tx_log
from .geo import GpsFix, LocalFrame, MobilityTrace, interpolate, distance_m


class IntegrityError(ValueError):
    pass


# --- joining ------------------------------------------------------------------

def boot_sessions(tx_log: Sequence[TxLogRecord]) -> list[int]:
    """Session index per record; a new session starts wherever seq_num fails to increase."""
    out, session = [], 0
    for i, rec in enumerate(tx_log):
        if i and rec.seq_num <= tx_log[i - 1].seq_num:
            session += 1
        out.append(session)
    return out


@dataclass
class LinkLog:
    tx: list[TxLogRecord]
    session: list[int]
    matched: dict[int, RxLogRecord]
    anomalies: list[RxLogRecord] = field(default_factory=list)

    @property
    def tx_count(self) -> int:
        return len(self.tx)

    @property
    def rx_count(self) -> int:
        return len(self.matched)

    @property
    def session_count(self) -> int:
        return self.session[-1] + 1 if self.session else 0

    @property
    def pdr(self) -> float:
        return self.rx_count / self.tx_count if self.tx else float("nan")


def join_link(tx_log: Sequence[TxLogRecord], rx_log: Iterable[RxLogRecord],
              max_skew_us: int = 1_000_000) -> LinkLog:
    """Match one transmitter's TX log against one receiver's RX log.

    An RX record belongs to the latest boot session that generated its
    sequence number no later than ``max_skew_us`` after the reception time.
    RX records from other transmitters are ignored; records with no TX
    counterpart are returned as anomalies.
    """
    tx_log = list(tx_log)
    macs = {r.src_mac for r in tx_log}
    sessions = boot_sessions(tx_log)
    by_seq: dict[int, list[int]] = {}
    for i, rec in enumerate(tx_log):
        by_seq.setdefault(rec.seq_num, []).append(i)
    matched: dict[int, RxLogRecord] = {}
    anomalies = []
    for rx in rx_log:
        if rx.rx_mac not in macs:
            continue
        best = None
        for i in by_seq.get(rx.seq_num, ()):
            if tx_log[i].timestamp_us <= rx.timestamp_us + max_skew_us:
                if best is None or tx_log[i].timestamp_us > tx_log[best].timestamp_us:
                    best = i
        if best is None:
            anomalies.append(rx)
            continue
        if best in matched:
            raise IntegrityError(
                f"duplicate reception of {rx.rx_mac} seq {rx.seq_num} in session {sessions[best]}")
        matched[best] = rx
    return LinkLog(tx_log, sessions, matched, anomalies)


def trace_from_tx_log(tx_log: Iterable[TxLogRecord], node_id: str = "receiver") -> MobilityTrace:
    """Position trace built from a node's own interpolated TX-log coordinates."""
    fixes: dict[int, GpsFix] = {}
    for r in tx_log:
        fixes.setdefault(r.timestamp_us, GpsFix(r.timestamp_us, r.inter_lat, r.inter_lon,
                                                r.inter_speed, r.heading))
    return MobilityTrace(node_id, tuple(fixes[t] for t in sorted(fixes)))


# --- PDR heatmap --------------------------------------------------------------

@dataclass
class HeatCell:
    tx: int = 0
    rx: int = 0


@dataclass
class GridHeatmap:
    frame: LocalFrame
    cell_size_m: float
    min_samples: int
    cells: dict[tuple[int, int], HeatCell]
    excluded: int = 0

    def pdr(self, cell: tuple[int, int]) -> float | None:
        """Cell PDR, or ``None`` when the cell is missing or has too few samples."""
        c = self.cells.get(cell)
        if c is None or c.tx < self.min_samples:
            return None
        return c.rx / c.tx

    def reported(self) -> dict[tuple[int, int], float]:
        return {k: p for k in sorted(self.cells) if (p := self.pdr(k)) is not None}

    def cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        x, y = self.frame.to_local(lat, lon)
        return math.floor(x / self.cell_size_m), math.floor(y / self.cell_size_m)

    def center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return self.frame.to_geo((cell[0] + 0.5) * self.cell_size_m, (cell[1] + 0.5) * self.cell_size_m)

    def write_csv(self, fh: TextIO) -> None:
        fh.write("cell_x,cell_y,lat,lon,tx,rx,pdr\n")
        for key in sorted(self.cells):
            c = self.cells[key]
            lat, lon = self.center(key)
            p = self.pdr(key)
            fh.write(f"{key[0]},{key[1]},{lat:.7f},{lon:.7f},{c.tx},{c.rx},"
                     f"{'' if p is None else f'{p:.6f}'}\n")


def pdr_heatmap(link: LinkLog, receiver_positions: MobilityTrace, cell_size_m: float = 25.0,
                min_samples: int = 20, frame: LocalFrame | None = None) -> GridHeatmap:
    """Per-cell PDR keyed by where the receiver was when each frame was generated."""
    if frame is None:
        first = receiver_positions.fixes[0]
        frame = LocalFrame(first.lat, first.lon)
    grid = GridHeatmap(frame, cell_size_m, min_samples, {})
    for i, rec in enumerate(link.tx):
        if not receiver_positions.covers(rec.timestamp_us):
            grid.excluded += 1
            continue
        lat, lon, _ = interpolate(receiver_positions, rec.timestamp_us)
        cell = grid.cells.setdefault(grid.cell_of(lat, lon), HeatCell())
        cell.tx += 1
        cell.rx += i in link.matched
    return grid


def mean_pdr_drop(reference: GridHeatmap, other: GridHeatmap) -> tuple[float, int]:
    """Mean of (reference - other) PDR over cells reported by both, and the cell count."""
    ref, oth = reference.reported(), other.reported()
    shared = sorted(set(ref) & set(oth))
    if not shared:
        return float("nan"), 0
    return sum(ref[c] - oth[c] for c in shared) / len(shared), len(shared)


# --- transmission intervals ---------------------------------------------------

@dataclass
class IntervalHistogram:
    bin_width_us: int
    counts: dict[int, int]
    sessions: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def fractions(self) -> dict[int, float]:
        n = self.total
        return {k: v / n for k, v in sorted(self.counts.items())}

    def write_csv(self, fh: TextIO) -> None:
        write_bins(fh, self.counts)


def interval_histogram(tx_log: Sequence[TxLogRecord], bin_width_us: int = 1000) -> IntervalHistogram:
    sessions = boot_sessions(tx_log)
    counts: Counter[int] = Counter()
    for i in range(1, len(tx_log)):
        if sessions[i] != sessions[i - 1]:
            continue
        delta = tx_log[i].timestamp_us - tx_log[i - 1].timestamp_us
        counts[(delta // bin_width_us) * bin_width_us] += 1
    return IntervalHistogram(bin_width_us, dict(sorted(counts.items())),
                             sessions[-1] + 1 if sessions else 0)


def total_variation(p: dict[int, float], q: dict[int, float]) -> float:
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))


# --- awareness horizon --------------------------------------------------------

@dataclass
class HorizonHistogram:
    bin_m: float
    rx_counts: dict[int, int]
    tx_counts: dict[int, int]
    excluded: int = 0

    def bin_start(self, k: int) -> float:
        return k * self.bin_m

    @property
    def delivered(self) -> int:
        return sum(self.rx_counts.values())

    def mass_within(self, d_m: float) -> float:
        """Fraction of delivered frames received at distance <= ``d_m``."""
        n = self.delivered
        inside = sum(v for k, v in self.rx_counts.items() if (k + 1) * self.bin_m <= d_m + 1e-9)
        return inside / n if n else float("nan")

    def delivery_ratio(self) -> dict[int, float]:
        return {k: self.rx_counts.get(k, 0) / n for k, n in sorted(self.tx_counts.items()) if n}

    def write_csv(self, fh: TextIO) -> None:
        fh.write("bin_start,count,offered\n")
        for k in sorted(set(self.rx_counts) | set(self.tx_counts)):
            fh.write(f"{self.bin_start(k):g},{self.rx_counts.get(k, 0)},{self.tx_counts.get(k, 0)}\n")


def awareness_horizon(link: LinkLog, tx_trace: MobilityTrace, rx_trace: MobilityTrace,
                      bin_m: float = 10.0) -> HorizonHistogram:
    """Distance between the two vehicles when each frame was received.

    Offered frames (every TX record, at its generation time) are binned too,
    so per-bin delivery ratios are available.
    """
    hist = HorizonHistogram(bin_m, {}, {})

    def where(t: int) -> float | None:
        if not (tx_trace.covers(t) and rx_trace.covers(t)):
            return None
        a = interpolate(tx_trace, t)
        b = interpolate(rx_trace, t)
        return distance_m(a[:2], b[:2])

    for i, rec in enumerate(link.tx):
        d = where(rec.timestamp_us)
        if d is not None:
            k = int(d // bin_m)
            hist.tx_counts[k] = hist.tx_counts.get(k, 0) + 1
        rx = link.matched.get(i)
        if rx is None:
            continue
        d = where(rx.timestamp_us)
        if d is None:
            hist.excluded += 1
            continue
        k = int(d // bin_m)
        hist.rx_counts[k] = hist.rx_counts.get(k, 0) + 1
    hist.rx_counts = dict(sorted(hist.rx_counts.items()))
    hist.tx_counts = dict(sorted(hist.tx_counts.items()))
    return hist


# --- uplink ------------------------------------------------------------------

def uplink_positions(rsu_rx_log: Iterable[RxLogRecord],
                     vehicle_tx_log: Iterable[TxLogRecord] | None = None) -> list[tuple[float, float]]:
    """Vehicle positions (carried in the frame) of every CAM the RSU received."""
    macs = None if vehicle_tx_log is None else {r.src_mac for r in vehicle_tx_log}
    return [(r.rx_lat, r.rx_lon) for r in rsu_rx_log if macs is None or r.rx_mac in macs]


def uplink_overlap(positions: Sequence[tuple[float, float]], downlink: GridHeatmap) -> float:
    """Fraction of uplink positions inside downlink cells with a reported PDR > 0."""
    if not positions:
        return float("nan")
    hits = 0
    for lat, lon in positions:
        p = downlink.pdr(downlink.cell_of(lat, lon))
        hits += p is not None and p > 0
    return hits / len(positions)


@dataclass
class V2iLink:
    """Downlink heatmap and uplink positions for one RSU/vehicle pair on one NIC."""

    rsu: str
    nic: Nic
    downlink: LinkLog
    heatmap: GridHeatmap
    uplink: list[tuple[float, float]]

    def overlap(self) -> float:
        return uplink_overlap(self.uplink, self.heatmap)


def v2i_links(logs: "LogSet", vehicle: str, cell_size_m: float = 25.0, min_samples: int = 20,
              frame: LocalFrame | None = None) -> dict[tuple[str, Nic], V2iLink]:
    """Every RSU's downlink to ``vehicle`` and the vehicle's uplink to that RSU."""
    trace = logs.trace(vehicle)
    if frame is None:
        frame = LocalFrame(trace.fixes[0].lat, trace.fixes[0].lon)
    out = {}
    for rsu in logs.of_kind("RSU"):
        for nic in logs.nics():
            if (rsu, nic) not in logs.tx or (vehicle, nic) not in logs.tx:
                continue
            link = join_link(logs.tx[(rsu, nic)], logs.rx.get((vehicle, nic), []))
            hm = pdr_heatmap(link, trace, cell_size_m, min_samples, frame)
            up = uplink_positions(logs.rx.get((rsu, nic), []), logs.tx[(vehicle, nic)])
            out[(rsu, nic)] = V2iLink(rsu, nic, link, hm, up)
    return out


def mean_link_overlap(links: Iterable[V2iLink]) -> float:
    """Average of the per-link overlap fractions over links with any uplink positions."""
    vals = [l.overlap() for l in links if l.uplink]
    return sum(vals) / len(vals) if vals else float("nan")


# --- exports -----------------------------------------------------------------

def write_bins(fh: TextIO, counts: dict[int, int]) -> None:
    fh.write("bin_start,count\n")
    for k, v in sorted(counts.items()):
        fh.write(f"{k},{v}\n")


def write_positions(fh: TextIO, positions: Iterable[tuple[float, float]]) -> None:
    fh.write("lat,lon\n")
    for lat, lon in positions:
        fh.write(f"{lat:.7f},{lon:.7f}\n")


# --- log directories ----------------------------------------------------------

@dataclass
class LogSet:
    """TX/RX logs of a run keyed by (node_id, NIC), plus each node's kind."""

    tx: dict[tuple[str, Nic], list[TxLogRecord]]
    rx: dict[tuple[str, Nic], list[RxLogRecord]]
    kinds: dict[str, str]

    def nodes(self) -> list[str]:
        return sorted({k[0] for k in self.tx} | {k[0] for k in self.rx})

    def nics(self) -> list[Nic]:
        return sorted({k[1] for k in self.tx} | {k[1] for k in self.rx}, key=lambda n: n.value)

    def of_kind(self, kind: str) -> list[str]:
        return [n for n in self.nodes() if self.kinds.get(n) == kind]

    def trace(self, node_id: str) -> MobilityTrace:
        recs = [r for (nid, _), log in sorted(self.tx.items(), key=lambda kv: kv[0][1].value)
                if nid == node_id for r in log]
        return trace_from_tx_log(recs, node_id)


def _split_name(stem: str) -> tuple[str, Nic, str]:
    node, nic, direction = stem.rsplit("_", 2)
    return node, Nic(nic), direction


def load_log_dir(path: str | Path) -> LogSet:
    """Load ``<node>_<nic>_{tx|rx}.log`` files; node kinds come from ``nodes.csv``
    when present, otherwise a node whose TX positions never move is an RSU."""
    path = Path(path)
    tx: dict[tuple[str, Nic], list[TxLogRecord]] = {}
    rx: dict[tuple[str, Nic], list[RxLogRecord]] = {}
    for f in sorted(path.glob("*_*_*.log")):
        try:
            node, nic, direction = _split_name(f.stem)
        except ValueError:
            continue
        with f.open(encoding="utf-8") as fh:
            if direction == "tx":
                tx[(node, nic)] = read_tx_log(fh, str(f))
            elif direction == "rx":
                rx[(node, nic)] = read_rx_log(fh, str(f))
    kinds: dict[str, str] = {}
    manifest = path / "nodes.csv"
    if manifest.is_file():
        with manifest.open(encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                kinds[row["node_id"]] = row["kind"]
    for (node, _), log in tx.items():
        if node not in kinds and log:
            static = len({(r.inter_lat, r.inter_lon) for r in log}) == 1
            kinds[node] = "RSU" if static else "OBU"
    return LogSet(tx, rx, kinds)
