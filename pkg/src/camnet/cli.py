"""``camnet`` command line: simulate, analyze, replay and export presets."""

from __future__ import annotations

import argparse
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis as an
from . import engine, scenario
from .cam_codec import (CodecError, RX_COLUMNS, TX_COLUMNS, parse_rx_log, parse_tx_log,
                        write_rx_log, write_tx_log)

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2
SEED_ENV = "CAMNET_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # bad arguments are a validation failure (exit 1), not an internal error
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _seed(args: argparse.Namespace) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# --- simulate -------------------------------------------------------------------

def _scenario_from(args: argparse.Namespace) -> tuple[scenario.Scenario, list[str]]:
    rest = list(args.paths)
    if args.preset:
        kw = {}
        if args.duration is not None:
            kw["duration_s"] = args.duration
        sc = scenario.preset(args.preset, **kw)
    else:
        if not rest:
            raise UsageError("simulate: give a CONFIG file or --preset NAME")
        sc = scenario.load_config(rest.pop(0))
        if args.duration is not None:
            sc = replace(sc, duration_us=int(args.duration * 1e6))
    seed = _seed(args)
    if seed is not None:
        sc = replace(sc, seed=seed)
    return sc, rest


def cmd_simulate(args: argparse.Namespace) -> int:
    sc, rest = _scenario_from(args)
    if args.print_config:
        sys.stdout.write(scenario.dumps_config(sc))
        return EXIT_OK
    if len(rest) != 1:
        raise UsageError("simulate: expected exactly one OUT_DIR")
    out = Path(rest[0])
    result = engine.run(sc)
    result.write(out)
    scenario.export_scenario(sc, out)
    sys.stdout.write(result.summary.report())
    if not result.summary.conservation_ok():
        print("warning: frame accounting does not balance", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


# --- analyze --------------------------------------------------------------------

def _vehicle(logs: an.LogSet, requested: str | None) -> str:
    obus = logs.of_kind("OBU")
    if requested:
        if requested not in logs.nodes():
            raise UsageError(f"no logs for node {requested!r}")
        return requested
    if not obus:
        raise UsageError("no vehicle (OBU) logs found; pass --vehicle")
    return obus[0]


def _kpi_heatmap(logs: an.LogSet, args, out: Path) -> None:
    veh = _vehicle(logs, args.vehicle)
    trace = logs.trace(veh)
    frame = an.LocalFrame(trace.fixes[0].lat, trace.fixes[0].lon)
    for (node, nic), tx in sorted(logs.tx.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        if node == veh or (veh, nic) not in logs.rx:
            continue
        link = an.join_link(tx, logs.rx[(veh, nic)])
        hm = an.pdr_heatmap(link, trace, args.cell_size, args.min_samples, frame)
        path = out / f"heatmap_{node}_to_{veh}_{nic.value}.csv"
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            hm.write_csv(fh)
        print(f"{node}->{veh} {nic.value}: pdr={link.pdr:.4f} cells={len(hm.reported())} -> {path.name}")


def _kpi_intervals(logs: an.LogSet, args, out: Path) -> None:
    for (node, nic), tx in sorted(logs.tx.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        if len(tx) < 2:
            continue
        hist = an.interval_histogram(tx, args.bin_width_us)
        path = out / f"intervals_{node}_{nic.value}.csv"
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            hist.write_csv(fh)
        top = max(hist.counts, key=hist.counts.get)
        print(f"{node} {nic.value}: intervals={hist.total} mode={top}us -> {path.name}")


def _kpi_horizon(logs: an.LogSet, args, out: Path) -> None:
    obus = logs.of_kind("OBU")
    traces = {o: logs.trace(o) for o in obus}
    for src in obus:
        for dst in obus:
            if src == dst:
                continue
            for nic in logs.nics():
                if (src, nic) not in logs.tx or (dst, nic) not in logs.rx:
                    continue
                link = an.join_link(logs.tx[(src, nic)], logs.rx[(dst, nic)])
                hist = an.awareness_horizon(link, traces[src], traces[dst], args.bin_m)
                path = out / f"horizon_{src}_to_{dst}_{nic.value}.csv"
                with path.open("w", encoding="utf-8", newline="\n") as fh:
                    hist.write_csv(fh)
                print(f"{src}->{dst} {nic.value}: delivered={hist.delivered} "
                      f"within_80m={hist.mass_within(80.0):.4f} -> {path.name}")


def _kpi_uplink(logs: an.LogSet, args, out: Path) -> None:
    veh = _vehicle(logs, args.vehicle)
    links = an.v2i_links(logs, veh, args.cell_size, args.min_samples)
    with (out / "uplink_overlap.csv").open("w", encoding="utf-8", newline="\n") as summary:
        summary.write("rsu,nic,uplink_positions,overlap\n")
        for (rsu, nic), link in sorted(links.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            path = out / f"uplink_{rsu}_{nic.value}.csv"
            with path.open("w", encoding="utf-8", newline="\n") as fh:
                an.write_positions(fh, link.uplink)
            ov = link.overlap()
            summary.write(f"{rsu},{nic.value},{len(link.uplink)},{'' if ov != ov else f'{ov:.6f}'}\n")
            print(f"{veh}->{rsu} {nic.value}: positions={len(link.uplink)} overlap={ov:.4f}")
    print(f"mean link overlap: {an.mean_link_overlap(links.values()):.4f}")


KPIS = {
    "pdr-heatmap": _kpi_heatmap,
    "intervals": _kpi_intervals,
    "horizon": _kpi_horizon,
    "uplink": _kpi_uplink,
}


def cmd_analyze(args: argparse.Namespace) -> int:
    log_dir = Path(args.log_dir)
    if not log_dir.is_dir():
        raise UsageError(f"not a directory: {log_dir}")
    logs = an.load_log_dir(log_dir)
    if not logs.tx:
        raise UsageError(f"no TX logs in {log_dir}")
    out = Path(args.out) if args.out else log_dir / "kpi"
    out.mkdir(parents=True, exist_ok=True)
    KPIS[args.kpi](logs, args, out)
    return EXIT_OK


# --- replay ---------------------------------------------------------------------

# files a simulation run writes next to its logs
_NOT_LOGS = {"nodes.csv", "traces.csv", "run_summary.txt"}
_CANONICAL = re.compile(r"^(?P<node>.+)_(?P<nic>HP|LP)_(?P<dir>tx|rx)$")
_NIC_TOKEN = re.compile(r"(?:^|[^A-Za-z])(HP|LP)(?:$|[^A-Za-z])", re.IGNORECASE)


def _first_data_line(lines: list[str]) -> str | None:
    for line in lines:
        if line.strip():
            return line
    return None


def _classify(path: Path, lines: list[str]) -> str:
    """'tx' or 'rx' from the header, or from the column count of a headerless file."""
    first = _first_data_line(lines)
    if first is None:
        raise CodecError(f"{path}: empty log")
    cells = [c.strip() for c in first.split(",")]
    if tuple(cells) == TX_COLUMNS:
        return "tx"
    if tuple(cells) == RX_COLUMNS:
        return "rx"
    if len(cells) == len(TX_COLUMNS):
        return "tx"
    if len(cells) == len(RX_COLUMNS):
        return "rx"
    lineno = lines.index(first) + 1
    raise CodecError(f"{path}:{lineno}: unrecognized line with {len(cells)} columns: {first.strip()!r}")


def _records(path: Path, lines: list[str], direction: str) -> list:
    parse = parse_tx_log if direction == "tx" else parse_rx_log
    header = TX_COLUMNS if direction == "tx" else RX_COLUMNS
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or tuple(c.strip() for c in line.split(",")) == header:
            continue
        try:
            out.append(parse(line))
        except CodecError as exc:
            raise CodecError(f"{path}:{lineno}: {exc}") from None
    return out


def replay_dir(dataset_dir: Path, out_dir: Path) -> list[Path]:
    """Normalize every ``*.log``/``*.txt``/``*.csv`` log under ``dataset_dir`` into canonical files."""
    files = sorted(p for ext in ("*.log", "*.txt", "*.csv") for p in dataset_dir.rglob(ext)
                   if p.name not in _NOT_LOGS and out_dir not in p.parents
                   and "kpi" not in p.relative_to(dataset_dir).parts[:-1])
    if not files:
        raise UsageError(f"no log files in {dataset_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for path in files:
        lines = path.read_text(encoding="utf-8").splitlines()
        direction = _classify(path, lines)
        recs = _records(path, lines, direction)
        m = _CANONICAL.match(path.stem)
        if m and m["dir"] == direction:
            node, nic = m["node"], m["nic"]
        else:
            node = re.sub(r"[^A-Za-z0-9.-]+", "-", path.stem).strip("-") or "node"
            token = _NIC_TOKEN.search(path.stem)
            if direction == "tx" and recs:
                nic = recs[0].nic.value
            elif token:
                nic = token.group(1).upper()
            else:
                raise CodecError(f"{path}: cannot tell which NIC (HP/LP) this receiver log belongs to")
        name = f"{node}_{nic}_{direction}.log"
        if name in written:
            raise CodecError(f"{path}: maps to {name}, already produced from {written[name]}")
        with (out_dir / name).open("w", encoding="utf-8", newline="\n") as fh:
            (write_tx_log if direction == "tx" else write_rx_log)(fh, recs)
        written[name] = path
    manifest = dataset_dir / "nodes.csv"
    if manifest.is_file():
        (out_dir / "nodes.csv").write_text(manifest.read_text(encoding="utf-8"), encoding="utf-8")
    return [out_dir / n for n in written]


def cmd_replay(args: argparse.Namespace) -> int:
    src = Path(args.dataset_dir)
    if not src.is_dir():
        raise UsageError(f"not a directory: {src}")
    out = Path(args.out) if args.out else src / "canonical"
    for p in replay_dir(src, out):
        print(p)
    return EXIT_OK


# --- presets --------------------------------------------------------------------

def cmd_export_preset(args: argparse.Namespace) -> int:
    kw = {} if args.duration is None else {"duration_s": args.duration}
    sc = scenario.preset(args.name, **kw)
    seed = _seed(args)
    if seed is not None:
        sc = replace(sc, seed=seed)
    print(scenario.export_scenario(sc, args.out_dir))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="camnet", description="CAM beaconing simulator and field-trial KPI toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario and write TX/RX logs")
    s.add_argument("paths", nargs="*", metavar="[CONFIG] OUT_DIR")
    s.add_argument("--preset", choices=sorted(scenario.PRESETS))
    s.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the config seed")
    s.add_argument("--duration", type=float, metavar="SECONDS")
    s.add_argument("--print-config", action="store_true",
                   help="print the fully-resolved configuration and exit")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="compute a KPI over a log directory")
    a.add_argument("log_dir")
    a.add_argument("--kpi", required=True, choices=sorted(KPIS))
    a.add_argument("--out", help="output directory (default LOG_DIR/kpi)")
    a.add_argument("--vehicle", help="receiving vehicle for pdr-heatmap/uplink (default: first OBU)")
    a.add_argument("--cell-size", type=float, default=25.0, metavar="M")
    a.add_argument("--min-samples", type=int, default=20)
    a.add_argument("--bin-width-us", type=int, default=1000)
    a.add_argument("--bin-m", type=float, default=10.0)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("replay", help="normalize external logs into canonical files")
    r.add_argument("dataset_dir")
    r.add_argument("--out", help="output directory (default DATASET_DIR/canonical)")
    r.set_defaults(func=cmd_replay)

    e = sub.add_parser("export-preset", help="write a preset as an editable config + traces")
    e.add_argument("name", choices=sorted(scenario.PRESETS))
    e.add_argument("out_dir")
    e.add_argument("--seed", type=int)
    e.add_argument("--duration", type=float, metavar="SECONDS")
    e.set_defaults(func=cmd_export_preset)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except engine.ScenarioError as exc:
        print("error: invalid scenario", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    except (scenario.ConfigError, an.IntegrityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
