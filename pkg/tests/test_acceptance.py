"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a PASS/FAIL line; the lines are printed as they happen
(visible with ``-s``) and again in pytest's terminal summary.
Run directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import math
import random
import sys
import time

import pytest
from scipy.stats import chisquare

from camnet import analysis as an
from camnet import scenario
from camnet.cam_codec import (CamFrame, Nic, RxLogRecord, TxLogRecord, decode_cam, encode_cam,
                              format_rx_log, format_tx_log, parse_rx_log, parse_tx_log)
from camnet.channel import PROFILES, ChannelParams, calibrate_exponent
from camnet.engine import run
from camnet.mac import MacParams, contention_round, draw_backoff
from camnet.node import DEFAULT_EMPIRICAL, JitterModel

from conftest import static_node, static_scenario

pytestmark = pytest.mark.slow

# pinned tolerances
RUNTIME_LIMIT_S = 10.0
CALIBRATION_TOL = 0.01
HORIZON_MASS_MIN, HORIZON_NEAR_M, HORIZON_FAR_M, HORIZON_FAR_MAX = 0.90, 80.0, 100.0, 0.10
DROP_MIN = 0.10
GAP_TARGET, GAP_TOL = 0.30, 0.10
TV_MAX, INTERVALS_MIN = 0.01, 10**5
COLLISION_REL_TOL, MAC_TRIALS, CHI2_P_MIN = 0.02, 10**5, 0.01
V2I_DURATION_S = 200.0  # one full lap of the loop around the serving RSU
SERVING_RSU = "lithium"

RESULTS: list[str] = []
_SIMS: list = []


def report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} -- {detail}"
    RESULTS.append(line)
    print(line)


def simulate(sc, **kw):
    r = run(sc, **kw)
    _SIMS.append(r)
    return r


_cache: dict = {}


def v2i_pair(gap: bool):
    if gap not in _cache:
        suffix = "-gap" if gap else ""
        solo = simulate(scenario.preset("v2i-solo" + suffix, duration_s=V2I_DURATION_S))
        inter = simulate(scenario.preset("v2i-interferer" + suffix, duration_s=V2I_DURATION_S))
        frame = an.LocalFrame(*scenario.BRISTOL)
        _cache[gap] = (an.v2i_links(solo.logs(), "vehicle1", frame=frame),
                       an.v2i_links(inter.logs(), "vehicle1", frame=frame))
    return _cache[gap]


def test_1_determinism_and_runtime():
    digests, problems = {}, []
    t0 = time.perf_counter()
    first = simulate(scenario.preset("v2i-interferer"))
    wall = time.perf_counter() - t0
    for name in sorted(scenario.PRESETS):
        a = first if name == "v2i-interferer" else simulate(scenario.preset(name))
        b = simulate(scenario.preset(name))
        digests[name] = a.digest()
        if a.log_texts() != b.log_texts():
            problems.append(name)
    frames = first.summary.generated
    ok = not problems and wall < RUNTIME_LIMIT_S
    report(1, "determinism + runtime", ok,
           f"identical logs for {len(digests) - len(problems)}/{len(digests)} presets; "
           f"v2i-interferer 60 s ({frames} frames) in {wall:.2f} s (limit {RUNTIME_LIMIT_S} s)")
    assert ok


def _random_frame(rng):
    return CamFrame(":".join(f"{rng.randrange(256):02x}" for _ in range(6)), rng.choice(list(Nic)),
                    rng.randrange(2**32), rng.uniform(-180, 180), rng.uniform(-90, 90),
                    rng.uniform(-180, 180), rng.uniform(-90, 90), rng.uniform(0, 70),
                    rng.uniform(0, 70), rng.uniform(0, 359.999), rng.randrange(2**62))


def test_2_round_trips():
    rng = random.Random(2)
    bad = 0
    n = 10**4
    for _ in range(n):
        f = _random_frame(rng)
        bad += decode_cam(encode_cam(f)) != f
        tx = TxLogRecord.from_frame(f)
        bad += parse_tx_log(format_tx_log(tx)) != tx
        rx = RxLogRecord(f.src_mac, f.inter_lon, f.inter_lat, rng.uniform(-180, 180), rng.uniform(-90, 90),
                         f.seq_num, f.gps_speed, f.inter_speed, f.timestamp_us, f.timestamp_us + 400)
        bad += parse_rx_log(format_rx_log(rx)) != rx
    report(2, "codec/log round-trips", bad == 0, f"{n} frames, {n} TX and {n} RX records, {bad} mismatches")
    assert bad == 0


def test_3_calibration():
    p = ChannelParams()
    hp = calibrate_exponent(700, PROFILES["HP-RSU"], PROFILES["HP-OBU"], p)
    lp = calibrate_exponent(80, PROFILES["LP-OBU"], PROFILES["LP-OBU"], p)
    ok = abs(hp - 3.06) <= CALIBRATION_TOL and abs(lp - 4.16) <= CALIBRATION_TOL
    report(3, "link-budget calibration", ok,
           f"HP 700 m -> n={hp:.4f} (3.06), LP V2V 80 m -> n={lp:.4f} (4.16), tol {CALIBRATION_TOL}")
    assert ok


def test_4_awareness_horizon():
    r = simulate(scenario.v2v_highway())
    logs = r.logs()
    merged = an.HorizonHistogram(10.0, {}, {})
    for a, b in (("vehicle1", "vehicle2"), ("vehicle2", "vehicle1")):
        link = an.join_link(logs.tx[(a, Nic.LP)], logs.rx[(b, Nic.LP)])
        h = an.awareness_horizon(link, logs.trace(a), logs.trace(b), 10.0)
        for src, dst in ((h.rx_counts, merged.rx_counts), (h.tx_counts, merged.tx_counts)):
            for k, v in src.items():
                dst[k] = dst.get(k, 0) + v
    mass = merged.mass_within(HORIZON_NEAR_M)
    far = {k: v for k, v in merged.delivery_ratio().items() if merged.bin_start(k) >= HORIZON_FAR_M}
    worst = max(far.values())
    ok = mass >= HORIZON_MASS_MIN and worst < HORIZON_FAR_MAX
    report(4, "awareness horizon (LP V2V)", ok,
           f"{mass:.3f} of {merged.delivered} delivered frames within {HORIZON_NEAR_M:g} m "
           f"(min {HORIZON_MASS_MIN}); worst delivery ratio beyond {HORIZON_FAR_M:g} m = {worst:.3f} "
           f"(max {HORIZON_FAR_MAX})")
    assert ok


def test_5_interferer_effect():
    lines, ok = [], True
    for gap in (False, True):
        solo, inter = v2i_pair(gap)
        for nic in (Nic.HP, Nic.LP):
            drop, cells = an.mean_pdr_drop(solo[(SERVING_RSU, nic)].heatmap, inter[(SERVING_RSU, nic)].heatmap)
            good = drop >= DROP_MIN if not gap else abs(drop - GAP_TARGET) <= GAP_TOL
            ok &= good
            lines.append(f"{'gap' if gap else 'default'} {nic.value} drop={100 * drop:.1f} pts over {cells} cells")
    report(5, "interferer PDR drop", ok,
           f"{'; '.join(lines)} (default >= {100 * DROP_MIN:g}, calibrated {100 * GAP_TARGET:g}+-{100 * GAP_TOL:g})")
    assert ok


def test_6_jitter_fidelity():
    cfg = static_node(1, nics=(Nic.HP,), jitter=JitterModel.default())
    log = simulate(static_scenario([cfg], duration_us=1_400_000_000)).tx_logs[("rsu1", Nic.HP)]
    hist = an.interval_histogram(log, 1000)
    tv = an.total_variation(hist.fractions(), {k: p for k, p in DEFAULT_EMPIRICAL.items()})
    bimodal = static_node(1, nics=(Nic.HP,), jitter=JitterModel("empirical", {12_000: 0.5, 14_000: 0.5}))
    blog = simulate(static_scenario([bimodal], duration_us=60_000_000)).tx_logs[("rsu1", Nic.HP)]
    bh = an.interval_histogram(blog, 1000)
    peaks = sorted(sorted(bh.counts, key=bh.counts.get, reverse=True)[:2])
    ok = tv < TV_MAX and hist.total >= INTERVALS_MIN and peaks == [12_000, 14_000]
    report(6, "jitter fidelity", ok,
           f"TV={tv:.4f} over {hist.total} intervals (max {TV_MAX}); bimodal peaks at {peaks}")
    assert ok


def test_7_mac_oracle():
    exact = sum(a == b for a, b in itertools.product(range(16), repeat=2)) / 256
    rng = random.Random(7)
    params = MacParams()
    hits = sum(len(contention_round(2, params, rng)) > 1 for _ in range(MAC_TRIALS))
    rate = hits / MAC_TRIALS
    rel = abs(rate - exact) / exact
    draws = [draw_backoff(params, rng) for _ in range(MAC_TRIALS)]
    p = chisquare([draws.count(k) for k in range(16)]).pvalue
    ok = rel <= COLLISION_REL_TOL and p > CHI2_P_MIN
    report(7, "MAC oracle", ok,
           f"collision rate {rate:.5f} vs enumerated {exact:.5f} (rel err {100 * rel:.2f}%, max "
           f"{100 * COLLISION_REL_TOL:g}%); backoff chi2 p={p:.3f} (min {CHI2_P_MIN})")
    assert ok


def test_8_pdr_oracle():
    rng = random.Random(8)
    mac = "02:00:00:00:01:01"
    mismatches, cases = 0, 200
    for _ in range(cases):
        txs, rxs, sent, got = [], [], set(), set()
        t = 0
        for sess in range(rng.randint(1, 5)):
            for seq in range(rng.randint(1, 200)):
                t += rng.choice([10_000, 12_000, 14_000])
                txs.append(TxLogRecord(-2.5, 51.4, -2.5, 51.4, seq, 0, 0, t, mac, Nic.LP, 0))
                sent.add((sess, seq))
                if rng.random() < rng.random():
                    rxs.append(RxLogRecord(mac, -2.5, 51.4, -2.5, 51.4, seq, 0, 0, t + 500, t + 500))
                    got.add((sess, seq))
            t += 3_000_000
        rng.shuffle(rxs)
        oracle = len(sent & got) / len(sent)
        mismatches += an.join_link(txs, rxs).pdr != oracle
    report(8, "PDR oracle", mismatches == 0, f"{cases} synthetic link logs with reboots, {mismatches} mismatches")
    assert mismatches == 0


def test_9_conservation():
    if not _SIMS:
        simulate(scenario.v2i_interferer(duration_s=10))
    bad = []
    for r in _SIMS:
        s = r.summary
        if not (s.conservation_ok()
                and s.generated == sum(len(v) for v in r.tx_logs.values())
                and s.delivered == sum(len(v) for v in r.rx_logs.values())):
            bad.append(s.scenario)
    report(9, "conservation", not bad, f"{len(_SIMS) - len(bad)}/{len(_SIMS)} simulations balance")
    assert not bad


def test_10_bidirectional_asymmetry():
    solo, inter = v2i_pair(False)
    keys = [k for k in solo if solo[k].uplink and inter[k].uplink]
    a = an.mean_link_overlap(solo[k] for k in keys)
    b = an.mean_link_overlap(inter[k] for k in keys)
    per = ", ".join(f"{k[0]}/{k[1].value} {solo[k].overlap():.3f}->{inter[k].overlap():.3f}" for k in keys)
    ok = b < a
    report(10, "bidirectional asymmetry", ok, f"mean link overlap solo {a:.4f} vs interferer {b:.4f} ({per})")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
