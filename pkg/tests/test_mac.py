from __future__ import annotations

import itertools
import random

import pytest
from scipy.stats import chisquare

from camnet.mac import (MacParams, NicMac, TxAttempt, airtime_us, contention_round, draw_backoff,
                        schedule_tx)

M = MacParams()


class Scripted:
    """Stands in for random.Random and hands out fixed backoff draws."""

    def __init__(self, *draws):
        self.draws = list(draws)

    def randint(self, a, b):
        v = self.draws.pop(0)
        assert a <= v <= b
        return v


def test_aifs():
    assert M.aifs_us == 32 + 2 * 13 == 58


def test_airtime_examples():
    assert airtime_us(M, 200) == 40 + 34 * 8 == 312
    assert airtime_us(M, 1) == 48


def test_airtime_plateau():
    def symbols(n):
        return -(-(16 + 8 * n + 6) // 48)
    for n in range(1, 400):
        if symbols(n + 6) == symbols(n):
            assert airtime_us(M, n + 6) == airtime_us(M, n)
        assert airtime_us(M, n) == 40 + symbols(n) * 8


def test_backoff_moments_and_uniformity():
    rng = random.Random(11)
    draws = [draw_backoff(M, rng) for _ in range(10**6)]
    assert min(draws) == 0 and max(draws) == 15
    assert sum(draws) / len(draws) == pytest.approx(7.5, abs=0.05)
    counts = [draws.count(k) for k in range(16)]
    assert chisquare(counts).pvalue > 0.01


def test_backoff_deterministic():
    a, b = random.Random(5), random.Random(5)
    assert [draw_backoff(M, a) for _ in range(50)] == [draw_backoff(M, b) for _ in range(50)]


def test_idle_medium_starts_after_aifs():
    att = schedule_tx(M, "f", 1000, [], payload_bytes=200)
    assert att.start_time_us == 1058
    assert att.end_time_us == 1058 + 312
    assert att.backoff_slots_drawn is None


def test_busy_medium_slot_walk():
    att = schedule_tx(M, "f", 1000, [(1000, 1300)], payload_bytes=200, backoff_slots=4)
    assert att.start_time_us == 1000 + 300 + 58 + 4 * 13 == 1410


def test_busy_starting_inside_aifs_defers():
    att = schedule_tx(M, "f", 0, [(20, 100)], payload_bytes=200, backoff_slots=2)
    assert att.start_time_us == 100 + 58 + 26


def test_busy_starting_at_start_does_not_defer():
    att = schedule_tx(M, "f", 0, [(58, 400)], payload_bytes=200)
    assert att.start_time_us == 58


def test_two_node_draws_3_and_7():
    # hand enumeration: busy until 300; A counts 3 slots from 358 -> starts 397.
    # B has counted 3 of 7 slots by 397, freezes, and resumes 58 us after A's
    # frame ends at 709 with 4 slots left -> 709 + 58 + 52 = 819.
    a, b = NicMac(M, Scripted(3), 200), NicMac(M, Scripted(7), 200)
    for m, name in ((a, "A"), (b, "B")):
        m.sense_start(0)
        m.enqueue(name, 0)
    sa, sb = a.sense_end(300), b.sense_end(300)
    assert (sa, sb) == (397, 449)
    att_a = a.start(397, a.token)
    b.sense_start(397)
    assert b.start(449, b.token) is None  # frozen: the old event is stale
    a.finish(709)
    sb = b.sense_end(709)
    assert sb == 819
    att_b = b.start(819, b.token)
    assert att_a.end_time_us <= att_b.start_time_us
    assert b.decremented == 7
    closed = schedule_tx(M, "B", 0, [(0, 300), (397, 709)], payload_bytes=200, backoff_slots=7)
    assert closed.start_time_us == 819


def _run_against(mac: NicMac, now: int, busy: list[tuple[int, int]]) -> TxAttempt:
    """Enqueue at ``now`` and replay disjoint busy periods as carrier-sense events."""
    events = sorted([(s, 1) for s, e in busy if e > now] + [(e, 0) for s, e in busy if e > now])
    while events and events[0][0] <= now:
        t, is_start = events.pop(0)
        mac.sense_start(t) if is_start else mac.sense_end(t)
    mac.enqueue("f", now)
    for t, is_start in events:
        if mac.start_at is not None and mac.start_at <= t:
            break
        mac.sense_start(t) if is_start else mac.sense_end(t)
    return mac.start(mac.start_at, mac.token)


def test_incremental_mac_matches_closed_form():
    rng = random.Random(21)
    for trial in range(3000):
        now = rng.randint(0, 500)
        t, busy = rng.randint(0, 700), []
        for _ in range(rng.randint(0, 6)):
            s = t + rng.randint(1, 150)
            e = s + rng.choice([48, 312, rng.randint(1, 400)])
            busy.append((s, e))
            t = e
        draw = rng.randint(0, 15)
        mac = NicMac(M, Scripted(draw), 200)
        att = _run_against(mac, now, busy)
        closed = schedule_tx(M, "f", now, busy, payload_bytes=200, backoff_slots=draw)
        assert att is not None, trial
        assert att.start_time_us == closed.start_time_us, (trial, now, busy, draw)
        assert att.backoff_slots_drawn == closed.backoff_slots_drawn
        if att.backoff_slots_drawn is not None:
            assert mac.decremented == att.backoff_slots_drawn


def test_nic_never_overlaps_itself():
    rng = random.Random(4)
    mac = NicMac(M, rng, 200)
    attempts, t, pending_start = [], 0, None
    for _ in range(5000):
        t += rng.randint(1, 400)
        if mac.transmitting and attempts[-1].end_time_us <= t:
            pending_start = mac.finish(attempts[-1].end_time_us)
        if pending_start is not None and pending_start <= t and not mac.transmitting:
            att = mac.start(pending_start, mac.token)
            if att:
                attempts.append(att)
            pending_start = None
        s = mac.enqueue(len(attempts), t)
        if s is not None:
            pending_start = s
    for a, b in zip(attempts, attempts[1:]):
        assert a.end_time_us <= b.start_time_us


def test_drop_oldest():
    mac = NicMac(M, random.Random(0), 200)
    mac.sense_start(0)
    mac.enqueue("old", 0)
    mac.enqueue("new", 10)
    assert mac.queue_dropped == 1
    start = mac.sense_end(100)
    assert mac.start(start, mac.token).frame == "new"


def test_two_node_collision_probability_exact_enumeration():
    # brute force over all 16 x 16 draw pairs
    pairs = list(itertools.product(range(16), repeat=2))
    exact = sum(a == b for a, b in pairs) / len(pairs)
    assert exact == 1 / 16
    rng = random.Random(7)
    trials = 20_000
    hits = sum(len(contention_round(2, M, rng)) > 1 for _ in range(trials))
    assert hits / trials == pytest.approx(exact, abs=4 * (exact * (1 - exact) / trials) ** 0.5)


def full_round(n: int, rng) -> bool:
    """Run n mutually-sensing NICs until all have sent; True if any two overlapped."""
    macs = [NicMac(M, rng, 200) for _ in range(n)]
    for k, m in enumerate(macs):
        m.sense_start(0)
        m.enqueue(k, 0)
    starts = {k: m.sense_end(300) for k, m in enumerate(macs)}
    collided = False
    while starts:
        t = min(starts.values())
        group = [k for k, s in starts.items() if s == t]
        collided |= len(group) > 1
        for k in group:
            macs[k].start(t, macs[k].token)
            del starts[k]
        for k in starts:
            for _ in group:
                macs[k].sense_start(t)
        end = t + macs[0].airtime
        for k in group:
            macs[k].finish(end)
        for k in list(starts):
            new = None
            for _ in group:
                new = macs[k].sense_end(end)
            starts[k] = new
    return collided


@pytest.mark.parametrize("n", [2, 3, 4])
def test_any_pair_collision_matches_enumeration(n):
    draws = list(itertools.product(range(16), repeat=n))
    exact = sum(len(set(d)) < n for d in draws) / len(draws)
    analytic = 1.0
    for k in range(n):
        analytic *= (16 - k) / 16
    assert exact == pytest.approx(1 - analytic)
    rng = random.Random(100 + n)
    trials = 20_000
    hits = sum(full_round(n, rng) for _ in range(trials))
    assert hits / trials == pytest.approx(exact, abs=4 * (exact * (1 - exact) / trials) ** 0.5)


def test_param_validation():
    with pytest.raises(ValueError):
        MacParams(cw_min=20, cw_max=10)
    with pytest.raises(ValueError):
        airtime_us(M, 0)


@pytest.mark.slow
def test_two_node_collision_rate_unbiased_at_high_power():
    # 10^6 trials put a 4-sigma band at about 1.5% relative, tighter than the 2% acceptance band
    rng = random.Random(1_000_000)
    trials = 10**6
    hits = sum(len(contention_round(2, M, rng)) > 1 for _ in range(trials))
    sigma = (1 / 16 * 15 / 16 / trials) ** 0.5
    assert abs(hits / trials - 1 / 16) <= 4 * sigma
