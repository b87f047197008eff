"""OCB broadcast CSMA/CA for one NIC.

Broadcast frames are never acknowledged or retried, so the contention window
stays at ``cw_min``. Each NIC holds at most one waiting frame; a fresher CAM
replaces a waiting one.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Any, Iterable


@dataclass(frozen=True)
class MacParams:
    slot_us: int = 13
    sifs_us: int = 32
    aifsn: int = 2
    cw_min: int = 15
    cw_max: int = 1023
    preamble_us: int = 40
    symbol_us: int = 8
    bits_per_symbol: int = 48
    service_bits: int = 16
    tail_bits: int = 6

    def __post_init__(self) -> None:
        if not 0 <= self.cw_min <= self.cw_max:
            raise ValueError("need 0 <= cw_min <= cw_max")
        for name in ("slot_us", "sifs_us", "preamble_us", "symbol_us", "bits_per_symbol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def aifs_us(self) -> int:
        return self.sifs_us + self.aifsn * self.slot_us


def airtime_us(params: MacParams, payload_bytes: int) -> int:
    if payload_bytes <= 0:
        raise ValueError("payload must be at least one byte")
    bits = params.service_bits + 8 * payload_bytes + params.tail_bits
    return params.preamble_us + math.ceil(bits / params.bits_per_symbol) * params.symbol_us


def draw_backoff(params: MacParams, rng: random.Random) -> int:
    return rng.randint(0, params.cw_min)


@dataclass(frozen=True)
class TxAttempt:
    frame: Any
    enqueue_time_us: int
    start_time_us: int
    end_time_us: int
    backoff_slots_drawn: int | None


def _merge(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for s, e in sorted(intervals):
        if e <= s:
            continue
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def schedule_tx(params: MacParams, frame: Any, now_us: int,
                medium_busy_intervals: Iterable[tuple[int, int]], *,
                payload_bytes: int, rng: random.Random | None = None,
                backoff_slots: int | None = None) -> TxAttempt:
    """Start time of a frame enqueued at ``now_us`` given the medium's busy periods.

    This is the closed-form walk of the same rules :class:`NicMac` applies
    incrementally; busy periods are half-open ``[start, end)``. A busy period
    starting exactly at the computed start does not defer the frame: both
    stations transmit in the same slot.
    """

    def draw() -> int:
        if backoff_slots is not None:
            return backoff_slots
        if rng is None:
            raise ValueError("a backoff draw is needed but neither rng nor backoff_slots given")
        return draw_backoff(params, rng)

    busy = [iv for iv in _merge(medium_busy_intervals) if iv[1] > now_us]
    aifs, slot = params.aifs_us, params.slot_us
    drawn: int | None = None
    i = 0
    t = now_us

    if busy and busy[0][0] <= now_us:
        drawn = counter = draw()
        t = busy[0][1]
        i = 1
    elif busy and busy[0][0] < now_us + aifs:
        drawn = counter = draw()
        t = busy[0][1]
        i = 1
    else:
        start = now_us + aifs
        return TxAttempt(frame, now_us, start, start + airtime_us(params, payload_bytes), None)

    while True:
        anchor = t + aifs
        start = anchor + counter * slot
        if i < len(busy) and busy[i][0] < start:
            s, e = busy[i]
            if s > anchor:
                counter -= (s - anchor) // slot
            t = e
            i += 1
            continue
        return TxAttempt(frame, now_us, start, start + airtime_us(params, payload_bytes), drawn)


class NicMac:
    """Incremental CSMA/CA state for one NIC, driven by the simulation engine.

    Methods that may (re)schedule a transmission return the new start time;
    the engine tags the resulting event with :attr:`token` and ignores events
    whose token is stale.
    """

    def __init__(self, params: MacParams, rng: random.Random, payload_bytes: int):
        self.params = params
        self.rng = rng
        self.airtime = airtime_us(params, payload_bytes)
        self.pending: Any = None
        self.enqueue_time = 0
        self.counter: int | None = None
        self.drawn: int | None = None
        self.anchor: int | None = None
        self.start_at: int | None = None
        self.token = 0
        self.sensed = 0
        self.transmitting = False
        self.queue_dropped = 0
        self.decremented = 0

    @property
    def medium_busy(self) -> bool:
        return self.sensed > 0 or self.transmitting

    def _draw(self) -> None:
        self.counter = self.drawn = draw_backoff(self.params, self.rng)

    def _schedule(self, idle_since: int) -> int:
        self.anchor = idle_since + self.params.aifs_us
        self.start_at = self.anchor + (self.counter or 0) * self.params.slot_us
        self.token += 1
        return self.start_at

    def enqueue(self, frame: Any, now: int) -> int | None:
        if self.pending is not None:
            # drop-oldest; the replacement inherits the contention state
            self.queue_dropped += 1
            self.pending = frame
            self.enqueue_time = now
            return None
        self.pending = frame
        self.enqueue_time = now
        self.drawn = None
        if self.medium_busy:
            self._draw()
            return None
        self.counter = 0
        return self._schedule(now)

    def _freeze(self, now: int) -> None:
        if self.pending is None or self.start_at is None or now >= self.start_at:
            return
        if self.counter is None or self.drawn is None:
            self._draw()
        elif now > self.anchor:
            done = (now - self.anchor) // self.params.slot_us
            self.counter -= done
            self.decremented += done
        self.start_at = None
        self.token += 1

    def sense_start(self, now: int) -> None:
        self.sensed += 1
        if self.sensed == 1 and not self.transmitting:
            self._freeze(now)

    def sense_end(self, now: int) -> int | None:
        self.sensed -= 1
        if self.sensed == 0 and not self.transmitting and self.pending is not None:
            return self._schedule(now)
        return None

    def start(self, now: int, token: int) -> TxAttempt | None:
        if token != self.token or self.pending is None or self.start_at != now:
            return None
        if self.drawn is not None:
            self.decremented += self.counter or 0
        attempt = TxAttempt(self.pending, self.enqueue_time, now, now + self.airtime, self.drawn)
        self.pending = None
        self.counter = self.drawn = self.anchor = self.start_at = None
        self.transmitting = True
        self.token += 1
        return attempt

    def finish(self, now: int) -> int | None:
        self.transmitting = False
        if self.pending is not None and self.sensed == 0:
            return self._schedule(now)
        return None


def contention_round(n: int, params: MacParams, rng: random.Random,
                     busy_until_us: int = 300, payload_bytes: int = 200) -> list[TxAttempt]:
    """Let ``n`` mutually-sensing NICs contend for a medium that is busy until
    ``busy_until_us``; return the attempts that start first (len > 1 is a collision)."""
    macs = [NicMac(params, rng, payload_bytes) for _ in range(n)]
    for k, mac in enumerate(macs):
        mac.sense_start(0)
        mac.enqueue(k, 0)
    starts = [mac.sense_end(busy_until_us) for mac in macs]
    first = min(starts)
    winners = []
    for mac, s in zip(macs, starts):
        if s == first:
            winners.append(mac.start(s, mac.token))
    return winners
