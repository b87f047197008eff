"""Log-distance radio channel, link budget and the per-frame delivery verdict."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from enum import Enum


class ChannelError(ValueError):
    pass


class Role(str, Enum):
    RSU = "RSU"
    OBU = "OBU"


class PowerClass(str, Enum):
    HP = "HP"
    LP = "LP"


class Verdict(str, Enum):
    DELIVERED = "delivered"
    LOST_NOISE = "lost_noise"
    LOST_COLLISION = "lost_collision"


@dataclass(frozen=True)
class NicProfile:
    role: Role
    power_class: PowerClass
    tx_power_dbm: float
    antenna_gain_dbi: float
    center_freq_hz: float
    bandwidth_hz: float = 10e6
    mcs: str = "QPSK-1/2"
    cw_min: int = 15
    cw_max: int = 1023

    @property
    def name(self) -> str:
        return f"{self.power_class.value}-{self.role.value}"


# Mikrotik R52H (ath5k) and R5SHPn (ath9k) interfaces as deployed
PROFILES: dict[str, NicProfile] = {
    "LP-RSU": NicProfile(Role.RSU, PowerClass.LP, 25.0, 7.0, 5.89e9),
    "LP-OBU": NicProfile(Role.OBU, PowerClass.LP, 25.0, 5.0, 5.89e9),
    "HP-RSU": NicProfile(Role.RSU, PowerClass.HP, 29.0, 9.0, 5.9e9),
    "HP-OBU": NicProfile(Role.OBU, PowerClass.HP, 29.0, 5.0, 5.9e9),
}


@dataclass(frozen=True)
class ChannelParams:
    pl0_db: float = 47.86
    n_exp: float = 3.06
    shadow_sigma_db: float = 0.0
    noise_floor_dbm: float = -99.0
    sensitivity_dbm: float = -92.0
    capture_threshold_db: float = 10.0
    seed: int = 0
    shadow_mode: str = "frame"  # "frame": fresh sample per frame, "link": one sample per link

    def __post_init__(self) -> None:
        if self.n_exp < 2:
            raise ChannelError(f"path-loss exponent must be >= 2, got {self.n_exp}")
        if self.shadow_sigma_db < 0:
            raise ChannelError("shadowing std must be >= 0")
        if self.shadow_mode not in ("frame", "link"):
            raise ChannelError(f"unknown shadow_mode {self.shadow_mode!r}")


def fspl_db(freq_hz: float, d_m: float) -> float:
    """Free-space path loss, 32.44 + 20 log10(f_MHz) + 20 log10(d_km)."""
    return 32.44 + 20 * math.log10(freq_hz / 1e6) + 20 * math.log10(d_m / 1e3)


def path_loss_db(params: ChannelParams, d_m: float, rng: random.Random | None = None) -> float:
    """Log-distance path loss; adds a log-normal shadowing sample when ``rng`` is given."""
    if d_m <= 0:
        raise ChannelError(f"distance must be positive, got {d_m}")
    loss = params.pl0_db + 10 * params.n_exp * math.log10(max(d_m, 1.0))
    if rng is not None and params.shadow_sigma_db > 0:
        loss += rng.gauss(0.0, params.shadow_sigma_db)
    return loss


def link_gain_db(tx: NicProfile, rx: NicProfile) -> float:
    return tx.tx_power_dbm + tx.antenna_gain_dbi + rx.antenna_gain_dbi


def rx_power_dbm(tx: NicProfile, rx: NicProfile, d_m: float, params: ChannelParams,
                 rng: random.Random | None = None) -> float:
    return link_gain_db(tx, rx) - path_loss_db(params, d_m, rng)


def dbm_sum(levels_dbm) -> float:
    total = sum(10.0 ** (p / 10.0) for p in levels_dbm)
    return 10.0 * math.log10(total) if total > 0 else -math.inf


def sinr_db(rx_dbm: float, interference_dbm: list[float], params: ChannelParams) -> float:
    return rx_dbm - dbm_sum([params.noise_floor_dbm, *interference_dbm])


def deliver(rx_dbm: float, interference_dbm: list[float], params: ChannelParams) -> Verdict:
    """Reception verdict for one frame at one receiver.

    Below sensitivity the frame is noise-limited. The capture test only
    applies when something overlapped the frame: sensitivity already encodes
    the SNR the MCS needs on a clean channel.
    """
    if rx_dbm < params.sensitivity_dbm:
        return Verdict.LOST_NOISE
    if interference_dbm and sinr_db(rx_dbm, interference_dbm, params) < params.capture_threshold_db:
        return Verdict.LOST_COLLISION
    return Verdict.DELIVERED


def calibrate_exponent(target_range_m: float, tx: NicProfile, rx: NicProfile,
                       params: ChannelParams) -> float:
    """Exponent that puts the no-shadowing sensitivity boundary at ``target_range_m``."""
    if target_range_m <= 1:
        raise ChannelError("target range must exceed the 1 m reference distance")
    margin = link_gain_db(tx, rx) - params.pl0_db - params.sensitivity_dbm
    return margin / (10 * math.log10(target_range_m))


def nominal_range_m(tx: NicProfile, rx: NicProfile, params: ChannelParams,
                    extra_margin_db: float = 0.0) -> float:
    """Distance at which the mean received power meets sensitivity (+ margin)."""
    margin = link_gain_db(tx, rx) - params.pl0_db - params.sensitivity_dbm + extra_margin_db
    return 10 ** (margin / (10 * params.n_exp))


def calibrated(params: ChannelParams, target_range_m: float, tx: NicProfile,
               rx: NicProfile) -> ChannelParams:
    return replace(params, n_exp=calibrate_exponent(target_range_m, tx, rx, params))
