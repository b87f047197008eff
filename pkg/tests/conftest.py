from __future__ import annotations

import sys

import pytest

from camnet.cam_codec import Nic
from camnet.channel import PROFILES, ChannelParams
from camnet.engine import Scenario
from camnet.geo import LocalFrame
from camnet.mac import MacParams
from camnet.node import NodeConfig, NodeKind

ORIGIN = (51.4545, -2.5879)


def static_node(index: int, x_m: float = 0.0, y_m: float = 0.0, *, node_id: str | None = None,
                nics=(Nic.HP, Nic.LP), height: float = 5.0, **kw) -> NodeConfig:
    lat, lon = LocalFrame(*ORIGIN).to_geo(x_m, y_m)
    profiles = {nic: PROFILES[f"{nic.value}-RSU"] for nic in nics}
    macs = {nic: f"02:00:00:00:{index:02x}:0{1 if nic is Nic.HP else 2}" for nic in nics}
    return NodeConfig(node_id or f"rsu{index}", NodeKind.RSU, profiles, macs,
                      position=(lat, lon, height), **kw)


IDEAL = ChannelParams(n_exp=2.0)


def static_scenario(nodes, *, duration_us=1_000_000, channel=IDEAL, seed=0, **kw) -> Scenario:
    return Scenario(tuple(nodes), channel, MacParams(), duration_us, seed=seed, **kw)


@pytest.fixture
def ideal():
    return IDEAL


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "RESULTS", None):
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
