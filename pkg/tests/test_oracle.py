import math

import numpy as np
import pytest

import ehopt.oracle as oracle_mod
from ehopt.fading import Rayleigh
from ehopt.model import ChannelTrace, EhProfile, NonOutage, Throughput, check_feasible
from ehopt.online import BatteryGrid, FixedRates, GainProcess, StochasticModel
from ehopt.oracle import (
    GridSpec,
    OracleSizeError,
    brute_force_offline,
    brute_force_policies,
    brute_force_serve_sets,
    enumerate_offline,
    relay_reference,
)
from ehopt.relay import OneWaySharing, RelayScenario, Traffic


def test_oracle_does_not_import_solvers():
    src = open(oracle_mod.__file__).read()
    for name in ("offline", "online", "relay", "sim"):
        assert f"from .{name} import" not in src
        assert f"from . import {name}" not in src


def test_brute_force_offline_example():
    prof = EhProfile([3, 1])
    sched, util = brute_force_offline(prof, ChannelTrace.constant(prof), Throughput(), GridSpec(0.001))
    assert util == pytest.approx(2 * math.log2(3), abs=0.003)
    assert np.allclose(sched.flat(), [2, 2], atol=0.002)
    assert check_feasible(sched, prof)


def test_brute_force_offline_trivial():
    prof = EhProfile([0, 0], 2)
    sched, util = brute_force_offline(prof, ChannelTrace.constant(prof), Throughput(), GridSpec(0.01))
    assert util == 0.0 and np.all(sched.flat() == 0)
    prof = EhProfile([1.25])
    sched, _ = brute_force_offline(prof, ChannelTrace([[0.7]]), Throughput(), GridSpec(0.05))
    assert sched.flat()[0] == 1.25


def test_dp_search_equals_nested_enumeration(rng):
    for _ in range(15):
        M, N = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        prof = EhProfile(np.round(rng.uniform(0, 0.4, M), 1), N)
        tr = ChannelTrace(rng.uniform(0.1, 3, (M, N)))
        for spec, src in ((Throughput(), tr), (NonOutage(1.0, Rayleigh(1.0)), None), (NonOutage(0.5), tr)):
            a = brute_force_offline(prof, src, spec, GridSpec(0.05))
            b = enumerate_offline(prof, src, spec, 0.05)
            assert a.utility == pytest.approx(b.utility, abs=1e-12)
            assert np.allclose(a.schedule.flat(), b.schedule.flat())


def test_guard_refuses():
    prof = EhProfile([100.0, 100.0])
    with pytest.raises(OracleSizeError):
        brute_force_offline(prof, ChannelTrace.constant(prof), Throughput(), GridSpec(0.001))


def test_serve_set_examples():
    r = brute_force_serve_sets(EhProfile([2, 0]), ChannelTrace([[1], [1]]), 1.0)
    assert r.outages == 0 and r.members == (1, 2)
    r = brute_force_serve_sets(EhProfile([0.5, 0.5]), ChannelTrace([[1], [1]]), 1.0)
    assert r.outages == 1 and r.members == (2,)
    r = brute_force_serve_sets(EhProfile([1, 1, 1]), ChannelTrace([[1], [1], [1]]), 40.0)
    assert r.outages == 3 and r.members == ()


def test_serve_set_ties_lexicographic():
    # any single block works; the earliest one wins
    r = brute_force_serve_sets(EhProfile([1, 0, 0]), ChannelTrace([[1], [1], [1]]), 1.0)
    assert r.members == (1,)


def test_serve_set_guard():
    prof = EhProfile(np.ones(23))
    with pytest.raises(OracleSizeError):
        brute_force_serve_sets(prof, ChannelTrace.constant(prof), 1.0)


def test_policies_deterministic_equals_offline():
    prof = EhProfile([2.0, 1.0, 0.0])
    model = StochasticModel(FixedRates(prof.rates), GainProcess([1.5], [1.0]), 3, 1)
    grid = BatteryGrid(1.0, 4)
    v = brute_force_policies(model, Throughput(), grid)
    ref = brute_force_offline(prof, ChannelTrace.constant(prof, 1.5), Throughput(), GridSpec(1.0))
    assert v == pytest.approx(ref.utility, abs=1e-12)


def test_policies_horizon_one_spends_all():
    model = StochasticModel(FixedRates([2.0]), GainProcess([0.5, 2.0], [0.5, 0.5]), 1, 1)
    v = brute_force_policies(model, Throughput(), BatteryGrid(1.0, 3))
    assert v == pytest.approx(0.5 * math.log2(2.0) + 0.5 * math.log2(5.0))


def test_policies_guard():
    model = StochasticModel(FixedRates([1.0, 1.0, 1.0]), GainProcess([0.5, 1, 2], [0.3, 0.3, 0.4]), 3, 2)
    with pytest.raises(OracleSizeError):
        brute_force_policies(model, Throughput(), BatteryGrid(0.25, 25), max_policies=1000)


@pytest.mark.parametrize("sc,want", [
    (RelayScenario(EhProfile([2]), EhProfile([2]), 1, 1), math.log2(3)),
    (RelayScenario(EhProfile([3]), EhProfile([0.75]), 1, 4), 2.0),
    (RelayScenario(EhProfile([5]), EhProfile([0]), 1, 1), 0.0),
    (RelayScenario(EhProfile([4]), EhProfile([0]), 1, 1, sharing=OneWaySharing(1.0)), math.log2(3)),
    (RelayScenario(EhProfile([2, 0]), EhProfile([0, 2]), 1, 1, Traffic.DELAY_TOLERANT), math.log2(3)),
    (RelayScenario(EhProfile([2, 0]), EhProfile([0, 2]), 1, 1), math.log2(3)),
    (RelayScenario(EhProfile([0, 2]), EhProfile([2, 0]), 1, 1, Traffic.DELAY_TOLERANT), math.log2(3)),
    (RelayScenario(EhProfile([0, 2]), EhProfile([2, 0]), 1, 1), math.log2(3)),
    (RelayScenario(EhProfile([1, 1]), EhProfile([0, 0]), 1, 1, sharing=OneWaySharing(0.5)), 2 * math.log2(4 / 3)),
])
def test_relay_reference_examples(sc, want):
    assert relay_reference(sc) == pytest.approx(want, abs=2e-3)


def test_oracles_are_deterministic():
    prof = EhProfile([0.4, 0.2], 2)
    a = brute_force_offline(prof, Rayleigh(1.0), NonOutage(1.0), GridSpec(0.01))
    b = brute_force_offline(prof, Rayleigh(1.0), NonOutage(1.0), GridSpec(0.01))
    assert a.utility == b.utility and np.array_equal(a.schedule.flat(), b.schedule.flat())
