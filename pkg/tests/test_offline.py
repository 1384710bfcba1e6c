import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehopt.fading import OutageFn, PointMass, Rayleigh, Weibull
from ehopt.model import ChannelTrace, EhProfile, check_feasible
from ehopt.offline import (
    kkt_residual,
    solve_ergodic_case4,
    solve_outage_case1,
    solve_outage_case4_noncausal,
    solve_throughput_case1,
    taut_string,
    throughput_marginal,
    waterfill_budget,
)

energy = st.floats(0, 4, allow_nan=False)


@st.composite
def instances(draw, max_m=5, max_n=4, awgn=False):
    M = draw(st.integers(1, max_m))
    N = draw(st.integers(1, max_n))
    E = draw(st.lists(energy, min_size=M, max_size=M))
    if awgn:
        g = np.ones((M, N))
    else:
        g = np.array(draw(st.lists(st.floats(0.05, 5), min_size=M * N, max_size=M * N))).reshape(M, N)
    return EhProfile(E, N), ChannelTrace(g)


def test_staircase_examples():
    prof = EhProfile([3, 1])
    res = solve_throughput_case1(prof, ChannelTrace.constant(prof))
    assert np.allclose(res.schedule.flat(), [2, 2])
    assert res.utility == pytest.approx(2 * math.log2(3), abs=1e-12)
    prof = EhProfile([1, 3])
    res = solve_throughput_case1(prof, ChannelTrace.constant(prof))
    assert np.allclose(res.schedule.flat(), [1, 3])
    assert res.utility == pytest.approx(3.0, abs=1e-12)
    assert res.levels.levels.ravel()[0] < res.levels.levels.ravel()[1]


def test_single_block_spends_everything():
    prof = EhProfile([2.7])
    assert solve_throughput_case1(prof, ChannelTrace([[0.3]])).schedule.flat()[0] == pytest.approx(2.7)


def test_zero_gain_block_gets_nothing():
    prof = EhProfile([1.0], 3)
    res = solve_throughput_case1(prof, ChannelTrace([[1.0, 0.0, 2.0]]))
    assert res.schedule.flat()[1] == 0.0
    assert check_feasible(res.schedule, prof)


@pytest.mark.parametrize("budget,gains,want,nu", [
    (4.0, [1, 1], [2, 2], 3.0),
    (1.0, [1, 4], [0.125, 0.875], 1.125),
    (0.0, [1, 4], [0, 0], None),
])
def test_waterfill_budget(budget, gains, want, nu):
    p, level = waterfill_budget(budget, gains)
    assert np.allclose(p, want, atol=1e-12)
    if nu is not None:
        assert level == pytest.approx(nu)


def test_waterfill_against_fine_grid():
    g = np.array([1.0, 4.0])
    p1 = np.arange(0, 1.00005, 1e-4)
    u = np.log2(1 + g[0] * p1) + np.log2(1 + g[1] * (1 - p1))
    p, _ = waterfill_budget(1.0, g)
    assert p[0] == pytest.approx(p1[np.argmax(u)], abs=1e-4)


@given(instances())
def test_throughput_case1_properties(inst):
    prof, trace = inst
    res = solve_throughput_case1(prof, trace)
    assert check_feasible(res.schedule, prof)
    total = prof.total()
    assert res.schedule.flat().sum() == pytest.approx(total, abs=1e-7)
    assert res.kkt_residual <= 1e-7
    lv = res.levels.levels.ravel()
    slack = prof.cumulative() - res.schedule.cumulative()
    finite = np.isfinite(lv)
    for t in range(lv.size - 1):
        if finite[t] and finite[t + 1]:
            assert lv[t + 1] >= lv[t] - 1e-9
            if lv[t + 1] > lv[t] + 1e-9:
                assert slack[t] <= 1e-6


@given(instances(awgn=True))
def test_awgn_staircase_shape(inst):
    prof, trace = inst
    p = solve_throughput_case1(prof, trace).schedule.powers
    assert np.all(np.abs(p - p[:, :1]) <= 1e-7)
    assert np.all(np.diff(p.ravel()) >= -1e-7)


@given(st.lists(st.floats(0, 3), min_size=1, max_size=8), st.integers(0, 2 ** 32 - 1))
def test_taut_string_beats_random_feasible(steps, seed):
    cap = np.cumsum(steps)
    p = taut_string(cap)
    assert np.all(np.cumsum(p) <= cap + 1e-9)
    assert np.all(np.diff(p) >= -1e-9)
    rng = np.random.default_rng(seed)
    for u in (np.sqrt, np.log1p):
        best = u(p).sum()
        for _ in range(50):
            # random feasible schedule: spend a random share of what is available
            q = np.zeros(cap.size)
            used = 0.0
            for t in range(cap.size):
                q[t] = rng.random() * (cap[t] - used)
                used += q[t]
            assert u(q).sum() <= best + 1e-9


def test_kkt_residual_flags_suboptimal():
    cap = np.array([3.0, 4.0])
    good = kkt_residual(np.array([2.0, 2.0]), cap, throughput_marginal(np.ones(2)))
    bad = kkt_residual(np.array([3.0, 1.0]), cap, throughput_marginal(np.ones(2)))
    assert good < 1e-12 and bad > 0.1


def test_ergodic_examples():
    r = solve_ergodic_case4(EhProfile([2.5], 3), Rayleigh(1.0))
    assert np.allclose(r.schedule.flat(), 2.5)
    r = solve_ergodic_case4(EhProfile([3, 1]), PointMass(1.0))
    assert np.allclose(r.schedule.flat(), [2, 2])
    assert r.utility == pytest.approx(2 * math.log2(3), abs=1e-12)
    r = solve_ergodic_case4(EhProfile([2, 2]), Rayleigh(1.0))
    assert np.allclose(r.schedule.flat(), [2, 2])
    assert r.kkt_residual <= 1e-7


def test_ergodic_exhausts_energy():
    prof = EhProfile([0.5, 3.0, 0.1, 2.0], 2)
    r = solve_ergodic_case4(prof, Rayleigh(1.0))
    assert r.schedule.flat().sum() == pytest.approx(prof.total(), abs=1e-7)
    assert check_feasible(r.schedule, prof)


OFN = OutageFn(Rayleigh(1.0), 1.0)


def test_save_then_transmit_example():
    prof = EhProfile([0.3, 0.3])
    r = solve_outage_case4_noncausal(prof, OFN)
    assert np.allclose(r.schedule.flat(), [0.0, 0.6])
    outage = 2 - r.utility
    # closed form: 1 + (1 - exp(-1/0.6)) vs 2 (1 - exp(-1/0.3))
    assert outage == pytest.approx(2 - math.exp(-1 / 0.6), abs=1e-12)
    assert outage < 2 * (1 - math.exp(-1 / 0.3))


def test_save_then_transmit_uniform_when_rich():
    prof = EhProfile([5.0], 4)
    r = solve_outage_case4_noncausal(prof, OFN)
    assert np.allclose(r.schedule.flat(), 5.0)


def test_save_then_transmit_zero_energy():
    r = solve_outage_case4_noncausal(EhProfile([0, 0], 2), OFN)
    assert r.utility == 0.0 and np.all(r.schedule.flat() == 0)


def test_save_then_transmit_boundary_included():
    # accumulated energy exactly P_c at the end of block 2 -> block 2 transmits
    r = solve_outage_case4_noncausal(EhProfile([0.25, 0.25]), OFN)
    assert r.info["saving_blocks"] == 1
    assert r.schedule.flat()[-1] == pytest.approx(0.5)


def test_save_then_transmit_convex_outage():
    r = solve_outage_case4_noncausal(EhProfile([1.0, 3.0]), OutageFn(Weibull(0.1), 1.0))
    assert np.allclose(r.schedule.flat(), [1, 3])


@given(st.lists(st.floats(0, 2), min_size=1, max_size=6), st.integers(1, 3))
def test_save_then_transmit_shape(E, N):
    prof = EhProfile(E, N)
    r = solve_outage_case4_noncausal(prof, OFN)
    p = r.schedule.flat()
    assert check_feasible(r.schedule, prof)
    assert np.all(np.diff(p) >= -1e-9)
    if np.any(prof.cumulative() >= OFN.critical_point):
        assert np.all(p[p > 0] >= OFN.critical_point - 1e-9)


def test_save_then_transmit_known_gap():
    # strongly uneven harvest: a sub-critical first block beats the idle prefix
    prof = EhProfile([0.4, 10.0])
    r = solve_outage_case4_noncausal(prof, OFN)
    assert np.allclose(r.schedule.flat(), [0.0, 10.4])
    better = OFN.success_prob(np.array([0.4, 10.0])).sum()
    assert better > r.utility + 0.07


@pytest.mark.parametrize("E,served,outages", [([2, 0], 2, 0), ([0.5, 0.5], 1, 1), ([0.1, 0.1], 0, 2)])
def test_outage_case1_examples(E, served, outages):
    prof = EhProfile(E)
    r = solve_outage_case1(prof, ChannelTrace.constant(prof), 1.0)
    assert r.utility == served and r.outages == outages
    assert check_feasible(r.schedule, prof)


def test_outage_case1_huge_rate():
    prof = EhProfile([1, 2, 3], 2)
    r = solve_outage_case1(prof, ChannelTrace.constant(prof, 2.0), 50.0)
    assert r.outages == 6 and np.all(r.schedule.flat() == 0)
