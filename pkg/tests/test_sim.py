import math

import numpy as np
import pytest

from ehopt.fading import OutageFn, PointMass, Rayleigh, outage_prob
from ehopt.model import ConfigError, ErgodicThroughput, NonOutage, Throughput
from ehopt.online import FixedRates, GainProcess, IIDRates, MarkovRates
from ehopt.sim import (
    ConstantPower,
    Scenario,
    TraceGenerator,
    empirical_outage,
    generate_trace,
    make_policy,
    quantize_fading,
    run_experiment,
)


def test_point_mass_trace_is_constant():
    gen = TraceGenerator(3, 2, FixedRates([1.0, 0.0, 2.5]), PointMass(0.7), seed=4)
    tr = generate_trace(gen, 11)
    assert np.array_equal(tr.profile.rates, [1.0, 0.0, 2.5])
    assert np.all(tr.channel.gains == 0.7)


def test_rayleigh_sample_mean():
    gen = TraceGenerator(1, 10**6, FixedRates([0.0]), Rayleigh(1.0), seed=0)
    g = generate_trace(gen, 0).channel.gains
    assert 0.997 <= g.mean() <= 1.003


def test_same_seed_same_trace():
    gen = TraceGenerator(4, 3, MarkovRates([0.0, 1.0], [[0.9, 0.1], [0.2, 0.8]], [0.5, 0.5]),
                         Rayleigh(2.0), seed=17)
    a, b = generate_trace(gen, 5), generate_trace(gen, 5)
    assert np.array_equal(a.profile.rates, b.profile.rates)
    assert np.array_equal(a.channel.gains, b.channel.gains)
    c = generate_trace(gen, 6)
    assert not np.array_equal(a.channel.gains, c.channel.gains)


def test_markov_trace_follows_support():
    gen = TraceGenerator(50, 1, MarkovRates([0.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0]), None, 3)
    assert np.all(generate_trace(gen, 0).profile.rates == 1.0)


def test_quantized_fading_probabilities():
    gp = quantize_fading(Rayleigh(1.0), 4)
    assert np.allclose(gp.probs, 0.25) and np.all(np.diff(gp.values) > 0)


def small_scenario(spec=Throughput()):
    gen = TraceGenerator(3, 2, IIDRates([0.0, 0.5, 1.5], [0.3, 0.4, 0.3]),
                         GainProcess([0.3, 1.0, 2.5], [0.3, 0.4, 0.3]))
    return Scenario(gen, spec, "small")


def test_single_trial_stderr_zero():
    gen = TraceGenerator(2, 2, FixedRates([1.0, 1.0]), None)
    rep = run_experiment([Scenario(gen, Throughput())], ["offline-case1", "myopic"], 1, seed=0)[0]
    assert all(s.stderr == 0.0 for s in rep.stats)


def test_identical_policies_identical_stats():
    rep = run_experiment([small_scenario()], ["dp-case2", "dp-case2"], 200, seed=2)[0]
    a, b = rep.stats
    assert a.mean == b.mean and a.stderr == b.stderr
    assert rep.paired_gap("dp-case2", "dp-case2") == (0.0, 0.0)


def test_offline_bounds_dp():
    rep = run_experiment([small_scenario()], ["offline-case1", "dp-case2"], 500, seed=1)[0]
    gap, se = rep.paired_gap("offline-case1", "dp-case2")
    assert gap >= -2 * se
    # per-trace the offline optimum can only be better
    assert np.all(rep.by_name("offline-case1").utilities >= rep.by_name("dp-case2").utilities - 1e-9)


def test_results_independent_of_workers():
    a = run_experiment([small_scenario()], ["dp-case2", "myopic"], 40, seed=5, workers=1)[0]
    b = run_experiment([small_scenario()], ["dp-case2", "myopic"], 40, seed=5, workers=2)[0]
    for x, y in zip(a.stats, b.stats):
        assert np.array_equal(x.utilities, y.utilities)
    assert a.digest == b.digest


def test_digest_depends_on_scenario():
    a = small_scenario().digest()
    assert a == small_scenario().digest()
    assert a != small_scenario(NonOutage(1.0)).digest()


def test_unknown_policy():
    with pytest.raises(ConfigError):
        make_policy("nope")


def test_mismatched_policy_rejected():
    with pytest.raises(ConfigError):
        run_experiment([small_scenario(ErgodicThroughput(Rayleigh(1.0)))], ["dp-case2"], 2)


def test_bad_arguments():
    with pytest.raises(ValueError):
        run_experiment([small_scenario()], [], 10)
    with pytest.raises(ValueError):
        run_experiment([small_scenario()], ["myopic"], 0)


def test_constant_power_outage_frequency():
    trials = 10**5
    for power in (0.5, 2.0):
        q = float(outage_prob(OutageFn(Rayleigh(1.0), 1.0), power))
        freq = empirical_outage(Rayleigh(1.0), power, 1.0, trials, seed=8)
        assert abs(freq - q) <= 3 * math.sqrt(q * (1 - q) / trials)


def test_constant_policy_runs_through_experiment():
    gen = TraceGenerator(1, 4, FixedRates([0.0]), Rayleigh(1.0))
    rep = run_experiment([Scenario(gen, NonOutage(1.0))], [ConstantPower(1.0)], 300, seed=0)[0]
    assert 0 <= rep.stats[0].mean <= 4
