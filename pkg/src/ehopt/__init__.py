"""Power scheduling for energy-harvesting wireless links.

Offline solvers (full knowledge of future gains and/or harvests), finite
horizon dynamic programming for causal knowledge, two-hop relay variants and
brute-force references used to check all of them.
"""
from .fading import DoubleRayleigh, Nakagami, OutageFn, PointMass, Rayleigh, Rician, Weibull
from .model import (
    ChannelTrace,
    ConfigError,
    EhProfile,
    ErgodicThroughput,
    KnowledgeCase,
    NonOutage,
    PowerSchedule,
    Throughput,
    check_feasible,
    evaluate_utility,
)
from .offline import (
    solve_ergodic_case4,
    solve_outage_case1,
    solve_outage_case4_noncausal,
    solve_throughput_case1,
)
from .online import (
    DpPolicy,
    GainProcess,
    IIDRates,
    MarkovRates,
    StochasticModel,
    simulate_policy,
    solve_dp_case2,
    solve_dp_case3,
    solve_dp_outage_case4_causal,
)
from .relay import (
    OneWaySharing,
    RelayScenario,
    Traffic,
    solve_relay_delay_constrained,
    solve_relay_delay_tolerant,
    solve_relay_energy_sharing,
)

__all__ = [
    "ChannelTrace", "ConfigError", "DoubleRayleigh", "EhProfile", "ErgodicThroughput",
    "KnowledgeCase", "Nakagami", "NonOutage", "OutageFn", "PointMass", "PowerSchedule",
    "Rayleigh", "Rician", "Throughput", "Weibull", "check_feasible", "evaluate_utility",
    "solve_ergodic_case4", "solve_outage_case1", "solve_outage_case4_noncausal",
    "solve_throughput_case1",
    "DpPolicy", "GainProcess", "IIDRates", "MarkovRates", "StochasticModel", "simulate_policy",
    "solve_dp_case2", "solve_dp_case3", "solve_dp_outage_case4_causal",
    "OneWaySharing", "RelayScenario", "Traffic", "solve_relay_delay_constrained",
    "solve_relay_delay_tolerant", "solve_relay_energy_sharing",
]
__version__ = "0.1.0"
