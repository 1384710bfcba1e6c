"""``ehopt`` command line: scenario JSON in, CSV tables out.

Exit codes: 0 success, 1 oracle delta above tolerance, 2 bad input,
3 size guard or infeasible instance.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .fading import OutageFn, fading_from_dict
from .model import (
    ChannelTrace,
    ConfigError,
    EhProfile,
    ErgodicThroughput,
    NonOutage,
    PowerSchedule,
    Throughput,
    block_utilities,
)
from .offline import (
    solve_ergodic_case4,
    solve_outage_case1,
    solve_outage_case4_noncausal,
    solve_throughput_case1,
)
from .online import (
    FixedRates,
    GainProcess,
    IIDRates,
    MarkovRates,
    StochasticModel,
    default_grid,
    rollout,
    sample_indices,
    solve_dp_case2,
    solve_dp_case3,
    solve_dp_outage_case4_causal,
    trial_rng,
)
from .oracle import GridSpec, OracleSizeError, brute_force_offline, brute_force_serve_sets, relay_reference
from .relay import (
    OneWaySharing,
    RelayScenario,
    Traffic,
    relay_slacks,
    solve_relay_delay_constrained,
    solve_relay_delay_tolerant,
    solve_relay_energy_sharing,
)
from .sim import POLICIES, Scenario, TraceGenerator, run_experiment

log = logging.getLogger("ehopt")

EXIT_OK, EXIT_DELTA, EXIT_INPUT, EXIT_GUARD = 0, 1, 2, 3

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _nonneg, "minItems": 1}
_discrete = {
    "type": "object",
    "properties": {"values": _vec, "probs": _vec},
    "required": ["values", "probs"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["horizon", "utility"],
    "properties": {
        "horizon": {
            "type": "object",
            "additionalProperties": False,
            "required": ["M", "N"],
            "properties": {"M": {"type": "integer", "minimum": 1},
                           "N": {"type": "integer", "minimum": 1}},
        },
        "eh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rates": _vec,
                "process": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "iid": _discrete,
                        "markov": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["values", "matrix", "initial"],
                            "properties": {"values": _vec,
                                           "matrix": {"type": "array", "items": _vec},
                                           "initial": _vec},
                        },
                    },
                    "minProperties": 1,
                    "maxProperties": 1,
                },
            },
            "minProperties": 1,
            "maxProperties": 1,
        },
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gain": _nonneg,
                "trace": {"type": "array", "items": {"type": "array", "items": _nonneg}},
                "fading": {"type": "object", "required": ["family"],
                           "properties": {"family": {"type": "string"}}},
                "discrete": _discrete,
            },
            "minProperties": 1,
            "maxProperties": 1,
        },
        "utility": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {"type": {"enum": ["throughput", "outage", "ergodic"]},
                           "rate": {"type": "number", "exclusiveMinimum": 0}},
        },
        "knowledge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"case": {"enum": [1, 2, 3, 4]},
                           "esit": {"enum": ["causal", "noncausal"]}},
        },
        "relay": {
            "type": "object",
            "additionalProperties": False,
            "required": ["source_rates", "relay_rates", "g_sr", "g_rd"],
            "properties": {
                "source_rates": _vec,
                "relay_rates": _vec,
                "g_sr": _nonneg,
                "g_rd": _nonneg,
                "traffic": {"enum": ["delay-constrained", "delay-tolerant"]},
                "alpha": _num,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "grid_step": {"type": "number", "exclusiveMinimum": 0},
                "grid_points": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "trials": {"type": "integer", "minimum": 1},
                "policies": {"type": "array", "items": {"type": "string"}},
            },
        },
    },
}


class InputError(Exception):
    pass


def _line_of(text: str, path) -> int:
    """Best-effort 1-based line of the JSON node at ``path``."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(json.dumps(key), pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def load_scenario(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        anchor = list(e.absolute_path)
        if e.validator == "additionalProperties" and isinstance(e.instance, dict):
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            anchor += extra[:1]
        raise InputError(f"{path}:{_line_of(text, anchor)}: {where}: {e.message}")
    if "eh" not in doc and "relay" not in doc:
        raise InputError(f"{path}:1: <root>: either 'eh' or 'relay' is required")
    return doc


# building model objects --------------------------------------------------------


def _spec(doc: dict):
    u = doc["utility"]
    fading = _fading(doc)
    if u["type"] == "throughput":
        return Throughput()
    if u["type"] == "outage":
        if "rate" not in u:
            raise ConfigError("outage utility needs 'rate'")
        if _case(doc) == 4:
            if fading is None:
                raise ConfigError("outage without CSIT needs a channel fading law")
            return NonOutage(u["rate"], fading)
        return NonOutage(u["rate"])
    if fading is None:
        raise ConfigError("ergodic utility needs a channel fading law")
    return ErgodicThroughput(fading)


def _case(doc: dict) -> int:
    return int(doc.get("knowledge", {}).get("case", 1))


def _esit(doc: dict) -> str:
    return doc.get("knowledge", {}).get("esit", "noncausal")


def _fading(doc: dict):
    ch = doc.get("channel", {})
    if "fading" in ch:
        return fading_from_dict(ch["fading"])
    return None


def _profile(doc: dict) -> EhProfile:
    h = doc["horizon"]
    eh = doc.get("eh", {})
    if "rates" not in eh:
        raise ConfigError("this solver needs a deterministic 'eh.rates' sequence")
    if len(eh["rates"]) != h["M"]:
        raise ConfigError(f"eh.rates has {len(eh['rates'])} entries, horizon M is {h['M']}")
    return EhProfile(eh["rates"], h["N"])


def _trace(doc: dict, profile: EhProfile) -> ChannelTrace:
    ch = doc.get("channel", {"gain": 1.0})
    if "trace" in ch:
        tr = ChannelTrace(ch["trace"])
        if tr.shape != profile.shape:
            raise ConfigError(f"channel.trace shape {tr.shape} does not match horizon {profile.shape}")
        return tr
    if "gain" in ch:
        return ChannelTrace.constant(profile, ch["gain"])
    raise ConfigError("this solver needs known gains: 'channel.trace' or 'channel.gain'")


def _eh_process(doc: dict):
    eh = doc.get("eh", {})
    if "rates" in eh:
        return FixedRates(eh["rates"])
    proc = eh["process"]
    if "iid" in proc:
        return IIDRates(proc["iid"]["values"], proc["iid"]["probs"])
    mk = proc["markov"]
    return MarkovRates(mk["values"], mk["matrix"], mk["initial"])


def _gain_process(doc: dict):
    ch = doc.get("channel", {"gain": 1.0})
    if "discrete" in ch:
        return GainProcess(ch["discrete"]["values"], ch["discrete"]["probs"])
    if "gain" in ch:
        return GainProcess.constant(ch["gain"])
    if "fading" in ch:
        return fading_from_dict(ch["fading"])
    raise ConfigError("stochastic scenarios need 'channel.discrete', 'channel.gain' or 'channel.fading'")


def _model(doc: dict, with_channel: bool = True) -> StochasticModel:
    h = doc["horizon"]
    ch = _gain_process(doc) if with_channel else None
    if with_channel and not isinstance(ch, GainProcess):
        raise ConfigError("DP solvers need a finite gain support ('channel.discrete')")
    return StochasticModel(_eh_process(doc), ch, h["M"], h["N"])


def _relay(doc: dict) -> RelayScenario:
    r = doc["relay"]
    N = doc["horizon"]["N"]
    sharing = OneWaySharing(r["alpha"]) if "alpha" in r else None
    return RelayScenario(EhProfile(r["source_rates"], N), EhProfile(r["relay_rates"], N),
                         r["g_sr"], r["g_rd"], Traffic(r.get("traffic", "delay-constrained")),
                         sharing)


# CSV output --------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


SCHEDULE_COLUMNS = ["m", "n", "gain", "power", "utility", "cum_consumed", "cum_harvested"]


def schedule_rows(profile: EhProfile, gains: np.ndarray, powers: np.ndarray,
                  utils: np.ndarray, harvested: Optional[np.ndarray] = None):
    M, N = profile.shape
    consumed = np.cumsum(powers.ravel())
    harvested = profile.cumulative() if harvested is None else harvested
    for t in range(M * N):
        m, n = divmod(t, N)
        yield (m + 1, n + 1, gains[m, n], powers[m, n], utils[m, n], consumed[t], harvested[t])


def read_schedule(path: Path) -> np.ndarray:
    """Powers from a schedule.csv as an (M, N) array."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    M = max(int(r["m"]) for r in rows)
    N = max(int(r["n"]) for r in rows)
    out = np.zeros((M, N))
    for r in rows:
        out[int(r["m"]) - 1, int(r["n"]) - 1] = float(r["power"])
    return out


# commands ----------------------------------------------------------------------


def _solve_relay(doc: dict, out: Path) -> dict:
    sc = _relay(doc)
    if sc.sharing is not None:
        sol, name = solve_relay_energy_sharing(sc), "relay-energy-sharing"
    elif sc.traffic is Traffic.DELAY_TOLERANT:
        sol, name = solve_relay_delay_tolerant(sc), "relay-delay-tolerant"
    else:
        sol, name = solve_relay_delay_constrained(sc), "relay-delay-constrained"
    s_slack, r_slack = relay_slacks(sc, sol)
    M, N = sc.shape
    rows = []
    for node, prof, gain, sched, bits in (
        ("source", sc.source, sc.g_sr, sol.source_schedule, sol.source_bits(sc)),
        ("relay", sc.relay, sc.g_rd, sol.relay_schedule, sol.relay_bits(sc)),
    ):
        g = np.full((M, N), float(gain))
        for row in schedule_rows(prof, g, sched.powers, bits.reshape(M, N)):
            rows.append((node,) + row)
    _write_csv(out / "schedule.csv", ["node"] + SCHEDULE_COLUMNS, rows)
    x = sol.transfers.ravel()
    _write_csv(out / "transfers.csv", ["m", "n", "transfer"],
               [(t // N + 1, t % N + 1, x[t]) for t in range(M * N)])
    return {"solver": name, "total_utility": sol.throughput, "kkt_residual": sol.kkt_residual,
            "min_slack": float(min(s_slack.min(), r_slack.min()))}


def _solve_offline(doc: dict, case: int, spec, out: Path) -> dict:
    profile = _profile(doc)
    if case == 1:
        trace = _trace(doc, profile)
        if isinstance(spec, Throughput):
            res, name = solve_throughput_case1(profile, trace), "staircase-waterfilling"
        elif isinstance(spec, NonOutage):
            res = solve_outage_case1(profile, trace, spec.rate, doc.get("solver", {}).get("tol", 1e-9))
            name = "outage-greedy"
        else:
            raise ConfigError("case 1 supports throughput or outage utilities")
        gains = trace.gains
        utils = block_utilities(res.schedule, spec, trace)
    else:
        if isinstance(spec, NonOutage):
            res, name = solve_outage_case4_noncausal(profile, OutageFn(spec.fading, spec.rate)), \
                "save-then-transmit"
        elif isinstance(spec, ErgodicThroughput):
            res, name = solve_ergodic_case4(profile, spec.fading), "ergodic-staircase"
        else:
            raise ConfigError("case 4 supports outage or ergodic utilities")
        gains = np.full(profile.shape, np.nan)
        utils = block_utilities(res.schedule, spec)
    _write_csv(out / "schedule.csv", SCHEDULE_COLUMNS,
               schedule_rows(profile, gains, res.schedule.powers, utils))
    return {"solver": name, "total_utility": res.utility, "kkt_residual": res.kkt_residual,
            "min_slack": float(np.min(profile.cumulative() - res.schedule.cumulative()))}


def _solve_dp(doc: dict, case: int, spec, out: Path) -> dict:
    opts = doc.get("solver", {})
    points = opts.get("grid_points", 201)
    seed = opts.get("seed", 0)
    if case == 4:
        model = _model(doc, with_channel=False)
        pol = solve_dp_outage_case4_causal(model, OutageFn(spec.fading, spec.rate, compute_critical=False),
                                           default_grid(model, points))
        name = "dp-case4"
    else:
        model = _model(doc)
        if case == 3:
            if not isinstance(model.eh, FixedRates):
                raise ConfigError("case 3 needs a deterministic 'eh.rates' sequence")
            pol = solve_dp_case3(_profile(doc), model.channel, spec, default_grid(model, points))
            name = "dp-case3"
        else:
            pol = solve_dp_case2(model, spec, default_grid(model, points))
            name = "dp-case2"
    # one sample path, trial 0 of the seed, to show what the policy does
    eh_idx, g_idx = sample_indices(model, trial_rng(seed, 0))
    r = rollout(pol, spec, eh_idx, g_idx)
    profile = EhProfile(r.rates, model.N)
    if case == 4:
        gains = np.full(profile.shape, np.nan)
        utils = block_utilities(PowerSchedule(r.powers), spec)
    else:
        gains = r.gains
        utils = block_utilities(PowerSchedule(r.powers), spec, ChannelTrace(r.gains))
    _write_csv(out / "schedule.csv", SCHEDULE_COLUMNS,
               schedule_rows(profile, gains, r.powers, utils))
    return {"solver": name, "total_utility": pol.expected_value, "kkt_residual": 0.0,
            "min_slack": float(np.min(profile.cumulative() - np.cumsum(r.powers)))}


def cmd_solve(args) -> int:
    doc = load_scenario(args.scenario)
    out = Path(args.out)
    t0 = time.perf_counter()
    if "relay" in doc:
        summary = _solve_relay(doc, out)
    else:
        case = _case(doc)
        spec = _spec(doc)
        stochastic = case in (2, 3) or (case == 4 and _esit(doc) == "causal")
        if stochastic:
            summary = _solve_dp(doc, case, spec, out)
        else:
            summary = _solve_offline(doc, case, spec, out)
    _write_csv(out / "summary.csv", ["solver", "total_utility", "kkt_residual", "min_slack"],
               [(summary["solver"], summary["total_utility"], summary["kkt_residual"],
                 summary["min_slack"])])
    _log_run(out, "solve", time.perf_counter() - t0)
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = load_scenario(args.scenario)
    opts = doc.get("solver", {})
    names = args.policies.split(",") if args.policies else opts.get(
        "policies", ["offline-case1", "dp-case2", "myopic"])
    unknown = [n for n in names if n not in POLICIES]
    if unknown:
        raise InputError(f"unknown policies {unknown}; choose from {sorted(POLICIES)}")
    trials = args.trials if args.trials is not None else opts.get("trials", 1000)
    seed = args.seed if args.seed is not None else opts.get("seed", 0)
    h = doc["horizon"]
    gen = TraceGenerator(h["M"], h["N"], _eh_process(doc), _gain_process(doc), seed)
    spec = _spec(doc)
    out = Path(args.out)
    t0 = time.perf_counter()
    report = run_experiment([Scenario(gen, spec)], names, trials, seed)[0]
    order = sorted(range(len(report.stats)), key=lambda i: -report.stats[i].mean)
    _write_csv(out / "compare.csv", ["policy", "mean", "stderr", "trials", "seed"],
               [(report.stats[i].policy, report.stats[i].mean, report.stats[i].stderr,
                 trials, seed) for i in order])
    _log_run(out, "compare", time.perf_counter() - t0, digest=report.digest)
    return EXIT_OK


def cmd_oracle(args) -> int:
    doc = load_scenario(args.scenario)
    opts = doc.get("solver", {})
    step = args.grid_step or opts.get("grid_step", 1e-3)
    tol = args.tol if args.tol is not None else 1e-3
    out = Path(args.out)
    t0 = time.perf_counter()
    if "relay" in doc:
        sc = _relay(doc)
        solver = solve_relay_energy_sharing if sc.sharing else (
            solve_relay_delay_tolerant if sc.traffic is Traffic.DELAY_TOLERANT
            else solve_relay_delay_constrained)
        ref = relay_reference(sc, step)
        sol = solver(sc).throughput
        rows, kind = [], "relay-throughput"
    else:
        case, spec = _case(doc), _spec(doc)
        profile = _profile(doc)
        if case == 1 and isinstance(spec, NonOutage):
            trace = _trace(doc, profile)
            res = brute_force_serve_sets(profile, trace, spec.rate)
            heur = solve_outage_case1(profile, trace, spec.rate)
            ref, sol, kind = float(res.outages), float(heur.outages), "outage-count"
            rows = _power_rows(profile, res.schedule.powers, heur.schedule.powers)
        else:
            solved = None
            if case == 1 and isinstance(spec, Throughput):
                source = _trace(doc, profile)
                solved = solve_throughput_case1(profile, source)
            elif isinstance(spec, NonOutage):
                source, solved = spec.fading, solve_outage_case4_noncausal(
                    profile, OutageFn(spec.fading, spec.rate))
            elif isinstance(spec, ErgodicThroughput):
                source, solved = spec.fading, solve_ergodic_case4(profile, spec.fading)
            if solved is None:
                raise ConfigError("no offline solver/oracle pair for this scenario")
            res = brute_force_offline(profile, source, spec, GridSpec(step))
            ref, sol, kind = res.utility, solved.utility, "utility"
            rows = _power_rows(profile, res.schedule.powers, solved.schedule.powers)
    delta = sol - ref
    _write_csv(out / "oracle.csv", ["m", "n", "oracle_power", "solver_power"], rows)
    _write_csv(out / "oracle_summary.csv", ["quantity", "solver", "oracle", "delta", "tol"],
               [(kind, sol, ref, delta, tol)])
    print(f"delta {kind}: solver {sol!r} oracle {ref!r} delta {delta!r}")
    _log_run(out, "oracle", time.perf_counter() - t0)
    return EXIT_OK if abs(delta) <= tol else EXIT_DELTA


def _power_rows(profile, oracle_p, solver_p):
    M, N = profile.shape
    return [(m + 1, n + 1, oracle_p[m, n], solver_p[m, n]) for m in range(M) for n in range(N)]


def cmd_validate(args) -> int:
    doc = load_scenario(args.scenario)
    # building the objects catches cross-field problems the schema cannot
    if "relay" in doc:
        _relay(doc)
    else:
        _spec(doc)
        if "rates" in doc.get("eh", {}):
            _profile(doc)
        else:
            _eh_process(doc)
    print(f"{args.scenario}: ok")
    return EXIT_OK


def _log_run(out: Path, command: str, seconds: float, **extra) -> None:
    # wall time lives here so the CSV outputs stay byte-identical across runs
    items = " ".join(f"{k}={v}" for k, v in sorted(extra.items()))
    (out / "run.log").write_text(f"command={command} wall_seconds={seconds:.6f} {items}".rstrip() + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehopt", description="Power scheduling for energy-harvesting links.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", required=True, type=Path)
        if out:
            sp.add_argument("--out", default=".", type=Path, help="output directory")

    sp = sub.add_parser("solve", help="solve a scenario and write schedule.csv / summary.csv")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("compare", help="Monte Carlo comparison of policies")
    common(sp)
    sp.add_argument("--policies", help="comma-separated policy names")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("oracle", help="compare the solver with brute force")
    common(sp)
    sp.add_argument("--grid-step", type=float)
    sp.add_argument("--tol", type=float)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("validate", help="check a scenario file")
    common(sp, out=False)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OracleSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
