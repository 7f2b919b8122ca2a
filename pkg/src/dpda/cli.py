"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 oracle did not converge,
3 a bound or step-size check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .metrics import ReplicationError
from .problem import NotConverged
from .scenarios import (BUILTINS, CODE_VERSION, ScenarioConfig, atomic_write, build_problem,
                        load_config, oracle_for, replication_seeds)

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE, EXIT_CHECK = 0, 1, 2, 3

DESCRIPTIONS = {
    "static-10-15": "static network, N=10, |E|=15",
    "static-10-45": "static network, N=10, |E|=45",
    "static-40-60": "static network, N=40, |E|=60",
    "static-40-180": "static network, N=40, |E|=180",
    "tv-undirected-10-45": "time-varying undirected, N=10, |E0|=45, M=5, p=0.8",
    "tv-undirected-10-15": "time-varying undirected, N=10, |E0|=15, M=5, p=0.8",
    "tv-directed-fig7": "time-varying directed, bundled 12-node digraph, push-sum",
    "compare-static": "accelerated vs constant steps, static (10,45)",
    "compare-tv-undirected": "accelerated vs constant steps, time-varying undirected (10,45)",
    "compare-tv-directed": "accelerated vs constant steps, time-varying directed 12-node digraph",
}


def header_lines(scenario: ScenarioConfig, master_seed):
    return [f"config_hash={scenario.config_hash()}", f"master_seed={master_seed}",
            f"code_version={CODE_VERSION}"]


def _provenance(scenario, master_seed):
    return {"config_hash": scenario.config_hash(), "master_seed": master_seed,
            "code_version": CODE_VERSION}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _resolve(args) -> ScenarioConfig:
    """Load the scenario and apply command-line overrides."""
    scenario = load_config(args.config)
    overrides = {}
    for item in getattr(args, "set", None) or ():
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value)
    for flag, key in (("iterations", "iterations"), ("replications", "replications"),
                      ("seed", "master_seed"), ("out", "out_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        d = scenario.to_dict()
        d.update(overrides)
        try:
            scenario = ScenarioConfig.from_dict(d)
        except TypeError as exc:
            raise ValueError(str(exc)) from None
    return scenario


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_scenarios(args):
    for name in BUILTINS:
        print(f"{name:24s} {DESCRIPTIONS.get(name, '')}")
    return EXIT_OK


def cmd_run(args):
    from .metrics import run_replications

    scenario = _resolve(args)
    modes = [args.schedule_mode] if args.schedule_mode else list(scenario.schedule_modes)
    seed = scenario.master_seed
    out = scenario.out_dir
    cache = args.oracle_cache
    lines = header_lines(scenario, seed)
    summary = {**_provenance(scenario, seed), "scenario": scenario.to_dict(), "modes": {}}
    all_ok = True
    for mode in modes:
        avg, results = run_replications(scenario, jobs=args.jobs, schedule_mode=mode,
                                        check_bounds_too=args.check_bounds, oracle_cache=cache)
        path = os.path.join(out, f"{scenario.name}-{mode}.csv")
        atomic_write(path, avg.to_csv(lines))
        last = {name: float(avg.mean[name][-1]) for name in avg.mean}
        entry = {"trace_csv": os.path.basename(path), "final_k": int(avg.k[-1]),
                 "final_mean": last, "seeds": list(avg.seeds),
                 "oracle_kkt_residual": [r.oracle.kkt_residual for r in results]}
        if args.check_bounds:
            verdicts = []
            for r in results:
                checks = [b.to_dict() for b in r.bounds]
                ok = all(c["upper_ok"] and c["iterate_ok"] and c["lower_ok"] for c in checks)
                all_ok &= ok
                verdicts.append({"seed": r.seed, "ok": ok, "checks": checks})
            entry["bounds"] = verdicts
            entry["bounds_ok"] = all(v["ok"] for v in verdicts)
        if args.per_replication:
            for i, r in enumerate(results):
                atomic_write(os.path.join(out, f"{scenario.name}-{mode}-rep{i:03d}.csv"),
                             r.trace.to_csv(lines + [f"replication_seed={r.seed}"]))
        summary["modes"][mode] = entry
        print(f"{scenario.name} [{mode}] k={entry['final_k']} "
              f"relative_error_last={last['relative_error_last']:.3e} "
              f"relative_error_ergodic={last['relative_error_ergodic']:.3e}"
              + (f" bounds={'ok' if entry['bounds_ok'] else 'FAILED'}" if args.check_bounds else ""))
    if args.check_bounds:
        summary["bounds_ok"] = all_ok
    atomic_write(os.path.join(out, f"{scenario.name}-summary.json"), _dump(summary))
    return EXIT_OK if all_ok else EXIT_CHECK


def cmd_oracle(args):
    scenario = _resolve(args)
    cache = args.oracle_cache or os.path.join(scenario.out_dir, "oracle-cache")
    rows = []
    for seed in replication_seeds(scenario, scenario.replications):
        problem, _, _ = build_problem(scenario, seed)
        sol = oracle_for(problem, scenario.oracle_tol, cache)
        rows.append({"seed": seed, "digest": problem.digest(), "kkt_residual": sol.kkt_residual,
                     "iterations": sol.iterations_used, "x_star_norm": float((sol.x_star ** 2).sum() ** 0.5)})
        print(f"seed {seed}: kkt={sol.kkt_residual:.2e} iterations={sol.iterations_used}")
    summary = {**_provenance(scenario, scenario.master_seed), "tolerance": scenario.oracle_tol,
               "cache_dir": cache, "instances": rows}
    atomic_write(os.path.join(scenario.out_dir, f"{scenario.name}-oracle.json"), _dump(summary))
    return EXIT_OK


def cmd_validate(args):
    from .engines import default_constants
    from .graphs import GraphSequence
    from .schedule import init_static, init_tv, schedule_history, validate_conditions

    scenario = _resolve(args)
    seed = replication_seeds(scenario, 1)[0]
    problem, graphs, _ = build_problem(scenario, seed)
    tv = scenario.engine == "dpda_tv"
    if tv:
        constants = default_constants(problem, tv=True, delta1=scenario.delta1,
                                      delta2=scenario.delta2, alpha=scenario.alpha, mu=scenario.mu)
        state0 = init_tv(constants)
    else:
        graph = graphs.base if isinstance(graphs, GraphSequence) else graphs
        constants = default_constants(problem, graph, delta1=scenario.delta1,
                                      delta2=scenario.delta2, alpha=scenario.alpha, mu=scenario.mu)
        state0 = init_static(constants, graph)
    K = args.steps if args.steps is not None else scenario.iterations
    history = schedule_history(state0, constants.mu, K)
    report = validate_conditions(history, constants, "tv" if tv else "static", args.tol)
    for name, v in report.worst.items():
        flag = "ok" if v >= -report.tol else "VIOLATED"
        print(f"{name:20s} worst slack {v: .3e} at k={report.worst_k[name]}  {flag}")
    summary = {**_provenance(scenario, scenario.master_seed), "steps": K, **report.to_dict()}
    atomic_write(os.path.join(scenario.out_dir, f"{scenario.name}-validate.json"), _dump(summary))
    return EXIT_OK if report.ok else EXIT_CHECK


def cmd_decay(args):
    import warnings

    from .graphs import GraphSequence
    from .mixing import FitDegenerate, MixingMode, estimate_decay

    scenario = _resolve(args)
    seed = replication_seeds(scenario, 1)[0]
    _, graphs, _ = build_problem(scenario, seed)
    if not isinstance(graphs, GraphSequence):
        graphs = GraphSequence(graphs)
    mode = scenario.mixing or (MixingMode.PUSH_SUM if graphs.directed else MixingMode.METROPOLIS)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FitDegenerate)
        est = estimate_decay(graphs, mode, trials=args.trials, rounds_max=args.rounds, seed=args.fit_seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"Gamma={est.Gamma:.6g} beta={est.beta:.6g}" + (" (degenerate fit)" if est.degenerate else ""))
    lines = header_lines(scenario, scenario.master_seed)
    text = "".join(f"# {l}\n" for l in lines) + est.to_csv()
    atomic_write(os.path.join(scenario.out_dir, f"{scenario.name}-decay.csv"), text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p, replications=True):
    p.add_argument("config", help="built-in scenario name or JSON config path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (value parsed as JSON when possible)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    if replications:
        p.add_argument("--replications", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="dpda", description="Distributed primal-dual experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario and write traces")
    _add_common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--schedule-mode", choices=("accelerated", "constant"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--check-bounds", action="store_true")
    p.add_argument("--oracle-cache", help="directory for cached centralized solutions")
    p.add_argument("--per-replication", action="store_true", help="also write each replication's trace")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="solve and cache the centralized solutions")
    _add_common(p)
    p.add_argument("--oracle-cache")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="step-size condition report")
    _add_common(p, replications=False)
    p.add_argument("--steps", type=int, help="schedule steps to check (default: iterations)")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("decay", help="estimate the averaging error decay")
    _add_common(p, replications=False)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--fit-seed", type=int, default=0)
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("scenarios", help="list built-in scenarios")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"error: oracle did not converge: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except ReplicationError as exc:
        if isinstance(exc.__cause__, NotConverged):
            print(f"error: oracle did not converge: {exc}", file=sys.stderr)
            return EXIT_ORACLE
        raise
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
