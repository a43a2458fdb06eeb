"""Command-line entry point ``difflim``.

Exit codes: 0 success, 1 a trend verdict failed, 2 configuration or usage error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import drift_models as dm
from .runner import (
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_OK,
    ConfigError,
    check_conditions,
    config_from_dict,
    emit_report,
    load_config,
    read_report,
    run_experiment,
)
from .scale import DomainTooWideError
from .sde_engine import ACCUMULATORS, SimulationError, StepPolicy, run_ensemble, simulate_path_em

SEED_ENV = "DIFFLIM_SEED"

DEFAULTS_HELP = """\
defaults: T ladder 100,1000,10000; horizon 1; probe time 1; 10000 paths;
seed from --seed, else $DIFFLIM_SEED, else 0; quad tol 1e-9; step
h <= min(1e-3, 0.1/(1+L_T^2), feature_scale^2) on a common dyadic grid;
limit Euler step 1e-4; KS threshold 0.05; W1 threshold 0.05; condition
threshold 1.0; trend slack 0.1.
"""


def _ladder(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad T ladder {text!r}; expected e.g. 100,1000,10000") from None


def _probes(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad probe list {text!r}") from None


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env, 0)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return None


def _config(args):
    overrides = {
        "scenario": args.scenario,
        "T_ladder": args.t_ladder,
        "horizon": args.horizon,
        "n_paths": args.paths,
        "seed": _seed(args),
        "quad_tol": args.quad_tol,
        "threads": args.threads,
        "probe_times": getattr(args, "probes", None),
    }
    if args.config:
        return load_config(args.config, **overrides)
    if args.scenario is None:
        raise ConfigError("invalid configuration:\n  scenario: give --scenario or --config")
    return config_from_dict({}, **overrides)


def _common(p, ladder=True):
    p.add_argument("--config", help="TOML experiment file; flags override its values")
    p.add_argument("--scenario", help="scenario id, e.g. besq or 'besq(1, x0=0.5)'")
    if ladder:
        p.add_argument("--t-ladder", type=_ladder, help="comma-separated increasing T values")
    p.add_argument("--horizon", type=float, help="time horizon L")
    p.add_argument("--paths", type=int, help="number of paths")
    p.add_argument("--seed", type=lambda v: int(v, 0), help=f"master seed (fallback: ${SEED_ENV})")
    p.add_argument("--quad-tol", type=float, help="quadrature tolerance of the scale tables")
    p.add_argument("--threads", type=int, help="worker threads for ensembles")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_list(args):
    rows = dm.list_scenarios()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["id", "parameters", "theorems"])
    for name, params, tags in rows:
        w.writerow([name, " ".join(f"{k}={v:g}" for k, v in params.items()), " ".join(tags)])
    return EXIT_OK


def cmd_check(args):
    cfg = _config(args)
    report = check_conditions(cfg)
    _write(emit_report(report, args.format), args.out)
    return report.exit_code


def cmd_simulate(args):
    if args.paths == 1:
        # one path is written as a full trace
        args.trace, args.paths = True, None
    cfg = _config(args)
    s = cfg.build_scenario()
    T = args.T if args.T is not None else cfg.T_ladder[-1]
    policy = StepPolicy(h_max=cfg.h_max, stability=cfg.stability, resolution=cfg.resolution)
    if args.trace:
        path = simulate_path_em(s, T, cfg.horizon, policy, seed=cfg.seed)
        path.to_csv(args.out or sys.stdout)
        return EXIT_OK
    stats = tuple(args.statistics.split(",")) if args.statistics else ("xi", "zeta")
    for name in stats:
        if name not in ACCUMULATORS or name == "q_int":
            raise ConfigError(f"invalid configuration:\n  statistics: unknown {name!r}")
    ens = run_ensemble(s, T, cfg.horizon, cfg.n_paths, step_policy=policy, seed=cfg.seed,
                       probes=cfg.probe_times, statistics=stats, threads=cfg.threads)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t"] + list(stats))
        for j, t in enumerate(ens.times):
            block = np.column_stack([ens.values[name][j] for name in stats])
            for p, row in zip(ens.path_index, block):
                w.writerow([int(p), repr(float(t))] + [repr(float(v)) for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if ens.failures:
        print(f"{len(ens.failures)} of {ens.n_paths} paths left the domain and were dropped", file=sys.stderr)
    return EXIT_OK


def _summary(report):
    lines = []
    for r in report.sorted_records():
        if r.verdict == "n/a":
            continue
        t = "" if r.t is None else f" t={r.t:g}"
        lines.append(f"{r.verdict.upper():4s} {r.scenario} {r.theorem} {r.statistic}/{r.metric}{t}: {r.value:.4g}")
    return "\n".join(lines) + "\n"


def cmd_compare(args):
    cfg = _config(args)
    report = run_experiment(cfg)
    if args.out:
        emit_report(report, args.format, args.out)
    sys.stdout.write(_summary(report))
    return report.exit_code


def cmd_report(args):
    if args.input:
        report = read_report(args.input)
    else:
        report = run_experiment(_config(args))
    _write(emit_report(report, args.format), args.out)
    return report.exit_code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="difflim",
        description="Weak-convergence experiments for one-dimensional diffusions with drift a_T.",
        epilog=DEFAULTS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("list-scenarios", help="print the scenario registry")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("check-conditions", help="evaluate the condition checkers along the T ladder")
    _common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="simulate finite-T paths and write them as CSV")
    _common(p)
    p.add_argument("--T", type=float, help="value of T (default: last entry of the ladder)")
    p.add_argument("--probes", type=_probes, help="comma-separated probe times")
    p.add_argument("--statistics", help=f"comma-separated subset of {','.join(ACCUMULATORS[:-1])}")
    p.add_argument("--trace", action="store_true", help="write one full path instead of ensemble values")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run the experiment and print the verdicts")
    _common(p)
    p.add_argument("--probes", type=_probes, help="comma-separated probe times")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="run the experiment (or re-read a report) and emit it")
    _common(p)
    p.add_argument("--probes", type=_probes, help="comma-separated probe times")
    p.add_argument("--input", help="existing CSV or JSON report to re-emit instead of running")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"difflim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dm.UnknownScenarioError, DomainTooWideError) as exc:
        print(f"difflim: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"difflim: simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
