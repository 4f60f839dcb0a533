"""Command line: ``run <config>``, ``verify <suite>``, ``report <dir>``.

Exit codes: 0 success, 1 invalid config or failed verification, 2 when a run
trips the divergence guard.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

from . import problems, simulator, verify
from .config import ConfigError, ExperimentConfig, MethodSpec, ProblemSpec, load

OUTPUT_ROOT_ENV = "MLMC_OUTPUT_ROOT"
SUMMARY_SCHEMA_VERSION = 1


def build_problem(spec: ProblemSpec):
    if spec.type == "quadratic":
        return problems.make_quadratic(spec.d, spec.M, spec.L, spec.xi, spec.seed, spec.mu, spec.sigma, spec.strict_noise)
    if spec.type == "exp_decay":
        return problems.make_exp_decay_quadratic(spec.d, spec.M, spec.r, spec.sigma, spec.seed)
    if spec.type == "sign_conflict":
        return problems.make_sign_conflict_problem(spec.a, spec.sigma)
    if spec.type == "logistic":
        return problems.make_logistic(spec.d, spec.M, seed=spec.seed)
    raise ConfigError("problem.type", f"unknown problem type {spec.type!r}")


def build_codec(m: MethodSpec) -> simulator.Codec:
    params = dict(s=m.s, k=m.k, levels=m.levels, beta=m.beta, scale=m.scale, c=m.c, num_levels=m.num_levels)
    return simulator.make_codec(m.kind, m.compressor, m.dist, **params)


def output_dir(config: ExperimentConfig) -> Path:
    """``output_dir`` from the config, resolved against ``$MLMC_OUTPUT_ROOT`` when set."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(config.output_dir)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def run_name(config: ExperimentConfig, method: MethodSpec) -> str:
    return f"{config.name}-{method.name}"


def run_config(config: ExperimentConfig, out: Path | None = None, log=print) -> dict:
    """Execute every (method, seed) run; returns the summary dict.

    With an ``eta_grid`` the step size is tuned per method on the first seed
    and reused for the others. Raises :class:`simulator.DivergenceError`.
    """
    out = output_dir(config) if out is None else Path(out)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config.problem)
    # some compressors reject parameters only once they see the dimension
    for i, m in enumerate(config.methods):
        try:
            build_codec(m).reset(problem.dim, problem.num_workers)
        except (ValueError, KeyError) as err:
            raise ConfigError(f"methods[{i}]", str(err)) from None
    runs = []
    for m in config.methods:
        def go(eta, seed, m=m):
            return simulator.simulate(problem, build_codec(m), config.T, eta, seed,
                                      divergence_factor=config.divergence_factor,
                                      parallel=config.parallel, method=m.name)

        etas = config.etas(problem.smoothness)
        if len(etas) == 1:
            eta = etas[0]
        else:
            try:
                eta = simulator.tune_step_size(lambda e: go(e, config.seeds[0]), etas)[0].eta
            except RuntimeError as err:
                raise simulator.DivergenceError(f"{m.name}: {err}", None) from None
        for seed in config.seeds:
            rec = go(eta, seed)
            path = out / f"{run_name(config, m)}_{seed}.csv"
            rec.write_csv(path)
            runs.append(dict(method=m.name, seed=seed, eta=eta, final_gap=rec.final_gap,
                             total_bits=rec.total_bits, csv=path.name))
            log(f"{m.name} seed={seed} eta={eta:.4g} final_gap={rec.final_gap:.4g} bits={rec.total_bits}")
    summary = dict(schema_version=SUMMARY_SCHEMA_VERSION, config=config.name, T=config.T, runs=runs)
    simulator.write_atomic(out / f"{config.name}_summary.json", json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_run(args) -> int:
    try:
        config = load(args.config)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return 1
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            run_config(config, args.out, log=(lambda *_: None) if args.quiet else print)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 1
    except simulator.DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 2
    return 0


def cmd_verify(args) -> int:
    if args.suite not in verify.SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(verify.SUITES)}", file=sys.stderr)
        return 1
    checks = verify.run_suite(args.suite)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{args.suite}: {len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def bits_gap_table(directory, budgets: int = 4) -> tuple[list[str], list[list[str]]]:
    """Rows ``(run, total bits, final gap, gap at each budget)``.

    Budgets are fractions ``1/n..n/n`` of the smallest total across runs, so
    every run is compared at bit counts it actually reached.
    """
    paths = sorted(Path(directory).glob("*.csv"))
    records = {}
    for p in paths:
        rows = simulator.read_csv(p)
        if rows:
            records[p.stem] = rows
    if not records:
        return [], []
    cap = min(rows[-1]["cum_bits"] for rows in records.values())
    marks = [cap * (j + 1) // budgets for j in range(budgets)]
    header = ["run", "total_bits", "final_gap"] + [f"gap@{b}" for b in marks]
    table = []
    for name, rows in records.items():
        line = [name, str(rows[-1]["cum_bits"]), f"{rows[-1]['gap']:.4g}"]
        for b in marks:
            within = [r["gap"] for r in rows if r["cum_bits"] <= b]
            line.append(f"{within[-1]:.4g}" if within else "-")
        table.append(line)
    return header, table


def cmd_report(args) -> int:
    if not Path(args.dir).is_dir():
        print(f"not a directory: {args.dir}", file=sys.stderr)
        return 1
    header, table = bits_gap_table(args.dir, args.budgets)
    if not table:
        print(f"no CSV files in {args.dir}", file=sys.stderr)
        return 1
    widths = [max(len(r[i]) for r in [header] + table) for i in range(len(header))]
    for r in [header] + table:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlmc-compress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides config and environment)")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="run a named property suite")
    p.add_argument("suite", help=", ".join(verify.SUITES))
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("report", help="bits-vs-gap table for a directory of run CSVs")
    p.add_argument("dir")
    p.add_argument("--budgets", type=int, default=4)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
