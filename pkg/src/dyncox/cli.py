"""Command line entry points: simulate, fit, test, reproduce."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .boottest import KINDS, TestSpec, run_test, write_report
from .data import (
    PAIR_RULES,
    CovariateSet,
    build_pair_covariates,
    ingest_events,
    read_covariates,
    read_node_features,
    write_covariates,
    write_events,
)
from .errors import NumericalError, ValidationError
from .experiments import (
    DEFAULT_KNOBS,
    run_bias_compare,
    run_coverage,
    run_mise,
    run_power,
    write_manifest,
    write_rows,
)
from .fitting import MODES, FitConfig, fit_grid, fit_homogeneous, write_curves_csv
from .inference import confidence_intervals, write_ci_csv
from .ioutil import atomic_write_text
from .kernels import KERNELS
from .simulate import SCENARIOS, ScenarioSpec, scenario, simulate, write_truth


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1
        raise ValidationError(message)


def _parse_grid(text: str) -> np.ndarray:
    """Either 'start:step:stop' or a comma-separated list of times."""
    try:
        if ":" in text:
            start, step, stop = (float(x) for x in text.split(":"))
            if step <= 0.0:
                raise ValueError("step must be positive")
            return np.round(np.arange(start, stop + 0.5 * step, step), 12)
        return np.asarray([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"bad grid {text!r}: {exc}") from None


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="dyncox", description="Time-varying degree and homophily curves for interaction events.")
    parser.add_argument("--config", help="JSON file of per-subcommand option defaults")
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("DYNCOX_THREADS", "1")),
        help="worker processes for grid fitting (env DYNCOX_THREADS)",
    )
    sub = parser.add_subparsers(dest="command")
    subparsers = {}

    sim = sub.add_parser("simulate", parents=[], description="Draw one event log from a scenario preset.")
    sim.add_argument("--scenario", required=True, choices=SCENARIOS)
    sim.add_argument("--n", required=True, type=int, help="number of nodes")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--tau", type=float, default=1.0)
    sim.add_argument("--c0", type=float, default=0.5, help="sparsity offset scale")
    sim.add_argument("--b", type=float, default=1.0, help="heterogeneity_compare knob")
    sim.add_argument("--c1", type=float, default=0.0, help="trend_test degree amplitude")
    sim.add_argument("--c2", type=float, default=0.0, help="trend_test homophily amplitude")
    sim.add_argument("--c", type=float, default=0.0, help="het_test out-degree offset")
    sim.add_argument("--c-in", type=float, default=0.0, help="het_test in-degree offset")
    sim.add_argument("--out", required=True, help="events CSV path")
    sim.add_argument("--truth-out", help="optional truth JSON path")
    sim.add_argument("--covariates-out", help="optional covariate JSON path")
    sim.set_defaults(func=_cmd_simulate)
    subparsers["simulate"] = sim

    fit = sub.add_parser("fit", description="Estimate the curves from an event log.")
    _data_args(fit)
    _fit_args(fit)
    fit.add_argument("--pooled", action="store_true", help="fit the homogeneous baseline instead")
    fit.add_argument("--out", required=True, help="curves CSV path")
    fit.add_argument("--ci-out", help="optional confidence interval CSV path")
    fit.add_argument("--level", type=float, default=0.95)
    fit.add_argument("--diagnostics-out", help="optional solver diagnostics JSON path")
    fit.set_defaults(func=_cmd_fit)
    subparsers["fit"] = fit

    test = sub.add_parser("test", description="Run a constancy or homogeneity test.")
    _data_args(test)
    _fit_args(test)
    test.add_argument("--test", required=True, choices=KINDS, dest="kind")
    test.add_argument("--level", type=float, default=0.05)
    test.add_argument("--resamples", type=int, default=1000)
    test.add_argument("--seed", type=int, default=0)
    test.add_argument("--out", required=True, help="report JSON path")
    test.set_defaults(func=_cmd_test)
    subparsers["test"] = test

    rep = sub.add_parser("reproduce", description="Rerun one of the packaged simulation studies.")
    rep.add_argument(
        "--experiment", required=True, choices=("mise", "coverage", "bias_compare", "power")
    )
    rep.add_argument("--out-dir", required=True)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--n", type=_parse_ints, default=None, help="comma-separated network sizes")
    rep.add_argument("--reps", type=int, default=None)
    rep.add_argument("--resamples", type=int, default=200)
    rep.add_argument("--level", type=float, default=None)
    rep.add_argument("--t", type=_parse_floats, default=None, help="coverage times")
    rep.add_argument("--b", type=_parse_floats, default=None, help="bias_compare knob values")
    rep.add_argument("--knobs", type=_parse_floats, default=None, help="power knob values")
    rep.add_argument("--test", choices=tuple(DEFAULT_KNOBS), dest="kind", help="test for power runs")
    rep.set_defaults(func=_cmd_reproduce)
    subparsers["reproduce"] = rep
    return parser, subparsers


def _data_args(p: _Parser) -> None:
    p.add_argument("--events", required=True, help="events CSV path")
    p.add_argument(
        "--n", type=int, help="number of nodes (default: from the covariate file, else the largest event id)"
    )
    p.add_argument("--tau", type=float, default=1.0, help="observation window length")
    p.add_argument("--covariates", help="pair covariate JSON path")
    p.add_argument("--node-features", help="node feature CSV path")
    p.add_argument("--rule", choices=PAIR_RULES, help="pairing rule for node features")


def _fit_args(p: _Parser) -> None:
    p.add_argument("--h1", type=float, help="degree-curve bandwidth (default 0.1 n^-1/5)")
    p.add_argument("--h2", type=float, help="homophily bandwidth (default 0.015 n^-1/5)")
    p.add_argument("--kernel", choices=KERNELS, default="gaussian")
    p.add_argument("--grid", type=_parse_grid, help="'start:step:stop' or comma list")
    p.add_argument("--mode", choices=MODES, default="gauss_seidel")


def _load_inputs(args):
    if args.covariates and args.node_features:
        raise ValidationError("give either --covariates or --node-features, not both")
    cov = None
    n = args.n
    if args.covariates:
        cov = read_covariates(args.covariates)
        if n is None:
            n = cov.n_nodes
    log = ingest_events(args.events, n, args.tau)
    if cov is not None:
        if cov.n_nodes != log.n_nodes or abs(cov.tau - log.tau) > 1e-9:
            raise ValidationError("covariate file disagrees with --n or --tau")
    elif args.node_features:
        if not args.rule:
            raise ValidationError("--rule is required with --node-features")
        cov = build_pair_covariates(
            read_node_features(args.node_features, log.n_nodes), args.rule, args.tau
        )
    return log, cov


def _fit_config(args) -> FitConfig:
    return FitConfig(h1=args.h1, h2=args.h2, kernel=args.kernel, grid=args.grid, mode=args.mode)


def _cmd_simulate(args) -> None:
    spec = ScenarioSpec(
        name=args.scenario,
        n_nodes=args.n,
        seed=args.seed,
        tau=args.tau,
        c0=args.c0,
        b=args.b,
        c1=args.c1,
        c2=args.c2,
        c=args.c,
        c_in=args.c_in,
    )
    truth = scenario(spec)
    log = simulate(truth, args.seed)
    write_events(log, args.out)
    if args.truth_out:
        write_truth(truth, args.truth_out)
    if args.covariates_out:
        write_covariates(truth.covariates, args.covariates_out)
    print(f"wrote {log.n_events} events to {args.out}")


def _cmd_fit(args) -> None:
    log, cov = _load_inputs(args)
    config = _fit_config(args)
    if args.pooled:
        fit = fit_homogeneous(log, cov, config)
    else:
        fit = fit_grid(log, cov, config, threads=args.threads)
    write_curves_csv(fit, args.out)
    if args.ci_out:
        if args.pooled:
            raise ValidationError("confidence intervals are not available for pooled fits")
        ci_cov = cov if cov is not None else CovariateSet.empty(log.n_nodes, log.tau)
        write_ci_csv(confidence_intervals(fit, log, ci_cov, level=args.level), args.ci_out)
    if args.diagnostics_out:
        diag = {
            "grid": [float(t) for t in fit.grid],
            "iterations": fit.iterations.tolist(),
            "eps": fit.eps.tolist(),
            "residual": fit.residual.tolist(),
            "converged": fit.converged.tolist(),
            "boundary": fit.boundary.tolist(),
            "active_pairs": fit.active_pairs.tolist(),
        }
        atomic_write_text(args.diagnostics_out, json.dumps(diag, indent=2) + "\n")
    bad = int((~fit.converged).sum())
    note = "" if bad == 0 else f" ({bad} grid points not converged)"
    print(f"wrote curves for {fit.grid.size} grid times to {args.out}{note}")


def _cmd_test(args) -> None:
    log, cov = _load_inputs(args)
    spec = TestSpec(
        kind=args.kind,
        grid=args.grid,
        level=args.level,
        resamples=args.resamples,
        seed=args.seed,
    )
    report = run_test(log, cov, spec, _fit_config(args))
    write_report(report, args.out)
    verdict = "reject" if report.reject else "retain"
    print(
        f"{report.kind}: statistic {report.statistic:.4f}, "
        f"critical {report.critical_value:.4f}, p={report.p_value:.4f} -> {verdict}"
    )


def _cmd_reproduce(args) -> None:
    os.makedirs(args.out_dir, exist_ok=True)
    started = time.monotonic()
    name = args.experiment
    if name == "mise":
        rows = run_mise(
            n_values=args.n or (100,), reps=args.reps or 100, seed=args.seed
        )
        params = {"n": list(args.n or (100,)), "reps": args.reps or 100, "seed": args.seed}
    elif name == "coverage":
        rows = run_coverage(
            n_values=args.n or (100,),
            reps=args.reps or 200,
            t_values=args.t or (0.4, 0.6, 0.8),
            seed=args.seed,
            level=args.level or 0.95,
        )
        params = {
            "n": list(args.n or (100,)),
            "reps": args.reps or 200,
            "t": list(args.t or (0.4, 0.6, 0.8)),
            "level": args.level or 0.95,
            "seed": args.seed,
        }
    elif name == "bias_compare":
        n = (args.n or (200,))[0]
        b_values = args.b or (0.0, 1.0 / 3.0, 0.5, 1.0)
        rows = run_bias_compare(
            b_values=b_values, n=n, reps=args.reps or 100, seed=args.seed, level=args.level or 0.95
        )
        params = {
            "n": n,
            "b": list(b_values),
            "reps": args.reps or 100,
            "level": args.level or 0.95,
            "seed": args.seed,
        }
    else:
        if not args.kind:
            raise ValidationError("--test is required for power runs")
        rows = run_power(
            kind=args.kind,
            knobs=args.knobs,
            n_values=args.n or (100,),
            reps=args.reps or 200,
            resamples=args.resamples,
            seed=args.seed,
            level=args.level or 0.05,
        )
        params = {
            "test": args.kind,
            "knobs": list(args.knobs or DEFAULT_KNOBS[args.kind]),
            "n": list(args.n or (100,)),
            "reps": args.reps or 200,
            "resamples": args.resamples,
            "level": args.level or 0.05,
            "seed": args.seed,
        }
    csv_path = os.path.join(args.out_dir, f"{name}.csv")
    write_rows(csv_path, rows)
    write_manifest(
        os.path.join(args.out_dir, "manifest.json"),
        name,
        params,
        [csv_path],
        elapsed_seconds=time.monotonic() - started,
    )
    print(f"wrote {len(rows)} rows to {csv_path}")


def _peek_config(argv: list[str]) -> str | None:
    for k, arg in enumerate(argv):
        if arg == "--config":
            if k + 1 >= len(argv):
                raise ValidationError("--config needs a path")
            return argv[k + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def _apply_config(subparsers: dict[str, _Parser], path: str) -> None:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    for section, opts in doc.items():
        if section not in subparsers:
            raise ValidationError(f"{path}: unknown section {section!r}")
        if not isinstance(opts, dict):
            raise ValidationError(f"{path}: section {section!r} must be an object")
        sub = subparsers[section]
        dests = {a.dest for a in sub._actions}
        for key, val in opts.items():
            dest = key.replace("-", "_")
            if dest not in dests:
                raise ValidationError(f"{path}: unknown option {key!r} in section {section!r}")
            if dest == "grid" and isinstance(val, str):
                val = _parse_grid(val)
            sub.set_defaults(**{dest: val})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, subparsers = build_parser()
        cfg = _peek_config(argv)
        if cfg:
            _apply_config(subparsers, cfg)
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise ValidationError("a subcommand is required (simulate, fit, test, reproduce)")
        args.func(args)
        return 0
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
