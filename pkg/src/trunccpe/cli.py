"""Command-line harness: experiment runners, model fitting, and the WAIC
truncation sweep, with deterministic file outputs and a run manifest."""

import argparse
import json
import math
import sys
import time

import numpy as np

from . import __version__
from .dataio import (
    DatasetError,
    load_dataset,
    read_table,
    write_results,
)
from .experiments import (
    DEFAULT_B_LEVELS,
    FactorialDesign,
    run_bma_experiment,
    run_cp_experiment,
    run_empirical_simulation,
    run_waic_sweep,
    synthetic_dataset,
    theorem2_check,
    two_way_anova,
)
from .predictors import posterior_summary
from .sampler import (
    GibbsConfig,
    InitializationExhausted,
    ModelSpec,
    kappa_from_percentile,
    run_gibbs,
    warm_state,
)
from .statcore import NotPositiveDefinite, rng_stream, snr_to_sigma2

DESK = {"n": 40, "replicates": 30, "iterations": 4000, "burn_in": 1000}
PAPER = {"n": 112, "replicates": 100, "iterations": 12000, "burn_in": 2000}


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="results")
    sp.add_argument("--config", default=None,
                    help="JSON file with flag defaults (flags override it)")


def _merge_config(args):
    """Precedence: explicit flags > config file > argparse defaults."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        overrides = json.load(fh)
    given = set()
    for token in args._argv:
        if token.startswith("--"):
            given.add(token[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and attr not in given:
            setattr(args, attr, value)
    return args


def _scale(args):
    return PAPER if getattr(args, "paper_scale", False) else DESK


def _load_or_synthesize(args, n):
    if getattr(args, "data", None):
        column_map = {}
        if getattr(args, "columns", None):
            for pair in args.columns.split(","):
                logical, actual = pair.split("=", 1)
                column_map[logical.strip()] = actual.strip()
        return load_dataset(args.data, column_map=column_map)
    print(
        f"warning: no --data file supplied; using the synthetic fallback dataset (n={n})",
        file=sys.stderr,
    )
    return synthetic_dataset(n=n, seed=args.seed)


def _cmd_cp_experiment(args):
    sigmas = args.sigma or [0.5, 1.0, 2.0, 3.5]
    result = run_cp_experiment(replicates=args.replicates, sigmas=sigmas, seed=args.seed)
    header = ["sigma"] + [f"b{j}" for j in range(1, 9)]
    rows = [
        [sigma] + list(freq)
        for sigma, freq in zip(result["sigmas"], result["frequencies"])
    ]
    write_results(
        args.out,
        {"cp_frequencies.csv": (header, rows)},
        _manifest(args, sigmas=sigmas),
    )
    return 0


def _cmd_bma_experiment(args):
    diffs = run_bma_experiment(replicates=args.replicates, sigma=args.sigma, seed=args.seed)
    rows = [[i, d] for i, d in enumerate(diffs)]
    summary = [
        ["fraction_positive", float(np.mean(diffs > 0))],
        ["median", float(np.median(diffs))],
        ["mean", float(np.mean(diffs))],
    ]
    write_results(
        args.out,
        {
            "bma_differences.csv": (["replicate", "difference"], rows),
            "bma_summary.csv": (["statistic", "value"], summary),
        },
        _manifest(args),
    )
    return 0


def _cmd_simulate(args):
    scale = _scale(args)
    dataset = _load_or_synthesize(args, scale["n"])
    design = FactorialDesign(
        snr_levels=tuple(args.snr or (3.0, 5.0, 10.0)),
        d_levels=tuple(args.d or (0.1, 0.5, 0.9)),
        replicates=args.replicates or scale["replicates"],
        base_seed=args.seed,
    )
    rows = run_empirical_simulation(
        design,
        dataset,
        total_iterations=args.iterations or scale["iterations"],
        burn_in=args.burn_in or scale["burn_in"],
        n_jobs=args.jobs,
    )
    header = ["snr", "d", "replicate", "response", "kappa", "stalls"]
    table = [[r[k] for k in header] for r in rows]
    write_results(
        args.out,
        {"responses.csv": (header, table)},
        _manifest(args, design=vars_of(design), n=dataset.n),
    )
    return 0


def _cmd_anova(args):
    columns = read_table(args.input)
    for need in ("snr", "d", "response"):
        if need not in columns:
            raise DatasetError(f"input table lacks required column {need!r}")
    table = two_way_anova(columns["response"], columns["snr"], columns["d"])
    header = ["effect", "DF", "SumSq", "MeanSq", "F", "p"]
    rows = [
        [r.name, r.df, r.sum_sq, r.mean_sq,
         "" if r.f_value is None else r.f_value,
         "" if r.p_value is None else r.p_value]
        for r in table.rows
    ]
    write_results(args.out, {"anova.csv": (header, rows)}, _manifest(args))
    return 0


def _fit_sigma2(args, dataset):
    if args.sigma2 is not None:
        return float(args.sigma2)
    print(
        f"warning: --sigma2 not given; deriving it from --snr {args.snr}",
        file=sys.stderr,
    )
    return snr_to_sigma2(dataset.response, args.snr)


def _cmd_fit(args):
    scale = _scale(args)
    dataset = _load_or_synthesize(args, scale["n"])
    sigma2 = _fit_sigma2(args, dataset)
    spec = ModelSpec(
        design=dataset.design_matrix(),
        locs=dataset.locations,
        sigma2=sigma2,
        b_levels=DEFAULT_B_LEVELS,
    )
    z = dataset.response
    iterations = args.iterations or scale["iterations"]
    burn_in = args.burn_in or scale["burn_in"]
    base = GibbsConfig(total_iterations=iterations, burn_in=burn_in, seed=args.seed)
    chain = run_gibbs(spec, z, base, rng_stream(args.seed, "fit_untrunc"))
    kappa = math.inf
    if args.kappa_abs is not None:
        kappa = float(args.kappa_abs)
    elif args.kappa_percentile is not None:
        kappa = kappa_from_percentile(chain, args.kappa_percentile)
    if math.isfinite(kappa):
        config = GibbsConfig(
            total_iterations=iterations, burn_in=burn_in, kappa=kappa, seed=args.seed
        )
        chain = run_gibbs(
            spec, z, config, rng_stream(args.seed, "fit_trunc"),
            initial_state=warm_state(chain, kappa),
        )
    summary = posterior_summary(chain.y_samples())
    rows = [
        [i, summary.mean[i], summary.median[i], summary.sd[i]]
        for i in range(dataset.n)
    ]
    import os

    os.makedirs(args.out, exist_ok=True)
    chain.save(os.path.join(args.out, "chain.csv"))
    write_results(
        args.out,
        {
            "y_summary.csv": (["index", "mean", "median", "sd"], rows),
            "diagnostics.csv": (
                ["key", "value"],
                [["kappa", kappa], ["stall_count", chain.stall_count]]
                + [[f"acceptance_{k}", v] for k, v in sorted(chain.acceptance_rates.items())],
            ),
        },
        _manifest(args, sigma2=sigma2, kappa=kappa),
    )
    return 0


def _cmd_waic_sweep(args):
    scale = _scale(args)
    dataset = _load_or_synthesize(args, scale["n"])
    sigma2 = _fit_sigma2(args, dataset)
    spec = ModelSpec(
        design=dataset.design_matrix(),
        locs=dataset.locations,
        sigma2=sigma2,
        b_levels=DEFAULT_B_LEVELS,
    )
    d_grid = np.linspace(args.d_min, 1.0, args.grid_points)
    report = run_waic_sweep(
        spec,
        dataset.response,
        d_grid,
        total_iterations=args.iterations or scale["iterations"],
        burn_in=args.burn_in or scale["burn_in"],
        seed=args.seed,
    )
    rows = [
        [r["d"], r["kappa"], "" if r["waic"] is None else r["waic"], r["error"]]
        for r in report.rows
    ]
    write_results(
        args.out,
        {"waic_sweep.csv": (["d", "kappa", "waic", "error"], rows)},
        _manifest(
            args,
            sigma2=sigma2,
            untruncated_waic=report.untruncated_waic,
            best_d=report.best_d,
        ),
    )
    return 0


def _cmd_theorem2_check(args):
    scale = _scale(args)
    dataset = _load_or_synthesize(args, scale["n"])
    report = theorem2_check(
        dataset=dataset,
        snr=args.snr,
        replicates=args.replicates or scale["replicates"],
        seed=args.seed,
        kappa_infinite=args.control,
        n_jobs=args.jobs,
    )
    rows = [
        ["kappa", report.kappa],
        ["n_sigma2", report.n_sigma2],
        ["mean_sse_truncated", report.mean_tc],
        ["mean_sse_comparator", report.mean_m],
        ["difference", report.difference],
        ["se_difference", report.se_difference],
        ["failed_replicates", len(report.failed_replicates)],
    ]
    write_results(
        args.out, {"theorem2.csv": (["quantity", "value"], rows)}, _manifest(args)
    )
    return 0


def vars_of(dc):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(dc).items()}


def _manifest(args, **extra):
    config = {
        k: (list(v) if isinstance(v, (tuple, list)) else v)
        for k, v in vars(args).items()
        if not k.startswith("_") and k != "func"
    }
    return {
        "tool": "trunccpe",
        "version": __version__,
        "subcommand": args._subcommand,
        "config": config,
        "seed": args.seed,
        **extra,
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trunccpe",
        description="Truncated CPE Bayesian hierarchical modeling harness",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("cp-experiment", help="Cp selection-frequency study")
    sp.add_argument("--replicates", type=int, default=1000)
    sp.add_argument("--sigma", type=float, action="append")
    _add_common(sp)
    sp.set_defaults(func=_cmd_cp_experiment)

    sp = sub.add_parser("bma-experiment", help="model-averaging prior comparison")
    sp.add_argument("--replicates", type=int, default=1000)
    sp.add_argument("--sigma", type=float, default=2.0)
    _add_common(sp)
    sp.set_defaults(func=_cmd_bma_experiment)

    sp = sub.add_parser("simulate", help="factorial truncation study")
    scale = sp.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", action="store_true", default=True)
    scale.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--snr", type=float, action="append")
    sp.add_argument("--d", type=float, action="append")
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--burn-in", type=int, default=None)
    sp.add_argument("--data", default=None)
    sp.add_argument("--columns", default=None,
                    help="logical=actual column mapping, comma separated")
    sp.add_argument("--jobs", type=int, default=1)
    _add_common(sp)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("anova", help="two-way ANOVA of a response table")
    sp.add_argument("--input", required=True)
    _add_common(sp)
    sp.set_defaults(func=_cmd_anova)

    sp = sub.add_parser("fit", help="fit the (truncated) model to a dataset")
    scale = sp.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", action="store_true", default=True)
    scale.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    sp.add_argument("--data", default=None)
    sp.add_argument("--columns", default=None)
    sp.add_argument("--sigma2", type=float, default=None)
    sp.add_argument("--snr", type=float, default=5.0)
    sp.add_argument("--kappa-percentile", type=float, default=None)
    sp.add_argument("--kappa-abs", type=float, default=None)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--burn-in", type=int, default=None)
    _add_common(sp)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("waic-sweep", help="WAIC over truncation percentiles")
    scale = sp.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", action="store_true", default=True)
    scale.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    sp.add_argument("--data", default=None)
    sp.add_argument("--columns", default=None)
    sp.add_argument("--sigma2", type=float, default=None)
    sp.add_argument("--snr", type=float, default=5.0)
    sp.add_argument("--grid-points", type=int, default=20)
    sp.add_argument("--d-min", type=float, default=0.05)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--burn-in", type=int, default=None)
    _add_common(sp)
    sp.set_defaults(func=_cmd_waic_sweep)

    sp = sub.add_parser("theorem2-check", help="prediction-improvement check")
    scale = sp.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", action="store_true", default=True)
    scale.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--snr", type=float, default=5.0)
    sp.add_argument("--control", action="store_true",
                    help="run the untruncated control arm (kappa = inf)")
    sp.add_argument("--data", default=None)
    sp.add_argument("--columns", default=None)
    sp.add_argument("--jobs", type=int, default=1)
    _add_common(sp)
    sp.set_defaults(func=_cmd_theorem2_check)

    return parser


def cli_dispatch(argv):
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = list(argv)
    args._subcommand = args.subcommand
    try:
        args = _merge_config(args)
        start = time.monotonic()
        status = args.func(args)
        print(f"done in {time.monotonic() - start:.1f}s", file=sys.stderr)
        return status
    except (DatasetError, FileNotFoundError) as exc:
        print(f"error: dataset: {exc}", file=sys.stderr)
        return 2
    except InitializationExhausted as exc:
        print(f"error: initialization-exhausted: {exc}", file=sys.stderr)
        return 3
    except NotPositiveDefinite as exc:
        print(f"error: factorization: {exc}", file=sys.stderr)
        return 4
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: invalid-config: {exc}", file=sys.stderr)
        return 5


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
