"""``flr`` command-line front end.

Exit codes: 0 success, 2 user error (bad flags, malformed or mismatched
input), 3 numeric failure.  A ``--config`` file holds ``key=value`` lines
whose keys are long option names; flags given on the command line win.
Set ``FLR_LOG`` (e.g. ``DEBUG``) to control log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import flr as flr_mod
from .flr import (
    Dataset,
    Deterministic,
    Fixed,
    IllConditionedComponent,
    RegimeParams,
    ScaledThreshold,
    Threshold,
)
from .fpca import NumericFailure, eigendecompose, empirical_covariance, write_eigen_csv
from .funcgrid import CsvFormatError, GridFunction, fmt_float, make_uniform_grid, read_matrix_csv
from .simlab import (
    STUDY_THRESHOLDS,
    McConfig,
    lower_bound_construct,
    run_rate_experiment,
    run_study1,
    run_study2,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _smoothing(text: str) -> int | str:
    if text in ("band", "cuberoot"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'band', 'cuberoot' or an integer") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="replicate worker threads")
    p.add_argument("--config", type=Path, help="key=value file; flags override it")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")


def _add_rule(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--rule",
        choices=("threshold", "scaled", "deterministic", "fixed"),
        default="threshold",
        help="cut-off rule",
    )
    p.add_argument("--t", type=float, default=0.1, help="threshold on eigenvalues")
    p.add_argument("--C", type=float, default=1.0, help="scale of the n-dependent threshold")
    p.add_argument("--c", type=float, default=0.5, help="exponent of the n-dependent threshold")
    p.add_argument("--m", type=int, default=1, help="fixed cut-off")


def _add_regime(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--alpha", type=float, required=required)
    p.add_argument("--beta", type=float, required=required)
    p.add_argument("--gamma", type=float, required=required)
    p.add_argument("--C3", type=float, default=0.0, help="fallback slope constant")
    p.add_argument("--C4", type=float, default=1.0)
    p.add_argument("--C5", type=float, default=2.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the slope and intercept from CSV data")
    p.add_argument("--x", type=Path, required=True, help="CSV, one curve per row")
    p.add_argument("--y", type=Path, required=True, help="CSV, one response per row")
    _add_rule(p)
    _add_regime(p, required=False)
    _add_common(p)

    p = sub.add_parser("predict", help="predict responses from a written fit")
    p.add_argument("--fit-dir", type=Path, required=True)
    p.add_argument("--x", type=Path, required=True, help="CSV, one curve per row")
    _add_common(p)

    p = sub.add_parser("eigen", help="empirical eigenvalues and eigenfunctions")
    p.add_argument("--x", type=Path, required=True)
    p.add_argument("--max-components", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("simulate", help="Monte Carlo threshold studies")
    p.add_argument("--study", type=int, choices=(1, 2), default=1)
    p.add_argument("--arm", choices=("continuous", "noisy", "both"), default="both")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--thresholds", type=_float_list, default=list(STUDY_THRESHOLDS))
    p.add_argument("--paper-defaults", action="store_true", help="n=100, reps=500, the six standard study thresholds")
    p.add_argument("--k", type=int, default=None, help="observation grid size of the noisy arm")
    p.add_argument("--obs-noise-sd", type=float, default=1.0)
    p.add_argument("--j-smooth", type=_smoothing, default="band")
    p.add_argument("--separate-paths", action="store_true", help="draw fresh curves for the noisy arm")
    p.add_argument("--target", choices=("slope", "conditional_mean"), default="slope")
    p.add_argument("--check-perturbation", action="store_true")
    _add_common(p)

    p = sub.add_parser("rates", help="empirical convergence exponent")
    _add_regime(p, required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--C1", type=float, default=1.0)
    p.add_argument("--C2", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--n-list", type=_int_list, default=[100, 200, 400, 800, 1600])
    p.add_argument("--reps", type=int, default=200)
    _add_common(p)

    p = sub.add_parser("lowerbound", help="two-point lower-bound numerics")
    _add_regime(p, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--n-list", type=_int_list, default=[1000, 10000, 100000])
    _add_common(p)
    return parser


def _config_argv(parser: argparse.ArgumentParser, command: str, path: Path) -> list[str]:
    """Translate a key=value file into option strings for ``command``."""
    subparser = parser._subparsers._group_actions[0].choices[command]
    actions = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = (opt, action)
    summary = flr_mod.read_summary(path)
    argv: list[str] = []
    for key, value in summary.items():
        norm = key.replace("-", "_")
        if norm not in actions or norm == "config":
            raise UsageError(f"{path}: unknown option {key!r} for {command}")
        opt, action = actions[norm]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
        else:
            argv += [opt, value]
    return argv


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        idx = argv.index(args.command)
        try:
            extra = _config_argv(parser, args.command, args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        args = parser.parse_args(argv[: idx + 1] + extra + argv[idx + 1 :])
    if getattr(args, "threads", 1) < 1:
        raise UsageError("--threads must be at least 1")
    return args


# -- commands -------------------------------------------------------------


def _rule_from(args) -> object:
    try:
        if args.rule == "threshold":
            return Threshold(args.t)
        if args.rule == "scaled":
            return ScaledThreshold(args.C, args.c)
        if args.rule == "fixed":
            return Fixed(args.m)
        if None in (args.alpha, args.beta, args.gamma):
            raise UsageError("--rule deterministic needs --alpha, --beta and --gamma")
        return Deterministic(args.alpha, args.beta, args.gamma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _regime_from(args, **extra) -> RegimeParams:
    alpha = args.alpha if args.alpha is not None else 2.0
    beta = args.beta if args.beta is not None else 4.0
    gamma = args.gamma if args.gamma is not None else 2.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", flr_mod.RegimeWarning)
        try:
            return RegimeParams(alpha, beta, gamma, C3=args.C3, C4=args.C4, C5=args.C5, **extra)
        except ValueError as exc:
            raise UsageError(str(exc)) from None


def _read_curves(path: Path) -> np.ndarray:
    return read_matrix_csv(path, min_columns=2)


def cmd_fit(args) -> int:
    X = _read_curves(args.x)
    Y = read_matrix_csv(args.y)
    if Y.shape[1] != 1:
        raise UsageError(f"{args.y}: expected one response per row, got {Y.shape[1]} columns")
    if Y.shape[0] != X.shape[0]:
        raise UsageError(f"{X.shape[0]} curves in {args.x} but {Y.shape[0]} responses in {args.y}")
    if X.shape[0] < 2:
        raise UsageError("need at least 2 observations")
    grid = make_uniform_grid(X.shape[1])
    rule = _rule_from(args)
    fit = flr_mod.fit(Dataset(grid, X, Y[:, 0]), rule, _regime_from(args))
    out = args.out_dir
    flr_mod.write_fit(out, fit, {"rule": repr(rule)})
    with open(out / "slope.csv", "w") as fh:
        fh.write("t,b_hat,b_tilde\n")
        for t, bh, bt in zip(grid.points, fit.b_hat.values, fit.b_tilde.values):
            fh.write(f"{fmt_float(t)},{fmt_float(bh)},{fmt_float(bt)}\n")
    print(f"m={fit.m} intercept={fmt_float(fit.intercept)} slope_norm={fmt_float(fit.slope_norm)} "
          f"truncated={'true' if fit.truncated_flag else 'false'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        loaded = flr_mod.read_fit(args.fit_dir)
    except (OSError, KeyError) as exc:
        raise UsageError(f"cannot read fit from {args.fit_dir}: {exc}") from None
    X = _read_curves(args.x)
    if X.shape[1] != loaded.grid.point_count:
        raise UsageError(
            f"{args.x} has {X.shape[1]} columns but the fit uses {loaded.grid.point_count} grid points"
        )
    preds = [loaded.predict(GridFunction(loaded.grid, row)) for row in X]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "predictions.csv", "w") as fh:
        fh.write("prediction\n")
        for p in preds:
            fh.write(fmt_float(p) + "\n")
    return EXIT_OK


def cmd_eigen(args) -> int:
    X = _read_curves(args.x)
    grid = make_uniform_grid(X.shape[1])
    r = min(X.shape[0], grid.point_count)
    if args.max_components is not None:
        r = min(r, args.max_components)
    sys_ = eigendecompose(empirical_covariance((grid, X)), r)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_eigen_csv(args.out_dir / "eigenvalues.csv", args.out_dir / "eigenfunctions.csv", sys_)
    return EXIT_OK


def cmd_simulate(args) -> int:
    n, reps, thresholds = args.n, args.reps, args.thresholds
    if args.paper_defaults:
        n, reps, thresholds = 100, 500, list(STUDY_THRESHOLDS)
    arms = ("continuous", "noisy") if args.arm == "both" else (args.arm,)
    runner = run_study1 if args.study == 1 else run_study2
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for arm in arms:
        try:
            cfg = McConfig(
                n=n,
                reps=reps,
                seed=args.seed,
                thresholds=tuple(thresholds),
                noisy=arm == "noisy",
                k=args.k,
                obs_noise_sd=args.obs_noise_sd,
                J_smooth=args.j_smooth,
                share_paths=not args.separate_paths,
                target=args.target,
                check_perturbation=args.check_perturbation,
                threads=args.threads,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        table = runner(cfg)
        path = args.out_dir / f"study{args.study}_{arm}.csv"
        table.write_csv(path)
        print(f"# study {args.study}, {arm} arm, n={n}, reps={reps} -> {path}")
        print(table.to_csv(), end="")
        if args.check_perturbation:
            print(f"# perturbation bounds failed in {table.perturbation_failures} of {table.perturbation_checked} replicates")
    return EXIT_OK


def cmd_rates(args) -> int:
    if len(args.n_list) < 3:
        raise UsageError("--n-list needs at least 3 sample sizes")
    if any(n < 2 for n in args.n_list) or args.reps < 1:
        raise UsageError("sample sizes must be >= 2 and reps >= 1")
    regime = _regime_from(args, C=args.C, C1=args.C1, C2=args.C2)
    result = run_rate_experiment(
        regime, args.n_list, args.reps, seed=args.seed, sigma=args.sigma, threads=args.threads
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "rates.csv").write_text(result.to_csv())
    lines = [
        f"branch={result.branch}",
        f"fitted_exponent={fmt_float(result.fitted_exponent)}",
        f"theoretical_exponent={fmt_float(result.theoretical_exponent)}",
    ]
    if result.branch == flr_mod.BRANCH_BOUNDARY:
        lines.append("note=rate carries an extra log(n) factor; exponent shown is for n^-1")
    text = "\n".join(lines) + "\n"
    (args.out_dir / "rates_summary.txt").write_text(text)
    print(result.to_csv() + text, end="")
    return EXIT_OK


LOWERBOUND_HEADER = "n,nu,T_B0,T_B1,V_n,nV_n,chi_sq_mean,scaling_check,status"


def cmd_lowerbound(args) -> int:
    if not args.sigma > 0:
        raise UsageError("--sigma must be positive")
    regime = _regime_from(args)
    lines = [LOWERBOUND_HEADER]
    for n in args.n_list:
        try:
            rep = lower_bound_construct(regime, n, args.sigma, allow_divergent=True)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        status = "divergent" if rep.divergent else "ok"
        fields = (rep.T_B0, rep.T_B1, rep.V_n, rep.nV_n, rep.chi_sq_mean, rep.scaling_check)
        lines.append(f"{rep.n},{rep.nu}," + ",".join(fmt_float(v) for v in fields) + f",{status}")
    text = "\n".join(lines) + "\n"
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "lowerbound.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eigen": cmd_eigen,
    "simulate": cmd_simulate,
    "rates": cmd_rates,
    "lowerbound": cmd_lowerbound,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("FLR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, CsvFormatError) as exc:
        print(f"flr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IllConditionedComponent, NumericFailure) as exc:
        print(f"flr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"flr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
