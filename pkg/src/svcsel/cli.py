"""Command-line interface: fit, select, simulate, cv, and predict.

Input data are CSV files with a header row; column roles (response, fixed
effects, SVC covariates, coordinates) are given as comma-separated column
names.  Structured results are written as JSON, tabular traces as CSV.

Exit codes: 0 success, 2 input/schema error, 3 numerical failure,
4 non-convergence (partial results still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ConvergenceError, NumericalError, SvcselError
from .kernels import KernelSpec
from .mbo import TuneConfig, tune_shrinkage
from .model import Dataset, FitResult, SvcParams
from .pmle import CdConfig, adaptive_weights, default_theta_bounds, fit_mle
from .predict import kfold_cv, predict
from .simstudy import SimConfig, run_study

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_NOCONV = 4

_KERNELS = {"exp": "exp", "matern32": "matern32", "matern52": "matern52"}


class InputError(Exception):
    """Bad input file, schema, or flag combination."""


def _cols(arg: str) -> list[str]:
    return [c.strip() for c in arg.split(",") if c.strip()]


def _load_frame(path: str) -> pd.DataFrame:
    p = Path(path)
    if not p.exists():
        raise InputError(f"input file not found: {path}")
    try:
        # round-trip float parsing: ingestion is lossless at 17 significant digits
        frame = pd.read_csv(p, float_precision="round_trip")
    except Exception as err:
        raise InputError(f"cannot parse CSV {path}: {err}") from err
    if frame.empty:
        raise InputError(f"input file {path} contains no rows")
    return frame


def _require_columns(frame: pd.DataFrame, names, path: str):
    for name in names:
        if name not in frame.columns:
            raise InputError(f"column {name!r} not found in {path}")
        col = pd.to_numeric(frame[name], errors="coerce")
        if col.isna().any():
            raise InputError(f"column {name!r} in {path} has non-numeric or missing entries")


def _standardize(frame: pd.DataFrame, names) -> dict:
    info = {}
    for name in names:
        vals = frame[name].to_numpy(dtype=float)
        mean = float(np.mean(vals))
        sd = float(np.std(vals, ddof=0))
        if sd == 0.0:
            raise InputError(f"cannot standardize constant column {name!r}")
        frame[name] = (vals - mean) / sd
        info[name] = {"mean": mean, "sd": sd}
    return info


def _build_dataset(args) -> tuple[Dataset, dict]:
    frame = _load_frame(args.data)
    response = args.response
    fixed = _cols(args.fixed) if args.fixed else []
    svc = _cols(args.svc) if args.svc else []
    coords = _cols(args.coords)
    if not 1 <= len(coords) <= 3:
        raise InputError("coordinate dimension must be 1, 2 or 3")
    needed = [response] + fixed + svc + coords
    _require_columns(frame, needed, args.data)
    std_info = {}
    if args.standardize:
        std_cols = _cols(args.standardize)
        _require_columns(frame, std_cols, args.data)
        std_info = _standardize(frame, std_cols)
    data = Dataset(
        y=frame[response].to_numpy(dtype=float),
        X=frame[fixed].to_numpy(dtype=float) if fixed else np.zeros((len(frame), 0)),
        W=frame[svc].to_numpy(dtype=float) if svc else np.zeros((len(frame), 0)),
        locations=frame[coords].to_numpy(dtype=float),
    )
    meta = {
        "n": data.n,
        "response": response,
        "fixed": fixed,
        "svc": svc,
        "coords": coords,
        "standardization": std_info,
    }
    return data, meta


def _write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _csv_path(out: str) -> str:
    p = Path(out)
    return str(p.with_suffix(".csv"))


def cmd_fit(args) -> int:
    data, meta = _build_dataset(args)
    spec = KernelSpec(_KERNELS[args.kernel])
    fit = fit_mle(data, spec, cd=CdConfig(delta=args.delta, t_max=args.t_max))
    payload = {
        "command": "fit",
        "kernel": args.kernel,
        "seed": args.seed,
        "data": meta,
        "fit": fit.to_dict(fixed_names=meta["fixed"], svc_names=meta["svc"]),
    }
    _write_json(args.out, payload)
    return EXIT_OK if fit.converged else EXIT_NOCONV


def cmd_select(args) -> int:
    data, meta = _build_dataset(args)
    spec = KernelSpec(_KERNELS[args.kernel])
    cd = CdConfig(delta=args.delta, t_max=args.t_max)
    bounds = default_theta_bounds(data)
    mle = fit_mle(data, spec, bounds=bounds, cd=cd)
    tune_cfg = TuneConfig(
        bounds=((args.lambda_bounds[0], args.lambda_bounds[1]),) * 2,
        n_init=args.n_init, n_iter=args.n_iter, rng_seed=args.seed,
    )
    result = tune_shrinkage(data, mle, tune_cfg, spec=spec, bounds=bounds, cd=cd)
    if result.best_fit is None:
        raise NumericalError("every shrinkage evaluation failed")
    pmle = result.best_fit
    wmu, wvar = adaptive_weights(mle)
    payload = {
        "command": "select",
        "kernel": args.kernel,
        "seed": args.seed,
        "data": meta,
        "lambda": {"mu": result.best_lambda[0], "theta": result.best_lambda[1]},
        "adaptive_weights": {
            "mu": [None if np.isinf(w) else float(w) for w in wmu],
            "var": [None if np.isinf(w) else float(w) for w in wvar],
        },
        "mle": mle.to_dict(fixed_names=meta["fixed"], svc_names=meta["svc"]),
        "pmle": pmle.to_dict(fixed_names=meta["fixed"], svc_names=meta["svc"]),
        "bic": {"mle": float(mle.bic), "pmle": float(pmle.bic)},
        "mbo_trace": [
            {"index": t.index, "lambda_mu": t.lam[0], "lambda_theta": t.lam[1],
             "bic": (None if not np.isfinite(t.bic) else float(t.bic)),
             "stage": t.stage}
            for t in result.trace
        ],
    }
    _write_json(args.out, payload)
    return EXIT_OK if (mle.converged and pmle.converged) else EXIT_NOCONV


def cmd_simulate(args) -> int:
    cfg = SimConfig(m=args.grid, n_reps=args.reps, rng_seed=args.seed,
                    margin_fraction=args.margin)
    tune_cfg = TuneConfig(n_init=args.n_init, n_iter=args.n_iter)
    methods = tuple(m.strip().upper() if m.strip().upper() != "ORACLE" else "Oracle"
                    for m in args.methods.split(","))
    rows, summary = run_study(cfg, methods=methods, n_jobs=args.threads,
                              tune=tune_cfg)
    ok_rows = [r for r in rows if not r.get("error")]
    if not ok_rows:
        raise NumericalError("all replicates failed")
    frame = pd.DataFrame(rows)
    frame.to_csv(_csv_path(args.out), index=False, float_format="%.17g")
    payload = {
        "command": "simulate",
        "seed": args.seed,
        "config": {"m": cfg.m, "n": cfg.n, "p": cfg.p, "n_reps": cfg.n_reps,
                   "margin_fraction": cfg.margin_fraction},
        "summary": summary,
        "rows_csv": _csv_path(args.out),
    }
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_cv(args) -> int:
    data, meta = _build_dataset(args)
    spec = KernelSpec(_KERNELS[args.kernel])
    methods = tuple(m.strip().upper() for m in args.methods.split(","))
    tune_cfg = TuneConfig(
        bounds=((args.lambda_bounds[0], args.lambda_bounds[1]),) * 2,
        n_init=args.n_init, n_iter=args.n_iter,
    )
    records, summary = kfold_cv(
        data, k=args.folds, methods=methods, seed=args.seed, spec=spec,
        cd=CdConfig(delta=args.delta, t_max=args.t_max), tune=tune_cfg,
        n_jobs=args.threads,
    )
    pd.DataFrame(records).to_csv(_csv_path(args.out), index=False,
                                 float_format="%.17g")
    payload = {
        "command": "cv",
        "kernel": args.kernel,
        "seed": args.seed,
        "data": meta,
        "summary": summary,
        "records_csv": _csv_path(args.out),
    }
    _write_json(args.out, payload)
    any_failed = any(r["error"] for r in records)
    return EXIT_NOCONV if any_failed else EXIT_OK


def _params_from_json(doc: dict) -> SvcParams:
    est = doc["fit"]["estimates"]
    mu = np.array(list(est["mu"].values()), dtype=float)
    rho = np.array([g["rho"] for g in est["gp"]], dtype=float)
    sigma2 = np.array([g["sigma2"] for g in est["gp"]], dtype=float)
    return SvcParams(mu=mu, rho=rho if rho.size else np.zeros(0),
                     sigma2=sigma2, tau2=est["tau2"])


def cmd_predict(args) -> int:
    data, meta = _build_dataset(args)
    spec = KernelSpec(_KERNELS[args.kernel])
    try:
        with open(args.model) as fh:
            doc = json.load(fh)
        params = _params_from_json(doc)
    except (OSError, KeyError, ValueError) as err:
        raise InputError(f"cannot read model file {args.model}: {err}") from err
    if params.mu.size != data.p or params.q != data.q:
        raise InputError("model dimensions do not match the supplied columns")

    new_frame = _load_frame(args.newdata)
    fixed, svc, coords = meta["fixed"], meta["svc"], meta["coords"]
    _require_columns(new_frame, fixed + svc + coords, args.newdata)
    if meta["standardization"]:
        for name, ms in meta["standardization"].items():
            if name in new_frame.columns:
                new_frame[name] = (new_frame[name].to_numpy(dtype=float)
                                   - ms["mean"]) / ms["sd"]
    X_new = new_frame[fixed].to_numpy(dtype=float) if fixed else np.zeros((len(new_frame), 0))
    W_new = new_frame[svc].to_numpy(dtype=float) if svc else np.zeros((len(new_frame), 0))
    locs_new = new_frame[coords].to_numpy(dtype=float)

    fit = FitResult(params=params, loglik=0.0, pen_loglik=0.0, bic=0.0)
    pred = predict(fit, data, locs_new, X_new, W_new, spec)
    payload = {
        "command": "predict",
        "kernel": args.kernel,
        "data": meta,
        "n_new": int(len(new_frame)),
        "predictions": [float(v) for v in pred],
    }
    _write_json(args.out, payload)
    return EXIT_OK


def _add_data_args(sub, with_response=True):
    sub.add_argument("--data", required=True, help="input CSV with header row")
    if with_response:
        sub.add_argument("--response", required=True, help="response column")
    sub.add_argument("--fixed", default="", help="comma-separated fixed-effect columns")
    sub.add_argument("--svc", default="", help="comma-separated SVC covariate columns")
    sub.add_argument("--coords", required=True, help="comma-separated coordinate columns")
    sub.add_argument("--standardize", default="",
                     help="comma-separated columns to z-score before fitting")


def _add_common_args(sub):
    sub.add_argument("--kernel", choices=sorted(_KERNELS), default="exp")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True, help="output JSON path")
    sub.add_argument("--threads", type=int, default=1)
    sub.add_argument("--delta", type=float, default=1e-6,
                     help="coordinate-descent convergence threshold")
    sub.add_argument("--t-max", type=int, default=20,
                     help="coordinate-descent iteration cap")


def _add_tune_args(sub):
    sub.add_argument("--n-init", type=int, default=10)
    sub.add_argument("--n-iter", type=int, default=10)
    sub.add_argument("--lambda-bounds", type=float, nargs=2,
                     default=(1e-6, 1.0), metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svcsel",
        description="Variable selection for GP-based spatially varying "
                    "coefficient models by penalized maximum likelihood.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="maximum likelihood fit")
    _add_data_args(fit)
    _add_common_args(fit)
    fit.set_defaults(func=cmd_fit)

    select = commands.add_parser("select", help="MLE, shrinkage tuning, and PMLE")
    _add_data_args(select)
    _add_common_args(select)
    _add_tune_args(select)
    select.set_defaults(func=cmd_select)

    sim = commands.add_parser("simulate", help="synthetic replication study")
    _add_common_args(sim)
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--grid", type=int, default=15)
    sim.add_argument("--margin", type=float, default=0.05)
    sim.add_argument("--methods", default="MLE,PMLE,Oracle")
    _add_tune_args(sim)
    sim.set_defaults(func=cmd_simulate)

    cv = commands.add_parser("cv", help="k-fold cross-validation")
    _add_data_args(cv)
    _add_common_args(cv)
    _add_tune_args(cv)
    cv.add_argument("--folds", type=int, default=10)
    cv.add_argument("--methods", default="ALASSO,MLE,PMLE")
    cv.set_defaults(func=cmd_cv)

    pred = commands.add_parser("predict", help="predict at new locations")
    _add_data_args(pred)
    _add_common_args(pred)
    pred.add_argument("--model", required=True, help="fit JSON from 'svcsel fit'")
    pred.add_argument("--newdata", required=True, help="CSV of prediction points")
    pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NOCONV
    except (SvcselError, np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
