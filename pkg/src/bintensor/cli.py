"""Command-line driver: decompose, select-rank, complete, experiment.

Exit codes: 0 success, 2 usage or file-parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import experiments, figures, io
from .decomp import AllStartsFailed, FitConfig, fit, predict_proba, select_rank
from .glm import NonFinite, SingularDesign
from .links import make_link
from .metrics import DegenerateLabels, auc, rmse
from .tensor_ops import BinaryTensor

USAGE_ERROR = 2
NUMERIC_ERROR = 3


def _add_fit_flags(parser, with_rank=True):
    if with_rank:
        parser.add_argument("--rank", type=int, required=True, help="CP rank of the fitted tensor")
    parser.add_argument("--link", default="logistic", choices=["logistic", "probit", "laplace", "laplacian"])
    parser.add_argument("--sigma", type=float, default=1.0, help="link scale parameter")
    parser.add_argument("--alpha", type=float, default=float("inf"), help="entrywise bound on theta (inf = none)")
    parser.add_argument("--tol", type=float, default=1e-4, help="relative objective-increase stopping tolerance")
    parser.add_argument("--max-iters", type=int, default=100, help="maximum alternating sweeps")
    parser.add_argument("--starts", type=int, default=5, help="number of random initializations")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--absent", default="mask", choices=["mask", "zero"],
                        help="treat absent sparse cells as unobserved or as observed zeros")


def _fit_config(args, rank=None) -> FitConfig:
    return FitConfig(
        rank=args.rank if rank is None else rank,
        link=make_link(args.link, args.sigma),
        alpha=args.alpha,
        tol=args.tol,
        max_iters=args.max_iters,
        n_starts=args.starts,
        seed=args.seed,
    )


def _validate_fit_args(parser, args):
    if getattr(args, "rank", 1) < 1:
        parser.error("--rank must be >= 1")
    if args.sigma <= 0:
        parser.error("--sigma must be positive")
    if args.starts < 1:
        parser.error("--starts must be >= 1")


def cmd_decompose(parser, args) -> int:
    _validate_fit_args(parser, args)
    tensor = io.read_tensor(args.tensor, absent=args.absent)
    cfg = _fit_config(args)
    result = fit(tensor, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_factors(args.out_dir, result, cfg.link)
    io.write_trace(os.path.join(args.out_dir, "trace.csv"), result.loglik_trace)
    figures.save_trace(result.loglik_trace, os.path.join(args.out_dir, "trace.png"))
    print(f"rank={cfg.rank} loglik={result.final_loglik:.6f} bic={result.bic:.6f} "
          f"iterations={result.n_iterations} converged={result.converged}")
    return 0


def cmd_select_rank(parser, args) -> int:
    _validate_fit_args(parser, args)
    if not 1 <= args.rmin <= args.rmax:
        parser.error("need 1 <= --rmin <= --rmax")
    tensor = io.read_tensor(args.tensor, absent=args.absent)
    cfg = _fit_config(args, rank=args.rmin)
    best, table = select_rank(tensor, cfg, args.rmin, args.rmax)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_bic_table(os.path.join(args.out_dir, "bic_table.csv"), table)
    figures.save_bic_curve(table, os.path.join(args.out_dir, "bic.png"))
    print(f"selected rank: {best}")
    return 0


def _stratified_holdout(tensor: BinaryTensor, fraction: float, rng) -> np.ndarray:
    """Boolean holdout mask sampling the given fraction of ones and zeros."""
    observed = np.ones(tensor.dims, bool) if tensor.mask is None else tensor.mask
    hold = np.zeros(tensor.dims, bool)
    for label in (0.0, 1.0):
        cells = np.argwhere(observed & (tensor.values == label))
        n_hold = int(round(fraction * len(cells)))
        if n_hold > 0:
            pick = rng.choice(len(cells), size=n_hold, replace=False)
            hold[tuple(cells[pick].T)] = True
    return hold


def _holdout_from_file(path, dims) -> np.ndarray:
    hold = np.zeros(dims, bool)
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            tok = ln.split()
            if not tok:
                continue
            if len(tok) != len(dims):
                raise io.TensorFileError(f"{path}: holdout line {ln!r} needs {len(dims)} indices")
            idx = tuple(int(t) - 1 for t in tok)
            if any(not 0 <= i < d for i, d in zip(idx, dims)):
                raise io.TensorFileError(f"{path}: holdout index out of range in {ln!r}")
            hold[idx] = True
    return hold


def cmd_complete(parser, args) -> int:
    _validate_fit_args(parser, args)
    tensor = io.read_tensor(args.tensor, absent=args.absent)
    if os.path.exists(args.holdout):
        hold = _holdout_from_file(args.holdout, tensor.dims)
    else:
        try:
            fraction = float(args.holdout)
        except ValueError:
            parser.error(f"--holdout must be a file or a fraction, got {args.holdout!r}")
        if not 0.0 < fraction < 1.0:
            parser.error("--holdout fraction must lie strictly between 0 and 1")
        hold = _stratified_holdout(tensor, fraction, np.random.default_rng(args.seed))
    observed = np.ones(tensor.dims, bool) if tensor.mask is None else tensor.mask
    hold &= observed
    if not hold.any():
        parser.error("holdout selects no observed cells")
    train = BinaryTensor(tensor.values, observed & ~hold)

    cfg = _fit_config(args)
    result = fit(train, cfg)
    probs = predict_proba(result, cfg.link)

    idx = np.argwhere(hold)
    truth = tensor.values[hold]
    scores = probs[hold]
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_predictions(os.path.join(args.out_dir, "predictions.csv"), idx, scores, truth)
    auc_val = auc(scores, truth)
    rmse_val = rmse(scores, truth)
    print(f"holdout cells: {len(truth)}")
    print(f"AUC: {auc_val:.6f}")
    print(f"RMSE: {rmse_val:.6f}")
    return 0


def cmd_experiment(parser, args) -> int:
    config = experiments.load_config(args.config) if args.config else experiments.default_config()
    experiments.run_suite(args.name, config, args.out_dir)
    print(f"wrote {args.name}_tidy.csv, {args.name}_summary.csv, {args.name}.png to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bintensor",
                                     description="Bernoulli CP decomposition of binary tensors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="fit a rank-R decomposition")
    p.add_argument("tensor", help="input tensor file")
    _add_fit_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("select-rank", help="scan a rank grid and minimize BIC")
    p.add_argument("tensor")
    _add_fit_flags(p, with_rank=False)
    p.add_argument("--rmin", type=int, required=True)
    p.add_argument("--rmax", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(rank=1)

    p = sub.add_parser("complete", help="fit on a training split and score the holdout")
    p.add_argument("tensor")
    _add_fit_flags(p)
    p.add_argument("--holdout", required=True, help="holdout fraction in (0,1) or an index file")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("experiment", help="run a simulation suite from a config")
    p.add_argument("name", choices=list(experiments.SUITES))
    p.add_argument("--config", help="INI config file (defaults to the built-in desk-scale grid)")
    p.add_argument("--out-dir", required=True)

    return parser


_HANDLERS = {
    "decompose": cmd_decompose,
    "select-rank": cmd_select_rank,
    "complete": cmd_complete,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _HANDLERS[args.command](parser, args)
    except SystemExit as exc:  # parser.error inside a handler
        return int(exc.code) if exc.code else 0
    except (io.TensorFileError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (AllStartsFailed, SingularDesign, NonFinite, DegenerateLabels) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return NUMERIC_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
