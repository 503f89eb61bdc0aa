"""Alternating maximum-likelihood CP decomposition of a binary tensor.

One sweep updates every factor matrix by solving its row GLMs against the
Khatri-Rao design of the other factors, blends the sweep against the
previous iterate with a grid line search, and re-normalizes the factors
(unit-norm columns in all modes but the last, weights absorbed into the
last mode, columns sorted by decreasing weight).  The objective is the
Bernoulli log-likelihood and is non-decreasing across sweeps by
construction.

Fits run from several random initializations and keep the best final
objective.  Rank selection minimizes BIC over a rank grid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .links import LinkSpec, make_link
from .tensor_ops import (
    BinaryTensor,
    CpFactors,
    cp_reconstruct,
    khatri_rao_excluding,
    max_norm,
    require_no_empty_slabs,
    unfold,
)

__all__ = [
    "AllInfeasible",
    "AllStartsFailed",
    "DegenerateColumn",
    "FitConfig",
    "FitResult",
    "bic",
    "effective_params",
    "fit",
    "line_search",
    "log_likelihood",
    "normalize",
    "predict_proba",
    "select_rank",
    "update_mode",
]

# tolerated objective dip per sweep, pure floating-point slack
_ASCENT_SLACK = 1e-8


class DegenerateColumn(RuntimeError):
    """A factor column collapsed to zero norm (rank degeneracy)."""


class AllInfeasible(RuntimeError):
    """Every line-search grid point violates the max-norm bound."""


class AllStartsFailed(RuntimeError):
    """Every initialization (including replacements) failed."""


@dataclass(frozen=True)
class FitConfig:
    rank: int
    link: LinkSpec = field(default_factory=lambda: make_link("logistic"))
    alpha: float = np.inf
    tol: float = 1e-4
    max_iters: int = 100
    n_starts: int = 5
    init_scale: float = 0.1
    line_search_grid: int = 21
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not (self.tol > 0 and self.init_scale > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.n_starts < 1 or self.line_search_grid < 2:
            raise ValueError("max_iters and n_starts must be >= 1, grid >= 2")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive (use inf for unbounded)")


@dataclass(frozen=True)
class FitResult:
    factors: CpFactors
    theta_hat: np.ndarray
    loglik_trace: np.ndarray
    final_loglik: float
    bic: float
    converged: bool
    n_iterations: int
    start_index: int


def log_likelihood(y: BinaryTensor, theta: np.ndarray, link: LinkSpec) -> float:
    """Sum of log f((2y-1) theta) over the observed cells."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != y.values.shape:
        raise ValueError(f"shape mismatch: {theta.shape} vs {y.values.shape}")
    terms = link.log_f_signed(y.values, theta)
    if y.mask is not None:
        terms = terms * y.mask
    return float(terms.sum())


def update_mode(y: BinaryTensor, factors: CpFactors, mode: int, cfg: FitConfig) -> CpFactors:
    """Replace factor ``mode`` by the row-wise GLM update, warm-started."""
    design = khatri_rao_excluding(factors, mode)
    responses = unfold(y.values, mode)
    observed = None if y.mask is None else unfold(y.mask, mode)
    bound = None if np.isinf(cfg.alpha) else cfg.alpha
    try:
        batch = glm.fit_glm_rows(
            design,
            responses,
            cfg.link,
            factors.factors[mode],
            observed=observed,
            coef_bound=bound,
            mode=mode,
        )
    except glm.SingularDesign as err:
        raise glm.SingularDesign(f"mode {mode}: {err}", mode=mode, row=err.row) from None
    return factors.replace_mode(mode, batch.coef)


def line_search(
    y: BinaryTensor,
    factors_old: CpFactors,
    factors_new: CpFactors,
    cfg: FitConfig,
) -> tuple[float, CpFactors]:
    """Best blend gamma*old + (1-gamma)*new over a uniform grid on [0, 1].

    All factor matrices are blended jointly with a single gamma.  Grid
    points whose reconstruction violates the max-norm bound are discarded;
    gamma = 1 (the previous iterate) is always feasible, so the search
    cannot come up empty under the sweep invariants.  Ties prefer the
    smaller gamma (the fresher iterate).
    """
    grid = np.linspace(0.0, 1.0, cfg.line_search_grid)
    best_gamma = None
    best_ll = -np.inf
    best_factors = None
    for gamma in grid:
        blended = CpFactors(
            tuple(gamma * a + (1.0 - gamma) * b for a, b in zip(factors_old.factors, factors_new.factors))
        )
        theta = cp_reconstruct(blended)
        if np.isfinite(cfg.alpha) and max_norm(theta) > cfg.alpha * (1 + 1e-12):
            continue
        ll = log_likelihood(y, theta, cfg.link)
        if ll > best_ll:
            best_gamma, best_ll, best_factors = float(gamma), ll, blended
    if best_factors is None:
        raise AllInfeasible("every line-search grid point violates the max-norm bound")
    return best_gamma, best_factors


def normalize(factors: CpFactors) -> CpFactors:
    """Canonical form: unit-norm columns in modes < K-1, weights in mode K-1.

    The largest-magnitude entry of each column in the unit-norm modes is
    made positive, with the compensating sign absorbed into the last
    mode; columns are then sorted by decreasing weight.  The reconstruction
    is unchanged up to floating-point round-off.
    """
    mats = [a.copy() for a in factors.factors]
    last = len(mats) - 1
    carry = np.ones(factors.rank)
    for k in range(last):
        norms = np.linalg.norm(mats[k], axis=0)
        if (norms == 0.0).any():
            r = int(np.flatnonzero(norms == 0.0)[0])
            raise DegenerateColumn(f"mode {k} column {r} has zero norm")
        mats[k] = mats[k] / norms
        signs = np.sign(mats[k][np.argmax(np.abs(mats[k]), axis=0), np.arange(factors.rank)])
        mats[k] = mats[k] * signs
        carry = carry * norms * signs
    mats[last] = mats[last] * carry
    lam = np.linalg.norm(mats[last], axis=0)
    order = np.argsort(-lam, kind="stable")
    return CpFactors(tuple(a[:, order] for a in mats))


def _init_factors(dims, rank, init_scale, rng) -> CpFactors:
    mats = tuple(rng.uniform(-init_scale, init_scale, size=(d, rank)) for d in dims)
    return normalize(CpFactors(mats))


def _run_start(y: BinaryTensor, cfg: FitConfig, factors: CpFactors):
    """One full alternating run; returns (factors, trace, converged, iters)."""
    trace = [log_likelihood(y, cp_reconstruct(factors), cfg.link)]
    converged = False
    sweeps = 0
    while sweeps < cfg.max_iters:
        previous = factors
        updated = factors
        for k in range(factors.order):
            updated = update_mode(y, updated, k, cfg)
        _, blended = line_search(y, previous, updated, cfg)
        slack = _ASCENT_SLACK * max(1.0, abs(trace[-1]))
        ls_ll = log_likelihood(y, cp_reconstruct(blended), cfg.link)
        if ls_ll < trace[-1] - slack:
            raise AssertionError(f"objective decreased at sweep {sweeps + 1}: {trace[-1]} -> {ls_ll}")
        normalized = normalize(blended)
        ll = log_likelihood(y, cp_reconstruct(normalized), cfg.link)
        if ll < trace[-1] - slack:
            # renormalizing huge near-cancelling components (degenerate CP
            # iterates) can lose the cancellation to round-off: stop at the
            # last well-scaled iterate instead of committing the damage
            break
        factors = normalized
        sweeps += 1
        gain = ll - trace[-1]
        trace.append(ll)
        if gain < cfg.tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
    return factors, np.array(trace), converged, sweeps


def fit(y: BinaryTensor, cfg: FitConfig, init: CpFactors | None = None) -> FitResult:
    """Multi-start alternating fit; returns the start with the best objective.

    ``init`` overrides the random initialization (single start).  Starts
    that die with a degenerate column or singular design are replaced by
    freshly seeded ones, up to ``n_starts`` replacements in total.
    """
    if y.mask is not None:
        require_no_empty_slabs(y.mask)
    dims = y.values.shape

    if init is not None:
        planned = [(-1, init)]
        replacements = 0
    else:
        planned = [(i, None) for i in range(cfg.n_starts)]
        replacements = cfg.n_starts

    best = None
    failures = []
    next_start = cfg.n_starts
    queue = list(planned)
    while queue:
        start_idx, start_init = queue.pop(0)
        try:
            if start_init is None:
                rng = np.random.default_rng([cfg.seed, start_idx])
                factors0 = _init_factors(dims, cfg.rank, cfg.init_scale, rng)
            else:
                factors0 = start_init
            factors, trace, converged, sweeps = _run_start(y, cfg, factors0)
        except (glm.SingularDesign, DegenerateColumn) as err:
            failures.append(f"start {start_idx}: {err}")
            if replacements > 0:
                replacements -= 1
                queue.append((next_start, None))
                next_start += 1
            continue
        if best is None or trace[-1] > best[1][-1]:
            best = (factors, trace, converged, sweeps, start_idx)

    if best is None:
        raise AllStartsFailed("; ".join(failures) or "no start succeeded")

    factors, trace, converged, sweeps, start_idx = best
    theta = cp_reconstruct(factors)
    result = FitResult(
        factors=factors,
        theta_hat=theta,
        loglik_trace=trace,
        final_loglik=float(trace[-1]),
        bic=0.0,
        converged=converged,
        n_iterations=sweeps,
        start_index=start_idx,
    )
    return dataclasses.replace(result, bic=bic(y, result))


def effective_params(dims, rank: int) -> int:
    """Free parameters of a rank-R CP model after scaling indeterminacy."""
    dims = tuple(int(d) for d in dims)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if len(dims) < 2:
        raise ValueError("need at least two modes")
    if len(dims) == 2:
        return rank * (dims[0] + dims[1]) - rank * rank
    return rank * (sum(dims) - len(dims) + 1)


def bic(y: BinaryTensor, result: FitResult) -> float:
    """-2 log-likelihood + p_e log(N), with N the observed cell count."""
    n_obs = y.n_observed
    p_e = effective_params(y.values.shape, result.factors.rank)
    return -2.0 * result.final_loglik + p_e * np.log(n_obs)


def select_rank(y: BinaryTensor, cfg: FitConfig, r_min: int, r_max: int):
    """Fit every rank in [r_min, r_max], return (best_rank, table).

    The table has one dict per rank with keys ``rank, loglik, p_e, bic,
    converged, error``; a failed rank keeps ``None`` entries rather than
    aborting the scan.
    """
    if not 1 <= r_min <= r_max:
        raise ValueError("need 1 <= r_min <= r_max")
    table = []
    best_rank, best_bic = None, np.inf
    for rank in range(r_min, r_max + 1):
        row = {"rank": rank, "loglik": None, "p_e": effective_params(y.values.shape, rank),
               "bic": None, "converged": None, "error": None}
        try:
            result = fit(y, dataclasses.replace(cfg, rank=rank))
        except (AllStartsFailed, glm.NonFinite) as err:
            row["error"] = str(err)
        else:
            row.update(loglik=result.final_loglik, bic=result.bic, converged=result.converged)
            if result.bic < best_bic:
                best_rank, best_bic = rank, result.bic
        table.append(row)
    if best_rank is None:
        raise AllStartsFailed("every rank in the scan failed")
    return best_rank, table


def predict_proba(result: FitResult, link: LinkSpec) -> np.ndarray:
    """Entrywise success probabilities f(theta_hat), strictly inside (0, 1).

    Saturated predictors would otherwise round to exactly 0 or 1 in
    floating point; clamping to the nearest representable interior values
    keeps the open-interval contract.
    """
    probs = link.f(result.theta_hat)
    return np.clip(probs, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
