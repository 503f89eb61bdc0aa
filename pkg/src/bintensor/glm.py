"""Bounded Bernoulli GLM solver via Fisher scoring with step halving.

The mode updates of the alternating decomposition solve ``d_k`` row
regressions that share one design matrix, so the core solver
(:func:`fit_glm_rows`) iterates all rows of a batch simultaneously with
vectorized numpy.  :func:`fit_glm` is the single-problem wrapper over the
same code path.

Each Fisher step solves ``(X' W X) delta = X' s`` per row and is halved
until the row log-likelihood does not decrease; the optional entrywise
bound on the fitted linear predictors (the max-norm constraint of the
decomposition) scales steps back to the boundary before halving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .links import LinkSpec

__all__ = [
    "GlmProblem",
    "GlmSolution",
    "NonFinite",
    "SingularDesign",
    "fit_glm",
    "fit_glm_rows",
]

MAX_ITERS = 100
LL_TOL = 1e-10
STEP_TOL = 1e-8
MAX_HALVINGS = 30
# convergence additionally requires this per-entry gradient bound, so a
# converged row is a numerically stationary point, not just a stalled one
GRAD_CAP = 1e-6


class SingularDesign(RuntimeError):
    """X'WX is not positive definite even after jitter.

    Signals degenerate factors (linearly dependent design columns) or a
    fully saturated Fisher matrix; callers reinitialize.
    """

    def __init__(self, message: str, mode: int | None = None, row: int | None = None):
        super().__init__(message)
        self.mode = mode
        self.row = row


class NonFinite(RuntimeError):
    """Overflow produced a non-finite quantity inside the iteration."""


@dataclass(frozen=True)
class GlmProblem:
    design: np.ndarray
    response: np.ndarray
    link: LinkSpec
    observed: np.ndarray | None = None
    coef_bound: float | None = None


@dataclass(frozen=True)
class GlmSolution:
    coef: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    hit_bound: bool


@dataclass(frozen=True)
class GlmBatchSolution:
    coef: np.ndarray
    loglik: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    hit_bound: np.ndarray


def fit_glm(problem: GlmProblem, init: np.ndarray) -> GlmSolution:
    """Fit one Bernoulli GLM; see :func:`fit_glm_rows` for the algorithm."""
    init = np.asarray(init, dtype=float)
    obs = None if problem.observed is None else np.asarray(problem.observed, bool)[None, :]
    batch = fit_glm_rows(
        problem.design,
        np.asarray(problem.response, dtype=float)[None, :],
        problem.link,
        init[None, :],
        observed=obs,
        coef_bound=problem.coef_bound,
    )
    return GlmSolution(
        coef=batch.coef[0],
        loglik=float(batch.loglik[0]),
        iterations=int(batch.iterations[0]),
        converged=bool(batch.converged[0]),
        hit_bound=bool(batch.hit_bound[0]),
    )


def _row_loglik(link, responses, eta, observed):
    terms = link.log_f_signed(responses, eta)
    if observed is not None:
        terms = terms * observed
    return terms.sum(axis=1)


def _jittered(Hj, row_id, mode):
    """Add the one-shot diagonal jitter, or fail if the trace is gone."""
    tr = float(np.trace(Hj))
    if not tr > 0.0:
        raise SingularDesign(
            f"Fisher information is singular at row {row_id}", mode=mode, row=int(row_id)
        )
    return Hj + (1e-10 * tr) * np.eye(Hj.shape[0])


def _chol_solve(H, g, row_ids, mode=None):
    """Solve the PD systems per row, with one jitter retry on failure."""
    try:
        np.linalg.cholesky(H)
        return np.linalg.solve(H, g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(g)
    for j in range(H.shape[0]):
        Hj = H[j]
        try:
            np.linalg.cholesky(Hj)
        except np.linalg.LinAlgError:
            Hj = _jittered(Hj, row_ids[j], mode)
            try:
                np.linalg.cholesky(Hj)
            except np.linalg.LinAlgError:
                raise SingularDesign(
                    f"Fisher information is singular at row {row_ids[j]} after jitter",
                    mode=mode,
                    row=int(row_ids[j]),
                ) from None
        try:
            out[j] = np.linalg.solve(Hj, g[j])
        except np.linalg.LinAlgError:
            # positive definite for dpotrf yet an exact-zero LU pivot:
            # the same jitter resolves this borderline-singular case
            Hj = _jittered(Hj, row_ids[j], mode)
            try:
                out[j] = np.linalg.solve(Hj, g[j])
            except np.linalg.LinAlgError:
                raise SingularDesign(
                    f"Fisher information is singular at row {row_ids[j]} after jitter",
                    mode=mode,
                    row=int(row_ids[j]),
                ) from None
    return out


def _max_feasible_scale(eta, d_eta, bound):
    """Largest c in [0, 1] per row with max |eta + c * d_eta| <= bound."""
    with np.errstate(divide="ignore", invalid="ignore"):
        up = (bound - eta) / d_eta
        lo = (-bound - eta) / d_eta
    limit = np.where(d_eta > 0, up, np.where(d_eta < 0, lo, np.inf))
    limit = np.maximum(limit, 0.0)
    return np.minimum(limit.min(axis=1), 1.0)


def fit_glm_rows(
    design,
    responses,
    link: LinkSpec,
    init,
    observed=None,
    coef_bound: float | None = None,
    max_iters: int = MAX_ITERS,
    ll_tol: float = LL_TOL,
    step_tol: float = STEP_TOL,
    max_halvings: int = MAX_HALVINGS,
    mode: int | None = None,
) -> GlmBatchSolution:
    """Fisher scoring over a batch of rows sharing one design matrix.

    Rows iterate independently: a row stops once its relative
    log-likelihood change falls below ``ll_tol``, its step norm falls
    below ``step_tol``, or its gradient vanishes; rows that exhaust the
    halving budget or the iteration cap stop unconverged, keeping their
    last accepted coefficients.  The log-likelihood of every row is
    non-decreasing across iterations by construction.
    """
    X = np.ascontiguousarray(design, dtype=float)
    Y = np.ascontiguousarray(responses, dtype=float)
    B = np.array(init, dtype=float, copy=True)
    if X.ndim != 2:
        raise ValueError("design must be 2-d")
    n, R = X.shape
    if n < 1 or R < 1:
        raise ValueError("design must have at least one row and one column")
    if Y.ndim != 2 or Y.shape[1] != n:
        raise ValueError("responses must be (rows, n)")
    if ((Y != 0.0) & (Y != 1.0)).any():
        raise ValueError("responses must be 0/1")
    m = Y.shape[0]
    if B.shape != (m, R):
        raise ValueError(f"init must have shape {(m, R)}")
    if not np.isfinite(B).all():
        raise ValueError("init must be finite")
    obs = None
    if observed is not None:
        obs = np.ascontiguousarray(observed, dtype=bool)
        if obs.shape != Y.shape:
            raise ValueError("observed must match responses' shape")
        if not obs.any(axis=1).all():
            raise ValueError("every row needs at least one observed entry")
        obs = obs.astype(float)
    if coef_bound is not None and not coef_bound > 0:
        raise ValueError("coef_bound must be positive")

    with np.errstate(over="ignore"):
        eta = B @ X.T
    if not np.isfinite(eta).all():
        raise NonFinite("initial linear predictors overflow")
    if coef_bound is not None and np.abs(eta).max(initial=0.0) > coef_bound * (1 + 1e-9):
        raise ValueError("initial predictors violate coef_bound")
    ll = _row_loglik(link, Y, eta, obs)

    iterations = np.zeros(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    hit_bound = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)

    for it in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        iterations[idx] = it

        S = link.score(Y[idx], eta[idx])
        if obs is not None:
            S = S * obs[idx]
        g = S @ X

        # an exactly-zero gradient (balanced rows, fully saturated rows)
        # is stationary; anything else keeps iterating so that separated
        # rows run to the cap instead of stopping on a small gradient
        stationary = np.abs(g).max(axis=1) == 0.0
        if stationary.any():
            converged[idx[stationary]] = True
            active[idx[stationary]] = False
            idx = idx[~stationary]
            g = g[~stationary]
            if idx.size == 0:
                continue

        W = link.fisher_weight(eta[idx])
        if obs is not None:
            W = W * obs[idx]
        H = np.matmul(X.T[None, :, :], W[:, :, None] * X[None, :, :])
        delta = _chol_solve(H, g, idx, mode=mode)
        if not np.isfinite(delta).all():
            raise NonFinite("non-finite Fisher step")

        d_eta = delta @ X.T
        scale = np.ones(idx.size)
        if coef_bound is not None:
            scale = _max_feasible_scale(eta[idx], d_eta, coef_bound)
            hit_bound[idx] |= scale < 1.0

        # per-row step halving until the log-likelihood does not decrease
        rows = np.arange(idx.size)
        for _ in range(max_halvings + 1):
            if rows.size == 0:
                break
            cand_eta = eta[idx[rows]] + scale[rows, None] * d_eta[rows]
            cand_ll = _row_loglik(link, Y[idx[rows]], cand_eta, None if obs is None else obs[idx[rows]])
            if not np.isfinite(cand_ll).all():
                raise NonFinite("non-finite log-likelihood during step halving")
            ok = cand_ll >= ll[idx[rows]]
            if ok.any():
                acc = rows[ok]
                gidx = idx[acc]
                step = scale[acc, None] * delta[acc]
                B[gidx] = B[gidx] + step
                eta[gidx] = cand_eta[ok]
                dll = cand_ll[ok] - ll[gidx]
                old = ll[gidx].copy()
                ll[gidx] = cand_ll[ok]
                with np.errstate(divide="ignore", invalid="ignore"):
                    rel = np.abs(dll) / np.abs(old)
                rel[np.isnan(rel)] = 0.0  # 0/0: already at an exact optimum
                small_step = np.linalg.norm(step, axis=1) < step_tol
                done = (rel < ll_tol) | small_step
                if done.any():
                    # a stalled objective only counts as converged once the
                    # gradient is small, so converged means stationary;
                    # rows pinned at the predictor bound stop where they are
                    cand = gidx[done]
                    Sn = link.score(Y[cand], eta[cand])
                    if obs is not None:
                        Sn = Sn * obs[cand]
                    tight = (np.abs(Sn @ X).max(axis=1) <= GRAD_CAP * n) | hit_bound[cand]
                    converged[cand[tight]] = True
                    active[cand[tight]] = False
            rows = rows[~ok]
            scale[rows] *= 0.5
        if rows.size:
            # halving budget exhausted: freeze these rows at the old point
            active[idx[rows]] = False

    # rows still active consumed the iteration cap without converging
    return GlmBatchSolution(coef=B, loglik=ll, iterations=iterations, converged=converged, hit_bound=hit_bound)
