"""Link-function families for the Bernoulli tensor model.

Each family maps a real linear predictor theta to a success probability
``f(theta)`` with ``f(0) = 1/2`` and the symmetry ``f(-t) = 1 - f(t)``:

* ``logistic``:  f(t) = 1 / (1 + exp(-t/sigma))
* ``probit``:    f(t) = Phi(t/sigma)
* ``laplacian``: f(t) = exp(t/sigma)/2 for t < 0, else 1 - exp(-t/sigma)/2

All log-likelihood terms are evaluated on saturation-safe paths (probit
through ``log_ndtr``, i.e. the scaled complementary error function), so
``|theta|/sigma`` of several hundred stays finite.  Signed quantities are
computed from the product ``(2y - 1) * theta``, and the Fisher weight uses
even-function expressions, which makes response flipping an exact sign
reflection in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

__all__ = ["FAMILIES", "LinkSpec", "make_link"]

FAMILIES = ("logistic", "probit", "laplacian")

_LOG2 = np.log(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def make_link(family: str, sigma: float = 1.0) -> "LinkSpec":
    """Build a LinkSpec; accepts 'laplace' as an alias for 'laplacian'."""
    family = family.lower()
    if family == "laplace":
        family = "laplacian"
    return LinkSpec(family, float(sigma))


@dataclass(frozen=True)
class LinkSpec:
    family: str
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown link family {self.family!r}; expected one of {FAMILIES}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    # -- probability and log-probability -------------------------------

    def f(self, theta):
        """Success probability f(theta)."""
        x = np.asarray(theta, dtype=float) / self.sigma
        if self.family == "logistic":
            return expit(x)
        if self.family == "probit":
            return ndtr(x)
        return np.where(
            x < 0,
            0.5 * np.exp(np.minimum(x, 0.0)),
            1.0 - 0.5 * np.exp(-np.maximum(x, 0.0)),
        )

    def _log_f_std(self, z):
        # log f(sigma * z); z is the signed standardized predictor
        if self.family == "logistic":
            return -np.logaddexp(0.0, -z)
        if self.family == "probit":
            return log_ndtr(z)
        return np.where(
            z < 0,
            np.minimum(z, 0.0) - _LOG2,
            np.log1p(-0.5 * np.exp(-np.maximum(z, 0.0))),
        )

    def log_f_signed(self, y, theta):
        """log f((2y - 1) * theta): the per-cell Bernoulli log-likelihood."""
        s = 2.0 * np.asarray(y, dtype=float) - 1.0
        z = s * np.asarray(theta, dtype=float) / self.sigma
        return self._log_f_std(z)

    # -- derivatives ----------------------------------------------------

    def _dlog_f_std(self, z):
        # d/dz log f(sigma * z)
        if self.family == "logistic":
            return expit(-z)
        if self.family == "probit":
            return np.exp(-0.5 * z * z - _LOG_SQRT_2PI - log_ndtr(z))
        ez = np.exp(-np.maximum(z, 0.0))
        return np.where(z < 0, 1.0, ez / (2.0 - ez))

    def score(self, y, theta):
        """d/dtheta log f((2y - 1) * theta)."""
        s = 2.0 * np.asarray(y, dtype=float) - 1.0
        z = s * np.asarray(theta, dtype=float) / self.sigma
        return s * self._dlog_f_std(z) / self.sigma

    def fisher_weight(self, theta):
        """Expected information weight f'(theta)^2 / (f(theta)(1 - f(theta)))."""
        x = np.asarray(theta, dtype=float) / self.sigma
        s2 = self.sigma * self.sigma
        if self.family == "logistic":
            return expit(x) * expit(-x) / s2
        if self.family == "probit":
            # grouped sum keeps the weight an exactly even function of x
            return np.exp(-x * x - 2.0 * _LOG_SQRT_2PI - (log_ndtr(x) + log_ndtr(-x))) / s2
        t = np.exp(-np.abs(x))
        return t / ((2.0 - t) * s2)

    # -- steepness / convexity diagnostics ------------------------------

    def steepness(self, alpha: float) -> float:
        """Upper bound on f'/(f(1-f)) over |theta| <= alpha.

        Exact for the logistic family; the stated conservative bounds for
        probit and Laplacian.  Diagnostic only, never used by the optimizer.
        """
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        a = alpha / self.sigma
        if self.family == "logistic":
            return 1.0 / self.sigma
        if self.family == "probit":
            return 2.0 * (a + 1.0) / self.sigma
        return 2.0 / self.sigma

    def convexity(self, alpha: float) -> float:
        """Lower bound on the curvature of the cell log-likelihood over |theta| <= alpha."""
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        a = alpha / self.sigma
        s2 = self.sigma * self.sigma
        if self.family == "logistic":
            return float(expit(a) * expit(-a)) / s2
        if self.family == "probit":
            return (a + 1.0 / 6.0) * np.exp(-a * a) / (np.sqrt(2.0 * np.pi) * s2)
        return np.exp(-a) / (2.0 * s2)

    # -- latent-noise sampling -------------------------------------------

    def sample_noise(self, rng: np.random.Generator, dims) -> np.ndarray:
        """Draw i.i.d. latent noise whose CDF satisfies P(eps < t) = 1 - f(-t).

        Draws are a standard variate scaled by sigma, so the same seed at
        two scales yields exactly proportional tensors.
        """
        dims = tuple(int(d) for d in dims)
        if self.family == "logistic":
            eps = rng.logistic(0.0, 1.0, size=dims)
        elif self.family == "probit":
            eps = rng.standard_normal(size=dims)
        else:
            eps = rng.laplace(0.0, 1.0, size=dims)
        return eps * self.sigma
