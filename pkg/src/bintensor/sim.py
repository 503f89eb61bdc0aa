"""Synthetic binary-tensor generators for the experiment harness.

Three families: a latent CP signal quantized through a link's noise, a
stochastic multiway block model with probit block means, and a boolean
(OR/AND) tensor with flip contamination.  Every generator is a pure
function of its spec and generator state, so replicates are reproducible
from seeds alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .links import LinkSpec
from .tensor_ops import BinaryTensor, CpFactors, cp_reconstruct

__all__ = [
    "BlockModelSpec",
    "BooleanModelSpec",
    "boolean_expectation",
    "boolean_tensor_from_probs",
    "flip_noise",
    "gen_block_tensor",
    "gen_boolean_tensor",
    "gen_cp_signal",
    "quantize_latent",
]

MEAN_MODELS = ("combinatorial", "additive", "multiplicative")


@dataclass(frozen=True)
class BlockModelSpec:
    dims: tuple[int, int, int]
    n_blocks: int = 5
    mean_model: str = "combinatorial"

    def __post_init__(self):
        if len(self.dims) != 3:
            raise ValueError("block model is three-way")
        if self.mean_model not in MEAN_MODELS:
            raise ValueError(f"mean_model must be one of {MEAN_MODELS}")
        if not 1 <= self.n_blocks <= min(self.dims):
            raise ValueError("need 1 <= n_blocks <= min(dims)")


@dataclass(frozen=True)
class BooleanModelSpec:
    dims: tuple[int, int, int]
    boolean_rank: int
    beta_params: tuple[float, float] = (2.0, 4.0)
    flip_prob: float = 0.1

    def __post_init__(self):
        if len(self.dims) != 3:
            raise ValueError("boolean model is three-way")
        if self.boolean_rank < 1:
            raise ValueError("boolean_rank must be >= 1")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5)")


def gen_cp_signal(dims, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Rank-R CP tensor with Uniform[-1,1] factors, scaled to max-norm 1."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    while True:
        factors = CpFactors(tuple(rng.uniform(-1.0, 1.0, size=(int(d), rank)) for d in dims))
        theta = cp_reconstruct(factors)
        m = np.max(np.abs(theta))
        if m > 0:
            return theta / m


def quantize_latent(
    theta: np.ndarray,
    link: LinkSpec,
    rng: np.random.Generator,
    method: str = "threshold",
) -> BinaryTensor:
    """Observe y = 1{theta + eps >= 0} (or, equivalently, Bernoulli(f(theta))).

    Both sampling paths are provided; they generate the same distribution
    and are cross-checked in the test suite.
    """
    theta = np.asarray(theta, dtype=float)
    if method == "threshold":
        eps = link.sample_noise(rng, theta.shape)
        y = (theta + eps >= 0.0).astype(float)
    elif method == "bernoulli":
        y = (rng.random(theta.shape) < link.f(theta)).astype(float)
    else:
        raise ValueError("method must be 'threshold' or 'bernoulli'")
    return BinaryTensor(y)


def _random_memberships(d: int, n_blocks: int, rng) -> np.ndarray:
    # uniform assignment, resampled until every block is populated
    while True:
        memb = rng.integers(0, n_blocks, size=d)
        if np.unique(memb).size == n_blocks:
            return memb


def _block_core(n_blocks: int, mean_model: str, rng) -> np.ndarray:
    b = n_blocks
    if mean_model == "combinatorial":
        return rng.uniform(-1.0, 1.0, size=(b, b, b))
    u1 = rng.uniform(-1.0, 1.0, size=b)
    u2 = rng.uniform(-1.0, 1.0, size=b)
    u3 = rng.uniform(-1.0, 1.0, size=b)
    if mean_model == "additive":
        return u1[:, None, None] + u2[None, :, None] + u3[None, None, :]
    return u1[:, None, None] * u2[None, :, None] * u3[None, None, :]


def gen_block_tensor(spec: BlockModelSpec, rng: np.random.Generator):
    """Sample the multiway block model.

    Returns ``(y, prob, probit_scale)``: the binary tensor, its Bernoulli
    probability tensor (piecewise constant over blocks), and the
    probit-scale core expansion the probabilities come from.
    """
    memb = [_random_memberships(d, spec.n_blocks, rng) for d in spec.dims]
    core = _block_core(spec.n_blocks, spec.mean_model, rng)
    probit_scale = core[np.ix_(memb[0], memb[1], memb[2])]
    prob = ndtr(probit_scale)
    y = (rng.random(spec.dims) < prob).astype(float)
    return BinaryTensor(y), prob, probit_scale


def boolean_expectation(prob_factors) -> np.ndarray:
    """E(y_ijk) = 1 - prod_r (1 - p^a_ir p^b_jr p^c_kr), before flipping."""
    pa, pb, pc = (np.asarray(p, dtype=float) for p in prob_factors)
    comp = np.ones((pa.shape[0], pb.shape[0], pc.shape[0]))
    for r in range(pa.shape[1]):
        comp *= 1.0 - pa[:, r, None, None] * pb[None, :, r, None] * pc[None, None, :, r]
    return 1.0 - comp


def boolean_tensor_from_probs(prob_factors, flip_prob: float, rng: np.random.Generator):
    """Boolean OR-of-ANDs tensor from given factor success probabilities."""
    pa, pb, pc = (np.asarray(p, dtype=float) for p in prob_factors)
    a = rng.random(pa.shape) < pa
    b = rng.random(pb.shape) < pb
    c = rng.random(pc.shape) < pc
    y = np.zeros((pa.shape[0], pb.shape[0], pc.shape[0]), dtype=bool)
    for r in range(pa.shape[1]):
        y |= a[:, r, None, None] & b[None, :, r, None] & c[None, None, :, r]
    clean = BinaryTensor(y.astype(float))
    noisy = flip_noise(clean, flip_prob, rng) if flip_prob > 0 else clean
    q = boolean_expectation((pa, pb, pc))
    prob = (1.0 - flip_prob) * q + flip_prob * (1.0 - q)
    return noisy, prob


def gen_boolean_tensor(spec: BooleanModelSpec, rng: np.random.Generator):
    """Sample the boolean model: factor probabilities are Beta(2,4) i.i.d.

    Returns ``(y, prob)`` with ``prob`` the flip-adjusted expectation.
    """
    a0, b0 = spec.beta_params
    probs = tuple(rng.beta(a0, b0, size=(d, spec.boolean_rank)) for d in spec.dims)
    return boolean_tensor_from_probs(probs, spec.flip_prob, rng)


def flip_noise(y: BinaryTensor, p: float, rng: np.random.Generator) -> BinaryTensor:
    """Flip each cell 0 <-> 1 independently with probability p."""
    if not 0.0 <= p < 0.5:
        raise ValueError("flip probability must lie in [0, 0.5)")
    flips = rng.random(y.values.shape) < p
    flipped = np.where(flips, 1.0 - y.values, y.values)
    return BinaryTensor(flipped, y.mask)
