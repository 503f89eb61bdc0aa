"""Dense tensor algebra for CP models.

Tensors are plain numpy arrays in C (row-major) layout.  The mode-k
unfolding flattens the remaining axes in row-major order, and the
Khatri-Rao products below use the matching column ordering, so that for
any CP factor set ``f``::

    unfold(cp_reconstruct(f), k) == f.factors[k] @ khatri_rao_excluding(f, k).T

Modes are 0-based throughout the in-memory API; file formats are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BinaryTensor",
    "CpFactors",
    "cp_reconstruct",
    "fold",
    "frobenius_norm",
    "khatri_rao",
    "khatri_rao_excluding",
    "loss",
    "max_norm",
    "require_no_empty_slabs",
    "unfold",
]


@dataclass(frozen=True)
class CpFactors:
    """CP factor matrices, one ``(d_k, R)`` matrix per mode.

    The canonical form (produced by ``decomp.normalize``) has unit-norm
    columns in every mode but the last; the column weights live in the
    last factor matrix, sorted by decreasing norm.  Intermediate iterates
    inside the optimizer are not required to be canonical.
    """

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(a, dtype=float) for a in self.factors)
        if len(mats) < 2:
            raise ValueError("CP factors need at least two modes")
        ranks = {a.shape[1] for a in mats}
        if any(a.ndim != 2 for a in mats) or len(ranks) != 1:
            raise ValueError("factor matrices must be 2-d with a common column count")
        object.__setattr__(self, "factors", mats)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def replace_mode(self, mode: int, matrix: np.ndarray) -> "CpFactors":
        mats = list(self.factors)
        mats[mode] = matrix
        return CpFactors(tuple(mats))

    def copy(self) -> "CpFactors":
        return CpFactors(tuple(a.copy() for a in self.factors))


@dataclass(frozen=True)
class BinaryTensor:
    """A 0/1 data tensor with an optional observation mask.

    ``mask`` is a boolean array of the same shape; ``True`` marks observed
    cells.  ``mask is None`` means fully observed.  Cells outside the mask
    still hold a 0/1 value but are ignored by every likelihood computation.
    """

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim < 2:
            raise ValueError("binary tensors must have order >= 2")
        bad = (vals != 0.0) & (vals != 1.0)
        if bad.any():
            raise ValueError("binary tensor entries must be 0 or 1")
        object.__setattr__(self, "values", vals)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != vals.shape:
                raise ValueError("mask shape does not match tensor shape")
            object.__setattr__(self, "mask", m)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        if self.mask is None:
            return self.values.size
        return int(self.mask.sum())


def require_no_empty_slabs(mask: np.ndarray) -> None:
    """Check every mode-k slab contains at least one observed cell.

    A fully missing slab makes the corresponding row regression empty,
    so completion for that row would be unidentifiable.
    """
    mask = np.asarray(mask, dtype=bool)
    for k in range(mask.ndim):
        per_slab = np.moveaxis(mask, k, 0).reshape(mask.shape[k], -1).any(axis=1)
        if not per_slab.all():
            j = int(np.flatnonzero(~per_slab)[0])
            raise ValueError(f"mode {k} slab {j} has no observed entries")


def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Mode-k matricization: row j holds subtensor ``t[..., j, ...]``.

    Columns enumerate the remaining axes in row-major (last axis fastest)
    order.
    """
    tensor = np.asarray(tensor)
    if not 0 <= mode < tensor.ndim:
        raise ValueError(f"mode {mode} out of range for order-{tensor.ndim} tensor")
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def fold(matrix: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold` at the same mode; exact round trip."""
    dims = tuple(int(d) for d in dims)
    matrix = np.asarray(matrix)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for order-{len(dims)} tensor")
    rest = tuple(d for i, d in enumerate(dims) if i != mode)
    if matrix.shape != (dims[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix shape {matrix.shape} does not match dims {dims} at mode {mode}")
    return np.moveaxis(matrix.reshape((dims[mode],) + rest), 0, mode)


def khatri_rao(mats) -> np.ndarray:
    """Column-wise Kronecker product, earlier matrices varying slowest."""
    mats = [np.asarray(a) for a in mats]
    if not mats:
        raise ValueError("need at least one matrix")
    out = mats[0]
    for a in mats[1:]:
        m, r = out.shape
        n = a.shape[0]
        out = (out[:, None, :] * a[None, :, :]).reshape(m * n, r)
    return out


def khatri_rao_excluding(factors: CpFactors, mode: int) -> np.ndarray:
    """Khatri-Rao product of all factor matrices except ``mode``.

    Column ordering matches :func:`unfold`, which makes this the design
    matrix of the mode-k row regressions.
    """
    if not 0 <= mode < factors.order:
        raise ValueError(f"mode {mode} out of range for order-{factors.order} factors")
    return khatri_rao([a for k, a in enumerate(factors.factors) if k != mode])


def cp_reconstruct(factors: CpFactors) -> np.ndarray:
    """Dense tensor with entries sum_r prod_k A_k[i_k, r]."""
    mat = factors.factors[0] @ khatri_rao_excluding(factors, 0).T
    return fold(mat, 0, factors.dims)


def frobenius_norm(tensor: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(tensor, dtype=float).ravel()))


def max_norm(tensor: np.ndarray) -> float:
    tensor = np.asarray(tensor)
    if tensor.size == 0:
        return 0.0
    return float(np.max(np.abs(tensor)))


def loss(a: np.ndarray, b: np.ndarray) -> float:
    """Dimension-normalized Frobenius deviation ``||a - b||_F / sqrt(N)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return frobenius_norm(a - b) / np.sqrt(a.size)
