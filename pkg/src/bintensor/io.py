"""Text file formats: tensors, factor sets, trace/BIC/prediction tables.

Tensor files carry a header line ``K d_1 ... d_K`` (append ``sparse`` for
coordinate format).  Dense bodies hold one value per line in row-major
order; sparse bodies hold ``i_1 ... i_K v`` lines with 1-based indices.
Absent sparse cells are unobserved by default (``absent='mask'``) or
observed zeros (``absent='zero'``).

Factor sets are one CSV per mode (``mode_k.csv``, unit-norm columns),
``lambda.csv`` with the component weights, and ``manifest.json``.  All
floats are written with 17 significant digits, so read/write round trips
are value-exact.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .tensor_ops import BinaryTensor, CpFactors

__all__ = [
    "TensorFileError",
    "read_factors",
    "read_tensor",
    "write_bic_table",
    "write_factors",
    "write_predictions",
    "write_tensor",
    "write_trace",
]

_FMT = "%.17g"


class TensorFileError(ValueError):
    """Malformed tensor file."""


def _fmt(x) -> str:
    return _FMT % float(x)


def read_tensor(path, absent: str = "mask") -> BinaryTensor:
    """Parse a tensor file into values plus (for sparse files) a mask."""
    if absent not in ("mask", "zero"):
        raise ValueError("absent must be 'mask' or 'zero'")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise TensorFileError(f"{path}: empty file")
    head = lines[0].split()
    sparse = False
    if head and head[-1].lower() == "sparse":
        sparse = True
        head = head[:-1]
    try:
        order = int(head[0])
        dims = tuple(int(t) for t in head[1:])
    except (ValueError, IndexError):
        raise TensorFileError(f"{path}: bad header line {lines[0]!r}") from None
    if order < 2 or len(dims) != order or any(d < 1 for d in dims):
        raise TensorFileError(f"{path}: header declares invalid dimensions {lines[0]!r}")
    size = int(np.prod(dims, dtype=np.int64))
    body = lines[1:]

    if not sparse:
        if len(body) != size:
            raise TensorFileError(f"{path}: expected {size} values, found {len(body)}")
        try:
            values = np.array([float(t) for t in body]).reshape(dims)
        except ValueError:
            raise TensorFileError(f"{path}: non-numeric value in body") from None
        return BinaryTensor(values)

    values = np.zeros(dims)
    seen = np.zeros(dims, dtype=bool)
    for ln in body:
        tok = ln.split()
        if len(tok) != order + 1:
            raise TensorFileError(f"{path}: bad sparse line {ln!r}")
        try:
            idx = tuple(int(t) - 1 for t in tok[:order])
            val = float(tok[order])
        except ValueError:
            raise TensorFileError(f"{path}: bad sparse line {ln!r}") from None
        if any(not 0 <= i < d for i, d in zip(idx, dims)):
            raise TensorFileError(f"{path}: index out of range in line {ln!r}")
        if seen[idx]:
            raise TensorFileError(f"{path}: duplicate cell in line {ln!r}")
        seen[idx] = True
        values[idx] = val
    mask = seen if absent == "mask" else None
    return BinaryTensor(values, mask)


def write_tensor(path, tensor: BinaryTensor) -> None:
    """Write dense when fully observed, sparse (observed cells) otherwise."""
    dims = tensor.values.shape
    with open(path, "w", encoding="utf-8") as fh:
        if tensor.mask is None:
            fh.write(f"{len(dims)} " + " ".join(str(d) for d in dims) + "\n")
            for v in tensor.values.ravel():
                fh.write(_fmt(v) + "\n")
        else:
            fh.write(f"{len(dims)} " + " ".join(str(d) for d in dims) + " sparse\n")
            for idx in np.argwhere(tensor.mask):
                cell = " ".join(str(i + 1) for i in idx)
                fh.write(f"{cell} {_fmt(tensor.values[tuple(idx)])}\n")


def _write_matrix_csv(path, matrix) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(matrix):
            writer.writerow([_fmt(v) for v in row])


def _read_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [[float(tok) for tok in row] for row in csv.reader(fh) if row]
    return np.array(rows)


def write_factors(out_dir, result, link) -> list[str]:
    """Write mode_k.csv files, lambda.csv, and manifest.json; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    factors = result.factors
    last = factors.order - 1
    lam = np.linalg.norm(factors.factors[last], axis=0)
    safe = np.where(lam > 0, lam, 1.0)
    paths = []
    for k, mat in enumerate(factors.factors):
        path = os.path.join(out_dir, f"mode_{k + 1}.csv")
        _write_matrix_csv(path, mat / safe if k == last else mat)
        paths.append(path)
    lam_path = os.path.join(out_dir, "lambda.csv")
    _write_matrix_csv(lam_path, lam[None, :])
    paths.append(lam_path)
    manifest = {
        "link": link.family,
        "sigma": link.sigma,
        "rank": factors.rank,
        "dims": list(factors.dims),
        "final_loglik": result.final_loglik,
        "bic": result.bic,
        "converged": result.converged,
        "n_iterations": result.n_iterations,
        "start_index": result.start_index,
    }
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    paths.append(man_path)
    return paths


def read_factors(in_dir):
    """Load a factor directory back into (CpFactors, manifest dict)."""
    with open(os.path.join(in_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    order = len(manifest["dims"])
    mats = [_read_matrix_csv(os.path.join(in_dir, f"mode_{k + 1}.csv")) for k in range(order)]
    lam = _read_matrix_csv(os.path.join(in_dir, "lambda.csv")).ravel()
    mats[-1] = mats[-1] * lam
    return CpFactors(tuple(mats)), manifest


def write_trace(path, trace) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loglik"])
        for i, ll in enumerate(trace):
            writer.writerow([i, _fmt(ll)])


def write_bic_table(path, table) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "loglik", "p_e", "bic"])
        for row in table:
            writer.writerow([
                row["rank"],
                "" if row["loglik"] is None else _fmt(row["loglik"]),
                row["p_e"],
                "" if row["bic"] is None else _fmt(row["bic"]),
            ])


def write_predictions(path, indices, probs, truth) -> None:
    """Holdout predictions: 1-based indices, predicted probability, actual."""
    order = indices.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"i_{k + 1}" for k in range(order)] + ["prob", "actual"])
        for idx, p, t in zip(indices, probs, truth):
            writer.writerow([*(int(i) + 1 for i in idx), _fmt(p), _fmt(t)])
