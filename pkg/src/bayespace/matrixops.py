"""vec/vech machinery and duplication matrices for symmetric-matrix calculus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def vec(a: np.ndarray) -> np.ndarray:
    """Stack the columns of a matrix into one column."""
    return np.asarray(a).reshape(-1, order="F")


def vech_indices(n: int):
    """(rows, cols) of the lower triangle in vech (column-major) order."""
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    return rows[order], cols[order]


def vech(a: np.ndarray) -> np.ndarray:
    """Stack the lower-triangular part column by column (on-and-below diagonal)."""
    a = np.asarray(a)
    n = a.shape[0]
    rows, cols = np.tril_indices(n)
    # column-major over the lower triangle: sort by column then row
    order = np.lexsort((rows, cols))
    return a[rows[order], cols[order]]


def unvech(v: np.ndarray) -> np.ndarray:
    """Rebuild the symmetric matrix whose vech is ``v``."""
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    out = np.zeros((n, n))
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    out[rows[order], cols[order]] = v
    out[cols[order], rows[order]] = v
    return out


def duplication_matrix(n: int) -> np.ndarray:
    """D with vec(A) = D vech(A) for symmetric n x n A."""
    m = n * (n + 1) // 2
    d = np.zeros((n * n, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        d[:, k] = vec(unvech(e))
    return d


@dataclass(frozen=True)
class DuplicationOps:
    """Duplication matrix, its pseudoinverse, and sqrt(0.5 D^T D) for one dimension."""

    n: int
    d: np.ndarray
    d_dagger: np.ndarray
    sqrt_half_dtd: np.ndarray


def build_duplication(n: int) -> DuplicationOps:
    """Precompute the duplication operators for dimension ``n`` (1..64)."""
    if not 1 <= n <= 64:
        raise ValueError(f"dimension must be in [1, 64], got {n}")
    d = duplication_matrix(n)
    dtd = d.T @ d
    d_dagger = np.linalg.solve(dtd, d.T)
    # 0.5 D^T D happens to be diagonal in the vech ordering, but the root is
    # taken by eigendecomposition rather than assuming that structure.
    w, v = np.linalg.eigh(0.5 * dtd)
    sqrt_half = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    return DuplicationOps(n=n, d=d, d_dagger=d_dagger, sqrt_half_dtd=sqrt_half)
