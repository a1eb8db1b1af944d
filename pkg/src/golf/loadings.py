"""Orthonormal factor loadings from eigendecompositions of row correlations.

Loadings are either a plain ``n1 x d`` matrix or a Kronecker product
``A1 (x) A2`` that is never materialized.  Kronecker rows and columns follow
:func:`numpy.kron` ordering: row ``i1 * m2 + i2`` and factor ``l1 * d2 + l2``,
where ``m2`` is the size of the second (fastest varying) block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, NumericalError, PreconditionError

__all__ = [
    "Loadings",
    "compute_loadings",
    "kronecker_loadings",
    "project",
    "unproject",
    "residual_project",
    "explained_fraction",
    "choose_d",
    "normalize_signs",
]


def normalize_signs(A: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    Ties are broken by the lowest row index (``argmax`` semantics).
    """
    A = np.array(A, dtype=float, copy=True)
    if A.size == 0:
        return A
    idx = np.argmax(np.abs(A), axis=0)
    signs = np.sign(A[idx, np.arange(A.shape[1])])
    signs[signs == 0] = 1.0
    return A * signs


def _top_eigen(R, d):
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise PreconditionError(f"correlation matrix must be square, got shape {R.shape}")
    m = R.shape[0]
    if not np.all(np.isfinite(R)):
        raise PreconditionError("correlation matrix contains non-finite values")
    scale = max(np.abs(R).max(), 1.0)
    if np.abs(R - R.T).max() > 1e-10 * scale:
        raise PreconditionError("correlation matrix is not symmetric")
    d = int(d)
    if not 1 <= d <= m:
        raise InvalidParameterError(f"number of factors must be in 1..{m}, got {d}")
    try:
        w, V = scipy.linalg.eigh(0.5 * (R + R.T), subset_by_index=[m - d, m - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(R)
        raise NumericalError(f"eigensolver failed (condition number {cond:.3e})") from exc
    return w[::-1].copy(), normalize_signs(V[:, ::-1])


@dataclass(frozen=True, eq=False)
class Loadings:
    """Orthonormal loading matrix, plain or Kronecker structured.

    Attributes
    ----------
    blocks : tuple of ndarray
        ``(A,)`` for plain loadings, ``(A1, A2)`` for Kronecker loadings.
    eigvals : tuple of ndarray
        Matching eigenvalues, each sorted descending.
    """

    blocks: tuple
    eigvals: tuple

    @property
    def is_kronecker(self) -> bool:
        return len(self.blocks) == 2

    @property
    def n_rows(self) -> int:
        return int(np.prod([A.shape[0] for A in self.blocks]))

    @property
    def d(self) -> int:
        return int(np.prod([A.shape[1] for A in self.blocks]))

    @property
    def values(self) -> np.ndarray:
        """Eigenvalue attached to each factor (products in the Kronecker case)."""
        if self.is_kronecker:
            return np.kron(*self.eigvals)
        return self.eigvals[0]

    def matrix(self) -> np.ndarray:
        """Materialized ``n1 x d`` loading matrix (small problems and tests)."""
        if self.is_kronecker:
            return np.kron(*self.blocks)
        return self.blocks[0]


def compute_loadings(R, d) -> Loadings:
    """Top-``d`` eigenvectors of a symmetric matrix, sign normalized."""
    w, A = _top_eigen(R, d)
    return Loadings((A,), (w,))


def kronecker_loadings(R1, d1, R2, d2) -> Loadings:
    """Loadings ``A1 (x) A2`` from per-block eigendecompositions."""
    w1, A1 = _top_eigen(R1, d1)
    w2, A2 = _top_eigen(R2, d2)
    return Loadings((A1, A2), (w1, w2))


def _check_rows(V, L: Loadings, what="rows"):
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != (L.n_rows if what == "rows" else L.d):
        expect = L.n_rows if what == "rows" else L.d
        raise PreconditionError(f"expected {expect} {what}, got array of shape {V.shape}")
    return V


def project(V, L: Loadings) -> np.ndarray:
    """``A^T V`` (shape ``d x n2``); row ``l`` is ``a_l^T V``.

    In the Kronecker case ``V`` is reshaped to a 3-way tensor and contracted
    one mode at a time, never forming ``A1 (x) A2``.
    """
    V = _check_rows(V, L)
    if not L.is_kronecker:
        return L.blocks[0].T @ V
    A1, A2 = L.blocks
    n2 = V.shape[1]
    T = V.reshape(A1.shape[0], A2.shape[0], n2)
    T = np.tensordot(A1, T, axes=(0, 0))  # (d1, m2, n2)
    T = np.einsum("bk,abn->akn", A2, T, optimize=True)  # (d1, d2, n2)
    return T.reshape(L.d, n2)


def unproject(Z, L: Loadings) -> np.ndarray:
    """``A Z`` (shape ``n1 x n2``)."""
    Z = _check_rows(Z, L, what="factors")
    if not L.is_kronecker:
        return L.blocks[0] @ Z
    A1, A2 = L.blocks
    n2 = Z.shape[1]
    T = Z.reshape(A1.shape[1], A2.shape[1], n2)
    T = np.tensordot(A1, T, axes=(1, 0))  # (m1, d2, n2)
    T = np.einsum("bk,akn->abn", A2, T, optimize=True)  # (m1, m2, n2)
    return T.reshape(L.n_rows, n2)


def residual_project(V, L: Loadings) -> np.ndarray:
    """``(I - A A^T) V``, the component orthogonal to the loadings."""
    V = _check_rows(V, L)
    return V - unproject(project(V, L), L)


def explained_fraction(eigvals) -> np.ndarray:
    """Cumulative eigenvalue fraction for ``d = 1, ..., m``.

    Negative round-off eigenvalues are clipped to zero.
    """
    w = np.sort(np.clip(np.asarray(eigvals, dtype=float).ravel(), 0.0, None))[::-1]
    total = w.sum()
    if total <= 0:
        raise InvalidParameterError("eigenvalues sum to zero")
    frac = np.cumsum(w) / total
    frac[-1] = 1.0
    return frac


def choose_d(R, threshold: float = 0.99) -> int:
    """Smallest ``d`` whose leading eigenvalues explain ``threshold`` of the trace."""
    if not 0 < threshold <= 1:
        raise InvalidParameterError("threshold must lie in (0, 1]")
    w = np.linalg.eigvalsh(np.asarray(R, dtype=float))
    frac = explained_fraction(w)
    return int(np.searchsorted(frac, threshold - 1e-12) + 1)
