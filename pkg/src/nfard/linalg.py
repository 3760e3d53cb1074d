"""Dense linear algebra used by the alignment and detection code.

Everything operates on 2-D ``float64`` numpy arrays.  The singular value
decomposition is delegated to LAPACK (``numpy.linalg.svd``); the
pseudoinverse and the minimum-norm least-squares solver are built on top
of it with an explicit rank cutoff.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericalError

__all__ = ["as_matrix", "svd", "default_rank_tol", "pseudoinverse", "solve_least_squares"]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (copy only when needed)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains NaN or Inf entries")
    return m


def svd(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``A = U @ diag(S) @ V.T``.

    Returns ``(U, S, V)`` with ``U`` of shape (rows, k), ``S`` of length
    ``k = min(rows, cols)`` sorted descending and ``V`` of shape (cols, k).
    Note that ``V`` is returned, not ``V.T``.
    """
    a = as_matrix(a, "A")
    if a.size == 0:
        k = min(a.shape)
        return np.zeros((a.shape[0], k)), np.zeros(k), np.zeros((a.shape[1], k))
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return u, s, vt.T


def default_rank_tol(shape: tuple[int, int], s_max: float) -> float:
    return max(shape) * np.finfo(np.float64).eps * s_max


def pseudoinverse(a, rank_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via the SVD.

    Singular values ``<= rank_tol`` are treated as zero.  The default
    cutoff is ``max(rows, cols) * eps * S_max``.
    """
    a = as_matrix(a, "A")
    if rank_tol is not None and rank_tol < 0:
        raise ValueError("rank_tol must be non-negative")
    u, s, v = svd(a)
    if s.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    tol = default_rank_tol(a.shape, s[0]) if rank_tol is None else rank_tol
    keep = s > tol
    # zero matrix: every singular value is cut, result is the zero transpose
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (v * inv_s) @ u.T


def solve_least_squares(a, b, rank_tol: float | None = None) -> np.ndarray:
    """Minimum-Frobenius-norm minimizer ``W`` of ``||A @ W - B||_F``.

    ``A`` is (n, p) and ``B`` is (n, q); the result is (p, q), equal to
    ``pinv(A) @ B``.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(
            f"row count mismatch: A has {a.shape[0]} rows, B has {b.shape[0]}"
        )
    u, s, v = svd(a)
    if s.size == 0:
        return np.zeros((a.shape[1], b.shape[1]))
    tol = default_rank_tol(a.shape, s[0]) if rank_tol is None else rank_tol
    keep = s > tol
    # W = V_r diag(1/s_r) U_r^T B, computed without forming pinv(A)
    coeff = (u[:, keep].T @ b) / s[keep][:, None]
    return v[:, keep] @ coeff
