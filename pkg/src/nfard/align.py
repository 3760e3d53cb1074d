"""Linear alignment of neuron matrices with different widths.

For ``H1`` (n x a) and ``H2`` (n x b) with ``a >= b`` the projection
``P`` (b x a) minimizing ``||H1 P^T - H2||_F`` is ``(pinv(H1) H2)^T``.
Row ``i`` of ``P`` is the least-squares fit of column ``i`` of ``H2`` on
the columns of ``H1``, so ``H1 P^T`` is the orthogonal projection of each
column of ``H2`` onto the column space of ``H1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linalg import solve_least_squares
from .metrics import NeuronMatrix

__all__ = ["Projection", "fit_projection", "hetero_align", "underdetermined"]


@dataclass(frozen=True)
class Projection:
    P: np.ndarray
    residual: float
    source_dims: tuple[int, int]
    sample_count: int

    def apply(self, h1: np.ndarray) -> np.ndarray:
        return h1 @ self.P.T


def _values(h) -> np.ndarray:
    return h.values if isinstance(h, NeuronMatrix) else np.asarray(h, dtype=np.float64)


def fit_projection(h1, h2) -> Projection:
    a_mat, b_mat = _values(h1), _values(h2)
    if a_mat.shape[0] != b_mat.shape[0]:
        raise DimensionError(
            f"sample counts differ: {a_mat.shape[0]} vs {b_mat.shape[0]}"
        )
    a, b = a_mat.shape[1], b_mat.shape[1]
    if a < b:
        raise DimensionError(f"H1 is narrower than H2 ({a} < {b}); swap the arguments")
    p = solve_least_squares(a_mat, b_mat).T
    residual = float(np.linalg.norm(a_mat @ p.T - b_mat))
    return Projection(p, residual, (a, b), a_mat.shape[0])


def underdetermined(n: int, width: int) -> bool:
    """True when a fit on ``n`` samples from ``width`` columns is too loose to separate."""
    return n < 2 * width


def hetero_align(hv: NeuronMatrix, hg: NeuronMatrix) -> tuple[NeuronMatrix, NeuronMatrix]:
    """Bring a victim matrix and a comparison matrix to a common width.

    The wider of the two is projected onto the other; on a tie the victim
    side is projected.  A fresh projection is fitted on every call.
    """
    if hv.n != hg.n:
        raise DimensionError(f"sample counts differ: {hv.n} vs {hg.n}")
    if hv.width >= hg.width:
        proj = fit_projection(hv, hg)
        return hv.with_values(proj.apply(hv.values)), hg
    proj = fit_projection(hg, hv)
    return hv, hg.with_values(proj.apply(hg.values))
