"""Neuron matrices and the two neuron-functionality distances.

A neuron matrix stacks, column by column, the outputs of every neuron of
one layer over ``n`` probe samples (shape ``n x m``).  Distances compare
two such matrices column-wise, so they only make sense for matrices of
identical shape; heterogeneous pairs go through :mod:`nfard.align` first.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError
from .linalg import as_matrix
from .model import MlpModel, forward

__all__ = [
    "NeuronMatrix",
    "extract_neuron_matrix",
    "approx_neuron_matrix",
    "dist_eu",
    "dist_ac",
    "METRICS",
    "save_neuron_matrix",
    "load_neuron_matrix",
]

PROB_FLOOR = 1e-12
ZERO_NORM = 1e-12

WHITEBOX = "whitebox"
BLACKBOX = "blackbox"


@dataclass(frozen=True)
class NeuronMatrix:
    values: np.ndarray
    source: str  # WHITEBOX or BLACKBOX
    model_id: str = ""
    layer_index: int | None = None

    def __post_init__(self):
        v = as_matrix(self.values, "neuron matrix")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"neuron matrix must be at least 1x1, got {v.shape}")
        if self.source not in (WHITEBOX, BLACKBOX):
            raise ValueError(f"unknown neuron matrix source {self.source!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "NeuronMatrix":
        return replace(self, values=values)


def extract_neuron_matrix(model: MlpModel, x, layer: int, model_id: str = "") -> NeuronMatrix:
    """Tap layer ``layer`` (1-based) of ``model`` on the rows of ``x``.

    Hidden layers are tapped after the ReLU; the last layer is tapped
    before the softmax.
    """
    if not 1 <= layer <= model.num_layers:
        raise DimensionError(f"layer {layer} out of range 1..{model.num_layers}")
    activations, _, _ = forward(model, x)
    return NeuronMatrix(activations[layer - 1], WHITEBOX, model_id or model.meta.get("id", ""), layer)


def approx_neuron_matrix(probs, floor: float = PROB_FLOOR, model_id: str = "") -> NeuronMatrix:
    """Logit approximation ``log(max(p, floor))`` of a probability matrix."""
    p = as_matrix(probs, "probs")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        bad = np.flatnonzero((p < 0).any(axis=1) | (np.abs(p.sum(axis=1) - 1.0) > 1e-6))
        raise ValueError(f"row {int(bad[0])} is not a probability vector")
    return NeuronMatrix(np.log(np.maximum(p, floor)), BLACKBOX, model_id)


def _pair(hv, hs) -> tuple[np.ndarray, np.ndarray]:
    a = hv.values if isinstance(hv, NeuronMatrix) else as_matrix(hv)
    b = hs.values if isinstance(hs, NeuronMatrix) else as_matrix(hs)
    if a.shape != b.shape:
        raise DimensionError(f"neuron matrix shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dist_eu(hv, hs) -> float:
    """Mean over neurons of the Euclidean distance between neuron vectors."""
    a, b = _pair(hv, hs)
    return float(np.mean(np.linalg.norm(a - b, axis=0)))


def dist_ac(hv, hs) -> float:
    """Mean over neurons of the cosine distance between neuron vectors.

    A pair of (numerically) zero columns contributes 0; a zero column paired
    with a non-zero one contributes 1.
    """
    a, b = _pair(hv, hs)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    za, zb = na < ZERO_NORM, nb < ZERO_NORM
    out = np.ones(a.shape[1])
    out[za & zb] = 0.0
    ok = ~(za | zb)
    # 1 - cos(u, v) = ||u/|u| - v/|v|||^2 / 2, exact zero for identical columns
    diff = a[:, ok] / na[ok] - b[:, ok] / nb[ok]
    out[ok] = np.clip(0.5 * np.sum(diff * diff, axis=0), 0.0, 2.0)
    return float(np.mean(out))


METRICS = {"eu": dist_eu, "ac": dist_ac}


def save_neuron_matrix(h: NeuronMatrix, path) -> None:
    n, m = h.shape
    layer = "" if h.layer_index is None else str(h.layer_index)
    lines = [f"{n},{m},{h.source},{layer}"]
    lines += [",".join(repr(float(v)) for v in row) for row in h.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_neuron_matrix(path, model_id: str = "") -> NeuronMatrix:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty matrix file")
    head = lines[0].split(",")
    if len(head) != 4:
        raise ParseError(f"{path}: line 1: expected 'n,m,source,layer'")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError as exc:
        raise ParseError(f"{path}: line 1: {exc}") from exc
    source = head[2].strip()
    if source not in (WHITEBOX, BLACKBOX):
        raise ParseError(f"{path}: line 1: unknown source {source!r}")
    layer = int(head[3]) if head[3].strip() else None
    if len(lines) - 1 != n:
        raise ParseError(f"{path}: header declares n={n} but file has {len(lines) - 1} rows")
    values = np.empty((n, m))
    for i, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != m:
            raise ParseError(f"{path}: line {i + 2}: expected {m} values, got {len(parts)}")
        try:
            values[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"{path}: line {i + 2}: {exc}") from exc
    return NeuronMatrix(values, source, model_id, layer)
