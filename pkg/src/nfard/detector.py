"""Reuse detection: test-suite selection, IQR decision rule, verdicts.

The detector probes the victim, the suspect and a handful of
independently trained reference models with the same test suite, turns
each distance metric into a decision value with an IQR outlier rule over
the pooled distances, and flags the suspect when the weighted sum of
decision values is positive.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .align import hetero_align, underdetermined
from .errors import ConfigError, DimensionError
from .metrics import METRICS, NeuronMatrix, approx_neuron_matrix
from .model import Dataset, MlpModel, forward

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_WEIGHTS",
    "DecisionConfig",
    "DetectionReport",
    "MetricResult",
    "entropy",
    "select_test_suite",
    "quartiles",
    "decision_value",
    "resolve_layer",
    "detect",
    "detect_batch",
]

DEFAULT_ALPHA = {"blackbox": 0.85, "whitebox": 3.5}
DEFAULT_WEIGHTS = {"eu": 1.0, "ac": 120.0}
MODES = ("whitebox", "blackbox")


@dataclass
class DecisionConfig:
    mode: str = "blackbox"
    alpha: float | None = None  # None picks the per-mode default
    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    suite_size: int = 1000
    layer_policy: str = "frac:0.25"  # "frac:<f>", "second-last" or "<k>"
    use_log: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha is None:
            self.alpha = DEFAULT_ALPHA[self.mode]
        self.alpha = float(self.alpha)
        unknown = set(self.weights) - set(METRICS)
        if unknown:
            raise ConfigError(f"unknown metrics in weights: {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()) or not any(w > 0 for w in self.weights.values()):
            raise ConfigError("weights must be non-negative with at least one positive")
        if self.suite_size < 1:
            raise ConfigError("suite_size must be >= 1")
        resolve_layer(self.layer_policy, 3)  # syntax check

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricResult:
    suspect_distance: float
    reference_distances: list[float]
    decision_value: float


@dataclass
class DetectionReport:
    suspect_id: str
    metrics: dict[str, MetricResult]
    weighted_sum: float
    verdict: bool
    mode: str
    layer_used: int | None
    hetero: bool
    reference_ids: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def entropy(p) -> float:
    """Shannon entropy (natural log) with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz))) + 0.0


def _row_entropy(probs: np.ndarray) -> np.ndarray:
    safe = np.where(probs > 0, probs, 1.0)
    return -np.sum(probs * np.log(safe), axis=1)


def select_test_suite(victim: MlpModel, data: Dataset, n: int) -> np.ndarray:
    """Indices of the ``n`` samples on which the victim is least confident.

    Samples are ranked by prediction entropy, highest first; equal
    entropies keep ascending index order.
    """
    if n > len(data):
        raise ConfigError(f"suite size {n} exceeds dataset size {len(data)}")
    if n < 1:
        raise ConfigError("suite size must be >= 1")
    h = _row_entropy(forward(victim, data.features)[2])
    order = np.lexsort((np.arange(len(data)), -h))
    return order[:n]


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """(q1, median, q3) by linear interpolation at position ``q * (len - 1)``."""
    v = sorted(float(x) for x in values)
    if len(v) < 2:
        raise ConfigError("quartiles need at least 2 values")

    def at(q: float) -> float:
        pos = q * (len(v) - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, len(v) - 1)
        return v[lo] + (pos - lo) * (v[hi] - v[lo])

    return at(0.25), at(0.5), at(0.75)


def decision_value(x: float, ys: Sequence[float], alpha: float) -> float:
    """``median - alpha * IQR - x`` over the pooled set ``{x} + ys``."""
    if len(ys) < 2:
        raise ConfigError("decision needs at least 2 reference distances")
    q1, med, q3 = quartiles([x, *ys])
    return med - alpha * (q3 - q1) - x


def resolve_layer(policy, num_layers: int) -> int:
    """Map a layer policy to a 1-based layer index.

    ``"frac:f"`` rounds ``f * L`` half-up and clamps to ``[1, L - 1]``;
    ``"second-last"`` is ``L - 1``; an integer selects that layer.
    """
    top = max(1, num_layers - 1)
    if isinstance(policy, int):
        k = policy
    else:
        policy = str(policy).strip()
        if policy.startswith("frac:"):
            try:
                frac = float(policy[5:])
            except ValueError:
                raise ConfigError(f"bad layer fraction {policy!r}") from None
            if not 0.0 <= frac <= 1.0:
                raise ConfigError(f"layer fraction must lie in [0, 1], got {frac}")
            return min(max(1, math.floor(frac * num_layers + 0.5)), top)
        if policy == "second-last":
            return top
        try:
            k = int(policy)
        except ValueError:
            raise ConfigError(f"unknown layer policy {policy!r}") from None
    if not 1 <= k <= num_layers:
        raise ConfigError(f"layer {k} out of range 1..{num_layers}")
    return k


def _model_id(model: MlpModel, fallback: str) -> str:
    return model.meta.get("id", fallback)


class _Probe:
    """Neuron matrices of one model on a fixed suite, computed lazily."""

    def __init__(self, model: MlpModel, x: np.ndarray, use_log: bool):
        self.model = model
        self.x = x
        self.use_log = use_log
        self._acts = None

    def _forward(self):
        if self._acts is None:
            acts, _, probs = forward(self.model, self.x)
            self._acts = (acts, probs)
        return self._acts

    def layer(self, k: int) -> NeuronMatrix:
        acts, _ = self._forward()
        return NeuronMatrix(acts[k - 1], "whitebox", _model_id(self.model, ""), k)

    def output(self) -> NeuronMatrix:
        _, probs = self._forward()
        if self.use_log:
            return approx_neuron_matrix(probs, model_id=_model_id(self.model, ""))
        return NeuronMatrix(probs, "blackbox", _model_id(self.model, ""))


def _is_hetero(victim: MlpModel, other: MlpModel, mode: str) -> bool:
    if mode == "blackbox":
        return other.num_classes != victim.num_classes
    return other.layer_dims != victim.layer_dims


def _detect_on_suite(
    vprobe: _Probe,
    suspect: MlpModel,
    references: Sequence[MlpModel],
    cfg: DecisionConfig,
    suspect_id: str,
) -> DetectionReport:
    victim = vprobe.model
    if len(references) < 2:
        raise ConfigError(f"need at least 2 reference models, got {len(references)}")
    x = vprobe.x
    for m in (suspect, *references):
        if m.d_in != victim.d_in:
            raise DimensionError(f"model input dim {m.d_in} differs from victim's {victim.d_in}")
    hetero = _is_hetero(victim, suspect, cfg.mode)
    warnings: list[str] = []
    others = [_Probe(m, x, cfg.use_log) for m in (suspect, *references)]

    if not hetero:
        for i, ref in enumerate(references):
            if _is_hetero(victim, ref, cfg.mode):
                raise DimensionError(
                    f"reference {_model_id(ref, str(i))} ({ref.arch}) is incompatible with "
                    f"victim ({victim.arch}) for a homogeneous {cfg.mode} comparison"
                )
        if cfg.mode == "whitebox":
            layer = resolve_layer(cfg.layer_policy, victim.num_layers)
            hv = vprobe.layer(layer)
            pairs = [(hv, p.layer(layer)) for p in others]
        else:
            layer = None
            hv = vprobe.output()
            pairs = [(hv, p.output()) for p in others]
    else:
        if cfg.mode == "whitebox":
            layer = resolve_layer("second-last", victim.num_layers)
            hv = vprobe.layer(layer)
            mats = [p.layer(resolve_layer("second-last", p.model.num_layers)) for p in others]
        else:
            layer = None
            hv = vprobe.output()
            mats = [p.output() for p in others]
        pairs = []
        for hg in mats:
            wide = max(hv.width, hg.width)
            if underdetermined(hv.n, wide):
                msg = f"underdetermined alignment: n={hv.n} < 2*{wide}"
                if msg not in warnings:
                    warnings.append(msg)
            pairs.append(hetero_align(hv, hg))

    results = {}
    total = 0.0
    for name, weight in cfg.weights.items():
        fn = METRICS[name]
        dists = [fn(a, b) for a, b in pairs]
        d = decision_value(dists[0], dists[1:], cfg.alpha)
        results[name] = MetricResult(dists[0], dists[1:], d)
        total += weight * d
    return DetectionReport(
        suspect_id=suspect_id,
        metrics=results,
        weighted_sum=total,
        verdict=bool(total > 0),
        mode=cfg.mode,
        layer_used=layer,
        hetero=hetero,
        reference_ids=[_model_id(r, f"ref{i}") for i, r in enumerate(references)],
        warnings=warnings,
    )


def _check_inputs(victim: MlpModel, models: Sequence[MlpModel]) -> None:
    for m in models:
        if m.d_in != victim.d_in:
            raise DimensionError(
                f"model {_model_id(m, '?')} expects {m.d_in} features, victim expects {victim.d_in}"
            )


def _suite(victim: MlpModel, data: Dataset, cfg: DecisionConfig) -> np.ndarray:
    if data.d_in != victim.d_in:
        raise DimensionError(f"dataset has {data.d_in} features, victim expects {victim.d_in}")
    idx = select_test_suite(victim, data, cfg.suite_size)
    if idx.size == 0:
        raise ConfigError("empty test suite")
    return data.features[idx]


def detect(
    victim: MlpModel,
    suspect: MlpModel,
    references: Sequence[MlpModel],
    data: Dataset,
    cfg: DecisionConfig | None = None,
) -> DetectionReport:
    """Decide whether ``suspect`` was derived from ``victim``.

    ``data`` is (a subset of) the victim's training data; the test suite
    is drawn from it.  ``references`` are independently trained models,
    normally sharing the victim's architecture and task.
    """
    cfg = cfg or DecisionConfig()
    _check_inputs(victim, [suspect, *references])
    vprobe = _Probe(victim, _suite(victim, data, cfg), cfg.use_log)
    return _detect_on_suite(vprobe, suspect, references, cfg, _model_id(suspect, "suspect"))


def detect_batch(
    victim: MlpModel,
    suspects: Sequence[MlpModel],
    references,
    data: Dataset,
    cfg: DecisionConfig | None = None,
) -> list[DetectionReport]:
    """Run :func:`detect` for several suspects on one shared test suite.

    ``references`` is either one sequence used for every suspect or a
    sequence of per-suspect reference lists.
    """
    cfg = cfg or DecisionConfig()
    suspects = list(suspects)
    refs = list(references)
    per_suspect = bool(refs) and isinstance(refs[0], (list, tuple))
    if per_suspect and len(refs) != len(suspects):
        raise ConfigError("one reference list per suspect expected")
    _check_inputs(victim, suspects)
    for group in (refs if per_suspect else [refs]):
        _check_inputs(victim, group)
    vprobe = _Probe(victim, _suite(victim, data, cfg), cfg.use_log)
    return [
        _detect_on_suite(
            vprobe, s, refs[i] if per_suspect else refs, cfg, _model_id(s, f"suspect{i}")
        )
        for i, s in enumerate(suspects)
    ]
