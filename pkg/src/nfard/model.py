"""Small ReLU multilayer perceptron classifiers in numpy.

A model with layer dims ``[d_in, m_1, ..., m_L]`` has ``L`` affine layers.
Hidden layers are followed by ReLU, the last layer is a plain linear
classifier whose output (the logits) goes through a softmax.  Weights of
layer ``k`` have shape ``(m_k, m_{k-1})`` so a batch ``X`` of shape
``(n, m_{k-1})`` maps to ``X @ W.T + b``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, ParseError, TrainingError
from .linalg import as_matrix

__all__ = [
    "MlpModel",
    "Dataset",
    "TrainConfig",
    "init_model",
    "forward",
    "softmax",
    "predict",
    "accuracy",
    "loss_and_grads",
    "fit",
    "train",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
]


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise DimensionError(f"invalid layer_dims {self.layer_dims}")
        if self.hidden_activation != "relu":
            raise ConfigError(f"unsupported activation {self.hidden_activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise DimensionError(
                f"expected {n_layers} weight and bias arrays, got "
                f"{len(self.weights)} and {len(self.biases)}"
            )
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if w.shape != shape:
                raise DimensionError(f"layer {k + 1}: weight shape {w.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise DimensionError(f"layer {k + 1}: bias shape {b.shape}, expected {(shape[0],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DimensionError(f"layer {k + 1}: non-finite parameters")
        self.meta = {str(k): str(v) for k, v in self.meta.items()}

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def arch(self) -> str:
        """Architecture descriptor, e.g. ``"20-32-16-8"``."""
        return "-".join(str(d) for d in self.layer_dims)

    def copy(self, **meta) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            {**self.meta, **meta},
        )

    def params_equal(self, other: "MlpModel") -> bool:
        return (
            self.layer_dims == other.layer_dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimensionError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} samples"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DimensionError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    freeze_mask: Sequence[bool] | None = None
    l2: float = 0.0
    lr_schedule: str = "constant"  # or "linear": decays to 0 over the run

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_model(layer_dims: Sequence[int], seed: int, meta: dict | None = None) -> MlpModel:
    """Glorot-uniform weights and zero biases drawn from ``seed``."""
    rng = np.random.default_rng([int(seed), 0])
    dims = [int(d) for d in layer_dims]
    weights = [_glorot(rng, dims[k + 1], dims[k]) for k in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]]
    return MlpModel(dims, weights, biases, meta=dict(meta or {}))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(model: MlpModel, x) -> np.ndarray:
    x = as_matrix(x, "X")
    if x.shape[1] != model.d_in:
        raise DimensionError(f"input has {x.shape[1]} columns, model expects {model.d_in}")
    return x


def forward(model: MlpModel, x) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    """Run ``x`` through the network.

    Returns ``(activations, logits, probs)``.  ``activations[k]`` is the
    output of layer ``k + 1``: post-ReLU for hidden layers, pre-softmax
    for the last one, so ``activations[-1] is logits``.
    """
    h = _check_input(model, x)
    activations = []
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if k < model.num_layers - 1:
            h = np.maximum(h, 0.0)
        activations.append(h)
    logits = activations[-1]
    return activations, logits, softmax(logits)


def predict(model: MlpModel, x) -> np.ndarray:
    return forward(model, x)[2]


def accuracy(model: MlpModel, data: Dataset) -> float:
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(model, data.features).argmax(axis=1) == data.labels))


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def loss_and_grads(
    model: MlpModel,
    x: np.ndarray,
    targets: np.ndarray,
    temperature: float = 1.0,
    l2: float = 0.0,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Soft-target cross-entropy and its gradients.

    ``targets`` rows are probability vectors.  The student distribution is
    ``softmax(logits / temperature)``; the loss is the batch mean of
    ``-sum(t * log q)`` scaled by ``temperature**2`` (the usual
    distillation scaling, a no-op at temperature 1), plus
    ``l2 / 2 * sum(||W||^2)`` over weight matrices.
    """
    n = x.shape[0]
    hs = [x]
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = hs[-1] @ w.T + b
        hs.append(np.maximum(z, 0.0) if k < model.num_layers - 1 else z)
    scaled = hs[-1] / temperature
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_q = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    t2 = temperature * temperature
    loss = -t2 * float(np.sum(targets * log_q)) / n
    loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in model.weights)

    # d loss / d logits = T * (q - t) / n
    delta = temperature * (np.exp(log_q) - targets) / n
    gw: list[np.ndarray] = [None] * model.num_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * model.num_layers  # type: ignore[list-item]
    for k in range(model.num_layers - 1, -1, -1):
        gw[k] = delta.T @ hs[k] + l2 * model.weights[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k]) * (hs[k] > 0)
    return loss, gw, gb


def fit(
    model: MlpModel,
    x,
    targets,
    cfg: TrainConfig,
    temperature: float = 1.0,
    weight_masks: Sequence[np.ndarray] | None = None,
) -> MlpModel:
    """Mini-batch SGD on soft targets, starting from ``model``.

    ``model`` itself is left untouched.  Layers with ``cfg.freeze_mask[k]``
    set are never updated; entries where ``weight_masks[k] == 0`` are held
    at zero throughout.  The sample order is reshuffled every epoch from
    ``cfg.seed``.
    """
    x = _check_input(model, x)
    targets = as_matrix(targets, "targets")
    if targets.shape != (x.shape[0], model.num_classes):
        raise DimensionError(
            f"targets shape {targets.shape}, expected {(x.shape[0], model.num_classes)}"
        )
    freeze = list(cfg.freeze_mask) if cfg.freeze_mask is not None else [False] * model.num_layers
    if len(freeze) != model.num_layers:
        raise ConfigError(f"freeze_mask has {len(freeze)} entries for {model.num_layers} layers")
    out = model.copy()
    if weight_masks is not None:
        masks = [np.asarray(m, dtype=np.float64) for m in weight_masks]
        out.weights = [w * m for w, m in zip(out.weights, masks)]
    n = x.shape[0]
    if n == 0:
        return out
    rng = np.random.default_rng([int(cfg.seed), 1])
    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    step_no = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.lr_schedule == "linear":
                lr = cfg.learning_rate * (1.0 - step_no / total)
            else:
                lr = cfg.learning_rate
            step_no += 1
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = loss_and_grads(out, x[idx], targets[idx], temperature, cfg.l2)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            for k in range(out.num_layers):
                if freeze[k]:
                    continue
                step = gw[k] * masks[k] if weight_masks is not None else gw[k]
                out.weights[k] -= lr * step
                out.biases[k] -= lr * gb[k]
        if not all(np.all(np.isfinite(w)) for w in out.weights):
            raise TrainingError(f"parameters became non-finite in epoch {epoch}")
    return out


def train(data: Dataset, layer_dims: Sequence[int], cfg: TrainConfig, meta: dict | None = None) -> MlpModel:
    """Train a freshly initialized model on hard labels."""
    if layer_dims[0] != data.d_in or layer_dims[-1] != data.num_classes:
        raise DimensionError(
            f"layer_dims {list(layer_dims)} incompatible with data "
            f"(d_in={data.d_in}, classes={data.num_classes})"
        )
    model = init_model(layer_dims, cfg.seed, meta)
    return fit(model, data.features, one_hot(data.labels, data.num_classes), cfg)


# ---------------------------------------------------------------- file formats

def model_to_dict(model: MlpModel) -> dict:
    return {
        "layer_dims": list(model.layer_dims),
        "activation": model.hidden_activation,
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "meta": dict(sorted(model.meta.items())),
    }


def model_from_dict(obj) -> MlpModel:
    if not isinstance(obj, dict):
        raise ParseError("model file: top-level value must be an object")
    for key in ("layer_dims", "weights", "biases"):
        if key not in obj:
            raise ParseError(f"model file: missing field {key!r}")
    dims = obj["layer_dims"]
    if not isinstance(dims, list) or len(dims) < 2 or not all(isinstance(d, int) and d > 0 for d in dims):
        raise ParseError(f"model file: field 'layer_dims' must be a list of positive ints, got {dims!r}")
    n_layers = len(dims) - 1
    weights, biases = obj["weights"], obj["biases"]
    if not isinstance(weights, list) or len(weights) != n_layers:
        raise ParseError(f"model file: field 'weights' must hold {n_layers} layers")
    if not isinstance(biases, list) or len(biases) != n_layers:
        raise ParseError(f"model file: field 'biases' must hold {n_layers} layers")
    ws, bs = [], []
    for k in range(n_layers):
        rows, cols = dims[k + 1], dims[k]
        try:
            w = np.asarray(weights[k], dtype=np.float64)
            b = np.asarray(biases[k], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"model file: weights[{k}]/biases[{k}] not numeric: {exc}") from exc
        if w.ndim != 1 or w.size != rows * cols:
            raise ParseError(
                f"model file: weights[{k}] has {w.size} values, layer_dims declare {rows}x{cols}"
            )
        if b.ndim != 1 or b.size != rows:
            raise ParseError(f"model file: biases[{k}] has {b.size} values, layer_dims declare {rows}")
        ws.append(w.reshape(rows, cols))
        bs.append(b)
    meta = obj.get("meta", {})
    if not isinstance(meta, dict):
        raise ParseError("model file: field 'meta' must be an object")
    try:
        return MlpModel(dims, ws, bs, obj.get("activation", "relu"), meta)
    except (DimensionError, ConfigError) as exc:
        raise ParseError(f"model file: {exc}") from exc


def save_model(model: MlpModel, path) -> None:
    # json writes floats with repr(), the shortest round-trip decimal
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> MlpModel:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return model_from_dict(obj)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


_HEADER = re.compile(r"#\s*n=(\d+)\s+d=(\d+)\s+classes=(\d+)\s*$")


def save_dataset(data: Dataset, path) -> None:
    lines = [f"# n={len(data)} d={data.d_in} classes={data.num_classes}"]
    for row, label in zip(data.features, data.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty dataset file")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise ParseError(f"{path}: line 1: expected header '# n=<n> d=<d> classes=<m>'")
    n, d, classes = (int(g) for g in m.groups())
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ParseError(f"{path}: header declares n={n} but file has {len(body)} rows")
    feats = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    for i, ln in enumerate(body):
        parts = ln.split(",")
        if len(parts) != d + 1:
            raise ParseError(f"{path}: line {i + 2}: expected {d + 1} fields, got {len(parts)}")
        try:
            feats[i] = [float(p) for p in parts[:d]]
            labels[i] = int(parts[d])
        except ValueError as exc:
            raise ParseError(f"{path}: line {i + 2}: {exc}") from exc
        if not 0 <= labels[i] < classes:
            raise ParseError(f"{path}: line {i + 2}: label {labels[i]} outside [0, {classes})")
    return Dataset(feats, labels, classes)
