"""A desk-scale reuse zoo: victims, surrogates and reference models.

Synthetic Gaussian-mixture classification tasks stand in for image
datasets and small MLPs stand in for CNNs.  Each victim gets one
surrogate per reuse technique; references are trained from scratch with
different seeds and split into two folds.
"""
from __future__ import annotations

import copy
import json
import zlib
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, ParseError
from .model import (
    Dataset,
    MlpModel,
    TrainConfig,
    accuracy,
    fit,
    forward,
    init_model,
    one_hot,
    save_dataset,
    save_model,
    softmax,
    train,
)

__all__ = [
    "TECHNIQUES",
    "ModelRecord",
    "TaskRecord",
    "ZooManifest",
    "default_zoo_config",
    "synth_dataset",
    "finetune",
    "retrain",
    "prune",
    "quantize",
    "transfer",
    "distill",
    "distill_kl",
    "extract_steal",
    "build_zoo",
    "load_manifest",
]

TECHNIQUES = (
    "finetune-last",
    "finetune-all",
    "retrain-last",
    "retrain-all",
    "prune-0.3",
    "prune-0.6",
    "quant-f16",
    "quant-q8",
    "transfer",
    "distill",
    "extract",
)
HETERO_TECHNIQUES = ("transfer", "distill", "extract")


def default_zoo_config() -> dict:
    text = resources.files(__package__).joinpath("zoo_defaults.json").read_text()
    return json.loads(text)


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 63-bit seed for a named zoo component."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ------------------------------------------------------------------- datasets

def synth_dataset(
    seed: int,
    num_classes: int,
    d_in: int,
    n: int,
    sample_seed: int | None = None,
    clusters_per_class: int = 3,
    mean_scale: float = 1.0,
    spread: float = 1.0,
) -> Dataset:
    """Gaussian-mixture classification task.

    ``seed`` fixes the task (cluster centres); ``sample_seed`` fixes which
    points are drawn from it, so two samples of the same task share
    centres.  Every class owns ``clusters_per_class`` isotropic Gaussian
    blobs of standard deviation ``spread``; labels are balanced within one.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    task_rng = np.random.default_rng([int(seed), 7])
    centres = task_rng.normal(0.0, mean_scale, size=(num_classes, clusters_per_class, d_in))
    rng = np.random.default_rng([int(seed), 11, 0 if sample_seed is None else int(sample_seed) + 1])
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    blob = rng.integers(0, clusters_per_class, size=n)
    x = centres[labels, blob] + spread * rng.normal(size=(n, d_in))
    return Dataset(x, labels, num_classes)


# ------------------------------------------------------------ reuse techniques

def _scaled_cfg(cfg: TrainConfig, **changes) -> TrainConfig:
    return TrainConfig(**{**asdict(cfg), **changes})


def _check_task(victim: MlpModel, data: Dataset) -> None:
    if data.d_in != victim.d_in or data.num_classes != victim.num_classes:
        raise DimensionError(
            f"data (d_in={data.d_in}, classes={data.num_classes}) does not match "
            f"victim {victim.arch}"
        )


def _last_only(model: MlpModel) -> list[bool]:
    return [True] * (model.num_layers - 1) + [False]


def finetune(victim: MlpModel, data: Dataset, scope: str, cfg: TrainConfig) -> MlpModel:
    """Continue training the victim on ``data`` (``scope`` = "last" or "all")."""
    _check_task(victim, data)
    if scope not in ("last", "all"):
        raise ConfigError(f"scope must be 'last' or 'all', got {scope!r}")
    freeze = _last_only(victim) if scope == "last" else None
    return fit(victim, data.features, one_hot(data.labels, data.num_classes),
               _scaled_cfg(cfg, freeze_mask=freeze))


def retrain(victim: MlpModel, data: Dataset, scope: str, cfg: TrainConfig) -> MlpModel:
    """Re-initialize the last layer from ``cfg.seed``, then fine-tune."""
    _check_task(victim, data)
    fresh = init_model(victim.layer_dims, cfg.seed)
    start = victim.copy()
    start.weights[-1] = fresh.weights[-1]
    start.biases[-1] = fresh.biases[-1]
    return finetune(start, data, scope, cfg)


def prune(victim: MlpModel, data: Dataset, ratio: float, cfg: TrainConfig) -> MlpModel:
    """Global magnitude pruning followed by masked fine-tuning.

    The ``ratio`` fraction of weights with the smallest magnitude, ranked
    over all layers together (biases excluded), are zeroed and kept at zero.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError("pruning ratio must lie in [0, 1)")
    _check_task(victim, data)
    flat = np.concatenate([np.abs(w).ravel() for w in victim.weights])
    n_prune = int(np.ceil(ratio * flat.size))
    masks = [np.ones_like(w) for w in victim.weights]
    if n_prune:
        # rank positions rather than thresholding so ties cannot over-prune
        order = np.argsort(flat, kind="stable")[:n_prune]
        keep = np.ones(flat.size)
        keep[order] = 0.0
        offset = 0
        for k, w in enumerate(victim.weights):
            masks[k] = keep[offset:offset + w.size].reshape(w.shape)
            offset += w.size
    return fit(victim, data.features, one_hot(data.labels, data.num_classes), cfg,
               weight_masks=masks)


def _q8(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return a.copy()
    scale = (hi - lo) / 255.0
    return lo + scale * np.clip(np.round((a - lo) / scale), 0, 255)


def quantize(victim: MlpModel, mode: str) -> MlpModel:
    """Simulated post-training quantization.

    ``"f16"`` rounds weights and biases to half precision; ``"q8"``
    applies per-layer 8-bit affine quantization to the weight matrices
    (biases stay in full precision).
    """
    out = victim.copy()
    if mode == "f16":
        out.weights = [w.astype(np.float16).astype(np.float64) for w in out.weights]
        out.biases = [b.astype(np.float16).astype(np.float64) for b in out.biases]
    elif mode == "q8":
        out.weights = [_q8(w) for w in out.weights]
    else:
        raise ConfigError(f"unknown quantization mode {mode!r}")
    return out


def transfer(victim: MlpModel, new_data: Dataset, cfg: TrainConfig) -> MlpModel:
    """Swap in a fresh last layer sized for ``new_data`` and train on it."""
    if new_data.d_in != victim.d_in:
        raise DimensionError(f"new task has d_in={new_data.d_in}, victim expects {victim.d_in}")
    dims = victim.layer_dims[:-1] + [new_data.num_classes]
    fresh = init_model(dims, cfg.seed)
    start = MlpModel(
        dims,
        [w.copy() for w in victim.weights[:-1]] + [fresh.weights[-1]],
        [b.copy() for b in victim.biases[:-1]] + [fresh.biases[-1]],
        meta=dict(victim.meta),
    )
    return fit(start, new_data.features, one_hot(new_data.labels, new_data.num_classes), cfg)


def _check_student(victim: MlpModel, student_dims: Sequence[int]) -> list[int]:
    dims = [int(d) for d in student_dims]
    if dims[0] != victim.d_in or dims[-1] != victim.num_classes:
        raise DimensionError(f"student dims {dims} incompatible with victim {victim.arch}")
    return dims


def distill_kl(teacher_logits: np.ndarray, student_logits: np.ndarray, temperature: float) -> float:
    """Mean KL(teacher_T || student_T) between temperature-softened outputs."""
    p = softmax(teacher_logits / temperature)
    log_p = np.log(np.maximum(p, 1e-300))
    s = student_logits / temperature
    s = s - s.max(axis=1, keepdims=True)
    log_q = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    return float(np.mean(np.sum(p * (log_p - log_q), axis=1)))


def distill(
    victim: MlpModel,
    student_dims: Sequence[int],
    data: Dataset,
    temperature: float,
    cfg: TrainConfig,
    student: MlpModel | None = None,
) -> MlpModel:
    """Soft-label-only knowledge distillation at ``temperature``.

    Only ``data.features`` is used.  ``student`` optionally overrides the
    seeded initialization.
    """
    dims = _check_student(victim, student_dims)
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    if student is None:
        student = init_model(dims, cfg.seed)
    elif student.layer_dims != dims:
        raise DimensionError("student does not match student_dims")
    logits = forward(victim, data.features)[1]
    targets = softmax(logits / temperature)
    return fit(student, data.features, targets, cfg, temperature=temperature)


def extract_steal(victim: MlpModel, student_dims: Sequence[int], query_x, cfg: TrainConfig) -> MlpModel:
    """Query-based extraction: fit a fresh student to the victim's
    probability outputs on the attacker's queries."""
    dims = _check_student(victim, student_dims)
    if isinstance(query_x, Dataset):
        query_x = query_x.features  # labels are never used
    query_x = np.asarray(query_x, dtype=np.float64)
    if query_x.ndim != 2 or query_x.shape[0] == 0:
        raise ConfigError("empty query set")
    probs = forward(victim, query_x)[2]
    return fit(init_model(dims, cfg.seed), query_x, probs, cfg)


# ------------------------------------------------------------------ manifest

@dataclass
class TaskRecord:
    task_id: str
    generator_seed: int
    num_classes: int
    d_in: int
    n: int = 0
    path: str = ""


@dataclass
class ModelRecord:
    id: str
    path: str
    role: str  # victim | surrogate | reference
    arch: str
    task: str
    seed: int
    lineage: str | None = None
    technique: str | None = None
    fold: int | None = None
    accuracy: float | None = None


@dataclass
class ZooManifest:
    master_seed: int
    models: list[ModelRecord] = field(default_factory=list)
    tasks: list[TaskRecord] = field(default_factory=list)
    archs: dict[str, list[int]] = field(default_factory=dict)

    def by_role(self, role: str) -> list[ModelRecord]:
        return [m for m in self.models if m.role == role]

    def get(self, model_id: str) -> ModelRecord:
        for m in self.models:
            if m.id == model_id:
                return m
        raise KeyError(model_id)

    def task(self, task_id: str) -> TaskRecord:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    def references(self, arch: str, task: str, fold: int | None = None) -> list[ModelRecord]:
        return [
            m for m in self.models
            if m.role == "reference" and m.arch == arch and m.task == task
            and (fold is None or m.fold == fold)
        ]

    def validate(self) -> None:
        ids = [m.id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ParseError("manifest: duplicate model ids")
        victims = {m.id for m in self.models if m.role == "victim"}
        task_ids = {t.task_id for t in self.tasks}
        for m in self.models:
            if m.role not in ("victim", "surrogate", "reference"):
                raise ParseError(f"manifest: model {m.id!r} has unknown role {m.role!r}")
            if m.role == "surrogate" and m.lineage not in victims:
                raise ParseError(f"manifest: surrogate {m.id!r} lineage {m.lineage!r} is not a victim")
            if m.role == "reference" and m.lineage is not None:
                raise ParseError(f"manifest: reference {m.id!r} must not have a lineage")
            if m.role == "reference" and m.fold not in (1, 2):
                raise ParseError(f"manifest: reference {m.id!r} needs fold 1 or 2")
            if m.task not in task_ids:
                raise ParseError(f"manifest: model {m.id!r} refers to unknown task {m.task!r}")

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "archs": self.archs,
            "tasks": [asdict(t) for t in self.tasks],
            "models": [asdict(m) for m in self.models],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ZooManifest":
        try:
            man = cls(
                master_seed=int(obj["master_seed"]),
                models=[ModelRecord(**m) for m in obj["models"]],
                tasks=[TaskRecord(**t) for t in obj["tasks"]],
                archs={k: list(v) for k, v in obj.get("archs", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"manifest: {exc}") from exc
        man.validate()
        return man


def load_manifest(path) -> ZooManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return ZooManifest.from_dict(obj)


# --------------------------------------------------------------------- build

def _merge(base: dict, override: dict | None) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def build_zoo(out_dir, master_seed: int = 0, scale: float = 1.0, config: dict | None = None,
              log=None) -> ZooManifest:
    """Build the mini zoo under ``out_dir`` and write ``manifest.json``.

    ``scale`` multiplies every training epoch budget (1.0 is the default
    zoo); ``config`` overrides entries of the bundled defaults.
    """
    if scale <= 0:
        raise ConfigError("scale must be > 0")
    cfg = _merge(default_zoo_config(), config)
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "data").mkdir(parents=True, exist_ok=True)
    say = log or (lambda msg: None)

    def epochs(n: int) -> int:
        return max(1, int(round(n * scale)))

    base = cfg["train"]
    manifest = ZooManifest(master_seed=int(master_seed), archs={})
    data: dict[str, Dataset] = {}
    query: dict[str, Dataset] = {}
    blob_kw = dict(clusters_per_class=cfg["clusters_per_class"], mean_scale=cfg["mean_scale"])
    spread = cfg["spread"]
    attacker = cfg["attacker"]
    for k, (task_id, t) in enumerate(cfg["tasks"].items()):
        # tasks naming the same domain draw their cluster centres from one generator
        gseed = derive_seed(master_seed, f"task:{t.get('domain', task_id)}")
        nc, d = t["num_classes"], t["d_in"]
        data[task_id] = synth_dataset(gseed, nc, d, t["n"], sample_seed=10 * k,
                                       spread=spread, **blob_kw)
        # the attacker's query pool shares the task's centres but not its samples
        query[task_id] = synth_dataset(gseed, nc, d, attacker["query_n"], sample_seed=10 * k + 2,
                                       spread=spread * attacker["query_spread"], **blob_kw)
        rel = f"data/{task_id}.csv"
        save_dataset(data[task_id], out / rel)
        manifest.tasks.append(TaskRecord(task_id, gseed, nc, d, t["n"], rel))

    def dims_for(arch: str, task_id: str) -> list[int]:
        return list(cfg["archs"][arch]) + [cfg["tasks"][task_id]["num_classes"]]

    def record(model: MlpModel, mid: str, role: str, arch: str, task_id: str, seed: int, **kw):
        model.meta.update({"id": mid, "role": role, "arch": arch, "task": task_id, "seed": str(seed)})
        if kw.get("lineage"):
            model.meta["lineage"] = kw["lineage"]
        if kw.get("technique"):
            model.meta["technique"] = kw["technique"]
        rel = f"models/{mid}.json"
        save_model(model, out / rel)
        acc = round(accuracy(model, data[task_id]), 6)
        manifest.models.append(ModelRecord(mid, rel, role, arch, task_id, seed, accuracy=acc, **kw))
        say(f"built {mid}")

    def train_cfg(seed: int, section: dict | None = None) -> TrainConfig:
        sec = section or {}
        lr = sec.get("learning_rate", base["learning_rate"] * sec.get("lr_factor", 1.0))
        return TrainConfig(epochs=epochs(sec.get("epochs", base["epochs"])), learning_rate=lr,
                           batch_size=sec.get("batch_size", base["batch_size"]), seed=seed,
                           l2=sec.get("l2", base["l2"]),
                           lr_schedule=sec.get("lr_schedule", base.get("lr_schedule", "constant")))

    archs = list(cfg["archs"])
    for arch in archs:
        manifest.archs[arch] = list(cfg["archs"][arch])
    vtask, ttask = cfg["victim_task"], cfg["transfer_task"]
    victims: dict[str, MlpModel] = {}
    for arch in archs:
        vid = f"{arch}.victim"
        seed = derive_seed(master_seed, vid)
        victims[arch] = train(data[vtask], dims_for(arch, vtask), train_cfg(seed))
        record(victims[arch], vid, "victim", arch, vtask, seed)

    for i, arch in enumerate(archs):
        victim = victims[arch]
        vid = f"{arch}.victim"
        other = archs[(i + 1) % len(archs)]
        own = data[vtask]

        def sur(tech: str, build, task_id=vtask, sarch=arch):
            sid = f"{arch}.{tech}"
            seed = derive_seed(master_seed, sid)
            record(build(seed), sid, "surrogate", sarch, task_id, seed, lineage=vid, technique=tech)

        for scope in ("last", "all"):
            sur(f"finetune-{scope}", lambda s, scope=scope: finetune(
                victim, own, scope, train_cfg(s, cfg["finetune"])))
        for scope in ("last", "all"):
            sur(f"retrain-{scope}", lambda s, scope=scope: retrain(
                victim, own, scope, train_cfg(s, cfg["retrain"])))
        for ratio in (0.3, 0.6):
            sur(f"prune-{ratio}", lambda s, ratio=ratio: prune(
                victim, own, ratio, train_cfg(s, cfg["prune"])))
        for mode in ("f16", "q8"):
            sur(f"quant-{mode}", lambda s, mode=mode: quantize(victim, mode))
        sur("transfer", lambda s: transfer(victim, data[ttask], train_cfg(s, cfg["transfer"])),
            task_id=ttask)
        c = cfg["distill"]
        sur("distill", lambda s: distill(
            victim, dims_for(other, vtask), query[vtask], c["temperature"], train_cfg(s, c)),
            sarch=other)
        sur("extract", lambda s: extract_steal(
            victim, dims_for(other, vtask), query[vtask].features, train_cfg(s, cfg["extract"])),
            sarch=other)

    per_group = int(cfg["references_per_group"])
    for arch in archs:
        for task_id in cfg["tasks"]:
            for j in range(per_group):
                rid = f"ref.{arch}.{task_id}.{j:02d}"
                seed = derive_seed(master_seed, rid)
                model = train(data[task_id], dims_for(arch, task_id), train_cfg(seed))
                record(model, rid, "reference", arch, task_id, seed,
                       fold=1 if j < per_group // 2 else 2)

    manifest.validate()
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest
