"""Zoo-wide evaluation: confusion counts, F1, alpha-ROC and sweeps.

Protocol: for every victim, its surrogates are the positive suspects and
the fold-2 references of the victim's architecture (all tasks) are the
negative suspects.  Decisions use the five fold-1 references of the
victim's architecture and task; when the suspect solves another task the
fold-1 references of the suspect's architecture and task are used instead.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detector import DecisionConfig, DetectionReport, decision_value, detect_batch
from .errors import ConfigError
from .model import Dataset, MlpModel, load_dataset, load_model
from .zoo import ZooManifest, load_manifest

__all__ = [
    "Case",
    "EvalSummary",
    "load_zoo",
    "plan_cases",
    "run_cases",
    "summarize",
    "evaluate",
    "rescore",
    "roc_points",
    "auc",
    "f1_score",
    "suite_size_sweep",
    "DEFAULT_ALPHAS",
]

NEGATIVE = "negative"

DEFAULT_ALPHAS = (
    [-1e6, -100.0, -10.0, -5.0, -2.0, -1.0, -0.5]
    + [round(a, 2) for a in np.arange(0.0, 10.0001, 0.25)]
    + [20.0, 50.0, 100.0, 1e6]
)


class Zoo:
    """Lazy loader for the models and datasets listed in a manifest."""

    def __init__(self, root, manifest: ZooManifest | None = None):
        self.root = Path(root)
        self.manifest = manifest or load_manifest(self.root)
        self._models: dict[str, MlpModel] = {}
        self._data: dict[str, Dataset] = {}

    def model(self, model_id: str) -> MlpModel:
        if model_id not in self._models:
            rec = self.manifest.get(model_id)
            self._models[model_id] = load_model(self.root / rec.path)
        return self._models[model_id]

    def data(self, task_id: str) -> Dataset:
        if task_id not in self._data:
            self._data[task_id] = load_dataset(self.root / self.manifest.task(task_id).path)
        return self._data[task_id]


def load_zoo(root) -> Zoo:
    return Zoo(root)


@dataclass
class Case:
    victim: str
    suspect: str
    references: list[str]
    positive: bool
    kind: str  # technique name or "negative"


def plan_cases(manifest: ZooManifest, n_refs: int = 5) -> list[Case]:
    cases = []
    for v in manifest.by_role("victim"):
        suspects = [m for m in manifest.models if m.role == "surrogate" and m.lineage == v.id]
        suspects += [m for m in manifest.models
                     if m.role == "reference" and m.fold == 2 and m.arch == v.arch]
        for s in suspects:
            if s.task == v.task:
                refs = manifest.references(v.arch, v.task, fold=1)
            else:
                refs = manifest.references(s.arch, s.task, fold=1)
            refs = refs[:n_refs]
            if len(refs) < 2:
                raise ConfigError(f"not enough fold-1 references for suspect {s.id}")
            positive = s.role == "surrogate"
            cases.append(Case(v.id, s.id, [r.id for r in refs], positive,
                              s.technique if positive else NEGATIVE))
    return cases


def run_cases(zoo: Zoo, cases: Sequence[Case], cfg: DecisionConfig) -> list[DetectionReport]:
    reports: list[DetectionReport] = []
    by_victim: dict[str, list[int]] = {}
    for i, c in enumerate(cases):
        by_victim.setdefault(c.victim, []).append(i)
    out: list[DetectionReport | None] = [None] * len(cases)
    for vid, idxs in by_victim.items():
        victim = zoo.model(vid)
        data = zoo.data(zoo.manifest.get(vid).task)
        suspects = [zoo.model(cases[i].suspect) for i in idxs]
        refs = [[zoo.model(r) for r in cases[i].references] for i in idxs]
        for i, rep in zip(idxs, detect_batch(victim, suspects, refs, data, cfg)):
            out[i] = rep
    reports = [r for r in out if r is not None]
    return reports


def f1_score(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, F1) with 0/0 read as 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _mean_std(values: Iterable[float]) -> list[float]:
    v = np.asarray(list(values), dtype=np.float64)
    return [float(v.mean()), float(v.std())] if v.size else [math.nan, math.nan]


@dataclass
class EvalSummary:
    mode: str
    config: dict
    rows: dict[str, dict]
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    cases: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        metrics = list(self.config["weights"])
        head = f"{'reuse type':<16}{'detected':>10}{'decision':>20}" + "".join(
            f"{'dist_' + m:>20}" for m in metrics)
        lines = [f"mode={self.mode} alpha={self.config['alpha']} n={self.config['suite_size']}",
                 head, "-" * len(head)]
        for kind, row in self.rows.items():
            cells = f"{kind:<16}{row['detected']:>5}/{row['total']:<4}"
            cells += f"{row['decision'][0]:>12.3f}±{row['decision'][1]:<7.3f}"
            for m in metrics:
                mu, sd = row["distances"][m]
                cells += f"{mu:>12.4f}±{sd:<7.4f}"
            lines.append(cells)
        lines.append("-" * len(head))
        lines.append(f"positive {self.tp}/{self.tp + self.fn}  negative {self.fp}/{self.fp + self.tn}  "
                     f"precision={self.precision:.4f} recall={self.recall:.4f} F1={self.f1:.4f}")
        return "\n".join(lines)


def summarize(cases: Sequence[Case], reports: Sequence[DetectionReport], cfg: DecisionConfig) -> EvalSummary:
    rows: dict[str, dict] = {}
    order = [c.kind for c in cases if c.positive] + [NEGATIVE]
    for kind in dict.fromkeys(order):
        picked = [(c, r) for c, r in zip(cases, reports) if c.kind == kind]
        if not picked:
            continue
        rows[kind] = {
            "detected": sum(r.verdict for _, r in picked),
            "total": len(picked),
            "decision": _mean_std(r.weighted_sum for _, r in picked),
            "distances": {m: _mean_std(r.metrics[m].suspect_distance for _, r in picked)
                          for m in cfg.weights},
            "decision_values": {m: _mean_std(r.metrics[m].decision_value for _, r in picked)
                                for m in cfg.weights},
        }
    tp = sum(r.verdict for c, r in zip(cases, reports) if c.positive)
    fn = sum(not r.verdict for c, r in zip(cases, reports) if c.positive)
    fp = sum(r.verdict for c, r in zip(cases, reports) if not c.positive)
    tn = sum(not r.verdict for c, r in zip(cases, reports) if not c.positive)
    p, rc, f = f1_score(tp, fp, fn)
    case_rows = [
        {"victim": c.victim, "suspect": c.suspect, "kind": c.kind, "positive": c.positive,
         "references": c.references, "verdict": r.verdict, "weighted_sum": r.weighted_sum,
         "distances": {m: r.metrics[m].suspect_distance for m in r.metrics},
         "hetero": r.hetero, "warnings": r.warnings}
        for c, r in zip(cases, reports)
    ]
    return EvalSummary(cfg.mode, cfg.to_dict(), rows, tp, fp, fn, tn, p, rc, f, case_rows)


def evaluate(zoo_dir, cfg: DecisionConfig) -> tuple[EvalSummary, list[Case], list[DetectionReport]]:
    zoo = Zoo(zoo_dir)
    cases = plan_cases(zoo.manifest)
    reports = run_cases(zoo, cases, cfg)
    return summarize(cases, reports, cfg), cases, reports


def rescore(report: DetectionReport, alpha: float, weights: dict[str, float]) -> bool:
    """Verdict for stored distances under another alpha."""
    total = 0.0
    for m, w in weights.items():
        res = report.metrics[m]
        total += w * decision_value(res.suspect_distance, res.reference_distances, alpha)
    return total > 0


def roc_points(cases: Sequence[Case], reports: Sequence[DetectionReport], alphas: Sequence[float],
               weights: dict[str, float]) -> list[tuple[float, float, float]]:
    """(alpha, tpr, fpr) for every alpha; distances are reused, not recomputed."""
    if len(alphas) < 2:
        raise ConfigError("ROC needs at least 2 alpha values")
    if not cases:
        raise ConfigError("empty zoo: no detection cases")
    pos = sum(c.positive for c in cases)
    neg = len(cases) - pos
    out = []
    for a in alphas:
        verdicts = [rescore(r, a, weights) for r in reports]
        tp = sum(v for c, v in zip(cases, verdicts) if c.positive)
        fp = sum(v for c, v in zip(cases, verdicts) if not c.positive)
        out.append((float(a), tp / pos if pos else 0.0, fp / neg if neg else 0.0))
    return out


def auc(points: Sequence[tuple[float, float, float]]) -> float:
    """Trapezoidal area under (fpr, tpr) points sorted by fpr, then tpr."""
    pts = sorted((fpr, tpr) for _, tpr, fpr in points)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def suite_size_sweep(zoo_dir, sizes: Sequence[int], cfg: DecisionConfig) -> list[tuple[int, str, float]]:
    zoo = Zoo(zoo_dir)
    cases = plan_cases(zoo.manifest)
    rows = []
    for n in sizes:
        c = replace(cfg, suite_size=int(n))
        summary = summarize(cases, run_cases(zoo, cases, c), c)
        rows.append((int(n), cfg.mode, summary.f1))
    return rows
