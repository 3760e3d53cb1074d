"""End-to-end acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed in the
"acceptance criteria" section at the end of the pytest run.
"""
import filecmp
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from nfard.align import fit_projection, hetero_align
from nfard.cli import main
from nfard.detector import DecisionConfig, select_test_suite
from nfard.evaluation import DEFAULT_ALPHAS, auc, roc_points, suite_size_sweep
from nfard.linalg import pseudoinverse
from nfard.metrics import dist_ac, dist_eu, extract_neuron_matrix
from nfard.model import init_model, loss_and_grads, softmax

from oracles import normal_equations_lstsq

TESTS = Path(__file__).parent
HOMOGENEOUS = ("finetune-last", "finetune-all", "retrain-last", "retrain-all",
               "prune-0.3", "prune-0.6", "quant-f16", "quant-q8")
WEIGHTS = {"eu": 1.0, "ac": 120.0}


def test_criterion_01_projection_optimality(record_criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_oracle, violations = 0.0, 0
    for _ in range(100):
        h1, h2 = rng.normal(size=(200, 8)), rng.normal(size=(200, 3))
        proj = fit_projection(h1, h2)
        oracle = np.linalg.norm(h1 @ normal_equations_lstsq(h1, h2) - h2)
        worst_oracle = max(worst_oracle, abs(proj.residual - oracle))
        # half the candidates are unrelated maps, half perturb the optimum
        cands = np.concatenate([rng.normal(size=(500, 3, 8)),
                                proj.P + rng.normal(scale=0.05, size=(500, 3, 8))])
        res = np.linalg.norm(h1 @ cands.transpose(0, 2, 1) - h2, axis=(1, 2))
        violations += int(np.sum(res < proj.residual))
    elapsed = time.perf_counter() - t0
    ok = worst_oracle <= 1e-8 and violations == 0 and elapsed < 10.0
    record_criterion(1, ok, f"max |residual - oracle| = {worst_oracle:.2e}, "
                            f"beaten by {violations}/100000 candidates, {elapsed:.2f}s")
    assert ok


def _random_matrix(rng):
    rows, cols = rng.integers(1, 11, size=2)
    rank = int(rng.integers(0, min(rows, cols) + 1))
    u = np.linalg.qr(rng.normal(size=(rows, rows)))[0][:, :rank]
    v = np.linalg.qr(rng.normal(size=(cols, cols)))[0][:, :rank]
    return (u * rng.uniform(0.5, 5.0, size=rank)) @ v.T, rank


def test_criterion_02_moore_penrose_axioms(record_criterion):
    rng = np.random.default_rng(7)
    worst, deficient = 0.0, 0
    for _ in range(100):
        a, rank = _random_matrix(rng)
        deficient += rank < min(a.shape)
        x = pseudoinverse(a)
        errs = (a @ x @ a - a, x @ a @ x - x, (a @ x).T - a @ x, (x @ a).T - x @ a)
        worst = max(worst, max(float(np.abs(e).max()) for e in errs))
    ok = worst <= 1e-8 and deficient > 0
    record_criterion(2, ok, f"max axiom violation {worst:.2e} over 100 matrices ({deficient} rank-deficient)")
    assert ok


def test_criterion_03_gradient_check(record_criterion):
    rng = np.random.default_rng(3)
    model = init_model([5, 7, 6, 4], seed=11)
    model.biases = [rng.normal(scale=0.1, size=b.shape) for b in model.biases]
    x = rng.normal(size=(10, 5))
    t = softmax(rng.normal(size=(10, 4)))
    _, gw, gb = loss_and_grads(model, x, t, 1.0, 0.0)
    h, worst = 1e-6, 0.0
    for params, grads in ((model.weights, gw), (model.biases, gb)):
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_and_grads(model, x, t, 1.0, 0.0)[0]
                p[idx] = old - h
                down = loss_and_grads(model, x, t, 1.0, 0.0)[0]
                p[idx] = old
                num = (up - down) / (2 * h)
                denom = max(abs(num), abs(g[idx]))
                # parameters with (near) zero gradient, e.g. dead ReLU units
                rel = abs(num - g[idx]) / denom if denom > 1e-7 else abs(num - g[idx])
                worst = max(worst, rel)
    count = sum(p.size for p in model.weights + model.biases)
    ok = worst < 1e-4
    record_criterion(3, ok, f"max relative error {worst:.2e} over {count} parameters")
    assert ok


def _suite(zoo, victim_id):
    victim = zoo.model(victim_id)
    data = zoo.data(zoo.manifest.get(victim_id).task)
    return victim, data.features[select_test_suite(victim, data, 1000)]


def _last(model, x):
    return extract_neuron_matrix(model, x, model.num_layers)


def test_criterion_04_reuse_proximity(record_criterion, zoo, zoo_build):
    t0 = time.perf_counter()
    man = zoo.manifest
    failures, margins = [], []
    for v in man.by_role("victim"):
        victim, x = _suite(zoo, v.id)
        hv = _last(victim, x)
        refs = [_last(zoo.model(r.id), x) for r in man.references(v.arch, v.task)]
        for metric in (dist_eu, dist_ac):
            ref_min = min(metric(hv, hr) for hr in refs)
            for tech in HOMOGENEOUS:
                d = metric(hv, _last(zoo.model(f"{v.arch}.{tech}"), x))
                margins.append(d / ref_min)
                if not d < ref_min:
                    failures.append(f"{v.arch}.{tech}/{metric.__name__}")
    total = zoo_build[2] + time.perf_counter() - t0
    ok = not failures and total < 600
    record_criterion(4, ok, f"{len(margins) - len(failures)}/{len(margins)} below reference minimum "
                            f"(worst ratio {max(margins):.3f}), build+check {total:.0f}s"
                            + (f"; failing {failures}" if failures else ""))
    assert ok


def test_criterion_05_heterogeneous_separation(record_criterion, zoo):
    man = zoo.manifest
    ratios = {}
    for v in man.by_role("victim"):
        victim, x = _suite(zoo, v.id)
        hv = extract_neuron_matrix(victim, x, victim.num_layers - 1)
        for tech in ("transfer", "distill", "extract"):
            rec = man.get(f"{v.arch}.{tech}")
            sur = zoo.model(rec.id)
            x_sur = dist_eu(*hetero_align(hv, extract_neuron_matrix(sur, x, sur.num_layers - 1)))
            group = (v.arch, v.task) if rec.task == v.task else (rec.arch, rec.task)
            ys = []
            for r in man.references(*group, fold=1):
                ref = zoo.model(r.id)
                ys.append(dist_eu(*hetero_align(hv, extract_neuron_matrix(ref, x, ref.num_layers - 1))))
            ratios[rec.id] = min(ys) / x_sur
    ok = all(r >= 10.0 for r in ratios.values())
    detail = ", ".join(f"{k} {r:.1f}x" for k, r in ratios.items())
    record_criterion(5, ok, f"reference/surrogate aligned dist_eu ratios (need >= 10): {detail}")
    assert ok


def test_criterion_06_detection_quality(record_criterion, evaluations):
    white, black = evaluations("whitebox")[0], evaluations("blackbox")[0]
    ok = white.f1 >= 0.95 and white.fp == 0 and black.f1 >= 0.85
    record_criterion(6, ok, f"white-box F1 {white.f1:.3f} (FP {white.fp}), "
                            f"black-box F1 {black.f1:.3f} (FP {black.fp}, FN {black.fn})")
    assert ok


def test_criterion_07_log_ablation(record_criterion, evaluations):
    with_log = evaluations("blackbox")[0].f1
    without = evaluations("blackbox", use_log=False)[0].f1
    ok = without < with_log
    record_criterion(7, ok, f"black-box F1 without log {without:.3f} vs with log {with_log:.3f}")
    assert ok


def test_criterion_08_roc(record_criterion, evaluations):
    parts, ok = [], True
    for mode in ("whitebox", "blackbox"):
        _, cases, reports = evaluations(mode)
        pts = roc_points(cases, reports, DEFAULT_ALPHAS, WEIGHTS)
        area = auc(pts)
        ends = pts[0][1:] == (1.0, 1.0) and pts[-1][1:] == (0.0, 0.0)
        ok = ok and area >= 0.95 and ends
        parts.append(f"{mode} AUC {area:.4f} endpoints {'ok' if ends else 'missed'}")
    record_criterion(8, ok, ", ".join(parts))
    assert ok


def test_criterion_09_suite_size(record_criterion, zoo_dir):
    sizes = [100, 200, 400, 600, 800, 1000]
    white = {n: f for n, _, f in suite_size_sweep(zoo_dir, sizes, DecisionConfig(mode="whitebox"))}
    black = {n: f for n, _, f in suite_size_sweep(zoo_dir, sizes, DecisionConfig(mode="blackbox"))}
    ok = white[100] == max(white.values()) and black[1000] >= black[100]
    fmt = lambda d: " ".join(f"{n}:{f:.3f}" for n, f in d.items())
    record_criterion(9, ok, f"white-box [{fmt(white)}], black-box [{fmt(black)}]")
    assert ok


def _run_outputs(zoo_dir: Path, out: Path) -> list[Path]:
    out.mkdir()
    files = []
    for mode in ("white", "black"):
        js, csv = out / f"eval-{mode}.json", out / f"roc-{mode}.csv"
        assert main(["evaluate", str(zoo_dir), "--mode", mode, "--json", str(js)]) == 0
        assert main(["roc", str(zoo_dir), "--mode", mode, "--out", str(csv)]) == 0
        files += [js, csv]
    return files


def test_criterion_10_determinism(record_criterion, zoo_dir, tmp_path, capsys):
    second = tmp_path / "zoo"
    assert main(["zoo-build", str(second), "--seed", "0", "--quiet"]) == 0
    names = ["manifest.json"] + [f"data/{p.name}" for p in (zoo_dir / "data").iterdir()] \
        + [f"models/{p.name}" for p in (zoo_dir / "models").iterdir()]
    _, mismatch, errors = filecmp.cmpfiles(zoo_dir, second, names, shallow=False)
    first_out = _run_outputs(zoo_dir, tmp_path / "run1")
    second_out = _run_outputs(second, tmp_path / "run2")
    differ = [a.name for a, b in zip(first_out, second_out) if a.read_bytes() != b.read_bytes()]
    capsys.readouterr()
    ok = not mismatch and not errors and not differ
    record_criterion(10, ok, f"{len(names)} zoo files and {len(first_out)} evaluate/roc outputs compared, "
                             f"{len(mismatch) + len(errors) + len(differ)} differ")
    assert ok


def test_criterion_11_invariant_suites(record_criterion):
    files = [str(TESTS / f) for f in ("test_linalg.py", "test_model.py", "test_metrics.py", "test_align.py",
                                      "test_detector.py", "test_zoo.py", "test_evaluation.py")]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-m", "invariant", "-p", "no:cacheprovider",
                           *files], capture_output=True, text=True, cwd=TESTS.parent)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    ok = proc.returncode == 0 and " passed" in summary and "failed" not in summary
    record_criterion(11, ok, f"invariant property tests: {summary}")
    assert ok, proc.stdout[-3000:]
