import time

import numpy as np
import pytest

from nfard.detector import DecisionConfig
from nfard.evaluation import Zoo, evaluate
from nfard.model import Dataset, TrainConfig, init_model
from nfard.zoo import build_zoo

# acceptance criteria report: number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    def record(num: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


@pytest.fixture(scope="session")
def zoo_build(tmp_path_factory):
    """The default mini zoo (master seed 0), built once per session."""
    out = tmp_path_factory.mktemp("zoo")
    t0 = time.perf_counter()
    manifest = build_zoo(out, master_seed=0)
    return out, manifest, time.perf_counter() - t0


@pytest.fixture(scope="session")
def zoo_dir(zoo_build):
    return zoo_build[0]


@pytest.fixture(scope="session")
def zoo(zoo_dir):
    return Zoo(zoo_dir)


@pytest.fixture(scope="session")
def evaluations(zoo_dir):
    """Lazily computed evaluate() results keyed by (mode, use_log, suite_size)."""
    cache = {}

    def get(mode: str, use_log: bool = True, suite_size: int = 1000):
        key = (mode, use_log, suite_size)
        if key not in cache:
            cfg = DecisionConfig(mode=mode, use_log=use_log, suite_size=suite_size)
            cache[key] = evaluate(zoo_dir, cfg)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def tiny_task():
    """Small separable 3-class problem for fast training tests."""
    rng = np.random.default_rng(123)
    centres = rng.normal(0, 3.0, size=(3, 4))
    labels = np.arange(150) % 3
    x = centres[labels] + rng.normal(size=(150, 4))
    return Dataset(x, labels, 3)


@pytest.fixture(scope="session")
def tiny_model():
    return init_model([4, 6, 5, 3], seed=3)


@pytest.fixture(scope="session")
def fast_cfg():
    return TrainConfig(epochs=20, learning_rate=0.05, batch_size=16, seed=1)
