import time

import numpy as np
import pytest

from fibml.monitoring_data import build_features
from fibml.preprocess import log10p
from fibml.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def synthetic():
    """Default synthetic cluster: (samples, env, truth, X, y_ec)."""
    samples, env, truth = generate(SynthConfig())
    X = build_features(samples, env)
    return samples, env, truth, X, log10p(X.ec)


@pytest.fixture(scope="session")
def small_synthetic():
    """Three sites over three seasons, for quick end-to-end checks."""
    cfg = SynthConfig(n_sites=3, years=(2018, 2019, 2020), samples_per_season_per_site=6, seed=5)
    samples, env, truth = generate(cfg)
    X = build_features(samples, env)
    return samples, env, truth, X, log10p(X.ec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cb_cv_timed(synthetic):
    """10-fold CV of the cb-like preset on the default synthetic cluster, with its runtime."""
    from fibml.evaluation import kfold_cv
    from fibml.pipeline import Pipeline

    X, y = synthetic[3], synthetic[4]
    start = time.perf_counter()
    report = kfold_cv(Pipeline("cb-like"), X, y, k=10, seed=0)
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def cb_cv_report(cb_cv_timed):
    return cb_cv_timed[0]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
