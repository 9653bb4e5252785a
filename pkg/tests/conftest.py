import sys
from pathlib import Path

import numpy as np
import pytest

from mergesearch import toylab
from mergesearch.fitness import BuiltinEvaluator
from mergesearch.tensorstore import CheckpointPool, TensorMap

HERE = Path(__file__).parent
STUB = HERE / "stub_evaluator.py"


def stub_command(*flags):
    return " ".join([sys.executable, str(STUB), *flags])


@pytest.fixture
def small_pool():
    rng = np.random.default_rng(7)
    ckpts = [
        TensorMap(f"c{i}", {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)})
        for i in range(4)
    ]
    return CheckpointPool.from_tensormaps(ckpts)


@pytest.fixture(scope="session")
def radial16():
    pool, suite = toylab.gen_radial_suite(toylab.GeneratorConfig(dim=2, n=16, tasks=2, seed=0))
    return pool, suite, BuiltinEvaluator(suite)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
