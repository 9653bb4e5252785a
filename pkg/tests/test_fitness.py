import math

import numpy as np
import pytest
from conftest import stub_command

from mergesearch.errors import EvaluatorCrashed, MissingTask, ProtocolError
from mergesearch.fitness import (
    BuiltinEvaluator,
    ExternalEvaluator,
    baseline_merge_best,
    baseline_uniform,
    best_single,
    evaluate_external,
    macro_average,
    parse_evaluator_output,
    per_task_best,
    run_evaluator,
)
from mergesearch.tensorstore import TensorMap, write_checkpoint


def test_macro_average_by_hand():
    assert macro_average({"a": 63.0, "b": 73.0}, ["a", "b"]) == 68.0
    assert macro_average({"a": 1.0, "b": 2.0, "c": 99.0}, ["a", "b"]) == 1.5
    assert macro_average({"a": 1.0, "b": 4.0}, ["a", "b"], {"a": 3.0, "b": 1.0}) == 1.75


def test_macro_average_exactly_rounded():
    # naive left-to-right summation gives 0.0 here
    scores = {"a": 1e16, "b": 1.0, "c": -1e16, "d": 1.0}
    assert macro_average(scores, list(scores)) == 0.5


def test_macro_average_errors():
    with pytest.raises(MissingTask):
        macro_average({"a": 1.0}, ["a", "b"])
    with pytest.raises(ValueError):
        macro_average({"a": 1.0}, [])
    with pytest.raises(ValueError):
        macro_average({"a": 1.0}, ["a"], {"a": -1.0})


SCORES = [
    {"x": 50.0, "y": 10.0},
    {"x": 10.0, "y": 60.0},
    {"x": 50.0, "y": 20.0},
    {"x": 30.0, "y": 30.0},
]


def test_baselines():
    assert baseline_uniform(4).tolist() == [0.25] * 4
    assert per_task_best(SCORES, ["x", "y"]) == {"x": 0, "y": 1}
    assert baseline_merge_best(SCORES, ["x", "y"]).tolist() == [0.5, 0.5, 0.0, 0.0]
    assert baseline_merge_best(SCORES, ["x"]).tolist() == [1.0, 0.0, 0.0, 0.0]
    assert best_single(SCORES, ["x", "y"]) == (1, 35.0)  # tie with index 2
    with pytest.raises(ValueError):
        baseline_uniform(0)


def test_merge_best_deduplicates():
    scores = [{"x": 9.0, "y": 9.0}, {"x": 1.0, "y": 1.0}]
    assert baseline_merge_best(scores, ["x", "y"]).tolist() == [1.0, 0.0]


@pytest.mark.parametrize("text, err", [
    ("nope", ProtocolError),
    ('{"score": {}}', ProtocolError),
    ('{"scores": {"a": "1"}}', ProtocolError),
    ('{"scores": {"a": true}}', ProtocolError),
    ('{"scores": {"a": NaN}}', ProtocolError),
    ('{"scores": {"b": 1}}', MissingTask),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_evaluator_output(text, ["a"])


def test_parse_ignores_extra_tasks():
    assert parse_evaluator_output('{"scores": {"a": 2, "z": 3}}', ["a"]) == {"a": 2.0}


@pytest.fixture
def ckpt_file(tmp_path):
    p = tmp_path / "c.mrgc"
    write_checkpoint(p, TensorMap("c", {"w": [1.0, 2.0, 0.5]}))
    return p


def test_run_evaluator_round_trip(ckpt_file):
    scores, stderr = run_evaluator(ckpt_file, stub_command(), ["t1", "t2"])
    assert scores == {"t1": 3.5, "t2": 7.0}
    assert "stub evaluating" in stderr
    assert evaluate_external(ckpt_file, stub_command(), ["t1"]) == {"t1": 3.5}


@pytest.mark.parametrize("flags, err", [
    (["--fail"], EvaluatorCrashed),
    (["--garbage"], ProtocolError),
    (["--drop", "t2"], MissingTask),
])
def test_run_evaluator_failures(ckpt_file, flags, err):
    with pytest.raises(err):
        run_evaluator(ckpt_file, stub_command(*flags), ["t1", "t2"])


def test_crash_carries_stderr(ckpt_file):
    with pytest.raises(EvaluatorCrashed) as info:
        run_evaluator(ckpt_file, stub_command("--fail"), ["t1"])
    assert info.value.returncode == 1 and "boom" in info.value.stderr


def test_timeout_and_missing_binary(ckpt_file):
    with pytest.raises(EvaluatorCrashed):
        run_evaluator(ckpt_file, stub_command("--sleep", "5"), ["t1"], timeout=0.3)
    with pytest.raises(EvaluatorCrashed):
        run_evaluator(ckpt_file, "/nonexistent/evaluator", ["t1"])


def test_external_evaluator_object():
    ev = ExternalEvaluator(stub_command())
    scores, _ = ev.evaluate(TensorMap("m", {"w": [0.25, 0.25]}), ["a", "b", "c"])
    assert scores == {"a": 0.5, "b": 1.0, "c": 1.5}
    assert ev.describe()["type"] == "external"


def test_builtin_evaluator(radial16):
    pool, suite, ev = radial16
    scores, stderr = ev.evaluate(pool.load(0), suite.names)
    w = np.asarray(pool.load(0)["w"], np.float64)
    expected = 100.0 / (1.0 + math.fsum((w - np.array([1.0, 0.0])) ** 2))
    assert scores["task1"] == pytest.approx(expected, rel=1e-14)
    assert stderr == ""
