"""Task scores, macro-average fitness, baseline weightings and evaluators."""
from __future__ import annotations

import json
import math
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .errors import EvaluatorCrashed, MissingTask, ProtocolError
from .tensorstore import TensorMap, write_checkpoint


def macro_average(scores, tasks, task_weights=None):
    """Mean of ``scores`` over ``tasks`` (optionally weighted per task)."""
    tasks = list(tasks)
    if not tasks:
        raise ValueError("at least one task is required")
    missing = [t for t in tasks if t not in scores]
    if missing:
        raise MissingTask(f"no score for task(s) {missing}")
    values = [float(scores[t]) for t in tasks]
    if task_weights is None:
        return math.fsum(values) / len(values)
    w = [float(task_weights.get(t, 0.0)) for t in tasks]
    if any(x < 0 for x in w) or math.fsum(w) <= 0:
        raise ValueError("task weights must be non-negative with a positive sum")
    return math.fsum(a * b for a, b in zip(w, values)) / math.fsum(w)


def baseline_uniform(n):
    if n < 1:
        raise ValueError("pool size must be >= 1")
    return np.full(n, 1.0 / n)


def _score_matrix(pool_scores, tasks):
    rows = []
    for i, s in enumerate(pool_scores):
        missing = [t for t in tasks if t not in s]
        if missing:
            raise MissingTask(f"checkpoint {i} has no score for {missing}")
        rows.append([float(s[t]) for t in tasks])
    return np.array(rows)


def per_task_best(pool_scores, tasks):
    """Index of the best checkpoint on each task (lowest index on ties)."""
    m = _score_matrix(pool_scores, tasks)
    return {t: int(np.argmax(m[:, k])) for k, t in enumerate(tasks)}


def baseline_merge_best(pool_scores, tasks):
    """Uniform weights over the deduplicated set of per-task argmax checkpoints."""
    best = per_task_best(pool_scores, tasks)
    chosen = sorted(set(best.values()))
    w = np.zeros(len(pool_scores))
    w[chosen] = 1.0 / len(chosen)
    return w


def best_single(pool_scores, tasks):
    fits = [macro_average(s, tasks) for s in pool_scores]
    idx = int(np.argmax(fits))
    return idx, fits[idx]


# ----------------------------------------------------------------- evaluators


def parse_evaluator_output(stdout, tasks):
    try:
        payload = json.loads(stdout)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"evaluator output is not JSON: {exc}") from None
    if not isinstance(payload, dict) or not isinstance(payload.get("scores"), dict):
        raise ProtocolError('evaluator output must be an object with a "scores" map')
    scores = {}
    for name, value in payload["scores"].items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError(f"score for {name!r} is not a number: {value!r}")
        if not math.isfinite(value):
            raise ProtocolError(f"score for {name!r} is not finite")
        scores[name] = float(value)
    missing = [t for t in tasks if t not in scores]
    if missing:
        raise MissingTask(f"evaluator returned no score for {missing}")
    return {t: scores[t] for t in tasks}


def run_evaluator(ckpt_path, command, tasks, timeout=None):
    """Invoke an external evaluator; returns ``(scores, stderr)``."""
    tasks = list(tasks)
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    argv += ["--checkpoint", str(ckpt_path), "--tasks", ",".join(tasks)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise EvaluatorCrashed(f"evaluator timed out after {timeout}s", stderr=exc.stderr or "") from None
    except OSError as exc:
        raise EvaluatorCrashed(f"could not start evaluator: {exc}") from None
    if proc.returncode != 0:
        raise EvaluatorCrashed(
            f"evaluator exited with status {proc.returncode}",
            returncode=proc.returncode,
            stderr=proc.stderr,
        )
    return parse_evaluator_output(proc.stdout, tasks), proc.stderr


def evaluate_external(ckpt_path, command, tasks, timeout=None):
    return run_evaluator(ckpt_path, command, tasks, timeout)[0]


class ExternalEvaluator:
    """Writes each candidate to a scratch MRGC file and runs ``command`` on it."""

    def __init__(self, command, timeout=None, workdir=None):
        self.command = command
        self.timeout = timeout
        self.workdir = workdir

    def describe(self):
        return {"type": "external", "command": self.command}

    def evaluate(self, ckpt: TensorMap, tasks):
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            path = Path(tmp) / "candidate.mrgc"
            write_checkpoint(path, ckpt)
            return run_evaluator(path, self.command, tasks, self.timeout)


class BuiltinEvaluator:
    """In-process scoring against a toy task suite."""

    def __init__(self, suite, source=None):
        self.suite = suite
        self.source = source

    def describe(self):
        return {"type": "builtin", "suite": str(self.source) if self.source else None}

    def evaluate(self, ckpt: TensorMap, tasks):
        return self.suite.evaluate(ckpt, tasks), ""
