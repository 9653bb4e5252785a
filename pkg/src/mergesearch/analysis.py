"""Tradeoff measurement, Pareto sets, solution structure and compute cost."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConstantSeries, LengthMismatch


@dataclass
class ScoreMatrix:
    labels: list
    tasks: list
    values: np.ndarray  # (checkpoints, tasks)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.labels), len(self.tasks)):
            raise ValueError("score matrix shape does not match labels x tasks")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("score matrix contains non-finite values")

    def column(self, task):
        return self.values[:, self.tasks.index(task)]

    def rows(self, tasks=None):
        """Per-checkpoint score dicts restricted to ``tasks``."""
        tasks = tasks or self.tasks
        cols = [self.tasks.index(t) for t in tasks]
        return [{t: float(row[c]) for t, c in zip(tasks, cols)} for row in self.values]


def load_score_csv(path, label_column=None):
    """Read a checkpoint x task CSV. Non-numeric columns are treated as labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not rows:
        raise ValueError(f"{path}: no rows")

    def numeric(col):
        try:
            [float(r[col]) for r in rows]
        except ValueError:
            return False
        return True

    label_column = label_column or fields[0]
    tasks = [f for f in fields if f != label_column and numeric(f)]
    labels = [r[label_column] for r in rows]
    values = [[float(r[t]) for t in tasks] for r in rows]
    return ScoreMatrix(labels, tasks, values)


def bundled_scores():
    """The 16-checkpoint x 7-task score table shipped with the package."""
    with resources.as_file(resources.files("mergesearch") / "data" / "checkpoint_scores.csv") as p:
        return load_score_csv(p, label_column="model_id")


def average_ranks(x):
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    """Spearman's rho: Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series lengths differ: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise LengthMismatch("need at least two observations")
    rx = average_ranks(x) - (len(x) + 1) / 2.0
    ry = average_ranks(y) - (len(y) + 1) / 2.0
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        raise ConstantSeries("spearman correlation is undefined for a constant series")
    rho = float(rx @ ry) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def correlation_matrix(m: ScoreMatrix):
    k = len(m.tasks)
    if m.values.shape[0] < 2:
        raise ValueError("need at least two checkpoints")
    out = np.eye(k)
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = spearman(m.values[:, a], m.values[:, b])
    return out


def dominates(p, q):
    return all(a >= b for a, b in zip(p, q)) and any(a > b for a, b in zip(p, q))


def pareto_front(points):
    """Indices of non-dominated points, ascending. Duplicates are all kept."""
    pts = [tuple(float(v) for v in p) for p in points]
    if not pts:
        raise ValueError("no points given")
    if len({len(p) for p in pts}) != 1:
        raise LengthMismatch("points have different arity")
    arr = np.array(pts)
    front = []
    for i, p in enumerate(arr):
        ge = np.all(arr >= p, axis=1)
        gt = np.any(arr > p, axis=1)
        if not np.any(ge & gt):
            front.append(i)
    return front


def sparsity(weights, epsilon=1e-3):
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    w = np.asarray(weights, dtype=np.float64)
    below = [int(i) for i in np.flatnonzero(w < epsilon)]
    return len(below), below


def centroid(vectors):
    arr = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not arr:
        raise ValueError("no vectors given")
    if len({a.shape for a in arr}) != 1:
        raise LengthMismatch("vectors have different lengths")
    return np.mean(np.stack(arr), axis=0)


@dataclass
class ProgressPoint:
    trial_id: int
    kind: str
    fitness: float
    running_best: float


def progress(trials):
    """Fitness and running best per trial, in log order."""
    trials = list(trials)
    if not trials:
        raise ValueError("search log has no trials")
    out = []
    best = -math.inf
    for t in trials:
        best = max(best, t.fitness)
        out.append(ProgressPoint(t.trial_id, t.kind, t.fitness, best))
    return out


@dataclass
class CostReport:
    train_flops: float
    train_flops_per_stage: dict
    inference_flops_per_task: dict
    search_flops: float
    ratio_search_to_train: float


def train_flops(params, batch, steps):
    return 6.0 * params * batch * steps


def inference_flops(params, samples):
    return 2.0 * params * samples


def flops_cost(params, sft, po, samples_per_task, budget, held_in=None):
    """FLOPs of SFT+PO training versus a merge search of ``budget`` evaluations.

    ``sft`` and ``po`` are ``(batch, steps)`` pairs; ``held_in`` defaults to
    every task in ``samples_per_task``.
    """
    values = [params, *sft, *po, budget, *samples_per_task.values()]
    if any(v <= 0 for v in values):
        raise ValueError("all cost inputs must be positive")
    stages = {"sft": train_flops(params, *sft), "po": train_flops(params, *po)}
    per_task = {t: inference_flops(params, n) for t, n in samples_per_task.items()}
    held_in = list(samples_per_task) if held_in is None else list(held_in)
    search = budget * math.fsum(per_task[t] for t in held_in)
    total = math.fsum(stages.values())
    return CostReport(total, stages, per_task, search, search / total)


# ----------------------------------------------------------------- CSV export


def _write_rows(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def write_correlation_csv(path, tasks, matrix):
    return _write_rows(path, ["task", *tasks], [[t, *map(repr, row)] for t, row in zip(tasks, np.asarray(matrix).tolist())])


def write_pareto_csv(path, labels, points, tasks, front):
    front = set(front)
    rows = [[lab, *map(repr, p), int(i in front)] for i, (lab, p) in enumerate(zip(labels, points))]
    return _write_rows(path, ["label", *tasks, "pareto"], rows)


def write_progress_csv(path, series):
    rows = [[p.trial_id, p.kind, repr(p.fitness), repr(p.running_best)] for p in series]
    return _write_rows(path, ["trial_id", "kind", "fitness", "running_best"], rows)


def write_sparsity_csv(path, solutions, labels, epsilon=1e-3):
    """One row per solution: fitness, count of weights below epsilon, then the weights."""
    rows = []
    for rank, (trial_id, fit, w) in enumerate(solutions, start=1):
        count, _ = sparsity(w, epsilon)
        rows.append([rank, trial_id, repr(fit), count, *map(repr, np.asarray(w).tolist())])
    return _write_rows(path, ["rank", "trial_id", "fitness", "below_epsilon", *labels], rows)


def write_subsets_csv(path, tasks, results):
    """``results`` holds ``(n, best_fitness, centroid, source)`` tuples."""
    rows = [[n, repr(best), *map(repr, np.asarray(c).tolist()), src] for n, best, c, src in results]
    return _write_rows(path, ["n", "best_fitness", *[f"centroid_{t}" for t in tasks], "log"], rows)
