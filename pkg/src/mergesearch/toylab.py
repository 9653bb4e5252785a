"""Desk-scale checkpoint pools with real task tradeoffs, and a brute-force oracle.

Two generators are provided:

``radial``
    Task t has a center on coordinate axis t; a parameter vector scores
    ``100 / (1 + |w - center|^2)``. Checkpoints sit near one center (round
    robin) or near the midpoint of two centers.
``ridge``
    Task t is a linear regression problem with its own coefficients; each
    checkpoint is the closed-form ridge solution on a mixture of the task
    training sets, and scores ``100 / (1 + eval MSE)``.

Every generated pool is certified to contain a tradeoff: the most negative
Spearman correlation between two task-score columns is at most
``GeneratorConfig.max_spearman``. With two tasks that is the only pair.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .analysis import spearman
from .errors import ConstantSeries, PoolTooLarge, TradeoffNotCertified
from .tensorstore import CheckpointPool, TensorMap

TENSOR = "w"


@dataclass
class GeneratorConfig:
    dim: int
    n: int
    tasks: int
    noise: float = 0.15
    seed: int = 0
    ridge_lambda: float = 1e-3
    n_train: int = 64
    n_eval: int = 64
    max_spearman: float = -0.3
    max_retries: int = 100

    def validate(self):
        if self.dim < 1 or self.n < 2 or self.tasks < 2 or self.noise < 0:
            raise ValueError(f"invalid generator config: {self}")
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")


@dataclass
class ToyTask:
    name: str
    kind: str  # "radial" | "ridge"
    center: np.ndarray | None = None
    X: np.ndarray | None = None
    y: np.ndarray | None = None
    coef: np.ndarray | None = None

    def score_batch(self, points):
        """Scores for an (G, d) array of parameter vectors."""
        pts = np.asarray(points, dtype=np.float64)
        if self.kind == "radial":
            diff = pts - self.center
            return 100.0 / (1.0 + np.einsum("gd,gd->g", diff, diff))
        resid = pts @ self.X.T - self.y
        return 100.0 / (1.0 + np.mean(resid * resid, axis=1))

    def to_json(self):
        out = {"name": self.name, "kind": self.kind}
        for key in ("center", "X", "y", "coef"):
            value = getattr(self, key)
            if value is not None:
                out[key] = np.asarray(value).tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        arrays = {k: np.asarray(obj[k], dtype=np.float64) for k in ("center", "X", "y", "coef") if k in obj}
        return cls(obj["name"], obj["kind"], **arrays)


@dataclass
class ToyTaskSuite:
    tasks: list
    dim: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValueError("task names must be unique")

    @property
    def names(self):
        return [t.name for t in self.tasks]

    def task(self, name):
        for t in self.tasks:
            if t.name == name:
                return t
        from .errors import MissingTask

        raise MissingTask(f"suite has no task {name!r}")

    def score_batch(self, points, tasks):
        return {name: self.task(name).score_batch(points) for name in tasks}

    def evaluate(self, ckpt: TensorMap, tasks):
        w = np.asarray(ckpt[TENSOR], dtype=np.float64).reshape(1, -1)
        return {name: float(self.task(name).score_batch(w)[0]) for name in tasks}

    def to_json(self):
        return {"dim": self.dim, "meta": self.meta, "tasks": [t.to_json() for t in self.tasks]}

    @classmethod
    def from_json(cls, obj):
        return cls([ToyTask.from_json(t) for t in obj["tasks"]], obj["dim"], obj.get("meta", {}))


def save_suite(path, suite):
    path = Path(path)
    if path.is_dir():
        path = path / "suite.json"
    path.write_text(json.dumps(suite.to_json()))
    return path


def load_suite(path):
    path = Path(path)
    if path.is_dir():
        path = path / "suite.json"
    return ToyTaskSuite.from_json(json.loads(path.read_text()))


def pool_scores(pool, suite, tasks):
    return [suite.evaluate(pool.load(i), tasks) for i in range(len(pool))]


def pairwise_spearman(pool_score_rows, tasks):
    """Spearman correlation for every task pair; NaN where a column is constant."""
    out = {}
    for a, b in itertools.combinations(tasks, 2):
        try:
            out[a, b] = spearman([s[a] for s in pool_score_rows], [s[b] for s in pool_score_rows])
        except ConstantSeries:
            out[a, b] = math.nan
    return out


def tradeoff(pool_score_rows, tasks):
    """Most negative pairwise Spearman correlation (+inf when none is defined)."""
    rhos = [r for r in pairwise_spearman(pool_score_rows, tasks).values() if not math.isnan(r)]
    return min(rhos) if rhos else math.inf


def _task_names(t):
    return [f"task{k + 1}" for k in range(t)]


def _certify(cfg, draw):
    """Call ``draw()`` until the pool shows a tradeoff on at least one task pair."""
    for attempt in range(cfg.max_retries):
        ckpts, suite = draw()
        rows = [suite.evaluate(c, suite.names) for c in ckpts]
        rho = tradeoff(rows, suite.names)
        if rho <= cfg.max_spearman:
            suite.meta.update(config=asdict(cfg), attempts=attempt + 1, min_pairwise_spearman=rho)
            return CheckpointPool.from_tensormaps(ckpts), suite
    raise TradeoffNotCertified(
        f"no draw reached a pairwise Spearman <= {cfg.max_spearman} in {cfg.max_retries} attempts"
    )


def gen_radial_suite(cfg: GeneratorConfig):
    cfg.validate()
    if cfg.tasks > cfg.dim:
        raise ValueError("radial suites need dim >= tasks (centers lie on coordinate axes)")
    rng = np.random.default_rng(cfg.seed)
    names = _task_names(cfg.tasks)
    centers = [np.eye(cfg.dim)[t] * 1.0 for t in range(cfg.tasks)]
    suite_tasks = [ToyTask(n, "radial", center=c) for n, c in zip(names, centers)]
    pairs = list(itertools.combinations(range(cfg.tasks), 2))
    n_mid = min(len(pairs), cfg.n // 4)

    def draw():
        anchors = [centers[i % cfg.tasks] for i in range(cfg.n - n_mid)]
        anchors += [(centers[a] + centers[b]) / 2 for a, b in pairs[:n_mid]]
        ckpts = []
        for i, anchor in enumerate(anchors):
            w = anchor + cfg.noise * rng.standard_normal(cfg.dim)
            ckpts.append(TensorMap(f"radial{i + 1:02d}", {TENSOR: w}))
        return ckpts, ToyTaskSuite(list(suite_tasks), cfg.dim, {"kind": "radial"})

    return _certify(cfg, draw)


def fit_ridge(train_sets, proportions, lam):
    """Ridge solution on a weighted mixture of per-task (X, y) training sets."""
    if lam <= 0:
        raise ValueError("ridge lambda must be > 0")
    d = train_sets[0][0].shape[1]
    a = lam * np.eye(d)
    b = np.zeros(d)
    for (x, y), p in zip(train_sets, proportions):
        if p == 0:
            continue
        a += p * (x.T @ x) / len(x)
        b += p * (x.T @ y) / len(x)
    return np.linalg.solve(a, b)


def gen_ridge_suite(cfg: GeneratorConfig, concentration=0.3):
    cfg.validate()
    if cfg.tasks > cfg.dim:
        raise ValueError("ridge suites need dim >= tasks (orthogonal coefficients)")
    rng = np.random.default_rng(cfg.seed)
    names = _task_names(cfg.tasks)
    q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, cfg.dim)))
    coefs = [2.0 * q[:, t] for t in range(cfg.tasks)]

    def dataset(coef, n):
        x = rng.standard_normal((n, cfg.dim))
        return x, x @ coef + cfg.noise * rng.standard_normal(n)

    train = [dataset(c, cfg.n_train) for c in coefs]
    evals = [dataset(c, cfg.n_eval) for c in coefs]
    suite_tasks = [ToyTask(n, "ridge", X=x, y=y, coef=c) for n, (x, y), c in zip(names, evals, coefs)]

    def draw():
        ckpts = []
        mixes = []
        for i in range(cfg.n):
            p = rng.dirichlet(np.full(cfg.tasks, concentration))
            mixes.append(p.tolist())
            w = fit_ridge(train, p, cfg.ridge_lambda)
            ckpts.append(TensorMap(f"ridge{i + 1:02d}", {TENSOR: w}))
        suite = ToyTaskSuite(list(suite_tasks), cfg.dim, {"kind": "ridge", "mixtures": mixes})
        return ckpts, suite

    pool, suite = _certify(cfg, draw)
    suite.train = train
    return pool, suite


def simplex_grid(n, steps):
    """All weight vectors with entries in {0, 1/steps, ..., 1}, lexicographic order."""
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        i = np.arange(steps + 1)
        return np.stack([i, steps - i], axis=1) / steps
    if n == 3:
        rows = [(i, j, steps - i - j) for i in range(steps + 1) for j in range(steps - i + 1)]
        return np.array(rows, dtype=np.float64) / steps
    raise PoolTooLarge(f"grid oracle supports at most 3 checkpoints, got {n}")


def grid_oracle(pool: CheckpointPool, suite: ToyTaskSuite, tasks, h, chunk=8192):
    """Exhaustive search over the simplex grid with spacing ``h``.

    Returns ``(weights, fitness)`` of the best grid point; ties go to the
    lexicographically smallest weight vector.
    """
    n = len(pool)
    if n > 3:
        raise PoolTooLarge(f"grid oracle supports at most 3 checkpoints, got {n}")
    if not 0 < h <= 0.5:
        raise ValueError("h must lie in (0, 0.5]")
    steps = int(round(1.0 / h))
    if abs(steps * h - 1.0) > 1e-9:
        raise ValueError(f"1/h must be an integer, got h={h}")
    if pool.tensor_names() != [TENSOR]:
        raise ValueError(f"grid oracle expects single-tensor pools ({TENSOR!r})")
    grid = simplex_grid(n, steps)
    thetas = np.stack([np.asarray(pool.load_tensor(i, TENSOR), np.float32).reshape(-1) for i in range(n)])
    best_f, best_w = -math.inf, None
    for start in range(0, len(grid), chunk):
        w = grid[start:start + chunk]
        points = kernels.batch_merge(w, thetas)
        per_task = suite.score_batch(points, tasks)
        # same fsum-then-divide arithmetic as macro_average
        cols = [per_task[t].tolist() for t in tasks]
        fit = np.array([math.fsum(v) / len(tasks) for v in zip(*cols)])
        k = int(np.argmax(fit))
        if fit[k] > best_f:
            best_f, best_w = float(fit[k]), w[k].copy()
    return best_w, best_f
