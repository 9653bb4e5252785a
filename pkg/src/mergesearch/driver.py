"""The recycle loop: warm start, propose, normalize, merge, evaluate, tell.

A run is fully determined by (config, pool, evaluator scores). Every trial is
appended to a JSON-lines log as soon as it is known, so an interrupted run
can be resumed by replaying the log through the optimizer.
"""
from __future__ import annotations

import json
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import centroid
from .cmaes import CMAES
from .errors import (
    ConfigMismatch,
    CorruptLog,
    DegenerateWeights,
    EvaluatorError,
    MissingTask,
    PoolInvalid,
)
from .fitness import baseline_merge_best, baseline_uniform, best_single, macro_average
from .merger import merge, normalize
from .tensorstore import CheckpointPool, validate_pool

log = logging.getLogger(__name__)

SEEDED, SAMPLED, BASELINE = "seeded", "sampled", "baseline"


@dataclass
class SearchConfig:
    tasks: list
    budget: int = 50
    sigma0: float = 1.0
    popsize: int | None = None
    seed: int = 0
    heldout_tasks: list = field(default_factory=list)
    warm_start: bool = True
    on_eval_error: str = "abort"  # or "penalize"
    top_n: int | None = None
    epsilon_cache: float = 1e-9
    workers: int = 1

    def validate(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        if not self.tasks:
            raise ValueError("at least one held-in task is required")
        if self.on_eval_error not in ("abort", "penalize"):
            raise ValueError("on_eval_error must be 'abort' or 'penalize'")
        overlap = set(self.tasks) & set(self.heldout_tasks)
        if overlap:
            raise ValueError(f"tasks {sorted(overlap)} are both held-in and held-out")


@dataclass
class TrialRecord:
    trial_id: int
    kind: str
    label: str
    raw: list
    weights: list
    scores: dict
    fitness: float
    generation: int
    degenerate: bool = False
    cache_hit: bool = False
    penalized: bool = False
    wall_time: float = 0.0
    evaluator_stderr: str = ""

    def to_json(self):
        return {"type": "trial", **asdict(self)}

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj.pop("type", None)
        return cls(**obj)


@dataclass
class SearchLog:
    config: dict
    trials: list = field(default_factory=list)
    summary: dict | None = None

    @property
    def complete(self):
        return self.summary is not None

    def sampled(self):
        return [t for t in self.trials if t.kind == SAMPLED]

    def seeded(self):
        return [t for t in self.trials if t.kind == SEEDED]

    def search_trials(self):
        return [t for t in self.trials if t.kind in (SEEDED, SAMPLED)]

    def best(self):
        """Highest-fitness seeded or sampled trial (earliest on ties)."""
        pool = self.search_trials()
        if not pool:
            return None
        return max(pool, key=lambda t: (t.fitness, -t.trial_id))

    def top(self, k):
        return sorted(self.search_trials(), key=lambda t: (-t.fitness, t.trial_id))[:k]

    def dump(self, path):
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"type": "config", **self.config}) + "\n")
            for t in self.trials:
                fh.write(json.dumps(t.to_json()) + "\n")
            if self.summary is not None:
                fh.write(json.dumps({"type": "summary", **self.summary}) + "\n")
        return path

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        # a crash can leave a partial last line behind
        records = []
        for k, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if k == len(lines) - 1:
                    break
                raise CorruptLog(f"{path}: line {k + 1} is not valid JSON") from None
        if not records or records[0].get("type") != "config":
            raise CorruptLog(f"{path}: first line must be the config snapshot")
        config = dict(records[0])
        config.pop("type")
        out = cls(config)
        last_id = -1
        for rec in records[1:]:
            kind = rec.get("type")
            if kind == "trial":
                try:
                    t = TrialRecord.from_json(rec)
                except TypeError as exc:
                    raise CorruptLog(f"{path}: bad trial record ({exc})") from None
                if t.trial_id <= last_id:
                    raise CorruptLog(f"{path}: trial ids are not increasing at {t.trial_id}")
                last_id = t.trial_id
                out.trials.append(t)
            elif kind == "summary":
                out.summary = {k: v for k, v in rec.items() if k != "type"}
            else:
                raise CorruptLog(f"{path}: unknown record type {kind!r}")
        return out


class _LogWriter:
    def __init__(self, path, config, prior_trials=()):
        self.path = Path(path) if path else None
        if self.path:
            SearchLog(config, list(prior_trials)).dump(self.path)

    def append(self, obj):
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(obj) + "\n")


def _config_snapshot(cfg, pool, evaluator, subset=None):
    snap = {
        "version": __version__,
        "search": asdict(cfg),
        "pool_hash": pool.content_hash(),
        "pool_labels": list(pool.labels),
        "pool_size": len(pool),
        "evaluator": evaluator.describe() if hasattr(evaluator, "describe") else {},
    }
    if subset is not None:
        snap["subset"] = list(subset)
    return snap


class _Search:
    def __init__(self, cfg: SearchConfig, pool, evaluator, log_path, prior=None, subset=None):
        cfg.validate()
        report = validate_pool(pool)
        if not report.passed:
            raise PoolInvalid(report.describe())
        self.cfg = cfg
        self.pool = pool
        self.evaluator = evaluator
        self.n = len(pool)
        config = prior.config if prior else _config_snapshot(cfg, pool, evaluator, subset)
        self.log = SearchLog(config)
        self.replay = deque(prior.trials if prior else ())
        self.writer = _LogWriter(log_path, config, prior.trials if prior else ())
        self.es = CMAES(self.n, np.full(self.n, 1.0 / self.n), cfg.sigma0, popsize=cfg.popsize, seed=cfg.seed)

    # -------------------------------------------------------------- trials

    def _cached(self, weights):
        for t in self.log.trials:
            if t.penalized or len(t.weights) != len(weights):
                continue
            if np.max(np.abs(np.asarray(t.weights) - weights)) <= self.cfg.epsilon_cache:
                return t
        return None

    def _replayed(self, kind, label, raw):
        if not self.replay:
            return None
        t = self.replay.popleft()
        if t.kind != kind or t.label != label or list(t.raw) != [float(v) for v in raw]:
            raise CorruptLog(
                f"log diverges at trial {t.trial_id}: expected {kind}/{label}, logged {t.kind}/{t.label}"
            )
        self.log.trials.append(t)
        return t

    def _evaluate(self, weights):
        """Returns (scores, fitness, stderr, penalized)."""
        merged = merge(self.pool, weights, validate=False)
        try:
            scores, stderr = self.evaluator.evaluate(merged, self.cfg.tasks)
        except (EvaluatorError, MissingTask) as exc:
            if self.cfg.on_eval_error == "abort":
                raise
            seen = [t.fitness for t in self.log.trials]
            penalty = (min(seen) if seen else 0.0) - 1.0
            log.warning("evaluation failed (%s); assigning penalty fitness %.4f", exc, penalty)
            return {}, penalty, getattr(exc, "stderr", "") or str(exc), True
        scores = {t: float(scores[t]) for t in self.cfg.tasks}
        return scores, macro_average(scores, self.cfg.tasks), stderr, False

    def _prepare(self, raw, weights=None):
        """Resolve weights for a candidate; returns (weights, degenerate)."""
        if weights is not None:
            return np.asarray(weights, dtype=np.float64), False
        try:
            return normalize(raw), False
        except DegenerateWeights:
            return baseline_uniform(self.n), True

    def _finish(self, kind, label, raw, weights, degenerate, generation, result, started):
        hit, (scores, fitness, stderr, penalized) = result
        rec = TrialRecord(
            trial_id=len(self.log.trials),
            kind=kind,
            label=label,
            raw=[float(v) for v in raw],
            weights=[float(v) for v in weights],
            scores=scores,
            fitness=float(fitness),
            generation=generation,
            degenerate=degenerate,
            cache_hit=hit,
            penalized=penalized,
            wall_time=time.perf_counter() - started,
            evaluator_stderr=stderr,
        )
        self.log.trials.append(rec)
        self.writer.append(rec.to_json())
        return rec

    def trial(self, kind, label, raw, weights=None, generation=0):
        done = self._replayed(kind, label, raw)
        if done is not None:
            return done
        started = time.perf_counter()
        weights, degenerate = self._prepare(raw, weights)
        prior = self._cached(weights)
        if prior is not None:
            result = (True, (dict(prior.scores), prior.fitness, "", False))
        else:
            result = (False, self._evaluate(weights))
        return self._finish(kind, label, raw, weights, degenerate, generation, result, started)

    # --------------------------------------------------------------- phases

    def seed(self):
        kind = SEEDED if self.cfg.warm_start else BASELINE
        singles = []
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = 1.0
            singles.append(self.trial(kind, f"single:{i}", e, e, self.es.generation))
            self._inject(singles[-1])
        u = baseline_uniform(self.n)
        self._inject(self.trial(kind, "uniform", u, u, self.es.generation))
        if all(not t.penalized for t in singles):
            mb = baseline_merge_best([t.scores for t in singles], self.cfg.tasks)
        else:
            mb = baseline_merge_best(
                [t.scores or {k: -math.inf for k in self.cfg.tasks} for t in singles], self.cfg.tasks
            )
        self._inject(self.trial(kind, "merge-best", mb, mb, self.es.generation))

    def _inject(self, rec):
        if self.cfg.warm_start:
            self.es.inject(rec.raw, rec.fitness)

    def sample(self):
        while len(self.log.sampled()) < self.cfg.budget:
            if self.cfg.workers > 1 and not self.replay:
                self._sample_batch()
                continue
            gen = self.es.generation
            x, tok = self.es.ask()
            rec = self.trial(SAMPLED, "sampled", x, generation=gen)
            self.es.tell(tok, rec.fitness)

    def _sample_batch(self):
        """Ask up to a generation's worth of candidates and evaluate them concurrently."""
        room = min(self.es.popsize - self.es.pending, self.cfg.budget - len(self.log.sampled()))
        gen = self.es.generation
        asked = [self.es.ask() for _ in range(room)]
        plans = []
        for x, tok in asked:
            weights, degenerate = self._prepare(x)
            plans.append((x, tok, weights, degenerate))
        # dedup against the log and earlier batch members, in ask order
        sources = []
        for k, (_, _, w, _) in enumerate(plans):
            prior = self._cached(w)
            if prior is not None:
                sources.append(("log", prior))
                continue
            twin = next(
                (j for j in range(k) if sources[j][0] == "new"
                 and np.max(np.abs(plans[j][2] - w)) <= self.cfg.epsilon_cache),
                None,
            )
            sources.append(("twin", twin) if twin is not None else ("new", None))
        fresh = [k for k, s in enumerate(sources) if s[0] == "new"]
        started = time.perf_counter()
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as ex:
            results = dict(zip(fresh, ex.map(lambda k: self._evaluate(plans[k][2]), fresh)))
        for k, (x, tok, w, degenerate) in enumerate(plans):
            src, ref = sources[k]
            if src == "log":
                result = (True, (dict(ref.scores), ref.fitness, "", False))
            elif src == "twin":
                result = (True, results[ref])
            else:
                result = (False, results[k])
            rec = self._finish(SAMPLED, "sampled", x, w, degenerate, gen, result, started)
            self.es.tell(tok, rec.fitness)

    def report(self):
        """Compare the best merge with the baselines on held-in and held-out tasks."""
        tasks = self.cfg.tasks
        by_label = {t.label: t for t in self.log.trials if t.kind in (SEEDED, BASELINE)}
        singles = [by_label[f"single:{i}"] for i in range(self.n)]
        best = self.log.best()
        idx, _ = best_single([t.scores or {k: -math.inf for k in tasks} for t in singles], tasks)
        entries = {
            "best": best,
            "uniform": by_label["uniform"],
            "merge_best": by_label["merge-best"],
            "best_single": singles[idx],
        }
        summary = {"tasks": tasks, "heldout_tasks": list(self.cfg.heldout_tasks)}
        for name, t in entries.items():
            heldout = {}
            if self.cfg.heldout_tasks:
                merged = merge(self.pool, np.asarray(t.weights), validate=False)
                heldout, _ = self.evaluator.evaluate(merged, self.cfg.heldout_tasks)
                heldout = {k: float(heldout[k]) for k in self.cfg.heldout_tasks}
            all_scores = {**t.scores, **heldout}
            summary[name] = {
                "trial_id": t.trial_id,
                "weights": t.weights,
                "scores": all_scores,
                "fitness": t.fitness,
                "heldout_average": macro_average(heldout, self.cfg.heldout_tasks) if heldout else None,
                "all_task_average": macro_average(all_scores, list(all_scores)) if all_scores else None,
            }
        summary["best_single"]["index"] = idx
        summary["sampled_trials"] = len(self.log.sampled())
        summary["seeded_trials"] = len(self.log.seeded())
        return summary

    def run(self):
        self.seed()
        self.sample()
        if self.replay:
            raise CorruptLog(f"log has {len(self.replay)} trial(s) beyond the configured budget")
        self.log.summary = self.report()
        self.writer.append({"type": "summary", **self.log.summary})
        return self.log


def run_search(cfg: SearchConfig, pool: CheckpointPool, evaluator, log_path=None, subset=None) -> SearchLog:
    """Optimize merge weights over ``pool`` and return the full trial log."""
    return _Search(cfg, pool, evaluator, log_path, subset=subset).run()


def config_from_log(log: SearchLog) -> SearchConfig:
    return SearchConfig(**log.config["search"])


def resume(log_path, pool: CheckpointPool, evaluator) -> SearchLog:
    """Replay a (possibly interrupted) log and continue up to its budget."""
    prior = SearchLog.load(log_path)
    if prior.complete:
        return prior
    if "subset" in prior.config and len(pool) != prior.config["pool_size"]:
        pool = pool.subset(prior.config["subset"])
    if pool.content_hash() != prior.config.get("pool_hash"):
        raise ConfigMismatch("pool contents differ from the ones recorded in the log")
    cfg = config_from_log(prior)
    return _Search(cfg, pool, evaluator, log_path, prior=prior).run()


# ---------------------------------------------------------------- subsets


def individual_fitness(pool, evaluator, tasks):
    return [macro_average(evaluator.evaluate(pool.load(i), tasks)[0], tasks) for i in range(len(pool))]


def top_n_indices(fitnesses, n):
    """Indices of the ``n`` fittest checkpoints (lowest index on ties), in pool order."""
    order = sorted(range(len(fitnesses)), key=lambda i: (-fitnesses[i], i))
    return sorted(order[:n])


@dataclass
class SubsetResult:
    n: int
    indices: list
    log: SearchLog
    best_fitness: float
    centroid_scores: list
    centroid_weights: list  # in full-pool coordinates


def subset_experiment(cfg: SearchConfig, pool: CheckpointPool, evaluator, n_values, log_dir=None):
    """Search over the top-n checkpoints for every n in ``n_values``."""
    n_values = list(n_values)
    if any(n < 2 or n > len(pool) for n in n_values):
        raise ValueError(f"subset sizes must lie in [2, {len(pool)}]")
    fits = individual_fitness(pool, evaluator, cfg.tasks)
    out = {}
    for n in n_values:
        idx = top_n_indices(fits, n)
        sub = pool.subset(idx)
        path = Path(log_dir) / f"subset_{n}.jsonl" if log_dir else None
        log_n = run_search(replace(cfg, top_n=n), sub, evaluator, path, subset=idx)
        sampled = log_n.sampled() or log_n.search_trials()
        full_w = []
        for t in sampled:
            w = np.zeros(len(pool))
            w[idx] = t.weights
            full_w.append(w)
        out[n] = SubsetResult(
            n=n,
            indices=idx,
            log=log_n,
            best_fitness=log_n.best().fitness,
            centroid_scores=centroid([[t.scores[k] for k in cfg.tasks] for t in sampled if t.scores]).tolist(),
            centroid_weights=centroid(full_w).tolist(),
        )
    return out
