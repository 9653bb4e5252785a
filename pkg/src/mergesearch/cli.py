"""Command line interface.

Exit status: 0 on success, 2 on contract errors (bad input, invalid pools,
corrupt files), 3 when an evaluator fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, toylab
from .driver import SearchConfig, SearchLog, resume, run_search, top_n_indices, individual_fitness
from .errors import EvaluatorError, MergeSearchError
from .fitness import (
    BuiltinEvaluator,
    ExternalEvaluator,
    baseline_merge_best,
    baseline_uniform,
    best_single,
    macro_average,
    per_task_best,
)
from .merger import merge, normalize
from .tensorstore import CheckpointPool, read_checkpoint, write_checkpoint

log = logging.getLogger("mergesearch")


def _tasks(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _pair(text):
    b, s = text.split(",")
    return float(b), float(s)


def _samples(text):
    out = {}
    for item in text.split(","):
        name, n = item.split("=")
        out[name.strip()] = float(n)
    return out


def _evaluator(args):
    if getattr(args, "evaluator", None):
        return ExternalEvaluator(args.evaluator, timeout=getattr(args, "timeout", None))
    if getattr(args, "suite", None):
        return BuiltinEvaluator(toylab.load_suite(args.suite), source=args.suite)
    raise ValueError("one of --suite or --evaluator is required")


def _print(obj):
    print(json.dumps(obj, indent=2))


def cmd_gen_toys(args):
    cfg = toylab.GeneratorConfig(
        dim=args.dim, n=args.n, tasks=args.tasks, noise=args.noise, seed=args.seed,
        ridge_lambda=args.ridge_lambda,
    )
    gen = toylab.gen_radial_suite if args.kind == "radial" else toylab.gen_ridge_suite
    pool, suite = gen(cfg)
    out = Path(args.out)
    from .tensorstore import save_pool

    save_pool(out, [pool.load(i) for i in range(len(pool))], pool.labels)
    toylab.save_suite(out / "suite.json", suite)
    _print({"out": str(out), "checkpoints": len(pool), "tasks": suite.names,
            "min_pairwise_spearman": suite.meta["min_pairwise_spearman"]})


def cmd_eval(args):
    tasks = _tasks(args.tasks)
    ev = _evaluator(args)
    scores, stderr = ev.evaluate(read_checkpoint(args.checkpoint), tasks)
    if stderr:
        sys.stderr.write(stderr)
    print(json.dumps({"scores": scores}))


def _parse_weights(text):
    path = Path(text)
    if path.exists():
        text = path.read_text()
    return np.asarray(json.loads(text), dtype=np.float64)


def cmd_merge(args):
    pool = CheckpointPool.from_dir(args.pool)
    weights = normalize(_parse_weights(args.weights))
    merged = merge(pool, weights, id=Path(args.out).stem, workers=args.workers)
    write_checkpoint(args.out, merged)
    _print({"out": args.out, "weights": weights.tolist()})


def cmd_baselines(args):
    pool = CheckpointPool.from_dir(args.pool)
    tasks = _tasks(args.tasks)
    heldout = _tasks(args.heldout)
    ev = _evaluator(args)
    singles = [ev.evaluate(pool.load(i), tasks + heldout)[0] for i in range(len(pool))]
    held_in = [{t: s[t] for t in tasks} for s in singles]
    idx, fit = best_single(held_in, tasks)
    rows = {}
    for name, w in [("uniform", baseline_uniform(len(pool))), ("merge_best", baseline_merge_best(held_in, tasks))]:
        scores, _ = ev.evaluate(merge(pool, w), tasks + heldout)
        rows[name] = {"weights": w.tolist(), "scores": scores, "fitness": macro_average(scores, tasks)}
    rows["best_single"] = {"index": idx, "label": pool.labels[idx], "scores": singles[idx], "fitness": fit}
    rows["per_task_best"] = {t: {"index": i, "label": pool.labels[i], "score": held_in[i][t]}
                             for t, i in per_task_best(held_in, tasks).items()}
    rows["checkpoints"] = [{"label": lab, "scores": s, "fitness": macro_average(s, tasks)}
                           for lab, s in zip(pool.labels, singles)]
    _print(rows)


def cmd_optimize(args):
    pool = CheckpointPool.from_dir(args.pool)
    ev = _evaluator(args)
    if args.resume:
        result = resume(args.resume, pool, ev)
        out = args.resume
    else:
        cfg = SearchConfig(
            tasks=_tasks(args.tasks),
            heldout_tasks=_tasks(args.heldout),
            budget=args.budget,
            sigma0=args.sigma0,
            popsize=args.popsize,
            seed=args.seed,
            warm_start=not args.no_warm_start,
            on_eval_error=args.on_eval_error,
            top_n=args.top_n,
            workers=args.workers,
        )
        subset = None
        if args.top_n:
            subset = top_n_indices(individual_fitness(pool, ev, cfg.tasks), args.top_n)
            pool = pool.subset(subset)
        result = run_search(cfg, pool, ev, args.log, subset=subset)
        out = args.log
    s = result.summary
    _print({
        "log": str(out),
        "best": {k: s["best"][k] for k in ("trial_id", "fitness", "weights", "scores")},
        "uniform": s["uniform"]["fitness"],
        "merge_best": s["merge_best"]["fitness"],
        "best_single": s["best_single"]["fitness"],
    })


def _matrix_from_log(path, tasks=None):
    lg = SearchLog.load(path)
    tasks = tasks or lg.config["search"]["tasks"]
    singles = [t for t in lg.trials if t.label.startswith("single:") and t.scores]
    labels = [lg.config["pool_labels"][int(t.label.split(":")[1])] for t in singles]
    return analysis.ScoreMatrix(labels, tasks, [[t.scores[k] for k in tasks] for t in singles])


def cmd_analyze(args):
    tasks = _tasks(args.tasks) or None
    logs = args.log or []
    if args.what in ("corr", "pareto") and args.scores:
        m = analysis.load_score_csv(args.scores)
        if tasks:
            m = analysis.ScoreMatrix(m.labels, tasks, [[r[t] for t in tasks] for r in m.rows(tasks)])
    elif args.what in ("corr",):
        m = _matrix_from_log(logs[0], tasks)
    if args.what == "corr":
        analysis.write_correlation_csv(args.out, m.tasks, analysis.correlation_matrix(m))
    elif args.what == "pareto":
        if args.scores:
            labels, points, cols = m.labels, m.values.tolist(), m.tasks
        else:
            lg = SearchLog.load(logs[0])
            cols = tasks or lg.config["search"]["tasks"]
            trials = [t for t in lg.search_trials() if t.scores]
            labels = [f"{t.trial_id}:{t.label}" for t in trials]
            points = [[t.scores[k] for k in cols] for t in trials]
        analysis.write_pareto_csv(args.out, labels, points, cols, analysis.pareto_front(points))
    elif args.what == "sparsity":
        lg = SearchLog.load(logs[0])
        sols = [(t.trial_id, t.fitness, t.weights) for t in lg.top(args.top_k)]
        analysis.write_sparsity_csv(args.out, sols, lg.config["pool_labels"], args.epsilon)
    elif args.what == "progress":
        lg = SearchLog.load(logs[0])
        analysis.write_progress_csv(args.out, analysis.progress(lg.trials))
    elif args.what == "subsets":
        results, cols = [], None
        for path in logs:
            lg = SearchLog.load(path)
            cols = lg.config["search"]["tasks"]
            sampled = [t for t in (lg.sampled() or lg.search_trials()) if t.scores]
            c = analysis.centroid([[t.scores[k] for k in cols] for t in sampled])
            results.append((lg.config["pool_size"], lg.best().fitness, c, path))
        analysis.write_subsets_csv(args.out, cols, results)
    print(args.out)


def cmd_cost(args):
    samples = _samples(args.samples)
    report = analysis.flops_cost(args.params, _pair(args.sft), _pair(args.po), samples, args.budget,
                                 _tasks(args.held_in) or None)
    _print(asdict(report))


def build_parser():
    p = argparse.ArgumentParser(prog="mergesearch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-toys", help="generate a toy checkpoint pool and task suite")
    g.add_argument("--kind", choices=["radial", "ridge"], default="radial")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--tasks", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.15)
    g.add_argument("--ridge-lambda", type=float, default=1e-3)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_toys)

    def add_eval_source(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--suite", help="toy suite directory or suite.json")
        src.add_argument("--evaluator", help="external evaluator command")
        sp.add_argument("--timeout", type=float, default=None)

    e = sub.add_parser("eval", help="score one checkpoint (prints the evaluator wire format)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--tasks", required=True)
    add_eval_source(e)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("merge", help="merge a pool with given raw weights")
    m.add_argument("--pool", required=True)
    m.add_argument("--weights", required=True, help="JSON list or path to a JSON file")
    m.add_argument("--out", required=True)
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_merge)

    b = sub.add_parser("baselines", help="score the uniform soup, merge-best and best single model")
    b.add_argument("--pool", required=True)
    b.add_argument("--tasks", required=True)
    b.add_argument("--heldout", default="")
    add_eval_source(b)
    b.set_defaults(func=cmd_baselines)

    o = sub.add_parser("optimize", help="search merge weights with CMA-ES")
    o.add_argument("--pool", required=True)
    o.add_argument("--tasks", default="")
    o.add_argument("--heldout", default="")
    o.add_argument("--budget", type=int, default=50)
    o.add_argument("--sigma0", type=float, default=1.0)
    o.add_argument("--popsize", type=int, default=None)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--log", default="search_log.jsonl")
    o.add_argument("--resume", default=None, help="continue an interrupted log in place")
    o.add_argument("--top-n", type=int, default=None)
    o.add_argument("--on-eval-error", choices=["abort", "penalize"], default="abort")
    o.add_argument("--no-warm-start", action="store_true")
    o.add_argument("--workers", type=int, default=1)
    add_eval_source(o)
    o.set_defaults(func=cmd_optimize)

    a = sub.add_parser("analyze", help="export analysis tables as CSV")
    a.add_argument("what", choices=["corr", "pareto", "sparsity", "progress", "subsets"])
    a.add_argument("--log", action="append", help="search log (repeat for subsets)")
    a.add_argument("--scores", help="checkpoint x task score CSV")
    a.add_argument("--tasks", default="")
    a.add_argument("--top-k", type=int, default=5)
    a.add_argument("--epsilon", type=float, default=1e-3)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("cost", help="training vs search FLOPs")
    c.add_argument("--params", type=float, required=True)
    c.add_argument("--sft", required=True, help="BATCH,STEPS")
    c.add_argument("--po", required=True, help="BATCH,STEPS")
    c.add_argument("--samples", required=True, help="task=n,...")
    c.add_argument("--budget", type=int, default=50)
    c.add_argument("--held-in", default="", help="tasks searched over (default: all)")
    c.set_defaults(func=cmd_cost)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "optimize" and not args.resume and not _tasks(args.tasks):
        parser.error("--tasks is required unless --resume is given")
    if args.command == "analyze":
        if args.what in ("sparsity", "progress", "subsets") and not args.log:
            parser.error(f"analyze {args.what} needs --log")
        if args.what in ("corr", "pareto") and not (args.log or args.scores):
            parser.error(f"analyze {args.what} needs --log or --scores")
    try:
        args.func(args)
    except EvaluatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (MergeSearchError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
