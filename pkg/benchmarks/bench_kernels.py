"""Compare the compiled merge kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--params 4000000] [--pool 16] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from mergesearch import _pykernels

try:
    from mergesearch import _ckernels
except ImportError:
    _ckernels = None


def stream_merge(mod, weights, thetas):
    acc = None
    for alpha, src in zip(weights, thetas):
        if alpha == 0.0:
            continue
        if acc is None:
            acc = mod.dd_start(src, float(alpha))
        else:
            mod.dd_add(acc[0], acc[1], src, float(alpha))
    return mod.dd_finish(*acc)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--params", type=int, default=4_000_000, help="float32 elements per checkpoint")
    ap.add_argument("--pool", type=int, default=16)
    ap.add_argument("--grid", type=int, default=5001, help="weight vectors for batch_merge")
    ap.add_argument("--grid-params", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    thetas = rng.standard_normal((args.pool, args.params)).astype(np.float32)
    weights = rng.dirichlet(np.ones(args.pool))
    grid = rng.dirichlet(np.ones(3), size=args.grid)
    small = rng.standard_normal((3, args.grid_params)).astype(np.float32)

    backends = [("numpy", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    results = {}
    for name, mod in backends:
        results[name] = (
            best_of(lambda: stream_merge(mod, weights, thetas), args.repeat),
            best_of(lambda: mod.batch_merge(grid, small), args.repeat),
        )
    if _ckernels:
        same = stream_merge(_ckernels, weights, thetas).tobytes() == stream_merge(_pykernels, weights, thetas).tobytes()
        same &= _ckernels.batch_merge(grid, small).tobytes() == _pykernels.batch_merge(grid, small).tobytes()
    else:
        same = None

    gb = args.pool * args.params * 4 / 1e9
    print(f"merge: {args.pool} checkpoints x {args.params} float32 ({gb:.2f} GB read)")
    print(f"batch_merge: {args.grid} weight vectors x 3 checkpoints x {args.grid_params} float32")
    print(f"{'backend':<8} {'merge s':>10} {'GB/s':>8} {'batch s':>10}")
    for name, (t_merge, t_batch) in results.items():
        print(f"{name:<8} {t_merge:>10.4f} {gb / t_merge:>8.2f} {t_batch:>10.4f}")
    if "cython" in results:
        np_m, np_b = results["numpy"]
        cy_m, cy_b = results["cython"]
        print(f"speedup: merge x{np_m / cy_m:.1f}, batch_merge x{np_b / cy_b:.1f}; bit-identical={same}")
    else:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
