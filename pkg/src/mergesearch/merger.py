"""Simplex projection of raw search vectors and linear merging of pools."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .errors import DegenerateWeights, ShapeMismatch
from .tensorstore import CheckpointPool, TensorMap, validate_pool


def normalize(raw):
    """Clamp negative entries to zero and divide by the sum.

    Raises DegenerateWeights when nothing positive is left.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("raw weights must be a non-empty vector")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw weights must be finite")
    clamped = np.where(raw > 0.0, raw, 0.0)
    total = clamped.sum()
    if total <= 0.0:
        raise DegenerateWeights(f"all {raw.size} weights are non-positive")
    return clamped / total


def check_weights(alpha, n=None, atol=1e-12):
    alpha = np.asarray(alpha, dtype=np.float64)
    if n is not None and alpha.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {alpha.shape}")
    if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > atol:
        raise ValueError("weights must be non-negative and sum to 1")
    return alpha


def merge_tensor(pool: CheckpointPool, weights, name):
    """Merge a single tensor; only checkpoints with non-zero weight are read."""
    acc = None
    shape = None
    for i, alpha in enumerate(weights):
        if alpha == 0.0:
            continue
        src = pool.load_tensor(i, name)
        if shape is None:
            shape = src.shape
        elif src.shape != shape:
            raise ShapeMismatch(f"tensor {name!r}: entry {i} has shape {src.shape}, expected {shape}")
        flat = np.ascontiguousarray(src, dtype=np.float32).reshape(-1)
        if acc is None:
            acc = kernels.dd_start(flat, float(alpha))
        else:
            kernels.dd_add(acc[0], acc[1], flat, float(alpha))
    if acc is None:
        raise DegenerateWeights("all merge weights are zero")
    return kernels.dd_finish(*acc).reshape(shape)


def merge(pool: CheckpointPool, weights, id="merged", workers=1, validate=True) -> TensorMap:
    """Weighted sum of the pool's checkpoints, streamed tensor by tensor.

    Each element is accumulated in extended precision in ascending pool
    order and rounded to float32 once, so one-hot weights reproduce the
    selected checkpoint bit-for-bit.
    """
    weights = check_weights(weights, len(pool))
    if validate:
        report = validate_pool(pool)
        if not report.passed:
            raise ShapeMismatch(report.describe())
    names = pool.tensor_names()
    if workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            arrays = list(ex.map(lambda n: merge_tensor(pool, weights, n), names))
    else:
        arrays = [merge_tensor(pool, weights, n) for n in names]
    return TensorMap(id, dict(zip(names, arrays)))


def flat_pool_matrix(pool: CheckpointPool):
    """All checkpoints flattened into an (N, P) float32 matrix, in schema order."""
    names = pool.tensor_names()
    rows = []
    for i in range(len(pool)):
        rows.append(np.concatenate([np.asarray(pool.load_tensor(i, n), np.float32).reshape(-1) for n in names]))
    return np.stack(rows)


def unflatten(pool: CheckpointPool, flat, id="merged"):
    tensors = {}
    start = 0
    for name, shape in pool.schema():
        size = int(np.prod(shape))
        tensors[name] = flat[start:start + size].reshape(shape)
        start += size
    return TensorMap(id, tensors)
