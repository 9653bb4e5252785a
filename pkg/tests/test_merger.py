from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mergesearch.errors import DegenerateWeights, ShapeMismatch
from mergesearch.merger import check_weights, flat_pool_matrix, merge, normalize, unflatten
from mergesearch.tensorstore import CheckpointPool, TensorMap

f32 = st.floats(-1e6, 1e6, width=32, allow_nan=False)


def exact_merge(weights, values):
    """Exact rational weighted sum per element, rounded to float32 once."""
    out = []
    for column in zip(*values):
        s = sum(Fraction(float(w)) * Fraction(float(v)) for w, v in zip(weights, column))
        out.append(np.float32(float(s)))
    return np.array(out, dtype=np.float32)


def pool_of(rows):
    return CheckpointPool.from_tensormaps([TensorMap(f"c{i}", {"w": r}) for i, r in enumerate(rows)])


def test_normalize_by_hand():
    assert normalize([1.0, 3.0]).tolist() == [0.25, 0.75]
    assert normalize([-5.0, 2.0, 2.0]).tolist() == [0.0, 0.5, 0.5]
    assert normalize([0.0, 0.0, 4.0]).tolist() == [0.0, 0.0, 1.0]


@pytest.mark.parametrize("raw", [[0.0, 0.0], [-1.0, -2.0], [-0.0]])
def test_normalize_degenerate(raw):
    with pytest.raises(DegenerateWeights):
        normalize(raw)


@pytest.mark.parametrize("raw", [[], [np.nan, 1.0], [np.inf, 1.0], [[1.0]]])
def test_normalize_rejects_bad_input(raw):
    with pytest.raises(ValueError):
        normalize(raw)


def test_check_weights():
    check_weights([0.5, 0.5], 2)
    for bad in ([0.5, 0.6], [-0.1, 1.1], [1.0]):
        with pytest.raises(ValueError):
            check_weights(bad, 2)


def test_merge_two_by_hand(small_pool):
    rows = [[1.0, 2.0], [3.0, -2.0]]
    out = merge(pool_of(rows), [0.25, 0.75])
    assert out["w"].tolist() == [2.5, -1.0]


def test_merge_matches_exact_oracle():
    rng = np.random.default_rng(3)
    rows = rng.standard_normal((5, 200)).astype(np.float32)
    w = normalize(rng.random(5))
    got = merge(pool_of(rows), w)["w"]
    ref = exact_merge(w, rows)
    ulp = np.spacing(np.abs(ref))
    assert np.all(np.abs(got.astype(np.float64) - ref) <= ulp)


def test_merge_preserves_schema(small_pool):
    out = merge(small_pool, [0.1, 0.2, 0.3, 0.4], id="soup")
    assert out.id == "soup"
    assert out.schema() == small_pool.schema()


def test_parallel_merge_is_identical(small_pool):
    w = [0.1, 0.2, 0.3, 0.4]
    assert merge(small_pool, w, workers=4).bit_equal(merge(small_pool, w))


def test_merge_rejects_schema_mismatch():
    pool = CheckpointPool.from_tensormaps([TensorMap("a", {"w": [1.0, 2.0]}), TensorMap("b", {"w": [1.0]})])
    with pytest.raises(ShapeMismatch):
        merge(pool, [0.5, 0.5])


def test_negative_zero_survives_one_hot():
    pool = pool_of([[-0.0, 1.0], [5.0, 5.0]])
    out = merge(pool, [1.0, 0.0])["w"]
    assert np.signbit(out[0])


def test_zero_weight_entries_are_not_read():
    class Exploding(CheckpointPool):
        def load_tensor(self, i, name):
            if i == 1:
                raise AssertionError("zero-weight entry was read")
            return super().load_tensor(i, name)

    pool = Exploding([("a", TensorMap("a", {"w": [1.0]})), ("b", TensorMap("b", {"w": [2.0]}))])
    assert merge(pool, [1.0, 0.0], validate=False)["w"].tolist() == [1.0]


def test_flatten_round_trip(small_pool):
    flat = flat_pool_matrix(small_pool)
    assert flat.shape == (4, 17)
    assert unflatten(small_pool, flat[2]).bit_equal(small_pool.load(2))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float32, (n, 7), elements=f32),
    hnp.arrays(np.float64, n, elements=st.floats(0, 10)),
)))
def test_merge_within_one_ulp_of_exact(data):
    rows, raw = data
    if raw.sum() <= 0:
        raw[0] = 1.0
    w = normalize(raw)
    got = merge(pool_of(rows), w)["w"].astype(np.float64)
    ref = exact_merge(w, rows).astype(np.float64)
    assert np.all(np.abs(got - ref) <= np.spacing(np.abs(ref).astype(np.float32)))
