import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata, spearmanr

from mergesearch import analysis
from mergesearch.driver import TrialRecord
from mergesearch.errors import ConstantSeries, LengthMismatch

small_ints = st.lists(st.integers(-5, 5), min_size=3, max_size=25)


def test_average_ranks_by_hand():
    assert analysis.average_ranks([10, 20, 10, 5]).tolist() == [2.5, 4.0, 2.5, 1.0]


@settings(max_examples=300, deadline=None)
@given(small_ints)
def test_average_ranks_match_scipy(x):
    np.testing.assert_array_equal(analysis.average_ranks(x), rankdata(x, method="average"))


@settings(max_examples=300, deadline=None)
@given(st.integers(3, 25).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-5, 5), min_size=n, max_size=n),
    st.lists(st.integers(-5, 5), min_size=n, max_size=n),
)))
def test_spearman_matches_scipy(pair):
    x, y = pair
    if len(set(x)) < 2 or len(set(y)) < 2:
        with pytest.raises(ConstantSeries):
            analysis.spearman(x, y)
        return
    assert analysis.spearman(x, y) == pytest.approx(spearmanr(x, y).statistic, abs=1e-12)


def test_spearman_extremes_and_errors():
    assert analysis.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert analysis.spearman([1, 2, 3], [10, 20, 30]) == 1.0
    with pytest.raises(LengthMismatch):
        analysis.spearman([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        analysis.spearman([1], [2])
    with pytest.raises(ConstantSeries):
        analysis.spearman([1, 1, 1], [1, 2, 3])


def test_correlation_matrix_on_bundled_table():
    m = analysis.bundled_scores()
    assert m.values.shape == (16, 7)
    assert m.tasks == ["MBPP", "GSM8K", "IFEval", "MMLUPro", "MUSR", "MT-Bench", "LBPP"]
    c = analysis.correlation_matrix(m)
    np.testing.assert_array_equal(c, c.T)
    assert np.all(np.diag(c) == 1.0)
    for a in range(7):
        for b in range(7):
            assert c[a, b] == pytest.approx(spearmanr(m.values[:, a], m.values[:, b]).statistic, abs=1e-12)


def brute_front(points):
    def dom(p, q):
        return all(a >= b for a, b in zip(p, q)) and any(a > b for a, b in zip(p, q))

    return [i for i, p in enumerate(points) if not any(dom(q, p) for q in points)]


def test_pareto_by_hand():
    pts = [(1, 5), (2, 4), (1, 4), (3, 1), (2, 4), (0, 0)]
    assert analysis.pareto_front(pts) == [0, 1, 3, 4]
    assert analysis.dominates((2, 2), (2, 1)) and not analysis.dominates((2, 2), (2, 2))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 3).flatmap(lambda k: st.lists(
    st.tuples(*[st.integers(0, 6)] * k), min_size=1, max_size=30)))
def test_pareto_matches_brute_force(points):
    front = analysis.pareto_front(points)
    assert front == brute_front(points)
    assert front  # a finite set always has a maximal element


def test_pareto_errors():
    with pytest.raises(ValueError):
        analysis.pareto_front([])
    with pytest.raises(LengthMismatch):
        analysis.pareto_front([(1, 2), (1,)])


def test_sparsity_and_centroid():
    assert analysis.sparsity([0.5, 0.0, 0.0009, 0.001, 0.4991]) == (2, [1, 2])
    assert analysis.sparsity([0.5, 0.5], epsilon=0.0) == (0, [])
    with pytest.raises(ValueError):
        analysis.sparsity([1.0], epsilon=-1)
    assert analysis.centroid([[0, 2], [2, 4]]).tolist() == [1.0, 3.0]
    with pytest.raises(LengthMismatch):
        analysis.centroid([[0], [1, 2]])


def trial(i, kind, fit):
    return TrialRecord(i, kind, kind, [], [], {}, fit, 0)


def test_progress_running_best():
    pts = analysis.progress([trial(0, "seeded", 3.0), trial(1, "sampled", 1.0), trial(2, "sampled", 5.0)])
    assert [p.running_best for p in pts] == [3.0, 3.0, 5.0]
    assert [p.kind for p in pts] == ["seeded", "sampled", "sampled"]
    with pytest.raises(ValueError):
        analysis.progress([])


def test_flops_formulas_exact():
    r = analysis.flops_cost(2.0, (3, 5), (7, 11), {"a": 13, "b": 17}, 19, held_in=["b"])
    assert r.train_flops_per_stage == {"sft": 6 * 2 * 3 * 5, "po": 6 * 2 * 7 * 11}
    assert r.train_flops == 180 + 924
    assert r.inference_flops_per_task == {"a": 2 * 2 * 13, "b": 2 * 2 * 17}
    assert r.search_flops == 19 * 68
    assert r.ratio_search_to_train == pytest.approx(19 * 68 / 1104)
    with pytest.raises(ValueError):
        analysis.flops_cost(0, (1, 1), (1, 1), {"a": 1}, 1)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_csv_writers(tmp_path):
    analysis.write_correlation_csv(tmp_path / "c.csv", ["a", "b"], [[1.0, -0.5], [-0.5, 1.0]])
    assert read(tmp_path / "c.csv") == [["task", "a", "b"], ["a", "1.0", "-0.5"], ["b", "-0.5", "1.0"]]
    analysis.write_pareto_csv(tmp_path / "p.csv", ["x", "y"], [[1.0, 2.0], [0.5, 1.0]], ["a", "b"], [0])
    assert read(tmp_path / "p.csv")[1:] == [["x", "1.0", "2.0", "1"], ["y", "0.5", "1.0", "0"]]
    analysis.write_sparsity_csv(tmp_path / "s.csv", [(4, 9.5, [0.9995, 0.0005])], ["m1", "m2"])
    assert read(tmp_path / "s.csv") == [["rank", "trial_id", "fitness", "below_epsilon", "m1", "m2"],
                                         ["1", "4", "9.5", "1", "0.9995", "0.0005"]]
    analysis.write_progress_csv(tmp_path / "g.csv", analysis.progress([trial(0, "seeded", 1.5)]))
    assert read(tmp_path / "g.csv")[1] == ["0", "seeded", "1.5", "1.5"]
    analysis.write_subsets_csv(tmp_path / "n.csv", ["a"], [(2, 7.0, [3.0], "x.jsonl")])
    assert read(tmp_path / "n.csv") == [["n", "best_fitness", "centroid_a", "log"], ["2", "7.0", "3.0", "x.jsonl"]]


def test_floats_survive_csv_round_trip(tmp_path):
    v = math.pi / 3
    analysis.write_correlation_csv(tmp_path / "c.csv", ["a"], [[v]])
    assert float(read(tmp_path / "c.csv")[1][1]) == v


def test_load_score_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("name,note,x,y\nm1,foo,1.5,2\nm2,bar,3,4\n")
    m = analysis.load_score_csv(p)
    assert m.labels == ["m1", "m2"] and m.tasks == ["x", "y"]
    assert m.column("y").tolist() == [2.0, 4.0]
    assert m.rows(["x"]) == [{"x": 1.5}, {"x": 3.0}]
