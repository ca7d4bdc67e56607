import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import assign, make_seq
from pointlab.metrics import (MetricsError, aggregate_ranks, ece, evaluate, f1, pce, rank_table,
                              reliability_mark, reliability_time, standardize_nll)
from pointlab.model import ModelSpec, TPPModel, sequence_nll
from pointlab.simulate import paper_hawkes_params, simulate_dataset


def test_pce_small_example():
    # levels 0.5 and 1.0: empirical CDF 2/3 and 1
    assert pce([0.1, 0.5, 0.9], M=2) == pytest.approx(1 / 12)


def test_pce_perfect_grid_is_zero():
    values = (np.arange(1000) + 0.5) / 1000
    assert pce(values) == pytest.approx(0.0, abs=1e-12)


def test_pce_degenerate_at_one():
    # the empirical CDF is 0 below level 1 and 1 at it
    assert pce(np.ones(10)) == pytest.approx(sum(m / 50 for m in range(1, 50)) / 50)


def test_reliability_time_points():
    pts = reliability_time([0.2, 0.4, 0.6, 0.8], M=4)
    assert pts == [(0.25, 0.25), (0.5, 0.5), (0.75, 0.75), (1.0, 1.0)]


def test_ece_single_bin():
    records = [(1, 1, 0.95), (1, 0, 0.95)]
    assert ece(records) == pytest.approx(abs(0.5 - 0.95) / 10)


def test_ece_bins_are_right_closed():
    rows = reliability_mark([(0, 0, 0.1), (0, 0, 0.0), (0, 1, 0.1000001), (0, 0, 1.0)])
    assert rows[0] == (1, pytest.approx(0.05), 1.0, 2)
    assert rows[1][3] == 1 and rows[1][2] == 0.0
    assert rows[9][3] == 1
    assert sum(r[3] for r in rows) == 4


def test_ece_perfectly_calibrated():
    records = [(0, 0, 0.25)] * 1 + [(0, 1, 0.25)] * 3 + [(1, 1, 0.75)] * 3 + [(1, 0, 0.75)]
    assert ece(records) == pytest.approx(0.0, abs=1e-12)


def test_f1_micro_is_accuracy():
    assert f1([(0, 0, 0.9), (1, 1, 0.8), (2, 2, 0.7), (0, 1, 0.6)]) == pytest.approx(0.75)
    assert f1([(0, 1, 0.5)]) == 0.0


def test_standardize_example():
    out = standardize_nll({"a": 1.0, "b": 2.0, "c": 3.0, "d": 4.0, "e": 100.0})
    assert out["a"] == pytest.approx(-1.0) and out["c"] == 0.0 and out["e"] == pytest.approx(48.5)


def test_standardize_zero_iqr_and_errors():
    assert standardize_nll({"a": 2.0, "b": 2.0}) == {"a": 0.0, "b": 0.0}
    with pytest.raises(MetricsError):
        standardize_nll({"a": 1.0})


def test_metric_input_errors():
    with pytest.raises(MetricsError):
        pce([])
    with pytest.raises(MetricsError):
        pce([0.5, 1.2])
    with pytest.raises(MetricsError):
        ece([])
    with pytest.raises(MetricsError):
        ece([(0, 0, 1.5)])


def test_rank_table_with_ties():
    table = {"A": {"d1": 1.0, "d2": 3.0}, "B": {"d1": 1.0, "d2": 2.0}, "C": {"d1": 0.5, "d2": 5.0}}
    groups, datasets, ranks = rank_table(table, "min")
    assert groups == ["A", "B", "C"] and datasets == ["d1", "d2"]
    np.testing.assert_array_equal(ranks, [[2.5, 2.5, 1.0], [2.0, 1.0, 3.0]])
    _, _, up = rank_table(table, "max")
    np.testing.assert_array_equal(up, [[1.5, 1.5, 3.0], [2.0, 3.0, 1.0]])
    agg = aggregate_ranks(table)
    assert agg["A"] == {"mean": 2.0, "median": 2.0, "rank": 2.25}


def test_rank_table_errors():
    with pytest.raises(MetricsError):
        rank_table({"A": {"d1": 1.0}, "B": {"d2": 1.0}})
    with pytest.raises(MetricsError):
        rank_table({"A": {"d1": 1.0}}, "best")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=6, max_size=6), min_size=1, max_size=8).flatmap(
    lambda rows: st.integers(2, 6).map(lambda g: [r[:g] for r in rows])))
def test_rank_rows_sum_to_triangular_number(rows):
    g = len(rows[0])
    table = {f"m{j}": {f"d{i}": r[j] for i, r in enumerate(rows)} for j in range(g)}
    _, _, ranks = rank_table(table)
    np.testing.assert_allclose(ranks.sum(axis=1), g * (g + 1) / 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pce_of_uniform_values_obeys_dkw(seed):
    n, alpha = 2000, 1e-6
    u = np.random.default_rng(seed).uniform(size=n)
    # PCE is bounded by the Kolmogorov distance, which DKW controls
    assert pce(u) <= math.sqrt(math.log(2 / alpha) / (2 * n))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0, 1)), min_size=1, max_size=40),
       st.randoms(use_true_random=False))
def test_metrics_are_permutation_invariant(records, rnd):
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert ece(shuffled) == pytest.approx(ece(records), abs=1e-12)
    assert f1(shuffled) == f1(records)
    cdf = [c for _, _, c in records]
    assert pce(cdf) == pce(cdf[::-1])


def test_ground_truth_hawkes_is_calibrated():
    p = paper_hawkes_params(normalized=True)
    ds = simulate_dataset(p, 60, t_end=10.0, seed=4)
    model = TPPModel(ModelSpec("HAWKES"), 5)
    for name in ("mu", "alpha", "beta"):
        assign(model.params, f"decoder.{name}", getattr(p, name))
    report = evaluate(model, list(ds.sequences))
    assert report.num_events == ds.num_events
    assert report.pce < 0.03


def test_evaluate_poisson_by_hand(tmp_path):
    model = TPPModel(ModelSpec("POISSON"), 3)
    assign(model.params, "decoder.mu", [0.5, 1.0, 0.5])
    seqs = [make_seq([0.5, 1.0, 1.5], [1, 0, 1], 3.0), make_seq([0.2], [2], 1.0)]
    report = evaluate(model, seqs)
    nll = [sequence_nll(model, s) for s in seqs]
    assert report.nll_t == pytest.approx(sum(t for t, _ in nll) / 2, rel=1e-12)
    assert report.nll_m == pytest.approx(sum(m for _, m in nll) / 2, rel=1e-12)
    # always predicts mark 1 with confidence 1/2
    assert report.f1 == pytest.approx(0.5)
    assert report.ece == pytest.approx(0.0)
    # F(tau) = 1 - exp(-2 tau) at every event
    cdf = 1 - np.exp(-2 * np.array([0.5, 0.5, 0.5, 0.2]))
    assert report.pce == pytest.approx(pce(cdf))
    report.write_csv(tmp_path)
    with open(tmp_path / "reliability_time.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["p", "empirical_cdf"] and len(rows) == 51
    d = report.to_dict()
    assert d["nll"] == pytest.approx(report.nll_t + report.nll_m) and d["f1_average"] == "micro"


def test_evaluate_rejects_empty():
    with pytest.raises(MetricsError):
        evaluate(TPPModel(ModelSpec("POISSON"), 1), [])
