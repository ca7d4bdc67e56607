import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import rankdata

from pointlab.stats import RankTable, StatsError, cd_diagram_data, friedman, holm, pairwise_pvalues


def table(rows, names=None):
    rows = np.asarray(rows, dtype=float)
    names = names or [f"m{j}" for j in range(rows.shape[1])]
    return RankTable(tuple(names), tuple(f"d{i}" for i in range(rows.shape[0])), rows)


def brute_force_friedman(ranks):
    # rank-sum form of the statistic, written independently of the mean-rank form
    N, D = ranks.shape
    sums = [sum(ranks[i][j] for i in range(N)) for j in range(D)]
    return 12.0 / (N * D * (D + 1)) * sum(s * s for s in sums) - 3.0 * N * (D + 1)


def test_friedman_textbook_table():
    t = table([[1, 2, 3], [1, 3, 2], [2, 1, 3], [1, 2, 3]])
    stat, p = friedman(t)
    assert stat == pytest.approx(4.5, abs=1e-12)
    assert stat == pytest.approx(brute_force_friedman(t.ranks), abs=1e-12)
    # two degrees of freedom: the chi-square survival function is exp(-x / 2)
    assert p == pytest.approx(math.exp(-2.25), rel=1e-12)


def test_friedman_identical_rankings_maximal():
    N, D = 7, 4
    stat, p = friedman(table([[1, 2, 3, 4]] * N))
    assert stat == pytest.approx(N * (D - 1))
    assert p < 1e-3


def test_friedman_all_tied():
    stat, p = friedman(table([[2.0, 2.0, 2.0]] * 5))
    assert stat == 0.0 and p == 1.0


def test_friedman_degenerate_dimensions():
    with pytest.raises(StatsError):
        friedman(table([[1, 2]]))
    with pytest.raises(StatsError):
        friedman(table([[1], [1]]))


def test_rank_table_validation():
    with pytest.raises(StatsError):
        table([[1, 1, 3]])
    with pytest.raises(StatsError):
        RankTable(("a", "b"), ("d0",), np.array([[1.0, 2.0, 3.0]]))


def test_from_scores():
    t = RankTable.from_scores({"a": {"x": 1.0, "y": 0.2}, "b": {"x": 2.0, "y": 0.1}}, "min")
    np.testing.assert_array_equal(t.ranks, [[1, 2], [2, 1]])


def test_holm_examples():
    assert holm([("ab", 0.03)]) == [("ab", 0.03, True)]
    out = holm([("x", 0.04), ("y", 0.01)])
    assert [o[0] for o in out] == ["y", "x"]
    assert [o[1] for o in out] == [pytest.approx(0.02), pytest.approx(0.04)]
    assert [o[2] for o in out] == [True, True]
    assert not any(r for _, _, r in holm([("a", 1.0), ("b", 1.0), ("c", 1.0)]))


def test_holm_rejects_bad_p():
    with pytest.raises(StatsError):
        holm([("a", 1.5)])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.001, 0.5))
def test_holm_monotone_and_bounded(ps, alpha):
    out = holm([(i, p) for i, p in enumerate(ps)], alpha)
    adj = [a for _, a, _ in out]
    assert all(b >= a for a, b in zip(adj, adj[1:]))
    assert all(0 <= a <= 1 for a in adj)
    raw = sorted(ps)
    assert all(a >= p for a, p in zip(adj, raw))
    rejected = [r for _, _, r in out]
    # step-down: once a hypothesis is retained every later one is too
    assert rejected == sorted(rejected, reverse=True)


def test_pairwise_normal_approximation():
    t = table([[1, 2], [1, 2], [2, 1]])
    ((pair, p),) = pairwise_pvalues(t)
    z = (2 - 1) / 3 / math.sqrt(2 * 3 / (6 * 3))
    assert pair == ("m0", "m1")
    assert p == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-12)


def test_cd_identical_ranks_single_clique():
    out = cd_diagram_data(table([[1.5, 1.5]] * 10))
    assert out["cliques"] == [[0, 1]]
    assert out["friedman"]["tie_correction"] is False


def test_cd_dominant_decoder_separates():
    out = cd_diagram_data(table([[1, 2]] * 50, ["best", "worst"]))
    assert out["mean_ranks"] == [("best", 1.0), ("worst", 2.0)]
    assert out["cliques"] == [[0], [1]]
    json.dumps(out)


def test_cd_groups_close_decoders():
    rows = [[1, 2, 3, 4], [2, 1, 3, 4], [1, 2, 4, 3], [2, 1, 4, 3]] * 6
    out = cd_diagram_data(table(rows, ["a", "b", "c", "d"]))
    assert out["friedman"]["p_value"] < 0.1
    assert out["cliques"] == [[0, 1], [2, 3]]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(2, 6), st.integers(0, 10_000))
def test_cd_properties(N, D, seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(N, D)) + np.linspace(0, rng.uniform(0, 3), D)
    ranks = np.vstack([rankdata(r) for r in scores])
    t = table(ranks)
    out = cd_diagram_data(t)
    covered = set().union(*map(set, out["cliques"]))
    assert covered == set(range(D))
    by_name = dict(out["mean_ranks"])
    for j, name in enumerate(t.decoders):
        assert abs(by_name[name] - ranks[:, j].mean()) < 1e-12
    assert [r for _, r in out["mean_ranks"]] == sorted(r for _, r in out["mean_ranks"])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(2, 6), st.integers(0, 10_000))
def test_friedman_invariant_to_relabeling(N, D, seed):
    rng = np.random.default_rng(seed)
    ranks = np.vstack([rankdata(r) for r in rng.normal(size=(N, D))])
    stat, p = friedman(table(ranks))
    permuted = ranks[rng.permutation(N)][:, rng.permutation(D)]
    stat2, p2 = friedman(table(permuted))
    assert stat2 == pytest.approx(stat, abs=1e-9) and p2 == pytest.approx(p, abs=1e-12)
    assert stat == pytest.approx(brute_force_friedman(ranks), abs=1e-9)
