"""Friedman test, Holm step-down post-hoc and critical-difference diagram data."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import networkx as nx
import numpy as np
from scipy.stats import chi2, norm

from .metrics import rank_table


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class RankTable:
    """Average ranks of ``D`` decoders (columns) on ``N`` datasets (rows); 1 is best."""

    decoders: tuple[str, ...]
    datasets: tuple[str, ...]
    ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.float64)
        if ranks.shape != (len(self.datasets), len(self.decoders)):
            raise StatsError(f"rank matrix shape {ranks.shape} does not match "
                             f"{len(self.datasets)} datasets x {len(self.decoders)} decoders")
        D = len(self.decoders)
        if not np.allclose(ranks.sum(axis=1), D * (D + 1) / 2, rtol=0, atol=1e-9):
            raise StatsError("every row of a rank table must sum to D(D+1)/2")
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "decoders", tuple(self.decoders))
        object.__setattr__(self, "datasets", tuple(self.datasets))

    @classmethod
    def from_scores(cls, table: Mapping[str, Mapping[str, float]], direction: str = "min") -> "RankTable":
        groups, datasets, ranks = rank_table(table, direction)
        return cls(tuple(groups), tuple(datasets), ranks)

    @property
    def N(self) -> int:
        return len(self.datasets)

    @property
    def D(self) -> int:
        return len(self.decoders)

    @property
    def mean_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=0)


def _check_dims(table: RankTable) -> None:
    if table.N < 2 or table.D < 2:
        raise StatsError(f"need at least 2 datasets and 2 decoders, got N={table.N}, D={table.D}")


def friedman(table: RankTable) -> tuple[float, float]:
    """Friedman chi-square statistic and its p-value (``D - 1`` degrees of freedom).

    Average ranks are used for ties, without a tie-correction factor.
    """
    _check_dims(table)
    N, D = table.N, table.D
    R = table.mean_ranks
    stat = 12 * N / (D * (D + 1)) * (np.sum(R ** 2) - D * (D + 1) ** 2 / 4)
    stat = max(float(stat), 0.0)    # all-tied tables can round to -0
    return stat, float(chi2.sf(stat, D - 1))


def pairwise_pvalues(table: RankTable) -> list[tuple[tuple[str, str], float]]:
    """Two-sided normal-approximation p-values of mean-rank differences for every pair."""
    _check_dims(table)
    se = math.sqrt(table.D * (table.D + 1) / (6 * table.N))
    R = table.mean_ranks
    out = []
    for a, b in itertools.combinations(range(table.D), 2):
        z = abs(R[a] - R[b]) / se
        out.append(((table.decoders[a], table.decoders[b]), float(2 * norm.sf(z))))
    return out


def holm(pairwise_p: Sequence[tuple[object, float]], alpha: float = 0.05) -> list[tuple[object, float, bool]]:
    """Holm step-down adjustment, returned in ascending order of raw p."""
    for _, p in pairwise_p:
        if not 0 <= p <= 1:
            raise StatsError(f"p-value {p} outside [0, 1]")
    ordered = sorted(pairwise_p, key=lambda item: item[1])
    m = len(ordered)
    out, running = [], 0.0
    for j, (pair, p) in enumerate(ordered):
        running = max(running, min(1.0, (m - j) * p))
        out.append((pair, running, running < alpha))
    return out


def cd_diagram_data(table: RankTable, alpha: float = 0.1) -> dict:
    """Mean ranks (best first) and maximal cliques of decoders not significantly different.

    Cliques hold indices into ``mean_ranks``. When the Friedman test does not
    reject at ``alpha`` all decoders form one clique.
    """
    stat, p = friedman(table)
    R = table.mean_ranks
    order = sorted(range(table.D), key=lambda j: (R[j], table.decoders[j]))
    position = {table.decoders[j]: i for i, j in enumerate(order)}
    mean_ranks = [(table.decoders[j], float(R[j])) for j in order]
    adjusted = holm(pairwise_pvalues(table), alpha)
    if p >= alpha:
        cliques = [list(range(table.D))]
    else:
        g = nx.Graph()
        g.add_nodes_from(range(table.D))
        g.add_edges_from((position[a], position[b]) for (a, b), adj, _ in adjusted if adj >= alpha)
        cliques = sorted(sorted(c) for c in nx.find_cliques(g))
    return {
        "mean_ranks": mean_ranks,
        "cliques": cliques,
        "friedman": {"statistic": stat, "p_value": p, "tie_correction": False},
        "pairwise": [{"pair": list(pair), "adjusted_p": adj, "rejected": rej} for pair, adj, rej in adjusted],
        "alpha": alpha,
    }
