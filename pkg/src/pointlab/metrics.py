"""Evaluation metrics: NLL split, PCE, ECE, F1, reliability data, standardization and ranks."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .data import EventSequence
from .decoders import N_MC_EVAL

PCE_LEVELS = 50
ECE_BINS = 10


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MarkRecord:
    predicted: int
    true: int
    confidence: float


def _as_array(values: Iterable[float]) -> np.ndarray:
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if arr.size == 0:
        raise MetricsError("empty input")
    return arr.reshape(-1)


def reliability_time(cdf_values, M: int = PCE_LEVELS) -> list[tuple[float, float]]:
    """``(p_m, fraction of F*(tau) <= p_m)`` for ``p_m = m / M``, ``m = 1..M``."""
    v = _as_array(cdf_values)
    if np.any((v < 0) | (v > 1)):
        raise MetricsError("CDF values must lie in [0, 1]")
    levels = np.arange(1, M + 1) / M
    emp = np.searchsorted(np.sort(v), levels, side="right") / v.size
    return list(zip(levels.tolist(), emp.tolist()))


def pce(cdf_values, M: int = PCE_LEVELS) -> float:
    """Probabilistic calibration error of pooled ``F*(tau_i)`` values."""
    return float(np.mean([abs(e - p) for p, e in reliability_time(cdf_values, M)]))


def _records(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = [(r.predicted, r.true, r.confidence) if isinstance(r, MarkRecord) else tuple(r) for r in records]
    if not rows:
        raise MetricsError("empty input")
    pred, true, conf = (np.asarray(c) for c in zip(*rows))
    conf = conf.astype(np.float64)
    if np.any((conf < 0) | (conf > 1)):
        raise MetricsError("confidences must lie in [0, 1]")
    return pred.astype(np.int64), true.astype(np.int64), conf


def reliability_mark(records, J: int = ECE_BINS) -> list[tuple[int, float, float, int]]:
    """``(bin, mean confidence, accuracy, count)`` for right-closed bins ``((j-1)/J, j/J]``.

    Confidence 0 falls in the first bin; empty bins report zeros.
    """
    pred, true, conf = _records(records)
    edges = np.arange(1, J + 1) / J
    idx = np.minimum(np.searchsorted(edges, conf, side="left"), J - 1)
    out = []
    for j in range(J):
        sel = idx == j
        n = int(sel.sum())
        if n:
            out.append((j + 1, float(conf[sel].mean()), float((pred[sel] == true[sel]).mean()), n))
        else:
            out.append((j + 1, 0.0, 0.0, 0))
    return out


def ece(records, J: int = ECE_BINS) -> float:
    """Unweighted mean over bins of ``|acc - conf|``; empty bins contribute 0."""
    return sum(abs(acc - conf) for _, conf, acc, n in reliability_mark(records, J) if n) / J


def f1(records) -> float:
    """Micro-averaged F1 of single-label predictions."""
    pred, true, _ = _records(records)
    tp = int((pred == true).sum())
    wrong = pred.size - tp          # each miss is one false positive and one false negative
    return 2 * tp / (2 * tp + 2 * wrong)


def standardize_nll(scores: Mapping[str, float]) -> dict[str, float]:
    """``(score - median) / IQR`` with linearly interpolated quartiles; IQR 0 maps to 0."""
    names = list(scores)
    if len(names) < 2:
        raise MetricsError("standardization needs at least 2 models")
    v = np.array([scores[n] for n in names], dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    if iqr == 0:
        return {n: 0.0 for n in names}
    return {n: float((s - med) / iqr) for n, s in zip(names, v)}


def rank_table(table: Mapping[str, Mapping[str, float]], direction: str = "min"
               ) -> tuple[list[str], list[str], np.ndarray]:
    """Groups, datasets and the ``datasets x groups`` average-rank matrix (1 = best)."""
    if direction not in ("min", "max"):
        raise MetricsError("direction must be 'min' or 'max'")
    groups = sorted(table)
    datasets = sorted({d for g in groups for d in table[g]})
    ranks = np.empty((len(datasets), len(groups)))
    for i, d in enumerate(datasets):
        missing = [g for g in groups if d not in table[g]]
        if missing:
            raise MetricsError(f"missing cells for dataset {d!r}: {missing}")
        row = np.array([table[g][d] for g in groups], dtype=np.float64)
        ranks[i] = rankdata(row if direction == "min" else -row, method="average")
    return groups, datasets, ranks


def aggregate_ranks(table: Mapping[str, Mapping[str, float]], direction: str = "min") -> dict[str, dict]:
    """Per group: mean and median score over datasets and the mean per-dataset rank."""
    groups, datasets, ranks = rank_table(table, direction)
    out = {}
    for j, g in enumerate(groups):
        vals = np.array([table[g][d] for d in datasets])
        out[g] = {"mean": float(vals.mean()), "median": float(np.median(vals)), "rank": float(ranks[:, j].mean())}
    return out


@dataclass
class MetricsReport:
    nll_t: float
    nll_m: float
    pce: float
    ece: float
    f1: float
    num_sequences: int
    num_events: int
    reliability_time: list[tuple[float, float]] = field(default_factory=list)
    reliability_mark: list[tuple[int, float, float, int]] = field(default_factory=list)
    f1_average: str = "micro"
    floor_hits: int = 0

    @property
    def nll(self) -> float:
        return self.nll_t + self.nll_m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nll"] = self.nll
        d["reliability_time"] = [list(r) for r in self.reliability_time]
        d["reliability_mark"] = [list(r) for r in self.reliability_mark]
        return d

    def write_csv(self, directory: str | Path) -> None:
        directory = Path(directory)
        with open(directory / "reliability_time.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "empirical_cdf"])
            w.writerows(self.reliability_time)
        with open(directory / "reliability_mark.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "conf", "acc", "count"])
            w.writerows(self.reliability_mark)


def evaluate(model, seqs: Sequence[EventSequence], n_mc: int = N_MC_EVAL, batch_size: int = 8) -> MetricsReport:
    """NLL split, calibration and mark-prediction metrics on ``seqs``.

    ``F*(tau_i)`` and the mark predictions are taken at the true arrival times;
    all events are pooled across sequences.
    """
    if not seqs:
        raise MetricsError("empty input")
    gen = model.eval_generator()
    sum_t = sum_m = 0.0
    hits = 0
    cdfs, records = [], []
    with torch.no_grad():
        for i in range(0, len(seqs), batch_size):
            batch = model.batch(seqs[i:i + batch_size])
            v, is_event, is_window = model.interval_views(batch, n_mc, gen)
            zero = torch.zeros_like(v.log_density[..., 0])
            log_p_all = v.log_mark[..., 0, :]
            log_p = log_p_all.gather(-1, batch.interval_marks[..., None])[..., 0]
            sum_t -= float(torch.where(is_event, v.log_density[..., 0], zero).sum()
                           + torch.where(is_window, v.log_survival[..., 0], zero).sum())
            sum_m -= float(torch.where(is_event, log_p, zero).sum())
            hits += v.floor_hits
            cdfs.append(v.cdf[..., 0][is_event])
            pred = torch.argmax(log_p_all, dim=-1)
            conf = log_p_all.gather(-1, pred[..., None])[..., 0].exp()
            records += zip(pred[is_event].tolist(), batch.interval_marks[is_event].tolist(),
                           conf[is_event].clamp(0, 1).tolist())
    cdf = torch.cat(cdfs).clamp(0, 1).numpy()
    return MetricsReport(
        nll_t=sum_t / len(seqs), nll_m=sum_m / len(seqs),
        pce=pce(cdf), ece=ece(records), f1=f1(records),
        num_sequences=len(seqs), num_events=len(records),
        reliability_time=reliability_time(cdf), reliability_mark=reliability_mark(records),
        floor_hits=hits,
    )
