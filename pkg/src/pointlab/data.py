"""Event data model, dataset I/O, preprocessing and splits."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets or invalid preprocessing requests."""


@dataclass(frozen=True)
class Event:
    t: float
    k: int
    tau: float


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Ordered marked events observed on the window ``[0, t_end]``."""

    times: np.ndarray
    marks: np.ndarray
    t_end: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        marks = np.asarray(self.marks, dtype=np.int64).reshape(-1)
        if times.shape != marks.shape:
            raise DataError("times and marks must have the same length")
        if not np.isfinite(self.t_end) or self.t_end <= 0:
            raise DataError(f"t_end must be a positive real, got {self.t_end}")
        if len(times):
            if times[0] < 0:
                raise DataError("event times must be nonnegative")
            if np.any(np.diff(times) <= 0):
                raise DataError("event times must be strictly increasing (no duplicates)")
            if times[-1] > self.t_end:
                raise DataError(f"last event time {times[-1]} exceeds t_end {self.t_end}")
            if marks.min() < 0:
                raise DataError("marks must be nonnegative integers")
        times.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "t_end", float(self.t_end))

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (self.t_end == other.t_end
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.marks, other.marks))

    @property
    def tau(self) -> np.ndarray:
        # tau_1 = t_1
        return np.diff(self.times, prepend=0.0)

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(k), float(d))
                for t, k, d in zip(self.times, self.marks, self.tau)]

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)


@dataclass(frozen=True)
class MarkedDataset:
    sequences: tuple[EventSequence, ...]
    num_marks: int
    splits: dict[str, tuple[int, ...]] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.num_marks < 1:
            raise DataError("num_marks must be a positive integer")
        for i, seq in enumerate(self.sequences):
            if len(seq) and seq.marks.max() >= self.num_marks:
                raise DataError(f"sequence {i}: mark {seq.marks.max()} >= num_marks {self.num_marks}")
        if self.splits is not None:
            seen = [i for idx in self.splits.values() for i in idx]
            if sorted(seen) != list(range(len(self.sequences))):
                raise DataError("splits must be disjoint and cover every sequence index")
            object.__setattr__(self, "splits", {k: tuple(v) for k, v in self.splits.items()})

    def __len__(self) -> int:
        return len(self.sequences)

    def subset(self, name: str) -> list[EventSequence]:
        if self.splits is None:
            raise DataError("dataset has no splits; call split() first")
        return [self.sequences[i] for i in self.splits[name]]

    @property
    def num_events(self) -> int:
        return sum(len(s) for s in self.sequences)


def _parse(doc) -> MarkedDataset:
    if not isinstance(doc, dict) or "num_marks" not in doc or "sequences" not in doc:
        raise DataError("dataset document needs 'num_marks' and 'sequences'")
    seqs = []
    for i, s in enumerate(doc["sequences"]):
        if "t_end" not in s:
            raise DataError(f"sequence {i}: missing t_end")
        events = s.get("events", [])
        try:
            times = [float(e["t"]) for e in events]
            marks = [int(e["k"]) for e in events]
        except (KeyError, TypeError) as exc:
            raise DataError(f"sequence {i}: malformed event ({exc})") from exc
        try:
            seqs.append(EventSequence(np.array(times), np.array(marks, dtype=np.int64), float(s["t_end"])))
        except DataError as exc:
            raise DataError(f"sequence {i}: {exc}") from exc
    splits = doc.get("splits")
    return MarkedDataset(tuple(seqs), int(doc["num_marks"]), splits)


def load_dataset(path: str | Path) -> MarkedDataset:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    return _parse(doc)


def dataset_to_dict(ds: MarkedDataset) -> dict:
    doc = {
        "num_marks": ds.num_marks,
        "sequences": [
            {"t_end": s.t_end,
             "events": [{"t": float(t), "k": int(k)} for t, k in zip(s.times, s.marks)]}
            for s in ds.sequences
        ],
    }
    if ds.splits is not None:
        doc["splits"] = {k: list(v) for k, v in ds.splits.items()}
    return doc


def save_dataset(ds: MarkedDataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds)))


def preprocess(raw: MarkedDataset, top_marks: int = 50, scale_to: float = 10.0) -> MarkedDataset:
    """Keep the ``top_marks`` most frequent marks, drop short sequences and rescale time.

    Surviving marks are relabelled ``0..K'-1`` by descending pooled frequency
    (ties: smaller original id first). Times and windows are multiplied by
    ``scale_to / t_max`` with ``t_max`` the largest timestamp or window end
    left after filtering.
    """
    if top_marks < 1:
        raise DataError("top_marks must be >= 1")
    if not scale_to > 0:
        raise DataError("scale_to must be > 0")

    counts = Counter()
    for s in raw.sequences:
        counts.update(s.marks.tolist())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_marks]
    remap = {old: new for new, (old, _) in enumerate(ranked)}

    kept = []
    for s in raw.sequences:
        keep = np.array([m in remap for m in s.marks.tolist()], dtype=bool)
        if keep.sum() < 2:
            continue
        marks = np.array([remap[m] for m in s.marks[keep].tolist()], dtype=np.int64)
        kept.append((s.times[keep], marks, s.t_end))
    if not kept:
        raise DataError("preprocessing removed every sequence")

    t_max = max(max(t_end, times[-1]) for times, _, t_end in kept)
    factor = scale_to / t_max
    out = [EventSequence(times * factor, marks, t_end * factor) for times, marks, t_end in kept]
    return MarkedDataset(tuple(out), max(len(remap), 1))


def split(ds: MarkedDataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> MarkedDataset:
    """Seeded random train/val/test split; floor sizes with the remainder sent to train."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DataError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = len(ds.sequences)
    if n < 3:
        raise DataError(f"need at least 3 sequences to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test
    splits = {
        "train": tuple(sorted(perm[:n_train].tolist())),
        "val": tuple(sorted(perm[n_train:n_train + n_val].tolist())),
        "test": tuple(sorted(perm[n_train + n_val:].tolist())),
    }
    return MarkedDataset(ds.sequences, ds.num_marks, splits)
