"""Decomposed NLL objective, the training protocol and random hyperparameter search."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import EventSequence, MarkedDataset
from .diffcore import AdamState, NonFiniteError, adam_step, grad
from .model import ModelSpec, SpecError, TPPModel, check_spec, sequence_nll

__all__ = [
    "ModelSpec", "SpecError", "TPPModel", "check_spec", "sequence_nll",
    "Schedule", "Protocol", "TrainReport", "TrainingDiverged", "dataset_nll", "train", "random_search",
    "DEFAULT_GRIDS",
]

# hyperparameter grids explored by the random search
DEFAULT_GRIDS = {
    "d_t": [4, 8, 16, 32],
    "d_k": [4, 8, 16, 32],
    "d_in": [8, 16, 32],
    "d_h": [8, 16, 32, 64],
    "layers": [1, 2],
    "heads": [1, 2],
    "mixtures": [8, 16, 32, 64],
}


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Schedule:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    lr_patience: int = 5
    lr_factor: float = 0.5

    @classmethod
    def from_dict(cls, doc: dict | None) -> "Schedule":
        return cls(**(doc or {}))


@dataclass
class Protocol:
    """Early stopping and learning-rate halving driven by validation losses.

    ``update`` is called once per epoch. A strict decrease of the validation
    loss counts as an improvement; every ``lr_patience`` consecutive
    non-improving epochs halve the learning rate and ``patience`` of them stop
    training.
    """

    schedule: Schedule
    lr: float = field(init=False)
    best: float = field(init=False, default=math.inf)
    best_epoch: int = field(init=False, default=-1)
    bad_epochs: int = field(init=False, default=0)
    epochs_since_lr_change: int = field(init=False, default=0)
    epoch: int = field(init=False, default=0)
    stop_reason: str | None = field(init=False, default=None)

    def __post_init__(self):
        self.lr = self.schedule.lr

    @property
    def stopped(self) -> bool:
        return self.stop_reason is not None

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns whether it improved on the best validation loss."""
        self.epoch += 1
        improved = val_loss < self.best
        if improved:
            self.best, self.best_epoch = val_loss, self.epoch
            self.bad_epochs = self.epochs_since_lr_change = 0
        else:
            self.bad_epochs += 1
            self.epochs_since_lr_change += 1
            if self.epochs_since_lr_change >= self.schedule.lr_patience:
                self.lr *= self.schedule.lr_factor
                self.epochs_since_lr_change = 0
        if self.bad_epochs >= self.schedule.patience:
            self.stop_reason = "patience"
        elif self.epoch >= self.schedule.max_epochs:
            self.stop_reason = "max_epochs"
        return improved


@dataclass
class TrainReport:
    spec: dict
    epochs: list[dict]
    best_epoch: int
    best_val_nll: float
    stop_reason: str
    checkpoint: str | None = None
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        best = self.epochs[self.best_epoch - 1] if self.best_epoch > 0 else {}
        return {"type": "summary", "spec": self.spec, "best_epoch": self.best_epoch,
                "best_val_nll": self.best_val_nll, "best_val_nll_t": best.get("val_nll_t"),
                "best_val_nll_m": best.get("val_nll_m"), "stop_reason": self.stop_reason,
                "num_epochs": len(self.epochs), "checkpoint": self.checkpoint}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "epoch", **e}) for e in self.epochs]
        lines.append(json.dumps(self.summary()))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


def _batches(seqs: Sequence[EventSequence], size: int) -> list[list[EventSequence]]:
    return [list(seqs[i:i + size]) for i in range(0, len(seqs), size)]


def dataset_nll(model: TPPModel, seqs: Sequence[EventSequence], n_mc: int | None = None,
                batch_size: int = 32) -> tuple[float, float]:
    """Mean per-sequence ``(nll_t, nll_m)`` with a fixed Monte-Carlo generator."""
    if not seqs:
        raise ValueError("no sequences to evaluate")
    gen = model.eval_generator()
    tot_t = tot_m = 0.0
    with torch.no_grad():
        for chunk in _batches(seqs, batch_size):
            t, m, _ = model.nll(model.batch(chunk), n_mc, gen)
            tot_t += float(t.sum())
            tot_m += float(m.sum())
    return tot_t / len(seqs), tot_m / len(seqs)


def train(spec: ModelSpec, ds: MarkedDataset, schedule: Schedule | None = None,
          val_fn: Callable[[TPPModel], tuple[float, float]] | None = None,
          on_epoch: Callable[[TPPModel, dict], None] | None = None) -> tuple[TPPModel, TrainReport]:
    """Mini-batch Adam on mean per-sequence ``nll_t + nll_m``.

    Validation NLL (time + mark) drives early stopping and learning-rate
    halving; the best-validation parameters are restored at the end. ``val_fn``
    replaces the validation evaluation (it returns ``(nll_t, nll_m)``).
    """
    schedule = schedule or Schedule()
    train_seqs, val_seqs = ds.subset("train"), ds.subset("val")
    if not train_seqs or not val_seqs:
        raise ValueError("train and val splits must be non-empty")
    model = TPPModel(spec, ds.num_marks)
    protocol = Protocol(schedule)
    rng = np.random.default_rng(spec.seed)
    mc_gen = torch.Generator().manual_seed(spec.seed)
    adam = AdamState.fresh(model.params, schedule.lr)
    best_state = model.params.state()
    epochs: list[dict] = []
    started = time.time()
    while not protocol.stopped:
        order = rng.permutation(len(train_seqs))
        sum_t = sum_m = 0.0
        hits = 0
        for b, idx in enumerate(_batches(order, schedule.batch_size)):
            batch = model.batch([train_seqs[i] for i in idx])
            parts = {}

            def loss_fn(_params):
                t, m, h = model.nll(batch, None, mc_gen)
                parts.update(t=float(t.detach().sum()), m=float(m.detach().sum()), hits=h)
                return (t + m).mean()

            try:
                grad(loss_fn, model.params)
            except NonFiniteError as err:
                diag = {"epoch": protocol.epoch + 1, "batch": b, "parameter": err.name, "lr": protocol.lr}
                raise TrainingDiverged(f"training diverged: {err}", diag) from err
            adam_step(model.params, protocol.lr, adam)
            sum_t += parts["t"]
            sum_m += parts["m"]
            hits += parts["hits"]
        val_t, val_m = val_fn(model) if val_fn else dataset_nll(model, val_seqs)
        if not math.isfinite(val_t + val_m):
            raise TrainingDiverged("validation NLL is not finite", {"epoch": protocol.epoch + 1})
        lr_used = protocol.lr
        if protocol.update(val_t + val_m):
            best_state = model.params.state()
        record = {
            "epoch": protocol.epoch, "lr": lr_used,
            "train_nll": (sum_t + sum_m) / len(train_seqs),
            "train_nll_t": sum_t / len(train_seqs), "train_nll_m": sum_m / len(train_seqs),
            "val_nll": val_t + val_m, "val_nll_t": val_t, "val_nll_m": val_m,
            "floor_hits": hits,
        }
        epochs.append(record)
        if on_epoch:
            on_epoch(model, record)
    model.params.load_state(best_state)
    report = TrainReport(spec.to_dict(), epochs, protocol.best_epoch, protocol.best,
                         protocol.stop_reason, meta={"wall_time_s": time.time() - started})
    return model, report


def sample_configs(template: ModelSpec, grids: dict[str, list], n_configs: int, seed: int) -> list[ModelSpec]:
    """``n_configs`` specs drawn uniformly from the grids; fields absent from the template are ignored."""
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ValueError("grids must be non-empty")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_configs):
        changes = {k: grids[k][int(rng.integers(len(grids[k])))] for k in sorted(grids)}
        spec = _legalize(template, changes)
        out.append(spec)
    return out


def _legalize(template: ModelSpec, changes: dict) -> ModelSpec:
    # heads must divide the attention widths; fall back to a single head otherwise
    spec = template.replace(**changes)
    if spec.d_h % spec.heads or spec.d_in % spec.heads:
        spec = spec.replace(heads=1)
    return spec


def random_search(template: ModelSpec, ds: MarkedDataset, grids: dict[str, list] | None = None,
                  n_configs: int = 5, seed: int = 0, schedule: Schedule | None = None
                  ) -> tuple[ModelSpec, TPPModel, TrainReport, list[dict]]:
    """Train ``n_configs`` sampled configurations and keep the lowest validation NLL."""
    configs = sample_configs(template, grids if grids is not None else DEFAULT_GRIDS, n_configs, seed)
    trials = []
    best = None
    for spec in configs:
        try:
            model, report = train(spec, ds, schedule)
        except TrainingDiverged as err:
            trials.append({"spec": spec.to_dict(), "status": "diverged", "diagnostics": err.diagnostics})
            continue
        trials.append({"spec": spec.to_dict(), "status": "ok", "best_val_nll": report.best_val_nll})
        if best is None or report.best_val_nll < best[2].best_val_nll:
            best = (spec, model, report)
    if best is None:
        raise TrainingDiverged("every configuration diverged", {"trials": trials})
    return (*best, trials)


def report_dict(report: TrainReport) -> dict:
    return asdict(report)
