"""Experiment orchestration: run, compare and gradient-check models with persisted artifacts.

Output layout of ``run_experiment``::

    <output>/config.json
    <output>/metrics.jsonl          one record per (dataset, model, seed)
    <output>/summary.jsonl          per (dataset, model): mean and standard error over seeds
    <output>/runs/<dataset>/<model>/seed<S>/
        train.jsonl                 epoch records plus a summary record
        checkpoint.json             {"spec", "num_marks", "params"}
        metrics.json                the cell's metrics record (its presence marks the cell done)
        reliability_time.csv, reliability_mark.csv

Timestamps and host information live only under ``meta`` keys.
"""

from __future__ import annotations

import json
import math
import os
import platform
import time
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import EventSequence, load_dataset, split
from .decoders import DECODERS, N_MC_EVAL, STANDALONE
from .diffcore import finite_difference_check, grad
from .likelihood import Schedule, random_search, train
from .metrics import MetricsError, aggregate_ranks, evaluate, standardize_nll
from .model import ModelSpec, SpecError, TPPModel
from .stats import RankTable, cd_diagram_data, friedman

OUTPUT_ROOT_ENV = "POINTLAB_OUTPUT_ROOT"
METRIC_DIRECTIONS = {"nll": "min", "nll_t": "min", "nll_m": "min", "pce": "min", "ece": "min", "f1": "max"}


class HarnessError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    datasets: list[str]
    models: list[ModelSpec]
    output: str
    seeds: list[int] = field(default_factory=lambda: [0])
    grids: dict[str, list] = field(default_factory=dict)
    n_configs: int = 5
    schedule: Schedule = field(default_factory=Schedule)
    n_mc_eval: int = N_MC_EVAL
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    window_q: int | None = None

    def __post_init__(self):
        if not self.datasets:
            raise HarnessError("config lists no datasets")
        if not self.models:
            raise HarnessError("config lists no models")
        if not self.seeds:
            raise HarnessError("config needs at least one seed")
        self.models = [m if isinstance(m, ModelSpec) else ModelSpec.from_dict(m) for m in self.models]
        if self.window_q is not None:
            self.models = [m.replace(window_q=self.window_q) for m in self.models]
        if isinstance(self.schedule, dict):
            self.schedule = Schedule.from_dict(self.schedule)
        self.fractions = tuple(self.fractions)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "datasets": list(self.datasets), "models": [m.to_dict() for m in self.models],
            "output": self.output, "seeds": list(self.seeds), "grids": self.grids,
            "n_configs": self.n_configs, "schedule": vars(self.schedule).copy(),
            "n_mc_eval": self.n_mc_eval, "fractions": list(self.fractions), "window_q": self.window_q,
        }


def resolve_output(output: str | Path) -> Path:
    path = Path(output)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True)


def _meta(started: float) -> dict:
    now = datetime.now(timezone.utc).isoformat()
    return {"finished_at": now, "wall_time_s": time.time() - started, "host": platform.node(),
            "python": platform.python_version(), "torch": torch.__version__}


def _run_cell(cfg: ExperimentConfig, ds, ds_name: str, template: ModelSpec, seed: int, cdir: Path) -> dict:
    started = time.time()
    parts = split(ds, cfg.fractions, seed)
    spec = template.replace(seed=seed)
    if cfg.grids:
        spec, model, report, trials = random_search(spec, parts, cfg.grids, cfg.n_configs, seed, cfg.schedule)
    else:
        model, report = train(spec, parts, cfg.schedule)
        trials = []
    cdir.mkdir(parents=True, exist_ok=True)
    report.checkpoint = "checkpoint.json"
    report.save(cdir / "train.jsonl")
    (cdir / "checkpoint.json").write_text(_dumps(model.to_checkpoint()))
    metrics = evaluate(model, parts.subset("test"), cfg.n_mc_eval)
    metrics.write_csv(cdir)
    return {
        "dataset": ds_name, "model": template.name, "seed": seed, "status": "ok",
        "spec": spec.to_dict(), "metrics": metrics.to_dict(), "best_epoch": report.best_epoch,
        "best_val_nll": report.best_val_nll, "search": trials,
        "meta": _meta(started),
    }


def run_experiment(cfg: ExperimentConfig, log: Callable[[str], None] | None = None) -> Path:
    """Split, search/train, and evaluate every (dataset, model, seed) cell.

    Cells with an existing ``metrics.json`` are reused (crash-resume). A failing
    cell is recorded with ``status: failed`` and the run moves on.
    """
    out = resolve_output(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(_dumps(cfg.to_dict()))
    records = []
    for path in cfg.datasets:
        ds = load_dataset(path)
        ds_name = Path(path).stem
        for template in cfg.models:
            for seed in cfg.seeds:
                cdir = out / "runs" / ds_name / template.name / f"seed{seed}"
                done = cdir / "metrics.json"
                if done.exists():
                    records.append(json.loads(done.read_text()))
                    continue
                try:
                    record = _run_cell(cfg, ds, ds_name, template, seed, cdir)
                    done.write_text(_dumps(record))
                except Exception as err:  # recorded per cell; the run continues
                    record = {"dataset": ds_name, "model": template.name, "seed": seed, "status": "failed",
                              "error": f"{type(err).__name__}: {err}", "meta": {}}
                if log:
                    log(f"{ds_name} {template.name} seed={seed}: {record['status']}")
                records.append(record)
    records.sort(key=lambda r: (r["dataset"], r["model"], r["seed"]))
    (out / "metrics.jsonl").write_text("".join(_dumps(r) + "\n" for r in records))
    (out / "summary.jsonl").write_text("".join(_dumps(s) + "\n" for s in summarize(records)))
    return out


def summarize(records: Sequence[dict]) -> list[dict]:
    cells = defaultdict(list)
    for r in records:
        if r.get("status") == "ok":
            cells[(r["dataset"], r["model"])].append(r["metrics"])
    out = []
    for (ds, model), ms in sorted(cells.items()):
        stats = {}
        for key in ("nll", "nll_t", "nll_m", "pce", "ece", "f1"):
            v = np.array([m[key] for m in ms], dtype=np.float64)
            se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else None
            stats[key] = {"mean": float(v.mean()), "stderr": se}
        out.append({"dataset": ds, "model": model, "n_seeds": len(ms), "metrics": stats})
    return out


def failed_cells(out: str | Path) -> list[dict]:
    path = Path(out) / "metrics.jsonl"
    return [r for r in map(json.loads, path.read_text().splitlines()) if r.get("status") != "ok"]


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def load_records(files: Sequence[str | Path]) -> list[dict]:
    records = []
    for f in files:
        for line in Path(f).read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
    return records


def compare(files: Sequence[str | Path], metric: str = "nll_t", direction: str | None = None,
            alpha: float = 0.1) -> dict:
    """Rank table, mean/median/rank aggregation, standardized NLLs and Friedman/Holm/CD outputs."""
    direction = direction or METRIC_DIRECTIONS.get(metric, "min")
    cells = defaultdict(list)
    for r in load_records(files):
        if r.get("status", "ok") == "ok":
            cells[(r["model"], r["dataset"])].append(r["metrics"][metric])
    table: dict[str, dict[str, float]] = defaultdict(dict)
    for (model, ds), vals in cells.items():
        table[model][ds] = float(np.mean(vals))
    if len(table) < 2:
        raise HarnessError(f"comparison needs at least 2 models, found {len(table)}")
    try:
        aggregate = aggregate_ranks(table, direction)
    except MetricsError as err:
        raise HarnessError(f"incomplete results grid: {err}") from err
    ranks = RankTable.from_scores(table, direction)
    out = {
        "metric": metric, "direction": direction,
        "models": list(ranks.decoders), "datasets": list(ranks.datasets),
        "scores": {m: dict(sorted(v.items())) for m, v in sorted(table.items())},
        "ranks": ranks.ranks.tolist(), "aggregate": aggregate,
    }
    if metric.startswith("nll"):
        std: dict[str, dict[str, float]] = defaultdict(dict)
        for ds in ranks.datasets:
            for model, z in standardize_nll({m: table[m][ds] for m in ranks.decoders}).items():
                std[model][ds] = z
        out["standardized"] = {"scores": {m: dict(sorted(v.items())) for m, v in sorted(std.items())},
                               "aggregate": aggregate_ranks(std, "min")}
    if ranks.N >= 2:
        stat, p = friedman(ranks)
        out["friedman"] = {"statistic": stat, "p_value": p, "tie_correction": False}
        out["cd"] = cd_diagram_data(ranks, alpha)
    return out


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

GRADCHECK_SEQUENCE = EventSequence(np.array([0.4, 1.1, 1.7]), np.array([0, 1, 1]), 2.5)
GRADCHECK_ENCODINGS = ("TO", "LCONCAT", "LE")
GRADCHECK_HISTORIES = ("GRU", "SA", "CONS")


def downsized(spec: ModelSpec) -> ModelSpec:
    return spec.replace(d_t=2, d_k=2, d_h=3, d_in=3, layers=1, heads=1, mixtures=2, n_mc=8)


def gradcheck_families() -> list[ModelSpec]:
    """Every legal decoder x {TO, LCONCAT, LE} x {GRU, SA, CONS} combination, down-sized.

    CONS histories that ignore the event encoding appear once.
    """
    specs, seen = [], set()
    for dec in DECODERS:
        if dec in STANDALONE:
            specs.append(downsized(ModelSpec(dec)))
            continue
        for hist in GRADCHECK_HISTORIES:
            for enc in GRADCHECK_ENCODINGS:
                try:
                    spec = ModelSpec(dec, enc, hist)
                except SpecError:
                    continue
                if not spec.uses_encoding:
                    spec = spec.replace(encoding=None)
                if spec.name not in seen:
                    seen.add(spec.name)
                    specs.append(downsized(spec))
    return specs


@dataclass
class GradcheckReport:
    model: str
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return {"model": self.model, "max_error": self.max_error, "passed": self.passed,
                "tolerance": self.tolerance, "errors": self.errors}


def gradcheck(spec: ModelSpec, seq: EventSequence = GRADCHECK_SEQUENCE, num_marks: int = 2,
              tolerance: float = 1e-4, corrupt: Callable[[dict], dict] | None = None) -> GradcheckReport:
    """Analytic vs central-difference gradients of ``nll_t + nll_m`` for every parameter.

    Monte-Carlo decoders reuse one generator seed per evaluation so the loss is
    a deterministic function of the parameters. ``corrupt`` may alter the
    analytic gradients (negative controls).
    """
    model = TPPModel(spec, num_marks)
    batch = model.batch([seq])

    def loss_fn(_params):
        t, m, _ = model.nll(batch, None, torch.Generator().manual_seed(spec.seed))
        return (t + m).sum()

    grad(loss_fn, model.params)
    analytic = {n: g.clone() for n, g in model.params.grads().items()}
    if corrupt is not None:
        analytic = corrupt(analytic)
    errors = finite_difference_check(loss_fn, model.params, analytic=analytic)
    return GradcheckReport(spec.name, errors, tolerance)
