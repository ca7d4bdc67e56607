"""Model specification, combination rules and the assembled encoder/decoder model."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import torch

from .batch import Batch
from .data import EventSequence
from .decoders import (DECODERS, N_MC_EVAL, QUERY_EMBEDDING, STANDALONE, VIEWS, Context, Decoder, Views,
                       make_decoder)
from .diffcore import DTYPE, ParamStore
from .encoders import ENCODINGS, HISTORY_ENCODERS, EventEncoder, HistoryEncoder


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    decoder: str
    encoding: str | None = None
    history: str | None = None
    d_t: int = 8
    d_k: int = 8
    d_h: int = 16
    d_in: int = 16
    layers: int = 1
    heads: int = 1
    mixtures: int = 8
    n_mc: int = 32
    window_q: int | None = None
    seed: int = 0

    def __post_init__(self):
        check_spec(self)

    @property
    def name(self) -> str:
        if self.decoder in STANDALONE:
            return self.decoder
        parts = [self.history, self.decoder] + ([self.encoding] if self.encoding else [])
        return "-".join(parts)

    @property
    def uses_encoding(self) -> bool:
        """CONS histories ignore event embeddings unless the decoder embeds query times."""
        if self.decoder in STANDALONE:
            return False
        return self.history != "CONS" or self.decoder in QUERY_EMBEDDING

    def replace(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown ModelSpec fields {sorted(unknown)}")
        return cls(**doc)


def check_spec(spec: ModelSpec) -> None:
    """Raise ``SpecError`` for illegal encoding / history / decoder combinations."""
    if spec.decoder not in DECODERS:
        raise SpecError(f"unknown decoder {spec.decoder!r}")
    if spec.decoder in STANDALONE:
        if spec.encoding is not None or spec.history is not None:
            raise SpecError(f"{spec.decoder} carries its own history; encoding and history must be None")
        return
    if spec.history not in HISTORY_ENCODERS:
        raise SpecError(f"{spec.decoder} needs a history encoder from {HISTORY_ENCODERS}, got {spec.history!r}")
    needs_encoding = spec.history != "CONS" or spec.decoder in QUERY_EMBEDDING
    if spec.encoding is None:
        if needs_encoding:
            raise SpecError(f"{spec.history}-{spec.decoder} needs an event encoding")
    elif spec.encoding not in ENCODINGS:
        raise SpecError(f"unknown event encoding {spec.encoding!r}")
    if VIEWS[spec.decoder] == "cumulative" and spec.encoding in ("TEM", "TEMWL"):
        raise SpecError(f"{spec.decoder} needs a monotone time encoding; {spec.encoding} is not")
    if spec.window_q is not None and spec.window_q < 0:
        raise SpecError("window_q must be >= 0")
    for name in ("d_t", "d_k", "d_h", "d_in", "layers", "heads", "mixtures", "n_mc"):
        if getattr(spec, name) < 1:
            raise SpecError(f"{name} must be >= 1")


class TPPModel:
    """Event encoding -> history encoder -> decoder, sharing one ``ParamStore``."""

    def __init__(self, spec: ModelSpec, num_marks: int):
        self.spec, self.num_marks = spec, num_marks
        self.params = ParamStore(spec.seed)
        cumulative = VIEWS[spec.decoder] == "cumulative"
        self.encoder = None
        self.history = None
        if spec.uses_encoding:
            self.encoder = EventEncoder(spec.encoding, self.params, num_marks, spec.d_t, spec.d_k,
                                        monotone_required=cumulative)
        if spec.history is not None:
            d_in = self.encoder.dim if self.encoder else 1
            self.history = HistoryEncoder(spec.history, self.params, d_in, spec.d_h, spec.layers,
                                          spec.heads, spec.window_q)
        self.decoder: Decoder = make_decoder(
            spec.decoder, self.params, num_marks, d_h=spec.d_h, time_encoder=self.encoder,
            n_mc=spec.n_mc, window_q=spec.window_q, d_in=spec.d_in, heads=spec.heads,
            mixtures=spec.mixtures)

    def batch(self, seqs: Sequence[EventSequence]) -> Batch:
        return Batch.from_sequences(list(seqs), self.num_marks)

    def context(self, batch: Batch) -> Context:
        if self.history is None:
            return self.decoder.prepare(batch, None)
        if self.encoder is not None:
            e = self.encoder.encode(batch)
        else:
            e = torch.zeros(batch.size, batch.max_len, self.history.d_in, dtype=DTYPE)
        return self.decoder.prepare(batch, self.history.encode(e))

    def interval_views(self, batch: Batch, n_mc: int | None = None,
                       generator: torch.Generator | None = None) -> tuple[Views, torch.Tensor, torch.Tensor]:
        """Views at the end of every interval, plus the event and (non-empty) window masks."""
        ctx = self.context(batch)
        tau = batch.tau_end
        is_event = batch.is_event
        is_window = batch.is_window & (tau > 0)
        safe = torch.where(is_event | is_window, tau, torch.ones_like(tau))
        return self.decoder.views(ctx, safe[..., None], n_mc, generator), is_event, is_window

    def nll(self, batch: Batch, n_mc: int | None = None,
            generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor, int]:
        """Per-sequence ``(nll_t, nll_m)``, each ``(B,)``, and the count of log-floor hits.

        The time part includes the window term ``Lambda*(T)`` over ``(t_n, T]``.
        """
        v, is_event, is_window = self.interval_views(batch, n_mc, generator)
        log_f = v.log_density[..., 0]
        log_p = v.log_mark[..., 0, :].gather(-1, batch.interval_marks[..., None])[..., 0]
        zero = torch.zeros_like(log_f)
        nll_t = (-torch.where(is_event, log_f, zero).sum(1)
                 - torch.where(is_window, v.log_survival[..., 0], zero).sum(1))
        nll_m = -torch.where(is_event, log_p, zero).sum(1)
        return nll_t, nll_m, v.floor_hits

    def eval_generator(self) -> torch.Generator:
        return torch.Generator().manual_seed(self.spec.seed)

    def to_checkpoint(self) -> dict:
        return {"spec": self.spec.to_dict(), "num_marks": self.num_marks, "params": self.params.to_dict()}

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "TPPModel":
        model = cls(ModelSpec.from_dict(doc["spec"]), doc["num_marks"])
        model.params.load_dict(doc["params"])
        return model


def sequence_nll(model: TPPModel, seq: EventSequence, n_mc: int = N_MC_EVAL) -> tuple[float, float]:
    """``(nll_t, nll_m)`` of one sequence; Monte-Carlo decoders use ``n_mc`` nodes."""
    with torch.no_grad():
        t, m, _ = model.nll(model.batch([seq]), n_mc, model.eval_generator())
    return float(t[0]), float(m[0])
