"""Padded tensor view of a list of event sequences.

Interval ``i`` (``0 <= i <= L``) is ``(t_{i-1}, t_i]`` with ``t_{-1} = 0``; for a
sequence of length ``n`` interval ``n`` is the window tail ``(t_n, T]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data import EventSequence
from .diffcore import DTYPE


@dataclass
class Batch:
    times: torch.Tensor       # (B, L)
    marks: torch.Tensor       # (B, L) long
    tau: torch.Tensor         # (B, L), padded with 1
    mask: torch.Tensor        # (B, L) bool
    lengths: torch.Tensor     # (B,) long
    t_end: torch.Tensor       # (B,)
    num_marks: int

    @classmethod
    def from_sequences(cls, seqs: Sequence[EventSequence], num_marks: int) -> "Batch":
        B = len(seqs)
        L = max((len(s) for s in seqs), default=0)
        times = np.zeros((B, L))
        tau = np.ones((B, L))
        marks = np.zeros((B, L), dtype=np.int64)
        mask = np.zeros((B, L), dtype=bool)
        for b, s in enumerate(seqs):
            n = len(s)
            times[b, :n] = s.times
            # padded times keep increasing so absolute-time encodings stay finite
            last = s.times[-1] if n else 0.0
            times[b, n:] = last + np.arange(1, L - n + 1)
            tau[b, :n] = s.tau
            marks[b, :n] = s.marks
            mask[b, :n] = True
        return cls(
            times=torch.tensor(times, dtype=DTYPE),
            marks=torch.tensor(marks),
            tau=torch.tensor(tau, dtype=DTYPE),
            mask=torch.tensor(mask),
            lengths=torch.tensor([len(s) for s in seqs]),
            t_end=torch.tensor([s.t_end for s in seqs], dtype=DTYPE),
            num_marks=num_marks,
        )

    @property
    def size(self) -> int:
        return self.times.shape[0]

    @property
    def max_len(self) -> int:
        return self.times.shape[1]

    # interval views, shape (B, L + 1) -------------------------------------------
    @property
    def t_prev(self) -> torch.Tensor:
        return torch.cat([torch.zeros_like(self.t_end)[:, None], self.times], dim=1)

    @property
    def is_event(self) -> torch.Tensor:
        return torch.cat([self.mask, self.mask.new_zeros(self.size, 1)], dim=1)

    @property
    def is_window(self) -> torch.Tensor:
        idx = torch.arange(self.max_len + 1)[None, :]
        return idx == self.lengths[:, None]

    @property
    def interval_marks(self) -> torch.Tensor:
        return torch.cat([self.marks, self.marks.new_zeros(self.size, 1)], dim=1)

    @property
    def tau_end(self) -> torch.Tensor:
        """Length of every interval: ``tau_i`` for events, ``T - t_n`` for the tail, 1 for padding."""
        out = torch.cat([self.tau, torch.ones_like(self.t_end)[:, None]], dim=1)
        last = self.t_prev.gather(1, self.lengths[:, None])
        tail = (self.t_end[:, None] - last).expand_as(out)
        return torch.where(self.is_window, tail, out)
