"""Event encodings ``e_i`` and history embeddings ``h_i``.

History rows are indexed by interval: row ``i`` summarises events ``0..i-1``
(0-based), so a batch with ``L`` events yields ``L + 1`` rows, the last one
being the history used for the window tail.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .batch import Batch
from .diffcore import DTYPE, ParamStore

ENCODINGS = ("TO", "LTO", "CONCAT", "LCONCAT", "TEM", "TEMWL", "LE", "LEWL")
MARKED_ENCODINGS = ("CONCAT", "LCONCAT", "TEMWL", "LEWL")
HISTORY_ENCODERS = ("GRU", "SA", "CONS")

# floor on inter-arrival times fed to log encodings; only reached by the
# tau = 0 reference point of cumulative decoders
LOG_TAU_FLOOR = 1e-10


class EncoderError(ValueError):
    pass


class EventEncoder:
    """Time embedding ``e^t`` of a (query) time and the event embedding ``[e^t, e^k]``."""

    def __init__(self, kind: str, params: ParamStore, num_marks: int, d_t: int = 8,
                 d_k: int = 8, monotone_required: bool = False, prefix: str = "encoding"):
        if kind not in ENCODINGS:
            raise EncoderError(f"unknown event encoding {kind!r}")
        if kind in ("TEM", "TEMWL"):
            if monotone_required:
                raise EncoderError(f"{kind} is not monotone in time and cannot feed a cumulative decoder")
            if d_t % 2:
                raise EncoderError(f"{kind} needs an even d_t, got {d_t}")
        if kind in MARKED_ENCODINGS and num_marks < 2:
            raise EncoderError(f"{kind} embeds marks and needs K >= 2")
        self.kind = kind
        self.params = params
        self.prefix = prefix
        self.num_marks = num_marks
        self.monotone = monotone_required
        self.base = {"CONCAT": "TO", "LCONCAT": "LTO", "TEMWL": "TEM", "LEWL": "LE"}.get(kind, kind)
        self.time_dim = d_t if self.base in ("TEM", "LE") else 1
        self.mark_dim = d_k if kind in MARKED_ENCODINGS else 0
        if self.base == "LE":
            params.weight(f"{prefix}.W", (d_t, 1), "nonnegative" if monotone_required else "free")
            params.bias(f"{prefix}.b", d_t)
        if self.mark_dim:
            params.weight(f"{prefix}.E", (d_k, num_marks))
        if self.base == "TEM":
            j = torch.arange(d_t // 2, dtype=DTYPE)
            self.freqs = 1000.0 ** (-2.0 * j / d_t)

    @property
    def dim(self) -> int:
        return self.time_dim + self.mark_dim

    def time_embedding(self, tau: torch.Tensor, t_abs: torch.Tensor) -> torch.Tensor:
        """``(..., time_dim)`` embedding of inter-arrival ``tau`` / arrival time ``t_abs``."""
        if self.base == "TO":
            return tau[..., None]
        if self.base == "LTO":
            return torch.log(torch.clamp(tau, min=LOG_TAU_FLOOR))[..., None]
        if self.base == "TEM":
            angles = t_abs[..., None] * self.freqs
            return torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(-2)
        W = self.params[f"{self.prefix}.W"][:, 0]
        b = self.params[f"{self.prefix}.b"]
        pre = tau[..., None] * W + b
        return F.softplus(pre) if self.monotone else torch.relu(pre)

    def mark_embedding(self, marks: torch.Tensor) -> torch.Tensor:
        E = self.params[f"{self.prefix}.E"]
        return E.T[marks]

    def encode(self, batch: Batch) -> torch.Tensor:
        """Event embeddings, ``(B, L, d_e)``."""
        e = self.time_embedding(batch.tau, batch.times)
        if self.mark_dim:
            e = torch.cat([e, self.mark_embedding(batch.marks)], dim=-1)
        return e


def encode_events(seq_or_batch, enc: EventEncoder) -> torch.Tensor:
    batch = seq_or_batch if isinstance(seq_or_batch, Batch) else Batch.from_sequences([seq_or_batch], enc.num_marks)
    out = enc.encode(batch)
    return out if isinstance(seq_or_batch, Batch) else out[0]


class HistoryEncoder:
    """GRU, self-attention or constant history encoder with an optional window ``q``."""

    def __init__(self, kind: str, params: ParamStore, d_in: int, d_h: int = 16, layers: int = 1,
                 heads: int = 1, window_q: int | None = None, prefix: str = "history"):
        if kind not in HISTORY_ENCODERS:
            raise EncoderError(f"unknown history encoder {kind!r}")
        if window_q is not None and window_q < 0:
            raise EncoderError("window_q must be >= 0")
        if kind == "SA" and d_h % heads:
            raise EncoderError(f"d_h={d_h} not divisible by heads={heads}")
        self.kind, self.params, self.prefix = kind, params, prefix
        self.d_in, self.d_h, self.layers, self.heads = d_in, d_h, layers, heads
        self.window_q = window_q
        p = prefix
        if kind == "GRU":
            for l in range(layers):
                fan_in = d_in if l == 0 else d_h
                params.weight(f"{p}.gru{l}.W_x", (3 * d_h, fan_in))
                params.weight(f"{p}.gru{l}.W_h", (3 * d_h, d_h))
                params.bias(f"{p}.gru{l}.b_x", 3 * d_h)
                params.bias(f"{p}.gru{l}.b_h", 3 * d_h)
            # random rather than zero: a zero state puts downstream relu units on their kink
            params.weight(f"{p}.h0", (layers, d_h))
        elif kind == "SA":
            for l in range(layers):
                fan_in = d_in if l == 0 else d_h
                for name in ("W_Q", "W_K", "W_V"):
                    params.weight(f"{p}.sa{l}.{name}", (d_h, fan_in))
                params.weight(f"{p}.sa{l}.W1", (d_h, d_h))
                params.bias(f"{p}.sa{l}.b1", d_h)
                params.weight(f"{p}.sa{l}.W2", (d_h, d_h))
                params.bias(f"{p}.sa{l}.b2", d_h)
            params.weight(f"{p}.h0", (d_h,))

    # GRU ----------------------------------------------------------------------
    def _gru_cell(self, l: int, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        P, p = self.params, f"{self.prefix}.gru{l}"
        gx = x @ P[f"{p}.W_x"].T + P[f"{p}.b_x"]
        gh = h @ P[f"{p}.W_h"].T + P[f"{p}.b_h"]
        xr, xz, xn = gx.chunk(3, dim=-1)
        hr, hz, hn = gh.chunk(3, dim=-1)
        r = torch.sigmoid(xr + hr)
        z = torch.sigmoid(xz + hz)
        n = torch.tanh(xn + r * hn)
        return (1 - z) * n + z * h

    def _gru_run(self, e: torch.Tensor, valid: torch.Tensor | None = None) -> list[torch.Tensor]:
        """Run the stack over ``e`` (N, S, d_in) from h0; returns top-layer states after each step.

        Steps where ``valid`` is False leave the state untouched.
        """
        N, S = e.shape[:2]
        h0 = self.params[f"{self.prefix}.h0"]
        states = [h0[l].expand(N, self.d_h) for l in range(self.layers)]
        tops = []
        for s in range(S):
            x = e[:, s]
            for l in range(self.layers):
                new = self._gru_cell(l, x, states[l])
                if valid is not None:
                    new = torch.where(valid[:, s, None], new, states[l])
                states[l] = new
                x = new
            tops.append(states[-1])
        return tops

    def _gru(self, e: torch.Tensor, window: int | None) -> torch.Tensor:
        B, L, _ = e.shape
        h0_top = self.params[f"{self.prefix}.h0"][-1].expand(B, 1, self.d_h)
        if window is None or window >= L:
            tops = self._gru_run(e)
            return torch.cat([h0_top] + [t[:, None] for t in tops], dim=1)
        if window == 0:
            return h0_top.expand(B, L + 1, self.d_h)
        if window == L - 1:
            # every event row sees its whole history; only the tail row is truncated
            tops = self._gru_run(e[:, :-1])
            tail = self._gru_run(e[:, 1:])[-1]
            return torch.cat([h0_top] + [t[:, None] for t in tops] + [tail[:, None]], dim=1)
        return self._gru_windowed(e, window)

    def _gru_windowed(self, e: torch.Tensor, q: int) -> torch.Tensor:
        # row i re-runs the cell from h0 over events i-q .. i-1
        B, L, _ = e.shape
        rows = torch.arange(L + 1)[:, None] - q + torch.arange(q)[None, :]   # (L+1, q)
        valid = rows >= 0
        flat = e[:, rows.clamp(min=0)].reshape(B * (L + 1), q, -1)
        vflat = valid[None].expand(B, -1, -1).reshape(B * (L + 1), q)
        top = self._gru_run(flat, vflat)[-1]
        return top.reshape(B, L + 1, self.d_h)

    # self-attention -----------------------------------------------------------
    def _sa_layer(self, l: int, z: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        P, p = self.params, f"{self.prefix}.sa{l}"
        B, L, _ = z.shape
        H, dh = self.heads, self.d_h // self.heads
        q = (z @ P[f"{p}.W_Q"].T).reshape(B, L, H, dh)
        k = (z @ P[f"{p}.W_K"].T).reshape(B, L, H, dh)
        v = (z @ P[f"{p}.W_V"].T).reshape(B, L, H, dh)
        scores = torch.einsum("bahd,bjhd->bhaj", q, k) / math.sqrt(dh)
        scores = scores.masked_fill(~allowed[None, None], float("-inf"))
        w = torch.softmax(scores, dim=-1)
        attn = torch.einsum("bhaj,bjhd->bahd", w, v).reshape(B, L, self.d_h)
        hidden = torch.relu(attn @ P[f"{p}.W1"].T + P[f"{p}.b1"])
        return hidden @ P[f"{p}.W2"].T + P[f"{p}.b2"]

    def _sa(self, e: torch.Tensor, window: int | None) -> torch.Tensor:
        B, L, _ = e.shape
        h0 = self.params[f"{self.prefix}.h0"].expand(B, 1, self.d_h)
        if window == 0 or L == 0:
            return h0.expand(B, L + 1, self.d_h)
        a = torch.arange(L)
        allowed = a[None, :] <= a[:, None]
        if window is not None:
            allowed = allowed & (a[None, :] > a[:, None] - window)
        z = e
        for l in range(self.layers):
            z = self._sa_layer(l, z, allowed)
        return torch.cat([h0, z], dim=1)

    def encode(self, e: torch.Tensor) -> torch.Tensor:
        """History rows ``(B, L + 1, d_h)`` from event embeddings ``(B, L, d_in)``."""
        if e.shape[-1] != self.d_in:
            raise EncoderError(f"event embedding width {e.shape[-1]} != encoder input {self.d_in}")
        if self.kind == "CONS":
            B, L, _ = e.shape
            return torch.ones(B, L + 1, self.d_h, dtype=DTYPE)
        if self.kind == "GRU":
            return self._gru(e, self.window_q)
        return self._sa(e, self.window_q)

    def encode_windowed(self, e: torch.Tensor, window: int) -> torch.Tensor:
        """Force the windowed code path (used to check window equivalence)."""
        if self.kind == "GRU":
            return self._gru_windowed(e, window)
        return self._sa(e, window) if self.kind == "SA" else self.encode(e)


def encode_history(event_embs: torch.Tensor, henc: HistoryEncoder) -> torch.Tensor:
    squeeze = event_embs.dim() == 2
    out = henc.encode(event_embs[None] if squeeze else event_embs)
    return out[0] if squeeze else out
