"""Decoder parametrizations and conversions between the three TPP views.

Every decoder is evaluated on a grid of query offsets ``tau`` of shape
``(B, I, Q)``: ``Q`` offsets after the start ``t_prev`` of each of the ``I``
intervals of a batch. Whatever view a decoder parametrizes natively, it
returns per-mark log-intensities and cumulative intensities, from which the
density, mark distribution and CDF follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .batch import Batch
from .diffcore import DTYPE, ParamStore, gumbel_softplus, softplus_scaled
from .encoders import EventEncoder

DECODERS = ("EC", "MLP_MC", "SA_MC", "RMTPP", "NH", "LNM", "LN", "FNN", "SA_CM", "HAWKES", "POISSON")
VIEWS = {
    "EC": "intensity", "MLP_MC": "intensity", "SA_MC": "intensity", "NH": "intensity",
    "HAWKES": "intensity", "POISSON": "intensity",
    "FNN": "cumulative", "SA_CM": "cumulative",
    "RMTPP": "density", "LNM": "density", "LN": "density",
}
STANDALONE = ("NH", "HAWKES", "POISSON")
QUERY_EMBEDDING = ("MLP_MC", "SA_MC", "FNN", "SA_CM")
MONTE_CARLO = ("MLP_MC", "SA_MC", "NH")

LOG_FLOOR = 1e-30
N_MC_TRAIN = 32
N_MC_EVAL = 512
MC_CHUNK = 64


class DecoderError(ValueError):
    pass


@dataclass
class Context:
    """Per-interval conditioning information for one batch."""

    t_prev: torch.Tensor                    # (B, I)
    h: torch.Tensor | None = None           # (B, I, d_h)
    state: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.t_prev.shape)


@dataclass
class Views:
    log_intensity: torch.Tensor   # (B, I, Q, K)
    cumulative: torch.Tensor      # (B, I, Q, K)
    log_density: torch.Tensor     # (B, I, Q)   log f*(t)
    log_mark: torch.Tensor        # (B, I, Q, K) log p*(k | t)
    log_survival: torch.Tensor    # (B, I, Q)   log(1 - F*(t))
    floor_hits: int = 0

    @property
    def cdf(self) -> torch.Tensor:
        return -torch.expm1(self.log_survival)


def stratified_uniforms(shape: tuple[int, ...], n: int, generator: torch.Generator | None) -> torch.Tensor:
    """``n`` uniforms on (0, 1), one per equal-width stratum."""
    r = torch.rand(*shape, n, generator=generator, dtype=DTYPE)
    return (torch.arange(n, dtype=DTYPE) + r) / n


def _window_mask(I: int, window: int | None) -> torch.Tensor:
    i = torch.arange(I)
    allowed = i[None, :] <= i[:, None]
    if window is not None:
        allowed = allowed & (i[None, :] >= i[:, None] - window)
    return allowed


class Decoder:
    kind: str = ""

    def __init__(self, params: ParamStore, num_marks: int, d_h: int = 0,
                 time_encoder: EventEncoder | None = None, n_mc: int = N_MC_TRAIN,
                 window_q: int | None = None, prefix: str = "decoder", **hp):
        self.params, self.K, self.d_h, self.prefix = params, num_marks, d_h, prefix
        self.time_encoder = time_encoder
        self.n_mc = n_mc
        self.window_q = window_q
        self.view = VIEWS[self.kind]
        self.build(**hp)

    def build(self, **hp) -> None:
        pass

    def p(self, name: str) -> torch.Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def prepare(self, batch: Batch, H: torch.Tensor | None) -> Context:
        return Context(batch.t_prev, H)

    def query_embedding(self, ctx: Context, tau: torch.Tensor) -> torch.Tensor:
        return self.time_encoder.time_embedding(tau, ctx.t_prev[..., None] + tau)

    def views(self, ctx: Context, tau: torch.Tensor, n_mc: int | None = None,
              generator: torch.Generator | None = None) -> Views:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# intensity view
# ---------------------------------------------------------------------------

class IntensityDecoder(Decoder):
    closed_form = True

    def intensity(self, ctx: Context, tau: torch.Tensor) -> torch.Tensor:
        """``(B, I, Q, K)`` nonnegative intensities."""
        raise NotImplementedError

    def closed_cumulative(self, ctx: Context, tau: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def mc_cumulative(self, ctx: Context, tau: torch.Tensor, n_mc: int,
                      generator: torch.Generator | None) -> torch.Tensor:
        B, I, Q = tau.shape
        # one set of stratified nodes per interval, shared by every query offset
        u = stratified_uniforms((B, I, 1), n_mc, generator)               # (B, I, 1, n)
        total = 0.0
        for chunk in u.split(MC_CHUNK, dim=-1):
            n = chunk.shape[-1]
            nodes = (tau[..., None] * chunk).reshape(B, I, Q * n)
            total = total + self.intensity(ctx, nodes).reshape(B, I, Q, n, self.K).sum(dim=3)
        return tau[..., None] * total / n_mc

    def cumulative(self, ctx: Context, tau: torch.Tensor, n_mc: int | None = None,
                   generator: torch.Generator | None = None) -> torch.Tensor:
        if self.closed_form:
            return self.closed_cumulative(ctx, tau)
        return self.mc_cumulative(ctx, tau, n_mc or self.n_mc, generator)

    def views(self, ctx, tau, n_mc=None, generator=None) -> Views:
        lam = self.intensity(ctx, tau)
        hits = int((lam < LOG_FLOOR).sum())
        log_lam = torch.log(torch.clamp(lam, min=LOG_FLOOR))
        cum = self.cumulative(ctx, tau, n_mc, generator)
        return _from_intensity(log_lam, cum, hits)


def _from_intensity(log_lam: torch.Tensor, cum: torch.Tensor, hits: int = 0) -> Views:
    log_ground = torch.logsumexp(log_lam, dim=-1)
    total = cum.sum(dim=-1)
    return Views(
        log_intensity=log_lam,
        cumulative=cum,
        log_density=log_ground - total,
        log_mark=log_lam - log_ground[..., None],
        log_survival=-total,
        floor_hits=hits,
    )


class ExponentialConstant(IntensityDecoder):
    kind = "EC"

    def build(self, d_in: int = 16, **_):
        P, p = self.params, self.prefix
        P.weight(f"{p}.W1", (d_in, self.d_h))
        P.bias(f"{p}.b1", d_in)
        P.weight(f"{p}.w", (self.K, d_in))
        P.bias(f"{p}.b", self.K)
        P.constant(f"{p}.s", self.K, 1.0, "positive")

    def _rates(self, ctx):
        x = torch.relu(ctx.h @ self.p("W1").T + self.p("b1"))
        return softplus_scaled(x @ self.p("w").T + self.p("b"), self.p("s"))   # (B, I, K)

    def intensity(self, ctx, tau):
        return self._rates(ctx)[:, :, None, :].expand(*tau.shape, self.K)

    def closed_cumulative(self, ctx, tau):
        return tau[..., None] * self._rates(ctx)[:, :, None, :]


class MLPDecoder(IntensityDecoder):
    kind = "MLP_MC"
    closed_form = False

    def build(self, d_in: int = 16, **_):
        P, p = self.params, self.prefix
        d_t = self.time_encoder.time_dim
        P.weight(f"{p}.W1", (d_in, self.d_h + d_t))
        P.bias(f"{p}.b1", d_in)
        P.weight(f"{p}.w", (self.K, d_in))
        P.bias(f"{p}.b", self.K)
        P.constant(f"{p}.s", self.K, 1.0, "positive")
        P.constant(f"{p}.mu", self.K, 0.5, "positive")

    def intensity(self, ctx, tau):
        et = self.query_embedding(ctx, tau)
        h = ctx.h[:, :, None, :].expand(*tau.shape, self.d_h)
        x = torch.relu(torch.cat([h, et], dim=-1) @ self.p("W1").T + self.p("b1"))
        return self.p("mu") + softplus_scaled(x @ self.p("w").T + self.p("b"), self.p("s"))


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, allowed: torch.Tensor,
            heads: int, normalizer: str) -> torch.Tensor:
    """Query ``(B, I, Q, d)`` attends to keys/values ``(B, J, d)`` allowed by ``(I, J)``."""
    B, I, Q, d = q.shape
    J = k.shape[1]
    dh = d // heads
    qh = q.reshape(B, I, Q, heads, dh)
    kh = k.reshape(B, J, heads, dh)
    vh = v.reshape(B, J, heads, v.shape[-1] // heads)
    scores = torch.einsum("biqhd,bjhd->bhiqj", qh, kh) / math.sqrt(dh)
    mask = allowed[None, None, :, None, :]
    if normalizer == "softmax":
        w = torch.softmax(scores.masked_fill(~mask, float("-inf")), dim=-1)
    else:
        w = torch.sigmoid(scores) * mask
    out = torch.einsum("bhiqj,bjhd->biqhd", w, vh)
    return out.reshape(B, I, Q, -1)


class SelfAttentionDecoder(IntensityDecoder):
    kind = "SA_MC"
    closed_form = False

    def build(self, d_in: int = 16, heads: int = 1, **_):
        if d_in % heads:
            raise DecoderError(f"d_in={d_in} not divisible by heads={heads}")
        P, p = self.params, self.prefix
        self.heads = heads
        d_t = self.time_encoder.time_dim
        P.weight(f"{p}.W_Q", (d_in, d_t))
        P.weight(f"{p}.W_K", (d_in, self.d_h))
        P.weight(f"{p}.W_V", (d_in, self.d_h))
        P.weight(f"{p}.W1", (d_in, d_in))
        P.bias(f"{p}.b1", d_in)
        P.weight(f"{p}.W2", (d_in, d_in))
        P.bias(f"{p}.b2", d_in)
        P.weight(f"{p}.w", (self.K, d_in))
        P.bias(f"{p}.b", self.K)
        P.constant(f"{p}.s", self.K, 1.0, "positive")
        P.constant(f"{p}.mu", self.K, 0.5, "positive")

    def intensity(self, ctx, tau):
        q = self.query_embedding(ctx, tau) @ self.p("W_Q").T
        k = ctx.h @ self.p("W_K").T
        v = ctx.h @ self.p("W_V").T
        allowed = _window_mask(ctx.h.shape[1], self.window_q)
        z = _attend(q, k, v, allowed, self.heads, "softmax")
        z = torch.relu(z @ self.p("W1").T + self.p("b1")) @ self.p("W2").T + self.p("b2")
        return self.p("mu") + softplus_scaled(z @ self.p("w").T + self.p("b"), self.p("s"))


class NeuralHawkes(IntensityDecoder):
    """Continuous-time LSTM; carries its own recurrence over one-hot marks."""

    kind = "NH"
    closed_form = False

    def build(self, **_):
        d_h = self.d_h
        P, p = self.params, self.prefix
        P.weight(f"{p}.W", (5 * d_h, self.K))
        P.weight(f"{p}.U", (5 * d_h, d_h))
        P.bias(f"{p}.b", 5 * d_h)
        P.weight(f"{p}.w", (self.K, d_h))
        P.constant(f"{p}.s", self.K, 1.0, "positive")
        P.constant(f"{p}.s_d", 1, 1.0, "positive")

    def prepare(self, batch, H=None):
        B, L = batch.size, batch.max_len
        W, U, b = self.p("W"), self.p("U"), self.p("b")
        h = torch.zeros(B, self.d_h, dtype=DTYPE)
        c_t = torch.zeros(B, self.d_h, dtype=DTYPE)
        cbar = torch.zeros(B, self.d_h, dtype=DTYPE)
        x = torch.zeros(B, self.K, dtype=DTYPE)          # no mark before the first event
        cs, cbars, deltas, outs = [], [], [], []
        for i in range(L + 1):
            g = x @ W.T + h @ U.T + b
            gi, gf, gz, go, gd = g.chunk(5, dim=-1)
            i_g, f_g, o_g = torch.sigmoid(gi), torch.sigmoid(gf), torch.sigmoid(go)
            z_g = 2 * torch.sigmoid(gz) - 1
            delta = softplus_scaled(gd, self.p("s_d"))
            c_i = f_g * c_t + i_g * z_g
            cbar = f_g * cbar + i_g * z_g
            cs.append(c_i), cbars.append(cbar), deltas.append(delta), outs.append(o_g)
            if i < L:
                decay = torch.exp(-delta * batch.tau[:, i, None])
                c_t = cbar + (c_i - cbar) * decay
                h = o_g * (2 * torch.sigmoid(2 * c_t) - 1)
                x = F.one_hot(batch.marks[:, i], self.K).to(DTYPE)
        st = {name: torch.stack(v, dim=1) for name, v in
              (("c", cs), ("cbar", cbars), ("delta", deltas), ("o", outs))}
        return Context(batch.t_prev, None, st)

    def cell(self, ctx, tau):
        """Decaying cell state ``c(t)``, ``(B, I, Q, d_h)``."""
        st = ctx.state
        c, cbar, delta = (st[n][:, :, None, :] for n in ("c", "cbar", "delta"))
        return cbar + (c - cbar) * torch.exp(-delta * tau[..., None])

    def intensity(self, ctx, tau):
        h_t = ctx.state["o"][:, :, None, :] * (2 * torch.sigmoid(2 * self.cell(ctx, tau)) - 1)
        return softplus_scaled(h_t @ self.p("w").T, self.p("s"))


class HawkesDecoder(IntensityDecoder):
    kind = "HAWKES"

    def build(self, **_):
        P, p = self.params, self.prefix
        P.constant(f"{p}.mu", self.K, 0.5, "positive")
        P.constant(f"{p}.alpha", (self.K, self.K), 0.5, "positive")
        P.constant(f"{p}.beta", (self.K, self.K), 0.5, "positive")

    def prepare(self, batch, H=None):
        # decayed[b, i, k, k'] = sum_{j < i, k_j = k'} exp(-beta[k, k'] (t_prev_i - t_j))
        beta = self.p("beta")
        B, L = batch.size, batch.max_len
        S = torch.zeros(B, self.K, self.K, dtype=DTYPE)
        out = [S]
        onehot = F.one_hot(batch.marks, self.K).to(DTYPE)
        for i in range(L):
            S = S * torch.exp(-beta * batch.tau[:, i, None, None]) + onehot[:, i, None, :]
            out.append(S)
        return Context(batch.t_prev, None, {"decayed": torch.stack(out, dim=1)})

    def intensity(self, ctx, tau):
        S = ctx.state["decayed"][:, :, None]                        # (B, I, 1, K, K)
        decay = torch.exp(-self.p("beta") * tau[..., None, None])    # (B, I, Q, K, K)
        return self.p("mu") + (self.p("alpha") * S * decay).sum(-1)

    def closed_cumulative(self, ctx, tau):
        S = ctx.state["decayed"][:, :, None]
        alpha, beta = self.p("alpha"), self.p("beta")
        frac = -torch.expm1(-beta * tau[..., None, None])
        return self.p("mu") * tau[..., None] + (alpha / beta * S * frac).sum(-1)


class PoissonDecoder(IntensityDecoder):
    kind = "POISSON"

    def build(self, **_):
        self.params.constant(f"{self.prefix}.mu", self.K, 0.5, "positive")

    def intensity(self, ctx, tau):
        return self.p("mu").expand(*tau.shape, self.K)

    def closed_cumulative(self, ctx, tau):
        return tau[..., None] * self.p("mu")


# ---------------------------------------------------------------------------
# cumulative view
# ---------------------------------------------------------------------------

class CumulativeDecoder(Decoder):
    """Parametrizes ``G_k``; ``Lambda_k(tau) = G_k(tau) - G_k(0)``, ``lambda_k = dG_k / dtau``."""

    def G(self, ctx: Context, tau: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def views(self, ctx, tau, n_mc=None, generator=None) -> Views:
        keep_graph = torch.is_grad_enabled()
        with torch.enable_grad():
            t = tau.detach().requires_grad_(True)
            g = self.G(ctx, t)
            lam = torch.stack([
                torch.autograd.grad(g[..., k].sum(), t, create_graph=keep_graph, retain_graph=True)[0]
                for k in range(self.K)
            ], dim=-1)
            g0 = self.G(ctx, torch.zeros_like(tau))
        if not keep_graph:
            lam, g, g0 = lam.detach(), g.detach(), g0.detach()
        hits = int((lam < LOG_FLOOR).sum())
        log_lam = torch.log(torch.clamp(lam, min=LOG_FLOOR))
        return _from_intensity(log_lam, g - g0, hits)


class FullyNN(CumulativeDecoder):
    kind = "FNN"

    def build(self, d_in: int = 16, **_):
        P, p = self.params, self.prefix
        d_t = self.time_encoder.time_dim
        P.weight(f"{p}.W_t", (d_in, d_t), "nonnegative")
        P.weight(f"{p}.W_h", (d_in, self.d_h))
        P.bias(f"{p}.b1", d_in)
        P.constant(f"{p}.alpha", self.K, 1.0, "positive")
        P.weight(f"{p}.w", (self.K, d_in), "nonnegative")
        P.bias(f"{p}.b", self.K)
        P.constant(f"{p}.s", self.K, 1.0, "positive")

    def G(self, ctx, tau):
        et = self.query_embedding(ctx, tau)
        x = et @ self.p("W_t").T + (ctx.h @ self.p("W_h").T)[:, :, None, :] + self.p("b1")
        hidden = gumbel_softplus(x[..., None, :], self.p("alpha")[:, None])   # (B, I, Q, K, d_in)
        pre = (hidden * self.p("w")).sum(-1) + self.p("b")
        return softplus_scaled(pre, self.p("s"))


class CumulativeSelfAttention(CumulativeDecoder):
    kind = "SA_CM"

    def build(self, d_in: int = 16, heads: int = 1, **_):
        if d_in % heads:
            raise DecoderError(f"d_in={d_in} not divisible by heads={heads}")
        P, p = self.params, self.prefix
        self.heads = heads
        d_t = self.time_encoder.time_dim
        P.weight(f"{p}.W_Q", (d_in, d_t), "nonnegative")
        P.weight(f"{p}.W_K", (d_in, self.d_h))
        P.weight(f"{p}.W_V", (d_in, self.d_h))
        P.weight(f"{p}.W1", (d_in, d_in), "nonnegative")
        P.bias(f"{p}.b1", d_in, "nonnegative")
        P.weight(f"{p}.W2", (d_in, d_in), "nonnegative")
        P.bias(f"{p}.b2", d_in, "nonnegative")
        P.constant(f"{p}.alpha", self.K, 1.0, "positive")
        P.weight(f"{p}.w", (self.K, d_in), "nonnegative")
        P.bias(f"{p}.b", self.K, "nonnegative")
        P.constant(f"{p}.s", self.K, 1.0, "positive")
        P.constant(f"{p}.mu", self.K, 0.5, "positive")

    def G(self, ctx, tau):
        q = self.query_embedding(ctx, tau) @ self.p("W_Q").T
        # keys and values pass through softplus so that attention weights and
        # the attended vector are nondecreasing in the query time
        k = F.softplus(ctx.h @ self.p("W_K").T)
        v = F.softplus(ctx.h @ self.p("W_V").T)
        allowed = _window_mask(ctx.h.shape[1], self.window_q)
        z = _attend(q, k, v, allowed, self.heads, "sigmoid")                  # (B, I, Q, d)
        x = z @ self.p("W1").T + self.p("b1")
        hidden = gumbel_softplus(x[..., None, :], self.p("alpha")[:, None])   # (B, I, Q, K, d)
        out = hidden @ self.p("W2").T + self.p("b2")
        pre = (out * self.p("w")).sum(-1) + self.p("b")
        return self.p("mu") * tau[..., None] + softplus_scaled(pre, self.p("s"))


# ---------------------------------------------------------------------------
# density view
# ---------------------------------------------------------------------------

class DensityDecoder(Decoder):
    """Native ``log f*(tau)``, ``log S*(tau)`` and a time-independent mark head."""

    def build_mark_head(self):
        P, p = self.params, self.prefix
        P.weight(f"{p}.W_mark", (self.K, self.d_h))
        P.bias(f"{p}.b_mark", self.K)

    def log_mark_probs(self, ctx) -> torch.Tensor:
        return torch.log_softmax(ctx.h @ self.p("W_mark").T + self.p("b_mark"), dim=-1)   # (B, I, K)

    def log_density_survival(self, ctx, tau) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def views(self, ctx, tau, n_mc=None, generator=None) -> Views:
        log_f, log_s = self.log_density_survival(ctx, tau)
        log_p = self.log_mark_probs(ctx)[:, :, None, :].expand(*tau.shape, self.K)
        log_ground = log_f - log_s
        return Views(
            log_intensity=log_ground[..., None] + log_p,
            cumulative=-log_s[..., None] * log_p.exp(),
            log_density=log_f,
            log_mark=log_p,
            log_survival=log_s,
        )


class RMTPPDecoder(DensityDecoder):
    kind = "RMTPP"

    def build(self, **_):
        P, p = self.params, self.prefix
        P.constant(f"{p}.w_t", 1, 0.5, "positive")
        P.weight(f"{p}.w_h", (1, self.d_h))
        P.bias(f"{p}.b", 1)
        self.build_mark_head()

    def log_density_survival(self, ctx, tau):
        w_t = self.p("w_t")
        c = (ctx.h @ self.p("w_h").T + self.p("b"))[:, :, None, 0]           # (B, I, 1)
        cum = torch.exp(c) * torch.expm1(w_t * tau) / w_t
        return w_t * tau + c - cum, -cum


class LogNormMix(DensityDecoder):
    kind = "LNM"

    def build(self, mixtures: int = 8, **_):
        P, p = self.params, self.prefix
        self.M = 1 if self.kind == "LN" else mixtures
        for name in ("p", "mu", "sigma"):
            P.weight(f"{p}.W_{name}", (self.M, self.d_h))
            P.bias(f"{p}.b_{name}", self.M)
        self.build_mark_head()

    def components(self, ctx):
        h = ctx.h
        log_w = torch.log_softmax(h @ self.p("W_p").T + self.p("b_p"), dim=-1)
        mu = h @ self.p("W_mu").T + self.p("b_mu")
        log_sigma = h @ self.p("W_sigma").T + self.p("b_sigma")
        return log_w, mu, log_sigma                                            # (B, I, M) each

    def log_density_survival(self, ctx, tau):
        log_w, mu, log_sigma = (x[:, :, None, :] for x in self.components(ctx))
        log_tau = torch.log(tau)[..., None]
        z = (log_tau - mu) / torch.exp(log_sigma)
        log_pdf = -log_tau - log_sigma - 0.5 * math.log(2 * math.pi) - 0.5 * z ** 2
        log_f = torch.logsumexp(log_w + log_pdf, dim=-1)
        log_s = torch.logsumexp(log_w + torch.special.log_ndtr(-z), dim=-1)
        return log_f, log_s


class LogNorm(LogNormMix):
    kind = "LN"


DECODER_CLASSES: dict[str, type[Decoder]] = {
    cls.kind: cls for cls in (ExponentialConstant, MLPDecoder, SelfAttentionDecoder, RMTPPDecoder,
                              NeuralHawkes, LogNormMix, LogNorm, FullyNN, CumulativeSelfAttention,
                              HawkesDecoder, PoissonDecoder)
}


def make_decoder(kind: str, params: ParamStore, num_marks: int, **kwargs) -> Decoder:
    if kind not in DECODER_CLASSES:
        raise DecoderError(f"unknown decoder {kind!r}")
    return DECODER_CLASSES[kind](params, num_marks, **kwargs)


# ---------------------------------------------------------------------------
# query API on absolute times ``t`` of shape (B, I, Q)
# ---------------------------------------------------------------------------

def _offsets(ctx: Context, t: torch.Tensor, allow_start: bool = False) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=DTYPE)
    tau = t - ctx.t_prev[..., None]
    bad = tau < 0 if allow_start else tau <= 0
    if bool(bad.any()):
        raise DecoderError("query time must lie after the last event t_{i-1}")
    return tau


def intensity(dec: Decoder, ctx: Context, t, n_mc: int | None = None,
              generator: torch.Generator | None = None) -> torch.Tensor:
    if isinstance(dec, IntensityDecoder):
        return dec.intensity(ctx, _offsets(ctx, t))
    return dec.views(ctx, _offsets(ctx, t), n_mc, generator).log_intensity.exp()


def cumulative(dec: Decoder, ctx: Context, t, n_mc: int | None = None,
               generator: torch.Generator | None = None) -> torch.Tensor:
    tau = _offsets(ctx, t, allow_start=True)
    if isinstance(dec, IntensityDecoder):
        return dec.cumulative(ctx, tau, n_mc, generator)
    if isinstance(dec, CumulativeDecoder):
        # G(tau) - G(0) is evaluated as is: zero at the interval start by construction
        return dec.views(ctx, tau, n_mc, generator).cumulative
    safe = torch.where(tau > 0, tau, torch.ones_like(tau))
    cum = dec.views(ctx, safe, n_mc, generator).cumulative
    return torch.where(tau[..., None] > 0, cum, torch.zeros_like(cum))


def log_density_and_mark(dec: Decoder, ctx: Context, t, marks, n_mc: int | None = None,
                         generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """``log f*(t)`` and ``log p*(k | t)`` for the given marks, both ``(B, I, Q)``."""
    v = dec.views(ctx, _offsets(ctx, t), n_mc, generator)
    marks = torch.as_tensor(marks).expand(v.log_density.shape)
    return v.log_density, v.log_mark.gather(-1, marks[..., None])[..., 0]


def predict_mark(dec: Decoder, ctx: Context, t, n_mc: int | None = None,
                 generator: torch.Generator | None = None) -> torch.Tensor:
    """Most likely mark at ``t``; ties go to the smallest index."""
    v = dec.views(ctx, _offsets(ctx, t), n_mc, generator)
    return torch.argmax(v.log_mark, dim=-1)


def time_cdf(dec: Decoder, ctx: Context, t, n_mc: int | None = None,
             generator: torch.Generator | None = None) -> torch.Tensor:
    tau = _offsets(ctx, t, allow_start=True)
    safe = torch.where(tau > 0, tau, torch.ones_like(tau))
    F_ = dec.views(ctx, safe, n_mc, generator).cdf
    return torch.where(tau > 0, F_, torch.zeros_like(F_))
