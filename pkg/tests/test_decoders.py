import math

import numpy as np
import pytest
import torch
from scipy import integrate

from conftest import SEQ, assign, make_seq, model_and_context, query, small_spec
from pointlab.decoders import (DECODERS, MONTE_CARLO, DecoderError, cumulative, intensity,
                               log_density_and_mark, predict_mark, time_cdf)
from pointlab.simulate import HawkesParams, hawkes_intensity

EXACT = [d for d in DECODERS if d not in MONTE_CARLO]


def test_poisson_intensity_and_cumulative():
    model, _, ctx = model_and_context(small_spec("POISSON"))
    assign(model.params, "decoder.mu", [0.5, 1.5])
    dec = model.decoder
    t = query(ctx, [[0.3, 1.0]])
    lam = intensity(dec, ctx, t)
    np.testing.assert_allclose(lam.detach().numpy(), np.broadcast_to([0.5, 1.5], lam.shape))
    cum = cumulative(dec, ctx, t).detach()
    np.testing.assert_allclose(cum[..., 1, :].numpy(), np.broadcast_to([0.5, 1.5], cum[..., 1, :].shape))
    log_f, log_p = log_density_and_mark(dec, ctx, t, 1)
    np.testing.assert_allclose(log_f[..., 1].detach().numpy(), math.log(2.0) - 2.0)
    np.testing.assert_allclose(log_p.detach().numpy(), math.log(0.75))


def test_hawkes_single_mark_intensity():
    seq = make_seq([1.0], [0], 3.0)
    model, _, ctx = model_and_context(small_spec("HAWKES"), seq, num_marks=1)
    assign(model.params, "decoder.mu", [0.2])
    assign(model.params, "decoder.alpha", [[0.25]])
    assign(model.params, "decoder.beta", [[4.1]])
    ctx = model.context(model.batch([seq]))
    lam = intensity(model.decoder, ctx, torch.tensor([[[0.5], [1.5]]]))
    assert lam[0, 0, 0, 0].item() == pytest.approx(0.2, rel=1e-12)
    assert lam[0, 1, 0, 0].item() == pytest.approx(0.2 + 0.25 * math.exp(-2.05), rel=1e-12)


def test_hawkes_matches_reference_intensity_and_compensator():
    mu, alpha, beta = [0.3, 0.1], [[0.4, 0.2], [0.1, 0.5]], [[2.0, 1.5], [3.0, 1.0]]
    model, _, ctx = model_and_context(small_spec("HAWKES"))
    for name, v in (("mu", mu), ("alpha", alpha), ("beta", beta)):
        assign(model.params, f"decoder.{name}", v)
    ctx = model.context(model.batch([SEQ]))          # the decayed state depends on beta
    ref = HawkesParams(mu, alpha, beta)
    offsets = [[0.05, 0.2, 0.35]]      # inside every interval
    t = query(ctx, offsets)
    lam = intensity(model.decoder, ctx, t).detach().numpy()
    cum = cumulative(model.decoder, ctx, t).detach().numpy()
    for i in range(4):
        for q in range(3):
            x = float(t[0, i, q])
            np.testing.assert_allclose(lam[0, i, q], hawkes_intensity(ref, SEQ, x), rtol=1e-10)
            lo = float(ctx.t_prev[0, i])
            for k in range(2):
                quad = integrate.quad(lambda s: hawkes_intensity(ref, SEQ, s)[k], lo, x, epsabs=1e-13)[0]
                assert cum[0, i, q, k] == pytest.approx(quad, rel=1e-9)


def test_ec_is_constant_within_interval():
    model, _, ctx = model_and_context(small_spec("EC"))
    P = model.params
    assign(P, "decoder.W1", 0.0)
    assign(P, "decoder.w", 0.0)
    assign(P, "decoder.b", [math.log(math.e - 1), math.log(math.e ** 3 - 1)])   # softplus -> (1, 3)
    t = query(ctx, [[0.1, 0.5, 1.0]])
    lam = intensity(model.decoder, ctx, t).detach()
    np.testing.assert_allclose(lam.numpy(), np.broadcast_to([1.0, 3.0], lam.shape), rtol=1e-12)
    cum = cumulative(model.decoder, ctx, t).detach()
    np.testing.assert_allclose(cum[..., 2, :].numpy(), np.broadcast_to([1.0, 3.0], cum[..., 2, :].shape), rtol=1e-12)


def test_ec_random_params_constant_in_time():
    model, _, ctx = model_and_context(small_spec("EC"))
    lam = intensity(model.decoder, ctx, query(ctx, [[0.01, 0.3, 7.0]])).detach()
    assert torch.allclose(lam, lam[..., :1, :].expand_as(lam), rtol=0, atol=0)


def test_mc_is_exact_for_constant_intensity():
    model, _, ctx = model_and_context(small_spec("MLP_MC"))
    P = model.params
    for name in ("W1", "w"):
        assign(P, f"decoder.{name}", 0.0)
    assign(P, "decoder.b", -40.0)
    assign(P, "decoder.mu", 0.7)
    cum = cumulative(model.decoder, ctx, query(ctx, [[1.0]]), n_mc=5).detach()
    np.testing.assert_allclose(cum.numpy(), 0.7, rtol=1e-12)


@pytest.mark.parametrize("kind", MONTE_CARLO)
def test_mc_cumulative_converges_to_quadrature(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    dec = model.decoder
    grid = torch.linspace(1e-6, 0.8, 4001, dtype=torch.float64)
    lam = intensity(dec, ctx, query(ctx, grid[None])).detach().numpy()
    trap = integrate.trapezoid(lam, grid.numpy(), axis=2)
    gen = torch.Generator().manual_seed(0)
    mc = cumulative(dec, ctx, query(ctx, [[0.8]]), n_mc=2048, generator=gen).detach().numpy()[:, :, 0]
    np.testing.assert_allclose(mc, trap, rtol=2e-3)


@pytest.mark.parametrize("kind", ["FNN", "SA_CM"])
def test_cumulative_decoders_zero_at_start_and_nondecreasing(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    grid = torch.linspace(0, 5, 400, dtype=torch.float64)
    cum = cumulative(model.decoder, ctx, query(ctx, grid[None])).detach()
    assert torch.equal(cum[..., 0, :], torch.zeros_like(cum[..., 0, :]))
    assert torch.all(torch.diff(cum, dim=2) >= 0)


@pytest.mark.parametrize("kind", ["FNN", "SA_CM"])
def test_cumulative_decoders_do_not_saturate(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    cum = cumulative(model.decoder, ctx, query(ctx, [[10.0, 100.0, 1000.0]])).detach().sum(-1)
    assert torch.all(torch.diff(cum, dim=2) > 0)
    assert torch.all(cum[..., 2] > 2 * cum[..., 1])


@pytest.mark.parametrize("kind", ["FNN", "SA_CM"])
def test_cumulative_intensity_is_the_derivative(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    dec, h = model.decoder, 1e-6
    x = np.array([0.2, 0.9])
    up = cumulative(dec, ctx, query(ctx, [x + h])).detach()
    down = cumulative(dec, ctx, query(ctx, [x - h])).detach()
    lam = intensity(dec, ctx, query(ctx, [x])).detach()
    torch.testing.assert_close(lam, (up - down) / (2 * h), rtol=1e-6, atol=1e-8)


def test_lnm_with_one_component_equals_ln():
    ln, _, ctx_ln = model_and_context(small_spec("LN"))
    lnm, _, ctx_lnm = model_and_context(small_spec("LNM", mixtures=1).replace(seed=7))
    assert sorted(ln.params) == sorted(lnm.params)
    lnm.params.load_state(ln.params.state())
    ctx_lnm = lnm.context(lnm.batch([SEQ]))
    t = query(ctx_ln, [[0.1, 0.5, 2.0]])
    for a, b in zip(log_density_and_mark(ln.decoder, ctx_ln, t, 1),
                    log_density_and_mark(lnm.decoder, ctx_lnm, t, 1)):
        torch.testing.assert_close(a, b, rtol=0, atol=0)


@pytest.mark.parametrize("kind", ["RMTPP", "LN", "LNM"])
def test_density_integrates_to_one(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    dec = model.decoder

    def f(x, i):
        log_f, _ = log_density_and_mark(dec, ctx, query(ctx, [[x]]), 0)
        return math.exp(log_f[0, i, 0].item())

    for i in range(4):
        mass = integrate.quad(f, 0, np.inf, args=(i,), limit=200)[0]
        assert mass == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("kind", EXACT)
def test_cdf_matches_integrated_density(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    dec = model.decoder
    grid = torch.linspace(1e-9, 1.5, 6001, dtype=torch.float64)
    t = query(ctx, grid[None])
    with torch.no_grad() if kind not in ("FNN", "SA_CM") else torch.enable_grad():
        log_f, _ = log_density_and_mark(dec, ctx, t, 0)
        cdf = time_cdf(dec, ctx, t)
    dens = log_f.detach().exp().numpy()
    area = integrate.cumulative_trapezoid(dens, grid.numpy(), axis=2)
    # the CDF at the first node is ~0, so the trapezoid accumulates from there
    np.testing.assert_allclose(area, (cdf[..., 1:] - cdf[..., :1]).detach().numpy(), atol=5e-5)


@pytest.mark.parametrize("kind", DECODERS)
def test_views_are_consistent(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    v = model.decoder.views(ctx, torch.tensor([[[0.3, 1.2]]], dtype=torch.float64).expand(1, 4, 2).clone(), n_mc=16,
                            generator=torch.Generator().manual_seed(1))
    torch.testing.assert_close(v.log_mark.exp().sum(-1), torch.ones_like(v.log_density))
    torch.testing.assert_close(v.log_survival, -v.cumulative.sum(-1))
    torch.testing.assert_close(v.log_density, torch.logsumexp(v.log_intensity, -1) + v.log_survival)
    assert torch.all(v.cumulative >= 0)


@pytest.mark.parametrize("kind", DECODERS)
def test_time_cdf_zero_at_start_and_monotone(kind):
    model, _, ctx = model_and_context(small_spec(kind))
    grid = torch.linspace(0, 4, 200, dtype=torch.float64)
    cdf = time_cdf(model.decoder, ctx, query(ctx, grid[None]), n_mc=64,
                   generator=torch.Generator().manual_seed(0)).detach()
    assert torch.equal(cdf[..., 0], torch.zeros_like(cdf[..., 0]))
    assert torch.all((cdf >= 0) & (cdf <= 1))
    if kind not in MONTE_CARLO:
        assert torch.all(torch.diff(cdf, dim=2) >= -1e-12)


def test_time_cdf_poisson_median():
    model, _, ctx = model_and_context(small_spec("POISSON"))
    assign(model.params, "decoder.mu", 0.5)
    cdf = time_cdf(model.decoder, ctx, query(ctx, [[math.log(2.0)]])).detach()
    np.testing.assert_allclose(cdf.numpy(), 0.5, rtol=1e-12)


def test_predict_mark_tie_goes_to_smallest_index():
    model, _, ctx = model_and_context(small_spec("POISSON"), num_marks=3)
    assign(model.params, "decoder.mu", [1.0, 2.0, 2.0])
    assert torch.all(predict_mark(model.decoder, ctx, query(ctx, [[0.5]])) == 1)
    assign(model.params, "decoder.mu", 1.0)
    assert torch.all(predict_mark(model.decoder, ctx, query(ctx, [[0.5]])) == 0)


@pytest.mark.parametrize("kind", ["RMTPP", "LN", "LNM"])
def test_density_decoder_marks_do_not_depend_on_time(kind):
    model, _, ctx = model_and_context(small_spec(kind), num_marks=4)
    t = query(ctx, [[0.01, 0.5, 20.0]])
    pred = predict_mark(model.decoder, ctx, t)
    assert torch.equal(pred, pred[..., :1].expand_as(pred))


def test_query_before_previous_event_is_rejected():
    model, _, ctx = model_and_context(small_spec("POISSON"))
    with pytest.raises(DecoderError):
        intensity(model.decoder, ctx, query(ctx, [[0.0]]))
    with pytest.raises(DecoderError):
        cumulative(model.decoder, ctx, query(ctx, [[-0.1]]))


def test_nh_cell_decays_monotonically_towards_target():
    model, _, ctx = model_and_context(small_spec("NH"))
    grid = torch.linspace(0, 6, 300, dtype=torch.float64)
    c = model.decoder.cell(ctx, grid[None, None].expand(1, 4, 300)).detach()
    cbar = ctx.state["cbar"][:, :, None, :].detach()
    gap = (c - cbar).abs()
    assert torch.all(torch.diff(gap, dim=2) <= 1e-15)
    torch.testing.assert_close(c[..., 0, :], ctx.state["c"].detach())


@pytest.mark.parametrize("kind", ["SA_MC", "SA_CM"])
def test_attention_decoders_are_causal_and_windowed(kind):
    for window in (None, 1):
        model, _, ctx = model_and_context(small_spec(kind, window_q=window))
        t = query(ctx, [[0.3]])
        with torch.enable_grad():
            base = cumulative(model.decoder, ctx, t, n_mc=8, generator=torch.Generator().manual_seed(0)).detach()
            original = ctx.h.detach().clone()
            for j in range(4):
                ctx.h = original.clone()
                ctx.h[0, j] += 2.0
                out = cumulative(model.decoder, ctx, t, n_mc=8, generator=torch.Generator().manual_seed(0)).detach()
                changed = (out != base).any(-1).any(-1)[0]
                for i in range(4):
                    sees = j <= i and (window is None or j >= i - window)
                    assert bool(changed[i]) == sees, (kind, window, i, j)
