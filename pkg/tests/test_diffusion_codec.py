import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffquant.diffusion_codec import (
    AdaptedCodebook,
    EncodingBudget,
    OffsetQuantizer,
    adapt_codebook_to_measure,
    allocate_rates,
    build_codebook_set,
    concavity_constant,
    discrete_h_norm,
    drift_quantizer,
    encode_lp,
    encode_sup,
    entropy_range_bound,
    gamma_defaults,
    generalized_entropy,
    make_drift_shell,
    plan_drift_shells,
    z_factor,
)
from diffquant.paths import SampledPath
from diffquant.wiener_quant import Codebook, gaussian_training_set, product_codebook


# generalized entropy and allocation


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.5])
@pytest.mark.parametrize("k", [1, 2, 7, 64])
def test_entropy_of_uniform(k, p):
    assert generalized_entropy(np.full(k, 1.0 / k), p) == pytest.approx(math.log(k) ** p, abs=1e-12)


def test_entropy_ignores_zero_weights():
    assert generalized_entropy([0.5, 0.0, 0.5], 2.0) == pytest.approx(math.log(2) ** 2)
    with pytest.raises(ValueError):
        generalized_entropy([0.5, 0.4], 1.0)


def test_concavity_constant_cases():
    assert concavity_constant(1.0) == 0.0
    assert concavity_constant(2.0) == pytest.approx(2.0)
    assert concavity_constant(3.0) == pytest.approx(3.0)
    assert math.isinf(concavity_constant(1.5))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_entropy_bounded_by_range(raw, p):
    w = np.asarray(raw)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    assert generalized_entropy(w, p) <= entropy_range_bound(len(w), p) + 1e-9


def test_allocate_rates_hand_cases():
    np.testing.assert_allclose(allocate_rates([1, 1, 1, 1], 16.0, 2.0), 4.0)
    np.testing.assert_allclose(allocate_rates([1.0, 0.0], 100.0, 2.0), [100.0, 10.0])
    np.testing.assert_allclose(allocate_rates([0.0, 0.0], 9.0, 2.0), [3.0, 3.0])
    # weights dtau^(1/2) for p = 2: 1 and 3 over 4
    np.testing.assert_allclose(allocate_rates([1.0, 9.0], 64.0, 2.0), [16.0, 48.0])


def test_allocate_rates_rejects_bad_input():
    with pytest.raises(ValueError):
        allocate_rates([1.0], 0.0, 2.0)
    with pytest.raises(ValueError):
        allocate_rates([-1.0], 1.0, 2.0)


# drift nets


def test_drift_shell_parameters():
    sh = make_drift_shell(1.0, 0.1, 64, 1)
    assert sh.delta == pytest.approx(0.05)
    assert sh.J == 20
    assert sh.k_max == 41
    assert sh.count(1) == 41
    assert sh.log_count(3) == pytest.approx(math.log(sh.count(3)))


@pytest.mark.parametrize("d", [1, 2])
def test_drift_rank_unrank_roundtrip(d):
    sh = make_drift_shell(1.0, 0.5, 16, d)
    rng = random.Random(d)
    for _ in range(60):
        pos = rng.randrange(sh.size)
        knots, kv = sh.unrank(pos)
        assert knots[0] == 0 and knots[-1] == 16
        assert np.all(np.diff(knots) > 0)
        assert sh.rank(knots, kv) == pos


def test_drift_plan_stops_at_radius():
    shells = plan_drift_shells(0.05, 0.5, 64, 1)
    assert len(shells) > 0
    i = len(shells)
    assert 0.05 * math.exp(1.5 * i) >= math.exp(i)


def test_drift_codebook_encode_decode_consistent(ou_ens):
    n = ou_ens.n_unit
    paths = [SampledPath(ou_ens.a[i, :n], ou_ens.dt, 1.0) for i in range(len(ou_ens))]
    cb = drift_quantizer(paths, 40.0)
    assert cb.log_size <= 40.0 + 1e-9
    code = cb.encode_many(ou_ens.a[:, :n])
    for r in range(len(ou_ens)):
        np.testing.assert_allclose(cb.decode(code.index[r]), code.values[r], atol=1e-12)
        assert code.error[r] <= np.max(np.abs(ou_ens.a[r, :n])) + 1e-12


def test_drift_codebook_reaches_resolution_on_linear_drift():
    a = SampledPath.from_function(lambda t: 0.6 * t, 2.0**-8)
    cb = drift_quantizer([a], 30.0)
    code = cb.encode_many(a.values[None])
    assert code.error[0] <= cb.eps / 2 + 1e-12


def test_discrete_h_norm_of_linear():
    a = SampledPath.from_function(lambda t: 3.0 * t, 2.0**-6)
    assert discrete_h_norm(a) == pytest.approx(3.0)
    bad = SampledPath(np.array([0.0, np.inf, 0.0]), 0.5, 1.0)
    with pytest.raises(ValueError):
        drift_quantizer([bad], 5.0)


# budgets


def test_gamma_defaults_for_lipschitz():
    g1, g2, g3 = gamma_defaults(1.0)
    assert g1 == pytest.approx(1.125 / 1.25)
    assert g2 == pytest.approx((3 + g1) / 4)
    assert g3 == pytest.approx(2 / 3)


def test_budget_split_and_slack():
    b = EncodingBudget.for_sup(8.0)
    assert b.r_wiener == 8.0
    assert b.r_phi == pytest.approx(8.0 ** gamma_defaults(1.0)[0])
    lp = EncodingBudget.for_lp(27.0)
    assert lp.n_blocks == 3 and lp.delta_r == pytest.approx(math.sqrt(27.0))
    with pytest.raises(ValueError):
        EncodingBudget(1.0, 10.0, 0.0, 1.0, slack=1.0)


# adapted codebooks


@pytest.fixture(scope="module")
def lq_cb():
    return product_codebook(math.log(16), dt=2.0**-6, norm_tag="lq", q=2.0, samples_per_coord=2000)


def test_rotation_identity_with_exact_offsets(lq_cb):
    rng = np.random.default_rng(3)
    w = np.concatenate([[0.0], np.cumsum(rng.standard_normal(64)) / 8.0])[:, None]
    for shift in (0, 8, 40):
        probe = AdaptedCodebook(lq_cb, np.ones(65) / 65, shift, None, 1.0, lq_cb.rate)
        v = probe.rotate(w)
        cb = Codebook(np.stack([np.zeros_like(v), v]), lq_cb.dt, 1.0, "lq", 2.0, rate=math.log(2))
        ad = AdaptedCodebook(cb, np.ones(65) / 65, shift, None, 1.0, cb.rate)
        z = np.concatenate([-v[shift], v[-1] - v[shift]])
        np.testing.assert_allclose(ad.reconstruct(1, z), w, atol=1e-12)
        u = np.arange(65) / 64
        np.testing.assert_allclose(ad.evaluate(1, z, u[1:]), w[1:], atol=1e-12)


def test_skewed_measure_picks_rotation(lq_cb):
    nu = np.zeros(lq_cb.n)
    nu[57] = 1.0
    ad = adapt_codebook_to_measure(lq_cb, nu, math.log(64), seed=1)
    assert ad.shift == 8
    assert ad.rate == pytest.approx(lq_cb.rate + math.log(64))
    flat = adapt_codebook_to_measure(lq_cb, nu, 0.0, seed=1)
    assert flat.shift == 0 and flat.offsets is None


def test_zero_mass_warns(lq_cb):
    with pytest.warns(RuntimeWarning, match="zero mass"):
        ad = adapt_codebook_to_measure(lq_cb, np.zeros(lq_cb.n), 1.0)
    assert ad.shift == 0


def test_measure_shape_checked(lq_cb):
    with pytest.raises(ValueError):
        adapt_codebook_to_measure(lq_cb, np.ones(5), 1.0)
    with pytest.raises(ValueError):
        adapt_codebook_to_measure(lq_cb, -np.ones(lq_cb.n), 1.0)


def test_adapted_encode_reports_weighted_error(lq_cb):
    nu = np.zeros(lq_cb.n)
    nu[50:] = 1.0 / 15
    ad = adapt_codebook_to_measure(lq_cb, nu, math.log(64), seed=1)
    W = gaussian_training_set(50, lq_cb.dt, seed=9)
    for w in W:
        code = ad.encode(w)
        direct = math.sqrt(np.sum(nu * np.sum((w - ad.reconstruct(code.index, code.offsets)) ** 2, axis=1)))
        assert code.error == pytest.approx(direct, rel=1e-12)
        # the base codebook carries the zero path on top of e^rate entries
        assert len(ad.base) * len(ad.offsets.vq) <= (math.exp(lq_cb.rate) + 1) * math.exp(math.log(64)) + 1e-6


def test_offset_quantizer_branch_errors_scale():
    rng = np.random.default_rng(0)
    std = rng.standard_normal((4000, 2))
    oq = OffsetQuantizer.train(std, 0.25, math.log(16), 1, 2.0)
    assert len(oq.vq) == 16
    assert all(e >= 0 for e in oq.branch_error)


# z factor and encoders


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([1.0, 2.0, 4.0]), st.integers(1, 8))
def test_z_factor_two_ways_agree(seed, p, n_blocks):
    rng = np.random.default_rng(seed)
    phi = np.concatenate([[0.0], np.cumsum(rng.random(64))]) / 64
    a, b = z_factor(phi[None], p, n_blocks, 1 / 64)
    assert a == pytest.approx(b, rel=1e-12)


def test_z_factor_constant_sigma():
    phi = 4.0 * np.arange(65) / 64
    a, _ = z_factor(phi[None], 2.0, 4, 1 / 64)
    assert a == pytest.approx(2.0)


def test_sup_zero_rate_baseline(wiener_ens):
    budget = EncodingBudget.for_sup(0.0)
    cbs = build_codebook_set(wiener_ens, budget, "sup", samples_per_coord=200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        recs = encode_sup(wiener_ens[:], budget, cbs)
    n = wiener_ens.n_unit
    for b, rec in zip(wiener_ens[:], recs):
        assert rec.indices == (0, 0, 0)
        assert rec.errors["total"] == pytest.approx(np.max(np.abs(b.x.values[:n])), abs=1e-12)


def test_sup_error_decomposition_bound(sin_ens):
    budget = EncodingBudget.for_sup(6.0, r_phi=20.0, r_drift=20.0, slack=10.0)
    cbs = build_codebook_set(sin_ens, budget, "sup", samples_per_coord=2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        recs = encode_sup(sin_ens[:], budget, cbs)
    for rec in recs:
        e = rec.errors
        assert e["total"] <= e["drift"] + e["cross"] + e["wiener"] + 1e-9
        assert rec.rate_used <= budget.r_phi + budget.r_drift + budget.r_wiener + 1e-9


def test_sup_single_bundle_returns_single(wiener_ens):
    budget = EncodingBudget.for_sup(3.0, slack=10.0)
    cbs = build_codebook_set(wiener_ens, budget, "sup", samples_per_coord=500)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rec = encode_sup(wiener_ens[0], budget, cbs)
    assert rec.x_hat.n == wiener_ens.n_unit


def test_sup_constant_sigma_scales_wiener_error(wiener_ens, const2_ens):
    """sigma = 2 doubles the time horizon, so the error is sqrt(4) times larger in law."""
    budget = EncodingBudget.for_sup(math.log(64), r_phi=30.0, r_drift=0.0, slack=10.0)
    errs = []
    for ens in (wiener_ens, const2_ens):
        cbs = build_codebook_set(ens, budget, "sup", samples_per_coord=2000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            errs.append(np.mean([r.errors["wiener"] for r in encode_sup(ens[:], budget, cbs)]))
    assert errs[1] / errs[0] == pytest.approx(2.0, rel=0.35)


def test_lp_encoder_blocks(sin_ens):
    budget = EncodingBudget.for_lp(8.0, r_phi=20.0, r_drift=20.0, n_blocks=2, slack=10.0)
    cbs = build_codebook_set(sin_ens, budget, "lp", samples_per_coord=1000, dt_wiener=2.0**-6)
    bundles = sin_ens[:5]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        recs = encode_lp(bundles, budget, 2.0, cbs)
    for rec in recs:
        assert len(rec.blocks) == 2
        assert len(rec.indices) == 3 + 2
        assert rec.errors["total"] >= 0
        assert sum(bl["dtau"] for bl in rec.blocks) == pytest.approx(rec.phi_hat.values[-1, 0])


def test_lp_rejects_infinite_p(sin_ens):
    budget = EncodingBudget.for_lp(8.0, r_phi=20.0, r_drift=20.0, n_blocks=2, slack=10.0)
    with pytest.raises(ValueError):
        encode_lp(sin_ens[:1], budget, math.inf, None)
