import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffquant.distortion_lab import (
    CurveConfig,
    DistortionReport,
    empirical_distortion,
    fit_exponential_decay,
    fit_sqrt_constant,
    holder_moment_check,
    path_norms,
    rate_distortion_curve,
    sigma_norm_moment,
)
from diffquant.sde_engine import DiffusionSpec, simulate_ensemble


def test_empirical_distortion_frozen():
    d, se = empirical_distortion([1.0, 2.0, 3.0], 2.0)
    assert d == pytest.approx(math.sqrt(14 / 3), rel=1e-14)
    # delta method: sd(e^2)/sqrt(3) / (2 d)
    assert se == pytest.approx(np.std([1, 4, 9], ddof=1) / math.sqrt(3) / (2 * d), rel=1e-12)


def test_empirical_distortion_edge_cases():
    assert empirical_distortion([0.0, 0.0], 2.0) == (0.0, 0.0)
    d, se = empirical_distortion([2.0], 3.0)
    assert d == 2.0 and math.isnan(se)
    with pytest.raises(ValueError):
        empirical_distortion([1.0], 0.5)
    with pytest.raises(ValueError):
        empirical_distortion([-1.0], 2.0)


def test_empirical_distortion_no_overflow():
    d, _ = empirical_distortion([1e300, 1e300], 4.0)
    assert d == pytest.approx(1e300)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1e6), min_size=2, max_size=50), st.floats(0.01, 100.0),
       st.sampled_from([1.0, 2.0, 3.5]))
def test_distortion_scale_equivariant(errs, c, p):
    d1, s1 = empirical_distortion(errs, p)
    d2, s2 = empirical_distortion(np.asarray(errs) * c, p)
    assert d2 == pytest.approx(c * d1, rel=1e-10, abs=1e-300)
    assert s2 == pytest.approx(c * s1, rel=1e-8, abs=1e-12)


def test_report_from_single_error_stores_zero_stderr():
    rep = DistortionReport.from_errors([0.5], 2.0, 4.0, 1.0, "sup")
    assert rep.stderr == 0.0
    assert rep.sqrt_r_times_d == pytest.approx(1.0)


def test_sigma_norm_moment_constant(const2_ens):
    for rho in (0.5, 1.0, 2.0):
        assert sigma_norm_moment(const2_ens, 2.0, rho) == pytest.approx(2.0, rel=1e-10)
    with pytest.raises(ValueError):
        sigma_norm_moment(const2_ens, 2.0, 3.0)


def test_sigma_norm_moment_time_dependent():
    spec = DiffusionSpec(b=lambda x, t: np.zeros_like(x), sigma=lambda x, t: np.full(x.shape[0], t))
    ens = simulate_ensemble(spec, 0.0, 2.0**-12, 1.0, 2, seed=0)
    # left-point sigma_t = t gives sum dt (k dt)^2 over k < N
    assert sigma_norm_moment(ens, 2.0, 2.0) == pytest.approx(1 / math.sqrt(3), rel=1e-3)


def _curve(rates, dists):
    return [DistortionReport(r, r, 2.0, "sup", d, 0.01, math.sqrt(r) * d, 100) for r, d in zip(rates, dists)]


def test_fit_sqrt_constant_exact():
    rates = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    fit = fit_sqrt_constant(_curve(rates, [0.7 / math.sqrt(r) for r in rates]))
    assert fit.fitted_constant == pytest.approx(0.7)
    assert fit.fit_residual == pytest.approx(0.0, abs=1e-12)
    assert fit.slope == pytest.approx(-0.5)
    assert len(fit.points) == 3


def test_fit_sqrt_constant_uses_tail():
    rates = [1.0, 2.0, 4.0, 8.0]
    dists = [5.0, 5.0, 0.5 / 2.0, 0.5 / math.sqrt(8.0)]
    fit = fit_sqrt_constant(_curve(rates, dists), tail_fraction=0.5)
    assert [p.rate for p in fit.points] == [2.0, 4.0, 8.0]
    with pytest.raises(ValueError):
        fit_sqrt_constant(_curve([1.0, 2.0], [1.0, 0.5]))


def test_fit_exponential_decay():
    r = np.arange(1.0, 6.0)
    assert fit_exponential_decay(r, 3.0 * np.exp(-0.4 * r)) == pytest.approx(-0.4)


def test_holder_moment_admissibility(wiener_ens):
    rep = holder_moment_check(wiener_ens, 0.1, 5.0)
    assert rep.admissible
    assert rep.sigma_integral == pytest.approx(1.0)
    assert not holder_moment_check(wiener_ens, 0.1, 2.0).admissible
    with pytest.raises(ValueError):
        holder_moment_check(wiener_ens, 0.5, 5.0)


def test_holder_moment_zero_martingale():
    spec = DiffusionSpec(b=lambda x, t: np.ones_like(x), sigma=lambda x, t: np.zeros(x.shape[0]))
    ens = simulate_ensemble(spec, 0.0, 2.0**-6, 1.0, 3, seed=0)
    assert holder_moment_check(ens, 0.2, 5.0).ratio == 0.0


def test_path_norms():
    v = np.ones((2, 5, 1))
    np.testing.assert_allclose(path_norms(v, 0.25, "sup"), 1.0)
    np.testing.assert_allclose(path_norms(v, 0.25, "lq", 2.0), 1.0)


def test_wiener_curve_decreasing():
    cfg = CurveConfig(dt=2.0**-7, n_paths=300, samples_per_coord=2000, seed=4)
    curve = rate_distortion_curve(None, "wiener-lq", [math.log(4), math.log(64)], cfg)
    assert curve[1].distortion < curve[0].distortion
    assert curve[0].norm_tag == "lq"


def test_curve_validation():
    with pytest.raises(ValueError):
        rate_distortion_curve(None, "bogus", [1.0])
    with pytest.raises(ValueError):
        rate_distortion_curve(None, "wiener-sup", [2.0, 1.0])
    with pytest.raises(ValueError):
        rate_distortion_curve(None, "sup", [1.0])


def test_diffusion_curve_runs():
    cfg = CurveConfig(dt=2.0**-7, n_train=30, n_paths=40, samples_per_coord=500, seed=2, slack=10.0)
    curve = rate_distortion_curve(DiffusionSpec.constant(1.0), "sup", [2.0, 6.0], cfg)
    assert len(curve) == 2 and all(c.n_paths == 40 for c in curve)
