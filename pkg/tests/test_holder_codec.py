import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffquant.paths import SampledPath, TimeChange
from diffquant.holder_codec import (
    build_layered_codebook,
    cross_term,
    encode_time_changes,
    make_shell,
    modulus_tail_estimate,
    monotone_regularize,
    plan_shells,
    quantize_time_change,
)
from diffquant.wiener_quant import BudgetError

DT = 2.0**-8


def _linear(c):
    return TimeChange(c * np.arange(257) * DT, DT, 1.0, monotone=True)


def test_make_shell_first_order_counts():
    sh = make_shell(1.0, 0.1, 1.0, 257)
    assert sh.order == 1
    assert sh.n_nodes == 21
    assert sh.J0 == 10
    assert sh.log_size == pytest.approx(math.log(21) + 20 * math.log(2 * sh.J1 + 1))


def test_make_shell_second_order():
    sh = make_shell(1.0, 0.05, 1.25, 257)
    assert sh.order == 2
    assert sh.size == sh.radices[0] * sh.radices[1] * sh.radices[2] ** (sh.n_nodes - 2)


@pytest.mark.parametrize("s", [1.0, 1.25])
def test_rank_unrank_roundtrip(s):
    sh = make_shell(1.0, 0.2, s, 65)
    rng = np.random.default_rng(0)
    for pos in rng.integers(0, min(sh.size, 2**62), 50):
        k = sh.unrank(int(pos))
        assert sh.members(k[None])[0]
        assert sh.rank(k) == pos


def test_plan_stops_when_resolution_exceeds_radius():
    plan = plan_shells(1.25, 0.01, 0.5, 2.0, 257)
    for i, sh in enumerate(plan.shells):
        assert sh.radius == pytest.approx(math.exp(i))
        assert sh.eps == pytest.approx(0.01 * math.exp(1.5 * i))
        assert sh.eps < 2.0 * sh.radius
    nxt = len(plan.shells)
    assert 0.01 * math.exp(1.5 * nxt) >= 2.0 * math.exp(nxt)
    assert plan.size == 1 + sum(sh.size for sh in plan.shells)


def test_rate_target_respected():
    train = [_linear(c) for c in (0.5, 1.0, 1.5)]
    for rate in (5.0, 20.0, 80.0):
        cb = build_layered_codebook(train, s=1.25, rate=rate)
        assert cb.log_size <= rate + 1e-9
    with pytest.raises(ValueError):
        build_layered_codebook(train, s=1.25)
    with pytest.raises(BudgetError):
        build_layered_codebook(train, s=1.25, eps=1e-4, max_log_size=10.0)


def test_linear_time_change_coded_within_resolution():
    cb = build_layered_codebook([_linear(1.0)], s=1.25, eps=0.01, xi=2.0)
    code = cb.quantize_many(_linear(1.0).values[:, 0])
    assert code.error[0] <= 0.01 + 1e-12
    idx = cb.index_of(int(code.shell[0]), code.k[0])
    np.testing.assert_allclose(cb.decode(idx), code.values[0], atol=1e-12)


def test_reconstruction_is_regular_and_monotone(sin_ens):
    n = sin_ens.n_unit
    phis = [TimeChange(sin_ens.phi[i, :n], sin_ens.dt, 1.0, monotone=True) for i in range(len(sin_ens))]
    cb = build_layered_codebook(phis, s=1.25, rate=30.0)
    for c, row in zip(encode_time_changes(sin_ens.phi[:, :n], cb), sin_ens.phi[:, :n]):
        assert c.error <= np.max(np.abs(row)) + 1e-12
        assert np.all(np.diff(c.phi_hat.values[:, 0]) >= 0)
        assert c.phi_hat.values[0, 0] == 0.0


def test_empty_net_falls_back_to_zero():
    cb = build_layered_codebook([_linear(1.0)], s=1.25, rate=0.0)
    assert len(cb) == 1
    out = quantize_time_change(_linear(1.0), cb)
    np.testing.assert_array_equal(out.values, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=60))
def test_monotone_regularize_is_prefix_max(steps):
    vals = np.concatenate([[0.0], np.cumsum(steps)])
    f = SampledPath(vals, 1.0 / len(steps), 1.0)
    g = monotone_regularize(f).values[:, 0]
    oracle = [max(vals[: j + 1]) for j in range(len(vals))]
    np.testing.assert_array_equal(g, oracle)


def test_cross_term_zero_for_equal_time_changes():
    rng = np.random.default_rng(1)
    wb = SampledPath(np.concatenate([[0.0], np.cumsum(rng.standard_normal(512)) * 0.0625]), 2.0**-8, 2.0)
    assert cross_term(wb, _linear(1.5), _linear(1.5)) == 0.0
    assert cross_term(wb, _linear(1.5), _linear(1.0)) > 0.0
    with pytest.raises(ValueError):
        cross_term(wb, _linear(3.0), _linear(1.0))


def test_modulus_bound_holds():
    rep = modulus_tail_estimate(1.0, 0.01, 0.3, n_mc=400, seed=2)
    assert rep.passed
    assert rep.n_windows == 100
    with pytest.raises(ValueError):
        modulus_tail_estimate(1.0, 0.01, 0.1)
