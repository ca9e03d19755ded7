import numpy as np
import pytest

from diffquant.paths import TimeChange
from diffquant.sde_engine import (
    DiffusionSpec,
    SimulationError,
    check_assumption_C,
    holder_seminorm,
    indicator_sigma_spec,
    simulate_ensemble,
    substream,
    time_change_inverse,
    wiener_at,
    wiener_spec,
)
from diffquant.paths import SampledPath


def test_split_is_exact(sin_ens, ou_ens):
    for ens in (sin_ens, ou_ens):
        assert np.max(np.abs(ens.x - ens.m - ens.a)) <= 1e-12


def test_phi_is_integrated_sigma_squared(const2_ens):
    grid = np.arange(const2_ens.n) * const2_ens.dt
    np.testing.assert_allclose(const2_ens.phi[0], 4.0 * grid, atol=1e-12)


def test_wiener_martingale_equals_driver(wiener_ens):
    np.testing.assert_allclose(wiener_ens.m - wiener_ens.m[:, :1], wiener_ens.w, atol=1e-12)
    np.testing.assert_array_equal(wiener_ens.a, 0.0)


def test_output_independent_of_chunk_and_workers():
    spec = wiener_spec()
    a = simulate_ensemble(spec, 0.0, 2.0**-6, 1.0, 9, seed=5)
    b = simulate_ensemble(spec, 0.0, 2.0**-6, 1.0, 9, seed=5, chunk=2, workers=3)
    np.testing.assert_array_equal(a.x, b.x)


def test_first_index_selects_substream():
    spec = wiener_spec()
    full = simulate_ensemble(spec, 0.0, 2.0**-6, 1.0, 6, seed=5)
    tail = simulate_ensemble(spec, 0.0, 2.0**-6, 1.0, 2, seed=5, first_index=4)
    np.testing.assert_array_equal(full.x[4:], tail.x)


def test_substream_reproducible():
    assert substream(3, 1, 0).standard_normal() == substream(3, 1, 0).standard_normal()
    assert substream(3, 1, 0).standard_normal() != substream(3, 1, 1).standard_normal()


def test_simulation_rejects_bad_grid():
    with pytest.raises(ValueError):
        simulate_ensemble(wiener_spec(), 0.0, 0.5, 0.5, 1, seed=0)
    with pytest.raises(ValueError):
        simulate_ensemble(wiener_spec(), 0.0, 1.0, 1.0, 1, seed=0)


def test_nonfinite_coefficient_names_path():
    spec = DiffusionSpec(b=lambda x, t: np.zeros_like(x), sigma=lambda x, t: np.where(t > 0.5, np.inf, 1.0))
    with pytest.raises(SimulationError, match="path 0"):
        simulate_ensemble(spec, 0.0, 0.25, 1.0, 1, seed=0)


def test_inverse_of_linear_time_change():
    phi = TimeChange(np.linspace(0, 2, 9), 0.125, 1.0, monotone=True)
    np.testing.assert_allclose(time_change_inverse(phi, [0.0, 0.5, 1.3, 2.0]), [0.0, 0.25, 0.65, 1.0])
    with pytest.raises(ValueError):
        time_change_inverse(phi, 2.5)


def test_inverse_is_left_continuous_on_flat_piece():
    phi = TimeChange(np.array([0.0, 1.0, 1.0, 1.0, 2.0]), 0.25, 1.0, monotone=True)
    assert time_change_inverse(phi, 1.0) == pytest.approx(0.25)
    assert time_change_inverse(phi, 1.5) == pytest.approx(0.875)


def test_wiener_at_matches_nodes_and_extends(const2_ens):
    b = const2_ens[0]
    w = wiener_at(b, b.phi.values[:, 0])
    np.testing.assert_allclose(w, b.m.values - b.m.values[0], atol=1e-12)
    top = float(b.phi.values[-1, 0])
    ext1 = wiener_at(b, [top + 0.3, top + 1.0])
    ext2 = wiener_at(b, [top + 0.3, top + 1.0])
    np.testing.assert_array_equal(ext1, ext2)


def test_time_changed_wiener_has_unit_variance():
    spec = DiffusionSpec.constant(2.0)
    ens = simulate_ensemble(spec, 0.0, 2.0**-6, 1.0, 3000, seed=11)
    w1 = np.array([wiener_at(ens[i], [1.0])[0, 0] for i in range(len(ens))])
    assert np.var(w1) == pytest.approx(1.0, abs=0.08)


def test_holder_seminorm_oracle():
    p = SampledPath.from_function(lambda t: t, 0.125)
    assert holder_seminorm(p, 1.0) == pytest.approx(1.0)
    assert holder_seminorm(p, 0.5) == pytest.approx(1.0)
    q = SampledPath(np.array([0.0, 0.0, 1.0, 1.0, 1.0]), 0.25, 1.0)
    assert holder_seminorm(q, 0.5) == pytest.approx(2.0)
    assert holder_seminorm(SampledPath(np.zeros(5), 0.25, 1.0), 0.5) == 0.0


def test_assumption_probe():
    assert not check_assumption_C(wiener_spec(), n_probe=2000).violated
    rough = DiffusionSpec(b=lambda x, t: np.zeros_like(x), sigma=lambda x, t: np.sqrt(np.abs(x[:, 0])),
                          L=1.0, beta=1.0)
    assert check_assumption_C(rough, n_probe=4000).holder_ratio > 1.0


def test_indicator_family_time_change():
    spec = indicator_sigma_spec(0.25, 4.0)
    ens = simulate_ensemble(spec, 0.0, 2.0**-8, 1.0, 2, seed=0)
    assert ens.phi[0, -1] == pytest.approx(0.25 ** 0.5, rel=1e-12)
