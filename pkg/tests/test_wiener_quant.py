import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from diffquant.paths import SampledPath
from diffquant.wiener_quant import (
    MAX_CODEBOOK_ENTRIES,
    BudgetError,
    Codebook,
    allocate_levels,
    finite_dim_codebook,
    gaussian_lloyd_mse,
    gaussian_training_set,
    kl_basis,
    kmeans,
    lloyd_scalar,
    nearest,
    product_codebook,
    rescale_lq,
    rescale_sup,
)


def test_kl_eigenvalues_frozen():
    basis, lam = kl_basis(5, 2.0**-10)
    assert lam[0] == pytest.approx(0.4056807, rel=1e-6)
    assert lam[0] / lam[1] == pytest.approx(9.0, rel=1e-5)
    assert np.all(np.diff(lam) < 0)
    assert np.all(basis[:, 0] == 0.0)


def test_kl_basis_orthonormal_in_weighted_product():
    dt = 2.0**-8
    basis, _ = kl_basis(6, dt)
    gram = (basis[:, 1:] * dt) @ basis[:, 1:].T
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-10)


def test_kl_basis_rejects_too_many_terms():
    with pytest.raises(ValueError):
        kl_basis(9, 0.125)


def test_gaussian_lloyd_mse_known_values():
    assert gaussian_lloyd_mse(1) == pytest.approx(1.0)
    assert gaussian_lloyd_mse(2) == pytest.approx(1 - 2 / math.pi, rel=1e-10)
    assert gaussian_lloyd_mse(4) == pytest.approx(0.11748, abs=1e-5)


def test_lloyd_two_levels_on_gaussian_quantiles():
    sq = lloyd_scalar(norm.ppf((np.arange(200_000) + 0.5) / 200_000), 2)
    np.testing.assert_allclose(sq.levels, [-math.sqrt(2 / math.pi), math.sqrt(2 / math.pi)], rtol=1e-3)
    assert sq.mse == pytest.approx(1 - 2 / math.pi, rel=1e-3)


def test_lloyd_reseeds_empty_cells():
    sq = lloyd_scalar(np.array([0.0, 0.0, 0.0, 1.0]), 3)
    assert len(sq) == 3
    assert sq.mse == pytest.approx(0.0)


def test_allocation_frozen_at_4096():
    lam = kl_basis(14, 2.0**-10)[1]
    n = allocate_levels(12 * math.log(2), lam)
    np.testing.assert_array_equal(n[:6], [21, 8, 4, 3, 2, 1])
    assert int(np.prod(n)) == 4032
    assert np.sum(np.log(n)) <= 12 * math.log(2) + 1e-12


def test_product_codebook_has_zero_first():
    cb = product_codebook(12 * math.log(2), dt=2.0**-8, samples_per_coord=2000)
    assert len(cb) == 4033
    assert cb.contains_zero and np.all(cb.entries[0] == 0.0)


def test_zero_rate_codebook_is_zero_path():
    cb = product_codebook(0.0, dt=2.0**-6)
    assert len(cb) == 1 and cb.contains_zero


def test_budget_cap():
    with pytest.raises(BudgetError):
        product_codebook(math.log(MAX_CODEBOOK_ENTRIES) + 2.0, dt=2.0**-6, samples_per_coord=200)


def test_codebook_rejects_oversize():
    with pytest.raises(ValueError):
        Codebook(np.zeros((5, 3, 1)), 0.5, 1.0, rate=math.log(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_nearest_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    K, n = int(rng.integers(1, 20)), int(rng.integers(2, 17))
    cb = Codebook(rng.standard_normal((K, n, 1)), 1.0 / (n - 1), 1.0)
    x = SampledPath(rng.standard_normal(n), 1.0 / (n - 1), 1.0)
    i, dist = nearest(cb, x, "sup")
    sup = np.max(np.abs(cb.entries[:, :, 0] - x.values[:, 0]), axis=1)
    assert dist == pytest.approx(sup.min(), abs=1e-12)
    assert sup[i] == pytest.approx(sup.min(), abs=1e-12)


def test_nearest_rejects_grid_mismatch():
    cb = Codebook(np.zeros((2, 5, 1)), 0.25, 1.0)
    with pytest.raises(ValueError):
        nearest(cb, SampledPath(np.zeros(9), 0.125, 1.0))


def test_rescale_is_exact_scaling():
    cb = product_codebook(math.log(16), dt=2.0**-6, samples_per_coord=1000)
    W = gaussian_training_set(50, 2.0**-6, seed=3)
    _, d1 = cb.nearest_many(W, "sup")
    big = rescale_sup(cb, 4.0)
    W4 = 2.0 * W
    _, d4 = big.nearest_many(W4, "sup")
    np.testing.assert_allclose(d4, 2.0 * d1, rtol=1e-12)
    back = rescale_lq(rescale_lq(cb, 2.5, 2.0), 0.4, 2.0)
    np.testing.assert_allclose(back.entries, cb.entries, atol=1e-12)


def test_kmeans_recovers_separated_clusters():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-5, 0.1, (200, 2)), rng.normal(5, 0.1, (200, 2))])
    centers, idx, _ = kmeans(x, 2, seed=1)
    np.testing.assert_allclose(np.sort(centers[:, 0]), [-5, 5], atol=0.05)
    assert len(set(idx[:200])) == 1


def test_finite_dim_codebook_size_and_weights():
    rng = np.random.default_rng(2)
    vc = finite_dim_codebook(rng.standard_normal((3000, 2)), math.log(8))
    assert len(vc) == 8
    assert vc.weights.sum() == pytest.approx(1.0)
    assert vc.quantize(vc.centers[3][None])[0] == pytest.approx(vc.centers[3])


def test_gaussian_training_set_variance():
    W = gaussian_training_set(4000, 2.0**-5, seed=1)
    assert W.shape == (4000, 33, 1)
    assert np.var(W[:, -1, 0]) == pytest.approx(1.0, abs=0.07)
