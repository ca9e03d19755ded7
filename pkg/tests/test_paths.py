import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffquant.paths import SampledPath, TimeChange, grid_length, grid_weights, lq_norm, sup_norm


def test_grid_length_includes_both_ends():
    assert grid_length(0.25, 1.0) == 5
    assert grid_length(2.0**-10, 1.0) == 1025
    with pytest.raises(ValueError):
        grid_length(0.0, 1.0)


def test_grid_weights_skip_origin():
    w = grid_weights(4, 0.5)
    np.testing.assert_array_equal(w, [0.0, 0.5, 0.5, 0.5])


def test_sampled_path_promotes_and_validates():
    p = SampledPath(np.arange(5.0), 0.25, 1.0)
    assert p.values.shape == (5, 1)
    assert p.d == 1
    np.testing.assert_allclose(p.at([0.125, 1.0])[:, 0], [0.5, 4.0])
    with pytest.raises(ValueError):
        SampledPath(np.arange(3.0), 0.25, 1.0)


def test_norms_of_identity():
    p = SampledPath.from_function(lambda t: t, 2.0**-12)
    assert p.sup_norm() == pytest.approx(1.0)
    # right-endpoint rule on t: sum dt*(k dt) over k>=1
    assert p.lq_norm(1.0) == pytest.approx(0.5 + 2.0**-13, rel=1e-12)
    assert p.lq_norm(2.0) == pytest.approx(np.sqrt(1 / 3), rel=1e-3)


def test_time_change_must_start_at_zero():
    with pytest.raises(ValueError):
        TimeChange(np.array([0.1, 0.2, 0.3]), 0.5, 1.0)
    with pytest.raises(ValueError):
        TimeChange(np.array([0.0, 0.2, 0.1]), 0.5, 1.0, monotone=True)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.floats(0.1, 10.0))
def test_norms_are_homogeneous(vals, c):
    v = np.asarray(vals)[:, None]
    dt = 1.0 / (len(vals) - 1)
    assert sup_norm(c * v) == pytest.approx(c * sup_norm(v), rel=1e-9, abs=1e-9)
    assert lq_norm(c * v, dt, 3.0) == pytest.approx(c * lq_norm(v, dt, 3.0), rel=1e-9, abs=1e-9)
