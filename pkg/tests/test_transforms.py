import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pop.prior import PriorConfig, sample_function
from pop.transforms import (SIGMA_FLOOR, RunningStats, TransformState, boundary_scale_x, boundary_scale_y,
                            inverse_transform_x, observe, retransform_trajectory, scale_gradient, z_transform)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def random_state(rng, D=2, n=12, lo=-50.0, hi=50.0):
    st_ = TransformState(np.full(D, lo), np.full(D, hi))
    for _ in range(n):
        st_.observe(rng.uniform(lo, hi, size=D), float(rng.normal(0, 10)))
    return st_


def test_boundary_scale_x_endpoints():
    s = TransformState(np.array([-50.0, 0.0]), np.array([50.0, 4.0]))
    assert s.vx == 3.0 and s.vy == 3.0
    np.testing.assert_array_equal(boundary_scale_x(s.lower, s), [-3.0, -3.0])
    np.testing.assert_array_equal(boundary_scale_x(s.upper, s), [3.0, 3.0])
    np.testing.assert_array_equal(boundary_scale_x((s.lower + s.upper) / 2, s), [0.0, 0.0])


def test_degenerate_bounds_rejected():
    with pytest.raises(ValueError):
        TransformState(np.array([1.0]), np.array([1.0]))


def test_boundary_scale_y_endpoints_and_flat_range():
    s = TransformState(np.zeros(1), np.ones(1))
    s.observe([0.2], 5.0)
    assert boundary_scale_y(5.0, s) == 0.0  # flat: y_min == y_max
    s.observe([0.3], -1.0)
    assert boundary_scale_y(-1.0, s) == -3.0
    assert boundary_scale_y(5.0, s) == 3.0
    assert (s.y_min, s.y_max) == (-1.0, 5.0)  # scaling does not move the extrema
    s.boundary_scale_y(100.0)
    assert s.y_max == 5.0


@given(ys=st.lists(finite, min_size=2, max_size=30), q=st.floats(0, 1))
def test_boundary_scale_y_within_scale(ys, q):
    s = TransformState(np.zeros(1), np.ones(1))
    for y in ys:
        s.observe([0.5], y)
    y = s.y_min + q * (s.y_max - s.y_min)
    assert -3.0 - 1e-12 <= boundary_scale_y(y, s) <= 3.0 + 1e-12


def test_observe_widens_extrema_and_rejects_nonfinite():
    s = TransformState(np.zeros(2), np.ones(2))
    observe(s, [0.1, 0.1], 1.0)
    observe(s, [0.2, 0.2], -4.0)
    assert s.y_min == -4.0
    with pytest.raises(ValueError):
        observe(s, [0.1, np.nan], 0.0)
    with pytest.raises(ValueError):
        observe(s, [0.1, 0.1], np.inf)


def test_identical_observations_floor_the_std():
    s = TransformState(np.zeros(2), np.ones(2))
    s.observe([0.5, 0.5], 2.0)
    s.observe([0.5, 0.5], 2.0)
    np.testing.assert_array_equal(s.x_stats.std, [SIGMA_FLOOR, SIGMA_FLOOR])
    assert s.y_stats.std == SIGMA_FLOOR


def test_welford_matches_two_pass(rng):
    data = rng.normal(3.0, 7.0, size=10_000)
    rs = RunningStats()
    rs.extend(data)
    assert rs.mean == pytest.approx(data.mean(), rel=1e-12)
    assert rs.variance == pytest.approx(np.var(data), rel=1e-12)


@given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e4, 1e4)))
def test_welford_property(data):
    rs = RunningStats()
    rs.extend(data)
    assert rs.count == len(data)
    assert rs.mean == pytest.approx(data.mean(), rel=1e-9, abs=1e-9)
    assert rs.variance == pytest.approx(np.var(data), rel=1e-7, abs=1e-6)


def test_z_transform_examples():
    rs = RunningStats()
    rs.extend([1.0, 3.0])
    assert z_transform(2.0, rs) == 0.0
    assert z_transform(3.0, rs) == pytest.approx(1.0)
    const = RunningStats()
    const.extend([4.0, 4.0, 4.0])
    assert z_transform(4.0, const) == 0.0
    with pytest.raises(ValueError):
        z_transform(1.0, RunningStats())


def test_gradient_unchanged_when_factors_cancel():
    # sigma_x = sigma_y, V_x = V_y and equal x/y ranges
    s = TransformState(np.array([0.0]), np.array([2.0]))
    s.observe([0.0], 0.0)
    s.observe([2.0], 2.0)
    assert s.x_stats.std[0] == pytest.approx(s.y_stats.std)
    np.testing.assert_allclose(scale_gradient(np.array([1.7]), s), [1.7], rtol=1e-14)


def test_gradient_factor_is_linear_in_each_factor(rng):
    s = random_state(rng)
    g = np.array([0.3, -1.2])
    base = scale_gradient(g, s)
    np.testing.assert_allclose(scale_gradient(2 * g, s), 2 * base, rtol=1e-15)
    wider = TransformState(s.lower * 2, s.upper * 2, x_stats=s.x_stats.copy(), y_raw_stats=s.y_raw_stats.copy(),
                           y_min=s.y_min, y_max=s.y_max)
    np.testing.assert_allclose(scale_gradient(g, wider), 2 * base, rtol=1e-14)
    vy2 = TransformState(s.lower, s.upper, vy=6.0, x_stats=s.x_stats.copy(), y_raw_stats=s.y_raw_stats.copy(),
                         y_min=s.y_min, y_max=s.y_max)
    # doubling V_y doubles the ratio V_y/V_x and halves nothing else: sigma_y scales with V_y too
    np.testing.assert_allclose(scale_gradient(g, vy2), base, rtol=1e-14)


def composed(state, f):
    """x_tilde -> z-scored, boundary-scaled value under frozen statistics."""
    return lambda xt: float(state.forward_y(f.evaluate(state.inverse_x(xt))))


@given(seed=st.integers(0, 2**31))
def test_scaled_gradient_matches_composed_finite_differences(seed):
    rng = np.random.default_rng(seed)
    f = sample_function(PriorConfig(features=100), rng)
    s = TransformState(f.lower, f.upper)
    for x in rng.uniform(-50, 50, size=(10, 2)):
        s.observe(x, float(f.evaluate(x)))
    x = rng.uniform(-45, 45, size=2)
    xt = s.forward_x(x)
    h, F = 1e-5, composed(s, f)
    fd = np.array([(F(xt + h * e) - F(xt - h * e)) / (2 * h) for e in np.eye(2)])
    g = scale_gradient(f.gradient(x), s)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-6)


def test_round_trip_identity(rng):
    s = random_state(rng)
    x = rng.uniform(-50, 50, size=(10_000, 2))
    assert np.max(np.abs(inverse_transform_x(s.forward_x(x), s) - x)) < 1e-10
    xt = rng.normal(size=(10_000, 2))
    assert np.max(np.abs(s.forward_x(s.inverse_x(xt)) - xt)) < 1e-10
    np.testing.assert_allclose(s.inverse_x(s.forward_x(s.lower)), s.lower, atol=1e-10)


def test_retransform_after_widening_shrinks_values(rng):
    s = random_state(rng)
    xs = rng.uniform(-50, 50, size=(12, 2))
    ys = rng.normal(size=12)
    grads = rng.normal(size=(12, 2))
    t = np.linspace(0, 1, 12)
    before = boundary_scale_y(ys, s)
    s.observe(np.zeros(2), s.y_max + 1000.0)
    after = boundary_scale_y(ys, s)
    assert np.all(np.abs(after - after.mean()) <= np.abs(before - before.mean()) + 1e-12)
    a = retransform_trajectory(xs, ys, grads, t, s)
    b = retransform_trajectory(xs, ys, grads, t, s)
    for u, v in zip((a.x, a.y, a.grad, a.time), (b.x, b.y, b.grad, b.time)):
        np.testing.assert_array_equal(u, v)


def test_retransform_equals_recompute_from_raw(rng):
    lo, hi = np.full(2, -5.0), np.full(2, 5.0)
    xs = rng.uniform(-5, 5, size=(30, 2))
    ys = rng.normal(size=30) * 4
    s = TransformState(lo, hi)
    for x, y in zip(xs, ys):
        s.observe(x, y)
    tr = retransform_trajectory(xs, ys, np.ones((30, 2)), np.zeros(30), s)
    # oracle: two-pass statistics of the rescaled raw history
    bx = 3 * (2 * (xs - lo) / (hi - lo) - 1)
    by = 3 * (2 * (ys - ys.min()) / (ys.max() - ys.min()) - 1)
    np.testing.assert_allclose(tr.x, (bx - bx.mean(0)) / bx.std(0), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(tr.y, (by - by.mean()) / by.std(), rtol=1e-10, atol=1e-12)
    factor = bx.std(0) / by.std() * (hi - lo) / (ys.max() - ys.min())
    np.testing.assert_allclose(tr.grad, np.broadcast_to(factor, (30, 2)), rtol=1e-10)
