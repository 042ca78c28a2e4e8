import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from caplearn.capture import (
    CaptureSpec,
    SafePolytope,
    barrier_value,
    barrier_value_array,
    capture_offset,
    capture_radius,
    in_capture_ellipsoid,
    oracle_capturable,
)
from caplearn.lipm import LipmParams, LipmState, Stance, StepTiming

CP1_DRACO = 0.41630903027035565
CP2_DRACO = 0.6638993283912755
CP1_DRACO_LITERAL = 0.5965006522763479

coord = st.floats(-2.0, 2.0, allow_nan=False)


def state_with_offset(p: LipmParams, u: float, v: float, stance=(0.0, 0.0), com=(0.0, 0.0)) -> np.ndarray:
    """Upper state whose capture point sits at ``(u, v)`` from the stance."""
    vel = p.omega * (np.array([u, v]) + np.array(stance) - np.array(com))
    return np.array([*com, *vel, *stance], dtype=float)


def test_draco_radii(draco, draco_timing):
    assert capture_radius(draco, draco_timing, 1) == pytest.approx(CP1_DRACO, abs=1e-15)
    assert capture_radius(draco, draco_timing, 2) == pytest.approx(CP2_DRACO, abs=1e-15)
    assert capture_radius(draco, draco_timing, 1, literal_exponent=True) == pytest.approx(CP1_DRACO_LITERAL, abs=1e-15)
    spec = CaptureSpec.build(draco, draco_timing, 2)
    assert spec.cp_radius > CaptureSpec.build(draco, draco_timing, 1).cp_radius
    assert spec.uses_omega_in_exponent


def test_radius_limits(draco):
    assert capture_radius(draco, StepTiming(0.0, 0.1), 1) == 0.7
    assert capture_radius(draco, StepTiming(0.0, 0.1), 2) == 1.4
    assert capture_radius(draco, StepTiming(50.0, 0.1), 1) < 1e-60


@pytest.mark.parametrize("steps", [0, 3])
def test_radius_rejects_steps(draco, draco_timing, steps):
    with pytest.raises(ValueError):
        capture_radius(draco, draco_timing, steps)


def test_polytope_stencil(draco, draco_timing):
    poly = SafePolytope.build(draco, draco_timing, 1)
    w = draco.omega
    expected = np.array([[s, t, s / w, t / w, -s, -t] for s, t in [(-1, -1), (-1, 1), (1, -1), (1, 1)]]) / CP1_DRACO
    np.testing.assert_allclose(poly.a_mat, expected, rtol=1e-15)
    assert np.array_equal(poly.b_vec, np.ones(4))
    with pytest.raises(ValueError):
        poly.a_mat[0, 0] = 1.0


def test_barrier_examples(draco, draco_timing):
    poly = SafePolytope.build(draco, draco_timing, 1)
    h = barrier_value(poly, LipmState(0.3, -0.2, 0, 0), Stance(0.3, -0.2))
    np.testing.assert_allclose(h, np.ones(4), atol=1e-15)
    edge = barrier_value_array(poly, state_with_offset(draco, poly.radius, 0.0))
    assert np.sum(np.abs(edge) < 1e-12) == 2
    assert np.all(edge > -1e-12)


def test_interior_point_matches_disk(draco, draco_timing):
    poly = SafePolytope.build(draco, draco_timing, 1)
    rng = np.random.default_rng(5)
    for _ in range(200):
        u, v = rng.uniform(-0.5, 0.5, 2) * poly.radius
        s = state_with_offset(draco, u, v, rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
        h = barrier_value_array(poly, s)
        assert np.all(h > 0)
        assert in_capture_ellipsoid(draco, s, poly.radius)
        assert math.hypot(u, v) == pytest.approx(float(np.linalg.norm(capture_offset(draco, s))), abs=1e-12)


@given(coord, coord, coord, coord, st.floats(-1, 1), st.floats(-1, 1))
def test_polytope_inside_disk(x, y, px, py, u_frac, v_frac):
    p = LipmParams(0.93, 0.7)
    poly = SafePolytope.build(p, StepTiming(0.16, 0.16), 1)
    s = state_with_offset(p, u_frac * poly.radius, v_frac * poly.radius, (px, py), (x, y))
    if np.all(barrier_value_array(poly, s) >= 0):
        assert np.linalg.norm(capture_offset(p, s)) <= poly.radius * (1 + 1e-9)


@given(coord, coord, coord, coord, st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_two_step_polytope_contains_one_step(x, y, px, py, u_frac, v_frac):
    p = LipmParams(0.93, 0.7)
    timing = StepTiming(0.16, 0.16)
    one, two = SafePolytope.build(p, timing, 1), SafePolytope.build(p, timing, 2)
    s = state_with_offset(p, u_frac * one.radius, v_frac * one.radius, (px, py), (x, y))
    if np.all(barrier_value_array(one, s) >= 0):
        assert np.all(barrier_value_array(two, s) >= 0)


@given(st.lists(coord, min_size=6, max_size=6), coord, coord)
def test_barrier_translation_invariant(upper, dx, dy):
    p = LipmParams(0.93, 0.7)
    poly = SafePolytope.build(p, StepTiming(0.16, 0.16), 2)
    s = np.array(upper)
    moved = s + np.array([dx, dy, 0, 0, dx, dy])
    np.testing.assert_allclose(barrier_value_array(poly, moved), barrier_value_array(poly, s), atol=1e-9)


def test_inflated_polytope(draco, draco_timing):
    poly = SafePolytope.build(draco, draco_timing, 2)
    assert poly.inflated(draco, 0.1).radius == pytest.approx(1.1 * poly.radius)


# -- brute-force oracle -------------------------------------------------------------

def test_oracle_rest_is_capturable(draco, draco_timing):
    for steps in (0, 1, 2):
        assert oracle_capturable(draco, draco_timing, np.array([0.4, 0.1, 0, 0, 0.4, 0.1]), steps)


def test_oracle_rejects_unreachable_velocity(draco, draco_timing):
    decay = math.exp(-draco.omega * draco_timing.t_land)
    speed = draco.omega * (draco.l_max * (1 + decay) + CP2_DRACO + 0.5)
    s = np.array([0.0, 0.0, speed, 0.0, 0.0, 0.0])
    assert not oracle_capturable(draco, draco_timing, s, 1)
    assert not oracle_capturable(draco, draco_timing, s, 2)


def test_oracle_grid_floor(draco, draco_timing):
    with pytest.raises(ValueError):
        oracle_capturable(draco, draco_timing, np.zeros(6), 1, grid=11)


def test_one_step_radius_is_tight(draco, draco_timing):
    """The oracle confirms the disk edge and refutes points clearly past it."""
    for ang in np.linspace(0, 2 * math.pi, 8, endpoint=False):
        inside = state_with_offset(draco, 0.999 * CP1_DRACO * math.cos(ang), 0.999 * CP1_DRACO * math.sin(ang))
        outside = state_with_offset(draco, 1.05 * CP1_DRACO * math.cos(ang), 1.05 * CP1_DRACO * math.sin(ang))
        assert oracle_capturable(draco, draco_timing, inside, 1)
        assert not oracle_capturable(draco, draco_timing, outside, 1)


def test_polytope_members_capturable_sample(draco, draco_timing):
    poly = SafePolytope.build(draco, draco_timing, 1)
    rng = np.random.default_rng(11)
    ok = 0
    for _ in range(300):
        while True:
            u, v = rng.uniform(-poly.radius, poly.radius, 2)
            if abs(u) + abs(v) <= poly.radius:
                break
        s = state_with_offset(draco, u, v, rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
        ok += oracle_capturable(draco, draco_timing, s, 1)
    assert ok == 300
