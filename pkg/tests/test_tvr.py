import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from caplearn.lipm import LipmParams, LipmState, Stance, StepTiming, propagate_array
from caplearn.tvr import (
    TvrGains,
    plan,
    plan_array,
    plan_from_apex,
    reversal_coefficient,
    switching_state,
)
from oracles import rk4_lipm, tvr_symbolic

# planner written from its hyperbolic definition, DRACO gains, switching [0.1, 0.05, 0.3, -0.1]
PLAN_DRACO = np.array([0.2685602415049547, 0.008813252831681738])
SWITCH_DRACO = np.array([0.10709392665251612, 0.0, 0.4296622335890385, 0.0])

coord = st.floats(-1.0, 1.0, allow_nan=False)


def test_gain_guards():
    with pytest.raises(ValueError):
        TvrGains(0.0005, 0.2, 0.0, 0.0)
    with pytest.raises(ValueError):
        TvrGains(0.2, 0.2, 1.0, 0.0)
    with pytest.raises(ValueError):
        TvrGains(0.2, 0.2, 0.0, -1.0)


def test_reversal_coefficient_is_coth_over_omega():
    w, t = 3.2, 0.22
    assert reversal_coefficient(w, t) == pytest.approx(1.0 / (w * math.tanh(w * t)), rel=1e-14)
    with pytest.raises(ValueError):
        reversal_coefficient(w, 0.0)


def test_switching_state_examples(draco):
    apex = LipmState(0.05, 0.0, 0.3, 0.0)
    assert switching_state(draco, apex, Stance(0, 0), StepTiming(0.0, 0.16)) == apex
    rest = switching_state(draco, LipmState(0.2, 0.1, 0, 0), Stance(0.2, 0.1), StepTiming(0.16, 0.16))
    np.testing.assert_allclose(rest.as_array(), [0.2, 0.1, 0, 0], atol=1e-15)
    got = switching_state(draco, apex, Stance(0, 0), StepTiming(0.16, 0.16)).as_array()
    np.testing.assert_allclose(got, SWITCH_DRACO, atol=1e-9)
    np.testing.assert_allclose(got, rk4_lipm(draco.omega, apex.as_array(), [0, 0], 0.16, 1e-5), atol=1e-9)


def test_plan_at_desired_rest_returns_desired(draco):
    for kappa in (-0.5, 0.0, 0.7):
        gains = TvrGains(0.2, 0.3, kappa, kappa, com_desired=(0.4, -0.3))
        out = plan(draco, gains, LipmState(0.4, -0.3, 0.0, 0.0))
        np.testing.assert_allclose(out, [0.4, -0.3], atol=1e-15)


def test_draco_plan_matches_independent_evaluation(draco, draco_gains):
    out = plan(draco, draco_gains, LipmState(0.1, 0.05, 0.3, -0.1))
    np.testing.assert_allclose(out, PLAN_DRACO, atol=1e-14)
    sym = [tvr_symbolic(draco.omega, 0.22, -0.18, 0.1, 0.3, 0.0), tvr_symbolic(draco.omega, 0.22, -0.18, 0.05, -0.1, 0.0)]
    np.testing.assert_allclose(out, sym, atol=1e-14)


def test_velocity_reverses_without_bias(draco):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        tx, ty = rng.uniform(0.05, 0.6, 2)
        gains = TvrGains(tx, ty, 0.0, 0.0)
        s = rng.uniform(-1, 1, 4)
        a = plan_array(draco, gains, s)
        vx = propagate_array(draco, s, a, tx)[2]
        vy = propagate_array(draco, s, a, ty)[3]
        worst = max(worst, abs(vx), abs(vy))
    assert worst < 1e-8


@given(st.lists(coord, min_size=4, max_size=4), st.lists(coord, min_size=4, max_size=4), st.floats(0, 1))
def test_plan_is_affine(s1, s2, alpha):
    p = LipmParams(0.93, 0.7)
    gains = TvrGains(0.22, 0.22, -0.18, -0.18, com_desired=(0.3, 0.1))
    s1, s2 = np.array(s1), np.array(s2)
    lhs = plan_array(p, gains, alpha * s1 + (1 - alpha) * s2)
    rhs = alpha * plan_array(p, gains, s1) + (1 - alpha) * plan_array(p, gains, s2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@given(st.lists(coord, min_size=4, max_size=4), coord, coord)
def test_translation_equivariance(s, dx, dy):
    p = LipmParams(0.93, 0.7)
    base = TvrGains(0.22, 0.22, -0.18, -0.18, com_desired=(0.3, 0.1))
    shifted = base.with_desired((0.3 + dx, 0.1 + dy))
    s = np.array(s)
    moved = s + np.array([dx, dy, 0, 0])
    np.testing.assert_allclose(plan_array(p, shifted, moved), plan_array(p, base, s) + [dx, dy], atol=1e-12)


def test_plan_from_apex_chains_switching(draco, draco_gains, draco_timing):
    apex = np.array([0.05, 0.0, 0.3, 0.0])
    out = plan_from_apex(draco, draco_gains, draco_timing, apex, np.zeros(2))
    np.testing.assert_allclose(out, plan_array(draco, draco_gains, SWITCH_DRACO), atol=1e-9)
