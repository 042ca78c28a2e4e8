"""Surrogate robot: perturbed pendulum step map plus a synthetic torso.

One call to :meth:`SurrogateEnv.step` covers a whole footstep, apex to apex.
The upper state follows the analytic step map plus a ground-truth residual
and optional pushes; the torso and heading come from a small stochastic
model since they have no closed form.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .capture import SafePolytope, barrier_value_array, capture_offset
from .lipm import LipmParams, Side, StepTiming, step_map, transition_matrices

FALL_TILT = math.pi / 3


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class ApexState:
    upper: np.ndarray  # [x, y, xd, yd, px, py]
    torso_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torso_angvel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pivot_yaw: float = 0.0
    side: Side = Side.LEFT

    @property
    def com(self) -> np.ndarray:
        return self.upper[0:4]

    @property
    def stance(self) -> np.ndarray:
        return self.upper[4:6]

    @classmethod
    def at_rest(cls, px: float = 0.0, py: float = 0.0) -> "ApexState":
        return cls(np.array([px, py, 0.0, 0.0, px, py]))


class ResidualKind(str, enum.Enum):
    ZERO = "zero"
    CONSTANT_BIAS = "constant_bias"
    SMOOTH_FIELD = "smooth_field"
    TILT_PRESET = "tilt_preset"


@dataclass(frozen=True)
class ResidualGroundTruth:
    """Unmodelled step-to-step drift ``d(x, p)``; stance entries are always zero.

    ``magnitude`` bounds each component in absolute value; for
    ``constant_bias`` it is the (signed) bias itself. ``smooth_field`` is a random sum of
    sinusoids of the upper state; ``tilt_preset`` mimics walking across
    slopes of up to ``tilt_deg`` whose angle varies along the ground with
    ``wavelength``.
    """

    kind: ResidualKind = ResidualKind.ZERO
    magnitude: tuple[float, ...] = (0.0,) * 6
    rng_seed: int = 0
    tilt_deg: float = 10.0
    wavelength: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ResidualKind(self.kind))
        mag = tuple(float(v) for v in self.magnitude)
        if len(mag) != 6 or not all(math.isfinite(v) for v in mag):
            raise ValueError("residual magnitude needs 6 finite entries")
        object.__setattr__(self, "magnitude", mag[:4] + (0.0, 0.0))
        rng = np.random.default_rng(self.rng_seed)
        object.__setattr__(self, "_freq", rng.normal(0.0, 2.0, size=(6, 6)))
        object.__setattr__(self, "_phase", rng.uniform(0.0, 2.0 * math.pi, size=6))

    def __call__(self, upper: np.ndarray, timing: StepTiming, g: float = 9.81) -> np.ndarray:
        mag = np.asarray(self.magnitude)
        if self.kind is ResidualKind.ZERO:
            return np.zeros(6)
        if self.kind is ResidualKind.CONSTANT_BIAS:
            return mag.copy()
        s = np.asarray(upper, dtype=float)
        mag = np.abs(mag)
        if self.kind is ResidualKind.SMOOTH_FIELD:
            return mag * np.sin(self._freq @ s + self._phase)
        # ground slope felt over one step: a = g sin(theta)
        k = 2.0 * math.pi / self.wavelength
        theta = math.radians(self.tilt_deg) * np.sin(k * s[0:2] + self._phase[0:2])
        acc = g * np.sin(theta)
        period = timing.period
        drift = np.concatenate([0.5 * acc * period**2, acc * period, np.zeros(2)])
        return np.clip(drift, -mag, mag)


class PushTiming(str, enum.Enum):
    PRE_APEX = "pre_apex"
    POST_APEX = "post_apex"
    RANDOM = "random"


@dataclass(frozen=True)
class DisturbanceSpec:
    """Random horizontal pushes, at most one per footstep.

    A push of force ``f`` lasting ``duration`` changes the CoM velocity by
    ``f * duration / mass``. ``post_apex`` pushes land during the landing
    phase, after the footstep was decided; ``pre_apex`` pushes land during
    the lift phase before the next decision.
    """

    force: float = 0.0
    duration: float = 0.01
    mass: float = 40.0
    timing: PushTiming = PushTiming.RANDOM
    probability: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "timing", PushTiming(self.timing))
        if self.force < 0 or self.duration <= 0 or self.mass <= 0:
            raise ValueError("push force must be >= 0, duration and mass > 0")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("push probability must lie in [0, 1]")


@dataclass(frozen=True)
class Push:
    force: tuple[float, float]
    when: PushTiming
    offset: float  # seconds into the phase named by ``when``


@dataclass(frozen=True)
class RewardWeights:
    r_a: float = 5.0
    w_b: float = 3.0
    w_t: float = 3.0
    w_s: float = 1.0
    w_c: float = 1.0

    def __post_init__(self):
        if min(self.w_b, self.w_t, self.w_s, self.w_c) < 0:
            raise ValueError("reward weights must be nonnegative")


@dataclass(frozen=True)
class Reference:
    """Moving target the robot is steered along."""

    com: np.ndarray = field(default_factory=lambda: np.zeros(2))
    yaw: float = 0.0
    speed: float = 0.0  # forward, along ``yaw``
    yaw_rate: float = 0.0

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.yaw), math.sin(self.yaw)])

    def advanced(self, dt: float) -> "Reference":
        return replace(
            self,
            com=self.com + self.velocity * dt,
            yaw=wrap_angle(self.yaw + self.yaw_rate * dt),
        )


def reward(state: ApexState, action, weights: RewardWeights, ref: Reference) -> float:
    """Alive bonus minus upright, pose-tracking, velocity and step-size penalties.

    ``action`` is the commanded footstep in world coordinates; its size is
    measured from the current stance.
    """
    s = state.upper
    r_b = state.torso_rpy[0] ** 2 + state.torso_rpy[1] ** 2
    pos_err = ref.com - s[0:2]
    yaw_bs_err = wrap_angle(ref.yaw - state.torso_rpy[2])
    yaw_pv_err = wrap_angle(ref.yaw - state.pivot_yaw)
    r_t = pos_err @ pos_err + yaw_bs_err**2 + yaw_pv_err**2
    vel_err = ref.velocity - s[2:4]
    r_s = vel_err @ vel_err + (ref.yaw_rate - state.torso_angvel[2]) ** 2
    step = np.asarray(action, dtype=float) - s[4:6]
    r_c = step @ step
    return float(weights.r_a - weights.w_b * r_b - weights.w_t * r_t - weights.w_s * r_s - weights.w_c * r_c)


def fall_test(state: ApexState, poly_2step: SafePolytope, margin: float) -> bool:
    """Fallen when the state leaves the 2-step polytope grown by ``margin`` or the torso tips over."""
    if margin < 0:
        raise ValueError("fall margin must be nonnegative")
    h = barrier_value_array(poly_2step, state.upper)
    tipped = abs(state.torso_rpy[0]) > FALL_TILT or abs(state.torso_rpy[1]) > FALL_TILT
    return bool(np.min(h) < -margin or tipped)


@dataclass(frozen=True)
class TorsoModel:
    """Damped second-order roll/pitch response kicked by capture-point error."""

    natural_freq: float = 2.0 * math.pi  # rad/s
    damping: float = 0.7
    kick_gain: float = 1.0  # rad/s of noise per metre of capture-point error
    yaw_noise: float = 0.01  # rad per step

    def discrete(self, dt: float) -> np.ndarray:
        wn, z = self.natural_freq, self.damping
        return expm(np.array([[0.0, 1.0], [-wn * wn, -2.0 * z * wn]]) * dt)


class SurrogateEnv:
    """Apex-to-apex simulator of one robot; owns its random stream."""

    def __init__(
        self,
        params: LipmParams,
        timing: StepTiming,
        weights: RewardWeights,
        speed: float = 0.0,
        yaw_rate: float = 0.0,
        residual: ResidualGroundTruth | None = None,
        disturbance: DisturbanceSpec | None = None,
        torso: TorsoModel | None = None,
        horizon: int = 50,
        fall_margin: float = 0.1,
        init_noise: tuple[float, float] = (0.02, 0.05),
        seed: int | np.random.SeedSequence | None = None,
    ):
        self.params, self.timing, self.weights = params, timing, weights
        self.speed, self.yaw_rate = float(speed), float(yaw_rate)
        self.residual = residual or ResidualGroundTruth()
        self.disturbance = disturbance or DisturbanceSpec()
        self.torso = torso or TorsoModel()
        self.horizon = int(horizon)
        self.fall_margin = float(fall_margin)
        self.init_noise = init_noise
        self.f_mat, self.g_mat = step_map(params, timing)
        self.poly_fall = SafePolytope.build(params, timing, 2)
        self._torso_a = self.torso.discrete(timing.period)
        self.rng = np.random.default_rng(seed)
        self.state: ApexState | None = None
        self.ref = Reference()
        self.steps = 0

    # -- dynamics -------------------------------------------------------
    def analytic_upper(self, upper: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self.f_mat @ upper + self.g_mat @ action

    def push_effect(self, push: Push) -> np.ndarray:
        """Change of the next apex upper state caused by ``push``."""
        dv = np.asarray(push.force, dtype=float) * self.disturbance.duration / self.disturbance.mass
        kick = np.array([0.0, 0.0, dv[0], dv[1]])
        post = transition_matrices(self.params, self.timing.post_switch)[0]
        if push.when is PushTiming.POST_APEX:
            rest = transition_matrices(self.params, max(self.timing.pre_switch - push.offset, 0.0))[0]
            delta = post @ rest @ kick
        else:
            delta = transition_matrices(self.params, max(self.timing.post_switch - push.offset, 0.0))[0] @ kick
        return np.concatenate([delta, np.zeros(2)])

    def sample_push(self) -> Push | None:
        spec = self.disturbance
        if spec.probability <= 0.0 or spec.force <= 0.0 or self.rng.random() >= spec.probability:
            return None
        force = self.rng.uniform(-spec.force, spec.force, size=2)
        when = spec.timing
        if when is PushTiming.RANDOM:
            when = PushTiming.PRE_APEX if self.rng.random() < 0.5 else PushTiming.POST_APEX
        span = self.timing.pre_switch if when is PushTiming.POST_APEX else self.timing.post_switch
        return Push((float(force[0]), float(force[1])), when, float(self.rng.uniform(0.0, span)))

    # -- episode API ------------------------------------------------------
    def reset(self, state: ApexState | None = None) -> ApexState:
        if state is None:
            pos_sd, vel_sd = self.init_noise
            com = np.concatenate(
                [self.rng.normal(0.0, pos_sd, 2), self.rng.normal(0.0, vel_sd, 2)]
            )
            state = ApexState(np.concatenate([com, np.zeros(2)]))
        self.state = state
        self.ref = Reference(
            com=state.upper[0:2].copy(), yaw=state.pivot_yaw, speed=self.speed, yaw_rate=self.yaw_rate
        )
        self.steps = 0
        return state

    def desired_com_at_switch(self) -> np.ndarray:
        return self.ref.com + self.ref.velocity * self.timing.pre_switch

    def step(self, action, push: Push | None = None) -> tuple[ApexState, float, bool, dict]:
        """Take the footstep ``action`` (world frame) and run to the next apex."""
        a = np.asarray(action, dtype=float)
        if a.shape != (2,) or not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite or malformed footstep {action!r}")
        state = self.state
        r = reward(state, a, self.weights, self.ref)
        upper = state.upper
        nominal_next = self.analytic_upper(upper, a)
        d = self.residual(upper, self.timing, self.params.g)
        if push is None:
            push = self.sample_push()
        kick = self.push_effect(push) if push is not None else np.zeros(6)
        nxt = nominal_next + d + kick
        nxt[4:6] = a  # stance is exactly the commanded footstep
        lower = self._lower_step(state, nxt)
        new_state = ApexState(nxt, *lower, side=state.side.other())
        self.state = new_state
        self.ref = self.ref.advanced(self.timing.period)
        self.steps += 1
        terminated = fall_test(new_state, self.poly_fall, self.fall_margin)
        truncated = not terminated and self.steps >= self.horizon
        info = {"analytic": nominal_next, "push": push, "truncated": truncated,
                "h_min": float(np.min(barrier_value_array(self.poly_fall, nxt)))}
        return new_state, r, terminated, info

    def _lower_step(self, state: ApexState, nxt: np.ndarray):
        cp_err = float(np.linalg.norm(capture_offset(self.params, nxt)))
        rpy = state.torso_rpy.copy()
        rates = state.torso_angvel.copy()
        kick_sd = self.torso.kick_gain * cp_err
        for axis in (0, 1):
            ang, rate = self._torso_a @ np.array([rpy[axis], rates[axis]])
            rate += self.rng.normal(0.0, kick_sd) if kick_sd > 0 else 0.0
            rpy[axis], rates[axis] = ang, rate
        dt = self.timing.period
        pivot_yaw = wrap_angle(state.pivot_yaw + self.yaw_rate * dt + self.rng.normal(0.0, self.torso.yaw_noise))
        rpy[2] = wrap_angle(pivot_yaw + self.rng.normal(0.0, self.torso.yaw_noise))
        rates[2] = self.yaw_rate + self.rng.normal(0.0, self.torso.yaw_noise / dt)
        rpy[0:2] = wrap_angle(rpy[0:2])
        return rpy, rates, pivot_yaw
