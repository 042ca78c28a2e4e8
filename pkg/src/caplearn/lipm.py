"""Closed-form linear inverted pendulum dynamics and the step-phase clock.

State vectors are ``[x, y, xd, yd]`` and stance vectors ``[px, py]``; every
helper accepts plain arrays so the environment and the safety filter can use
them without wrapping.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LipmParams:
    h: float
    l_max: float
    g: float = 9.81
    omega: float = field(init=False)

    def __post_init__(self):
        if not (self.g > 0 and self.h > 0 and self.l_max > 0):
            raise ValueError(f"LIPM parameters must be positive: g={self.g}, h={self.h}, l_max={self.l_max}")
        object.__setattr__(self, "omega", math.sqrt(self.g / self.h))


@dataclass(frozen=True)
class LipmState:
    x: float
    y: float
    xd: float
    yd: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.xd, self.yd], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "LipmState":
        a = np.asarray(arr, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


class Side(enum.IntEnum):
    LEFT = 1
    RIGHT = -1

    def other(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT


@dataclass(frozen=True)
class Stance:
    px: float
    py: float
    side: Side = Side.LEFT

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py], dtype=float)


@dataclass(frozen=True)
class StepTiming:
    t_land: float
    t_lift: float
    t_ds: float = 0.0

    def __post_init__(self):
        if self.t_land < 0 or self.t_lift < 0 or self.t_ds < 0:
            raise ValueError("phase durations must be nonnegative")

    @property
    def pre_switch(self) -> float:
        """Time from an apex to the following stance exchange."""
        return self.t_land + 0.5 * self.t_ds

    @property
    def post_switch(self) -> float:
        """Time from the stance exchange to the next apex."""
        return 0.5 * self.t_ds + self.t_lift

    @property
    def period(self) -> float:
        return self.t_land + self.t_ds + self.t_lift


def _coefficients(omega: float, t: float) -> tuple[float, float, float]:
    wt = omega * t
    return math.cosh(wt), math.sinh(wt) / omega, omega * math.sinh(wt)


def transition_matrices(params: LipmParams, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(f_psi, g_psi)`` with ``x(t) = f_psi @ x0 + g_psi @ p``."""
    t = float(t)
    if not math.isfinite(t):
        raise ValueError(f"transition time must be finite, got {t}")
    if t < 0:
        raise ValueError(f"transition time must be nonnegative, got {t}")
    c1, c2, c3 = _coefficients(params.omega, t)
    f_psi = np.array(
        [
            [c1, 0.0, c2, 0.0],
            [0.0, c1, 0.0, c2],
            [c3, 0.0, c1, 0.0],
            [0.0, c3, 0.0, c1],
        ]
    )
    g_psi = np.array(
        [
            [1.0 - c1, 0.0],
            [0.0, 1.0 - c1],
            [-c3, 0.0],
            [0.0, -c3],
        ]
    )
    return f_psi, g_psi


def propagate_array(params: LipmParams, state: np.ndarray, stance: np.ndarray, t: float) -> np.ndarray:
    f_psi, g_psi = transition_matrices(params, t)
    return f_psi @ np.asarray(state, dtype=float) + g_psi @ np.asarray(stance, dtype=float)


def propagate(params: LipmParams, state: LipmState, stance: Stance, t: float) -> LipmState:
    return LipmState.from_array(propagate_array(params, state.as_array(), stance.as_array(), t))


def lipm_rhs(params: LipmParams, state: np.ndarray, stance: np.ndarray) -> np.ndarray:
    """Right-hand side of the pendulum ODE (used by integrator oracles)."""
    w2 = params.omega**2
    return np.array(
        [state[2], state[3], w2 * (state[0] - stance[0]), w2 * (state[1] - stance[1])]
    )


def orbital_energy(params: LipmParams, state: np.ndarray, stance: np.ndarray) -> np.ndarray:
    """Per-axis conserved quantity ``(v^2 - w^2 (x - p)^2) / 2``."""
    s = np.asarray(state, dtype=float)
    p = np.asarray(stance, dtype=float)
    return 0.5 * (s[2:4] ** 2 - params.omega**2 * (s[0:2] - p) ** 2)


def capture_point(params: LipmParams, state: np.ndarray) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    return s[0:2] + s[2:4] / params.omega


class Phase(enum.Enum):
    DOUBLE_SUPPORT = "double_support"
    LIFT = "lift"
    LAND = "land"


class Event(enum.Enum):
    SWITCHING = "switching"
    APEX = "apex"
    TOUCHDOWN = "touchdown"


_NEXT_PHASE = {
    Phase.DOUBLE_SUPPORT: Phase.LIFT,
    Phase.LIFT: Phase.LAND,
    Phase.LAND: Phase.DOUBLE_SUPPORT,
}


@dataclass(frozen=True)
class LocomotionPhase:
    phase: Phase
    elapsed: float = 0.0


def phase_duration(phase: Phase, timing: StepTiming) -> float:
    if phase is Phase.DOUBLE_SUPPORT:
        return timing.t_ds
    if phase is Phase.LIFT:
        return timing.t_lift
    return timing.t_land


def advance_phase(
    phase: LocomotionPhase, timing: StepTiming, dt: float
) -> tuple[LocomotionPhase, list[Event]]:
    """Advance the timer-driven state machine by ``dt``.

    Events come out in the order their boundaries are crossed: the switching
    moment at the middle of double support, the apex at the lift/land
    boundary, and touchdown when landing expires. With a zero-length double
    support the switching moment fires right after touchdown.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    # absorbs accumulated float error, e.g. sixteen steps of 0.01 s
    tol = 1e-9 * max(1.0, timing.period)
    current, elapsed, remaining = phase.phase, phase.elapsed, float(dt)
    events: list[Event] = []
    while True:
        duration = phase_duration(current, timing)
        end = elapsed + remaining
        if current is Phase.DOUBLE_SUPPORT:
            mid = 0.5 * duration
            if elapsed < mid - tol <= end:
                events.append(Event.SWITCHING)
        if end < duration - tol:
            return LocomotionPhase(current, end), events
        remaining = max(0.0, end - duration)
        if current is Phase.LIFT:
            events.append(Event.APEX)
        elif current is Phase.LAND:
            events.append(Event.TOUCHDOWN)
        current, elapsed = _NEXT_PHASE[current], 0.0
        if current is Phase.DOUBLE_SUPPORT and timing.t_ds <= tol:
            events.append(Event.SWITCHING)
            current = Phase.LIFT
        if remaining <= tol:
            return LocomotionPhase(current, 0.0), events


def step_map(params: LipmParams, timing: StepTiming) -> tuple[np.ndarray, np.ndarray]:
    """Apex-to-apex map of the upper state ``[x, y, xd, yd, px, py]``.

    Returns ``(F, G)`` with ``s_next = F @ s + G @ a``: the CoM swings on the
    old stance until the exchange, then on the new stance ``a`` until the
    next apex, and the new stance is ``a`` itself.
    """
    f_pre, g_pre = transition_matrices(params, timing.pre_switch)
    f_post, g_post = transition_matrices(params, timing.post_switch)
    f_mat = np.zeros((6, 6))
    f_mat[0:4, 0:4] = f_post @ f_pre
    f_mat[0:4, 4:6] = f_post @ g_pre
    g_mat = np.zeros((6, 2))
    g_mat[0:4, :] = g_post
    g_mat[4:6, :] = np.eye(2)
    return f_mat, g_mat
