"""Time-to-velocity-reversal footstep planner."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lipm import LipmParams, LipmState, Stance, StepTiming, propagate_array

MIN_REVERSAL_TIME = 1e-3


@dataclass(frozen=True)
class TvrGains:
    t_xprime: float
    t_yprime: float
    kappa_x: float
    kappa_y: float
    com_desired: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("t_xprime", "t_yprime"):
            t = getattr(self, name)
            if not t >= MIN_REVERSAL_TIME:
                raise ValueError(f"{name} must be >= {MIN_REVERSAL_TIME} s, got {t}")
        for name in ("kappa_x", "kappa_y"):
            k = getattr(self, name)
            if not -1.0 < k < 1.0:
                raise ValueError(f"{name} must lie in (-1, 1), got {k}")

    def with_desired(self, com_desired) -> "TvrGains":
        return TvrGains(
            self.t_xprime, self.t_yprime, self.kappa_x, self.kappa_y,
            (float(com_desired[0]), float(com_desired[1])),
        )


def reversal_coefficient(omega: float, t: float) -> float:
    """``(e^{wT} + e^{-wT}) / (w (e^{wT} - e^{-wT}))``, i.e. ``coth(wT)/w``."""
    if t < MIN_REVERSAL_TIME:
        raise ValueError(f"reversal time must be >= {MIN_REVERSAL_TIME} s, got {t}")
    ep, em = math.exp(omega * t), math.exp(-omega * t)
    return (ep + em) / (omega * (ep - em))


def switching_state_array(
    params: LipmParams, apex: np.ndarray, stance: np.ndarray, timing: StepTiming
) -> np.ndarray:
    return propagate_array(params, apex, stance, timing.pre_switch)


def switching_state(
    params: LipmParams, apex_state: LipmState, stance: Stance, timing: StepTiming
) -> LipmState:
    """CoM state at the stance exchange following ``apex_state``."""
    return LipmState.from_array(
        switching_state_array(params, apex_state.as_array(), stance.as_array(), timing)
    )


def plan_matrices(params: LipmParams, gains: TvrGains) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``a = F @ x_switch + g`` of the planner."""
    f_phi = np.array(
        [
            [1.0 - gains.kappa_x, 0.0, reversal_coefficient(params.omega, gains.t_xprime), 0.0],
            [0.0, 1.0 - gains.kappa_y, 0.0, reversal_coefficient(params.omega, gains.t_yprime)],
        ]
    )
    g_phi = np.array([gains.kappa_x * gains.com_desired[0], gains.kappa_y * gains.com_desired[1]])
    return f_phi, g_phi


def plan_array(params: LipmParams, gains: TvrGains, switching: np.ndarray) -> np.ndarray:
    f_phi, g_phi = plan_matrices(params, gains)
    return f_phi @ np.asarray(switching, dtype=float) + g_phi


def plan(params: LipmParams, gains: TvrGains, switching: LipmState) -> np.ndarray:
    """Next stance location that reverses the CoM velocity ``T'`` after the exchange."""
    return plan_array(params, gains, switching.as_array())


def plan_from_apex(
    params: LipmParams, gains: TvrGains, timing: StepTiming, apex: np.ndarray, stance: np.ndarray
) -> np.ndarray:
    return plan_array(params, gains, switching_state_array(params, apex, stance, timing))
