"""Capture regions, the polytope safe set and a brute-force capturability oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lipm import LipmParams, StepTiming, transition_matrices

# rows pick out +-(u + v) and +-(u - v) of the capture-point offset (u, v)
_SIGNS = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])


def capture_radius(
    params: LipmParams, timing: StepTiming, steps: int, literal_exponent: bool = False
) -> float:
    """Radius of the ``steps``-step capture region at the apex.

    ``literal_exponent`` drops the natural frequency from the exponent,
    which makes the radius depend on time in seconds directly.
    """
    if steps not in (1, 2):
        raise ValueError(f"capture steps must be 1 or 2, got {steps}")
    rate = 1.0 if literal_exponent else params.omega
    decay = math.exp(-rate * timing.t_land)
    radius = params.l_max * decay
    if steps == 2:
        radius *= 1.0 + decay
    return radius


@dataclass(frozen=True)
class CaptureSpec:
    steps: int
    cp_radius: float
    uses_omega_in_exponent: bool = True

    @classmethod
    def build(cls, params: LipmParams, timing: StepTiming, steps: int, literal_exponent: bool = False):
        return cls(steps, capture_radius(params, timing, steps, literal_exponent), not literal_exponent)


@dataclass(frozen=True)
class SafePolytope:
    a_mat: np.ndarray
    b_vec: np.ndarray
    radius: float

    @classmethod
    def from_radius(cls, params: LipmParams, radius: float) -> "SafePolytope":
        if not radius > 0:
            raise ValueError(f"capture radius must be positive, got {radius}")
        inv_w = 1.0 / params.omega
        rows = []
        for su, sv in _SIGNS:
            rows.append([su, sv, su * inv_w, sv * inv_w, -su, -sv])
        a_mat = np.array(rows) / radius
        a_mat.setflags(write=False)
        b_vec = np.ones(4)
        b_vec.setflags(write=False)
        return cls(a_mat, b_vec, float(radius))

    @classmethod
    def build(cls, params: LipmParams, timing: StepTiming, steps: int, literal_exponent: bool = False):
        return cls.from_radius(params, capture_radius(params, timing, steps, literal_exponent))

    def inflated(self, params: LipmParams, margin: float) -> "SafePolytope":
        return SafePolytope.from_radius(params, self.radius * (1.0 + margin))


def barrier_value_array(poly: SafePolytope, upper: np.ndarray) -> np.ndarray:
    """``A_C @ [x; p] + b_C`` for an upper state ``[x, y, xd, yd, px, py]``."""
    return poly.a_mat @ np.asarray(upper, dtype=float) + poly.b_vec


def barrier_value(poly: SafePolytope, state, stance) -> np.ndarray:
    upper = np.concatenate([state.as_array(), stance.as_array()])
    return barrier_value_array(poly, upper)


def capture_offset(params: LipmParams, upper: np.ndarray) -> np.ndarray:
    """Instantaneous capture point relative to the stance, ``(u, v)``."""
    s = np.asarray(upper, dtype=float)
    return s[..., 0:2] + s[..., 2:4] / params.omega - s[..., 4:6]


def in_capture_ellipsoid(params: LipmParams, upper: np.ndarray, radius: float) -> bool:
    return float(np.linalg.norm(capture_offset(params, upper))) <= radius


def _disk_grid(center: np.ndarray, half_width: float, grid: int, anchor: np.ndarray, reach: float) -> np.ndarray:
    """Grid points of a square around each ``center`` that stay within ``reach`` of ``anchor``.

    ``center`` and ``anchor`` are (n, 2); returns (n, m, 2) with out-of-reach
    points pulled onto the reach circle.
    """
    ticks = np.linspace(-half_width, half_width, grid)
    dx, dy = np.meshgrid(ticks, ticks, indexing="ij")
    offs = np.stack([dx.ravel(), dy.ravel()], axis=1)
    pts = center[:, None, :] + offs[None, :, :]
    rel = pts - anchor[:, None, :]
    dist = np.linalg.norm(rel, axis=2, keepdims=True)
    scale = np.where(dist > reach, reach / np.maximum(dist, 1e-300), 1.0)
    return anchor[:, None, :] + rel * scale


def _best_footstep(
    params: LipmParams, com: np.ndarray, stance: np.ndarray, grid: int, levels: int
) -> tuple[np.ndarray, np.ndarray]:
    """Grid search with zoom refinement for the step minimising capture-point error.

    ``com`` holds CoM states at the exchange (n, 4) and ``stance`` the
    stances being left (n, 2). Returns per-row (footstep, error).
    """
    cp = com[:, 0:2] + com[:, 2:4] / params.omega
    center = stance.copy()
    half = params.l_max
    best = stance.copy()
    best_err = np.linalg.norm(cp - stance, axis=1)
    for _ in range(levels + 1):
        pts = _disk_grid(center, half, grid, stance, params.l_max)
        err = np.linalg.norm(cp[:, None, :] - pts, axis=2)
        idx = np.argmin(err, axis=1)
        rows = np.arange(len(idx))
        cand, cand_err = pts[rows, idx], err[rows, idx]
        better = cand_err < best_err
        best[better], best_err[better] = cand[better], cand_err[better]
        center = best.copy()
        half = 2.0 * half / (grid - 1)
    return best, best_err


def oracle_capturable(
    params: LipmParams,
    timing: StepTiming,
    upper: np.ndarray,
    steps: int,
    grid: int = 41,
    tol: float | None = None,
    levels: int = 3,
    branch: int = 64,
) -> bool:
    """Brute-force check that the pendulum can be stopped within ``steps`` steps.

    Footsteps are taken at the stance exchanges following the apex, each
    within ``l_max`` of the stance it replaces, and are searched on a grid
    of ``grid`` points per axis refined ``levels`` times around the best
    point. The CoM is moved between exchanges with the closed-form
    transition maps. The pendulum counts as stopped once its capture point
    sits within ``tol`` (default ``0.01 l_max``) of its stance. Intermediate
    steps keep the ``branch`` grid candidates with the smallest error.
    """
    if grid < 21:
        raise ValueError("oracle grid needs at least 21 points per axis")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if tol is None:
        tol = 0.01 * params.l_max
    s = np.asarray(upper, dtype=float)
    com, stance = s[0:4], s[4:6]
    if np.linalg.norm(com[0:2] + com[2:4] / params.omega - stance) <= tol:
        return True
    f_pre, g_pre = transition_matrices(params, timing.pre_switch)
    f_per, g_per = transition_matrices(params, timing.period)
    coms = (f_pre @ com + g_pre @ stance)[None, :]
    stances = stance[None, :]
    ticks = np.linspace(-params.l_max, params.l_max, grid)
    dx, dy = np.meshgrid(ticks, ticks, indexing="ij")
    offs = np.stack([dx.ravel(), dy.ravel()], axis=1)
    offs = offs[np.linalg.norm(offs, axis=1) <= params.l_max * (1 + 1e-12)]
    for k in range(steps):
        _, err = _best_footstep(params, coms, stances, grid, levels)
        if np.any(err <= tol):
            return True
        if k == steps - 1:
            break
        # branch over coarse footsteps and swing each through a full period
        feet = (stances[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        rep = np.repeat(coms, len(offs), axis=0)
        cp = rep[:, 0:2] + rep[:, 2:4] / params.omega
        keep = np.argsort(np.linalg.norm(cp - feet, axis=1), kind="stable")[:branch]
        feet, rep = feet[keep], rep[keep]
        coms = rep @ f_per.T + feet @ g_per.T
        stances = feet
    return False
