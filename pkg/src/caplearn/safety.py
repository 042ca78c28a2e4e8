"""Control-barrier safety filter: worst-case CBF rows and the slacked QP."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .capture import SafePolytope
from .gp import ResidualModel
from .lipm import LipmParams, StepTiming, step_map
from .qp import QpResult, solve_active_set

N_SAFETY = 4


@dataclass(frozen=True)
class FilterConfig:
    k_eps: float = 1e5
    eta: float = 0.8
    a_min: tuple[float, float] = (-0.7 / math.sqrt(2), -0.7 / math.sqrt(2))
    a_max: tuple[float, float] = (0.7 / math.sqrt(2), 0.7 / math.sqrt(2))
    slack_tol: float = 1e-7

    def __post_init__(self):
        if not self.k_eps > 0:
            raise ValueError(f"k_eps must be positive, got {self.k_eps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not all(lo < hi for lo, hi in zip(self.a_min, self.a_max)):
            raise ValueError("a_min must be below a_max componentwise")

    @classmethod
    def for_robot(cls, params: LipmParams, k_eps: float = 1e5, eta: float = 0.8) -> "FilterConfig":
        """Box around the stance inscribed in the reachable disk."""
        half = params.l_max / math.sqrt(2.0)
        return cls(k_eps, eta, (-half, -half), (half, half))


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    ineq_mat: np.ndarray
    ineq_vec: np.ndarray

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("hessian", "linear", "ineq_mat", "ineq_vec")}


@dataclass(frozen=True)
class FilterResult:
    a_sf: np.ndarray
    eps: float
    violated: bool
    iterations: int
    kkt_residual: float


def assemble(
    upper: np.ndarray,
    nominal: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
    poly: SafePolytope,
    cfg: FilterConfig,
    f_mat: np.ndarray,
    g_mat: np.ndarray,
    k_delta: float,
) -> QpProblem:
    """Build the QP over ``[a_sf_x, a_sf_y, eps]`` for one apex decision.

    Rows: four worst-case barrier conditions, the upper and lower footstep
    box around the current stance, and ``eps >= 0``.
    """
    s = np.asarray(upper, dtype=float)
    nominal = np.asarray(nominal, dtype=float)
    a_c, b_c = poly.a_mat, poly.b_vec
    a_g = a_c @ g_mat
    b_safe = (
        a_c @ (f_mat @ s + mu + g_mat @ nominal)
        - (1.0 - cfg.eta) * (a_c @ s)
        - k_delta * np.abs(a_c @ sigma)
        + cfg.eta * b_c
    )
    stance = s[4:6]
    a_hi = stance + np.asarray(cfg.a_max)
    a_lo = stance + np.asarray(cfg.a_min)
    ineq_mat = np.zeros((9, 3))
    ineq_mat[0:4, 0:2] = -a_g
    ineq_mat[0:4, 2] = -1.0
    ineq_mat[4:6, 0:2] = np.eye(2)
    ineq_mat[6:8, 0:2] = -np.eye(2)
    ineq_mat[8, 2] = -1.0
    ineq_vec = np.concatenate([b_safe, a_hi - nominal, nominal - a_lo, [0.0]])
    hessian = np.diag([1.0, 1.0, 0.0])
    linear = np.array([0.0, 0.0, cfg.k_eps])
    return QpProblem(hessian, linear, ineq_mat, ineq_vec)


def feasible_start(qp: QpProblem) -> np.ndarray:
    """Smallest box-feasible correction with the slack that makes it feasible."""
    lo, hi = -qp.ineq_vec[6:8], qp.ineq_vec[4:6]
    a0 = np.clip(0.0, lo, hi)
    eps0 = max(0.0, float(np.max(qp.ineq_mat[0:4, 0:2] @ a0 - qp.ineq_vec[0:4])))
    return np.array([a0[0], a0[1], eps0])


def solve(qp: QpProblem, slack_tol: float = 1e-7) -> tuple[np.ndarray, float, FilterResult]:
    res: QpResult = solve_active_set(qp.hessian, qp.linear, qp.ineq_mat, qp.ineq_vec, feasible_start(qp))
    a_sf = res.x[0:2].copy()
    eps = float(res.x[2])
    status = FilterResult(a_sf, eps, eps > slack_tol, res.iterations, res.kkt_residual)
    return a_sf, eps, status


def compose_action(tvr, nn, a_sf) -> np.ndarray:
    return np.asarray(tvr, dtype=float) + np.asarray(nn, dtype=float) + np.asarray(a_sf, dtype=float)


class SafetyFilter:
    """Binds robot constants so callers only pass the state and nominal action."""

    def __init__(
        self,
        params: LipmParams,
        timing: StepTiming,
        poly: SafePolytope,
        cfg: FilterConfig,
        trace_path=None,
    ):
        self.params, self.timing, self.poly, self.cfg = params, timing, poly, cfg
        self.f_mat, self.g_mat = step_map(params, timing)
        self._trace = open(trace_path, "a") if trace_path else None

    def assemble(self, upper, nominal, model: ResidualModel) -> QpProblem:
        mu, sigma = model.predict(upper)
        return assemble(upper, nominal, mu, sigma, self.poly, self.cfg, self.f_mat, self.g_mat, model.hyper.k_delta)

    def assemble_with(self, upper, nominal, mu, sigma, k_delta) -> QpProblem:
        return assemble(upper, nominal, mu, sigma, self.poly, self.cfg, self.f_mat, self.g_mat, k_delta)

    def solve(self, qp: QpProblem) -> FilterResult:
        _, _, status = solve(qp, self.cfg.slack_tol)
        if self._trace is not None:
            record = {"qp": qp.to_json(), "a_sf": status.a_sf.tolist(), "eps": status.eps,
                      "iterations": status.iterations, "kkt": status.kkt_residual}
            self._trace.write(json.dumps(record) + "\n")
        return status

    def close(self) -> None:
        if self._trace is not None:
            self._trace.close()
            self._trace = None
