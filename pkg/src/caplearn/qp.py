"""Dense primal active-set solver for small convex QPs.

Solves ``min 1/2 x'Hx + c'x  s.t.  Ax <= b`` from a feasible start. ``H``
may be singular (the slack variable has linear cost only); zero-curvature
descent directions are followed as rays until a constraint blocks them.
Both the entering and the leaving constraint are picked by Bland's
smallest-index rule so degenerate vertices cannot cycle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class QpSolveError(RuntimeError):
    def __init__(self, message: str, dump: dict):
        super().__init__(f"{message}\n{json.dumps(dump)}")
        self.dump = dump


@dataclass(frozen=True)
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray
    active: tuple[int, ...]
    iterations: int
    kkt_residual: float


def _null_space(a: np.ndarray, n: int) -> np.ndarray:
    if a.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return vt[rank:].T


def _eqp_direction(h: np.ndarray, g: np.ndarray, a_w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Step of the equality-constrained subproblem; flag marks an unbounded ray."""
    n = len(g)
    z = _null_space(a_w, n)
    if z.shape[1] == 0:
        return np.zeros(n), False
    h_r = z.T @ h @ z
    g_r = z.T @ g
    evals, evecs = np.linalg.eigh(h_r)
    flat = evals <= 1e-12 * max(1.0, float(np.max(np.abs(evals))))
    g_flat = evecs[:, flat].T @ g_r
    if np.linalg.norm(g_flat) > 1e-13 * max(1.0, float(np.linalg.norm(g))):
        ray = -z @ evecs[:, flat] @ g_flat
        return ray / np.linalg.norm(ray), True
    curved = ~flat
    v = evecs[:, curved]
    return -z @ (v @ ((v.T @ g_r) / evals[curved])), False


def kkt_residual(h, c, a, b, x, lam) -> float:
    stat = h @ x + c + a.T @ lam
    slack = a @ x - b
    return float(
        max(
            np.max(np.abs(stat)),
            np.max(np.maximum(slack, 0.0)),
            np.max(np.abs(lam * slack)),
            np.max(np.maximum(-lam, 0.0)),
        )
    )


def solve_active_set(
    h: np.ndarray,
    c: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-11,
) -> QpResult:
    h, c, a, b = (np.asarray(v, dtype=float) for v in (h, c, a, b))
    x = np.array(x0, dtype=float)
    m = len(b)
    if m and np.max(a @ x - b) > 1e-9 * max(1.0, float(np.max(np.abs(b)))):
        raise QpSolveError("starting point is infeasible", _dump(h, c, a, b, x, []))
    work: list[int] = []
    for it in range(1, max_iter + 1):
        g = h @ x + c
        a_w = a[work]
        p, ray = _eqp_direction(h, g, a_w)
        step_small = np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(x))
        if not ray and step_small:
            lam_w = np.linalg.lstsq(a_w.T, -g, rcond=None)[0] if work else np.zeros(0)
            # scale-aware: multipliers grow with the slack penalty
            lam_tol = 1e-9 * max(1.0, float(np.max(np.abs(g))))
            negative = [j for j, l in zip(work, lam_w) if l < -lam_tol]
            if not negative:
                lam = np.zeros(m)
                lam[work] = np.maximum(lam_w, 0.0)
                return QpResult(x, lam, tuple(sorted(work)), it, kkt_residual(h, c, a, b, x, lam))
            work.remove(min(negative))
            continue
        ap = a @ p
        alpha = np.inf if ray else 1.0
        blocking = None
        for i in range(m):
            if i in work or ap[i] <= 1e-14 * max(1.0, np.linalg.norm(a[i]) * np.linalg.norm(p)):
                continue
            step = max((b[i] - a[i] @ x) / ap[i], 0.0)
            if step < alpha:
                alpha, blocking = step, i
        if not np.isfinite(alpha):
            raise QpSolveError("objective unbounded below", _dump(h, c, a, b, x, work))
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)
    raise QpSolveError(f"no convergence after {max_iter} iterations", _dump(h, c, a, b, x, work))


def _dump(h, c, a, b, x, work) -> dict:
    return {
        "hessian": np.asarray(h).tolist(),
        "linear": np.asarray(c).tolist(),
        "ineq_mat": np.asarray(a).tolist(),
        "ineq_vec": np.asarray(b).tolist(),
        "x": np.asarray(x).tolist(),
        "working_set": list(work),
    }
