"""Numerical audits of the safe set and the safety filter.

These routines back the ``verify-safety`` command and the acceptance suite.
They sample states and QP instances from a seeded generator and compare the
fast code paths against slow, independent references.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .capture import (
    SafePolytope,
    barrier_value_array,
    capture_offset,
    capture_radius,
    oracle_capturable,
)
from .env import RewardWeights, SurrogateEnv
from .gp import GpHyper, empty_model, fit
from .lipm import LipmParams, StepTiming
from .ppo import make_rng
from .safety import FilterConfig, QpProblem, SafetyFilter, solve

INCLUSION_TOL = 1e-9  # relative slack for floating-point rounding on the boundary


def _l1_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """Uniform samples from ``|u| + |v| <= radius``."""
    out = np.empty((0, 2))
    while len(out) < n:
        cand = rng.uniform(-radius, radius, size=(2 * n, 2))
        out = np.vstack([out, cand[np.abs(cand).sum(axis=1) <= radius]])
    return out[:n]


def states_from_offsets(params: LipmParams, offsets: np.ndarray, rng: np.random.Generator,
                        spread: float = 1.0) -> np.ndarray:
    """Upper states whose capture point sits at ``offsets`` from a random stance."""
    n = len(offsets)
    stance = rng.uniform(-spread, spread, size=(n, 2))
    com = stance + rng.uniform(-0.5 * params.l_max, 0.5 * params.l_max, size=(n, 2))
    vel = params.omega * (offsets + stance - com)
    return np.hstack([com, vel, stance])


def sample_polytope_states(params: LipmParams, poly: SafePolytope, n: int,
                           rng: np.random.Generator) -> np.ndarray:
    return states_from_offsets(params, _l1_ball(rng, n, poly.radius), rng)


def inclusion_violations(params: LipmParams, poly: SafePolytope, n: int, rng: np.random.Generator) -> dict:
    """Count states with ``h >= 0`` whose capture point lies outside the capture disk.

    Half of the samples come from a square enclosing the disk (and are kept
    only if inside the polytope), the other half are drawn inside the
    polytope directly, four of them on its vertices.
    """
    half = n // 2
    outer = rng.uniform(-1.2 * poly.radius, 1.2 * poly.radius, size=(n - half, 2))
    inner = _l1_ball(rng, half, poly.radius)
    if half >= 4:
        inner[:4] = poly.radius * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    states = states_from_offsets(params, np.vstack([inner, outer]), rng)
    h = states @ poly.a_mat.T + poly.b_vec
    inside = np.all(h >= 0.0, axis=1)
    dist = np.linalg.norm(capture_offset(params, states), axis=1)
    bad = inside & (dist > poly.radius * (1.0 + INCLUSION_TOL))
    return {"samples": int(n), "inside_polytope": int(inside.sum()), "violations": int(bad.sum()),
            "max_radius_ratio": float(dist[inside].max() / poly.radius) if inside.any() else 0.0}


def oracle_agreement(params: LipmParams, timing: StepTiming, poly: SafePolytope, steps: int, n: int,
                     rng: np.random.Generator) -> dict:
    states = sample_polytope_states(params, poly, n, rng)
    ok = np.array([oracle_capturable(params, timing, s, steps) for s in states], dtype=bool)
    return {"samples": int(n), "steps": steps, "confirmed": int(ok.sum()),
            "rate": float(ok.mean()) if n else 1.0}


# -- QP reference ---------------------------------------------------------------

def qp_objective(qp: QpProblem, a_sf: np.ndarray) -> float:
    """Objective with the slack set to its smallest feasible value."""
    return float(_grid_values(qp, np.atleast_2d(a_sf))[0])


def _grid_values(qp: QpProblem, pts: np.ndarray) -> np.ndarray:
    rows = qp.ineq_mat[0:4, 0:2]
    # safety rows read -A_g a - eps <= b, i.e. eps >= -A_g a - b = rows @ a - b
    viol = pts @ rows.T - qp.ineq_vec[0:4]
    eps = np.maximum(0.0, viol.max(axis=1))
    return 0.5 * np.einsum("ij,ij->i", pts, pts) + qp.linear[2] * eps


def grid_oracle(qp: QpProblem, grid: int = 41, refine: int = 21, keep: int = 8, spacing: float = 1e-11) -> tuple[np.ndarray, float]:
    """Minimise the filter QP by brute force over its two footstep variables.

    The slack is eliminated in closed form. A coarse grid over the box is
    refined around the ``keep`` best points until the grid spacing drops
    below ``spacing``.
    """
    lo, hi = -qp.ineq_vec[6:8], qp.ineq_vec[4:6]
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(2)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    step = (hi - lo) / (grid - 1)
    while True:
        vals = _grid_values(qp, pts)
        order = np.argsort(vals, kind="stable")[:keep]
        best = pts[order]
        if np.max(step) < spacing:
            break
        width = 1.5 * step
        step = 2.0 * width / (refine - 1)
        offs = np.stack(np.meshgrid(*[np.linspace(-1.0, 1.0, refine)] * 2, indexing="ij"), axis=-1).reshape(-1, 2)
        pts = (best[:, None, :] + offs[None, :, :] * width).reshape(-1, 2)
        pts = np.clip(pts, lo, hi)
        pts = np.vstack([pts, best])
    vals = _grid_values(qp, best)
    i = int(np.argmin(vals))
    return best[i], float(vals[i])


def random_qp(filt: SafetyFilter, rng: np.random.Generator, k_delta: float = 2.0, sigma_scale: float = 0.03,
              outside: float = 1.3) -> tuple[QpProblem, np.ndarray]:
    """A filter QP at a random state with random nominal step and residual estimate."""
    params, poly, cfg = filt.params, filt.poly, filt.cfg
    offset = _l1_ball(rng, 1, outside * poly.radius)
    upper = states_from_offsets(params, offset, rng)[0]
    nominal = upper[4:6] + rng.uniform(cfg.a_min, cfg.a_max)
    mu = np.concatenate([rng.normal(0.0, 0.02, 4), np.zeros(2)])
    sigma = np.concatenate([np.abs(rng.normal(0.0, sigma_scale, 4)), np.zeros(2)])
    return filt.assemble_with(upper, nominal, mu, sigma, k_delta), upper


def qp_gaps(filt: SafetyFilter, n: int, rng: np.random.Generator) -> dict:
    """Compare solver objectives with the grid oracle and audit zero corrections."""
    gaps, feasible_nominal, nonzero = [], 0, 0
    for _ in range(n):
        qp, _ = random_qp(filt, rng)
        a_sf, eps, _ = solve(qp, filt.cfg.slack_tol)
        obj = qp_objective(qp, a_sf) if eps <= filt.cfg.slack_tol else 0.5 * a_sf @ a_sf + qp.linear[2] * eps
        _, ref = grid_oracle(qp)
        gaps.append(obj - ref)
        if np.all(qp.ineq_vec[0:4] >= 0.0):
            feasible_nominal += 1
            if np.any(a_sf != 0.0):
                nonzero += 1
    gaps = np.array(gaps)
    return {"samples": int(n), "max_abs_gap": float(np.max(np.abs(gaps))) if n else 0.0,
            "max_gap": float(np.max(gaps)) if n else 0.0, "feasible_nominal": feasible_nominal,
            "nonzero_correction_when_feasible": nonzero}


# -- GP calibration -------------------------------------------------------------------

STRIDE_BOX = np.array([0.3, 0.3, 0.5, 0.5, 0.3, 0.3])  # half-widths of one stride around the origin


def sin_field(upper: np.ndarray, amplitude: float = 0.02) -> np.ndarray:
    """Synthetic residual ``amplitude * sin(x)`` on the CoM entries, zero on the stance."""
    upper = np.atleast_2d(upper)
    out = np.zeros_like(upper)
    out[:, 0:4] = amplitude * np.sin(upper[:, 0:1])
    return out


def gp_calibration(hyper: GpHyper, n_train: int, n_test: int, rng: np.random.Generator) -> dict:
    """Fit the sin field on uniform stride-scale inputs and score held-out points.

    Coverage and RMSE are taken over the four CoM outputs; the stance outputs
    are identically zero.
    """
    x = rng.uniform(-STRIDE_BOX, STRIDE_BOX, size=(n_train, 6))
    model = fit(x, sin_field(x), hyper)
    q = rng.uniform(-STRIDE_BOX, STRIDE_BOX, size=(n_test, 6))
    mu, sd = model.predict_batch(q)
    d = sin_field(q)[:, 0:4]
    err = d - mu[:, 0:4]
    rmse = float(np.sqrt(np.mean(err**2)))
    prior_rmse = float(np.sqrt(np.mean(d**2)))
    return {"train": int(n_train), "test": int(n_test),
            "coverage": float(np.mean(np.abs(err) <= hyper.k_delta * sd[:, 0:4])),
            "rmse": rmse, "prior_rmse": prior_rmse,
            "rmse_ratio": prior_rmse / rmse if rmse > 0 else math.inf}


# -- forward invariance -------------------------------------------------------------

@dataclass(frozen=True)
class InvarianceResult:
    episodes: int
    steps: int
    violations: int
    terminated_episodes: int
    worst_margin: float  # min over steps of h_next - (1 - eta) h; +inf when no step ran

    def to_dict(self) -> dict:
        return asdict(self)


def invariance_rollouts(
    params: LipmParams,
    timing: StepTiming,
    poly: SafePolytope,
    cfg: FilterConfig,
    episodes: int,
    steps: int,
    seed: int,
    use_filter: bool = True,
    hyper: GpHyper | None = None,
    tol: float = 1e-6,
) -> InvarianceResult:
    """Residual-free rollouts driven by uniformly random footsteps inside the box.

    With ``use_filter`` the random step is corrected by the safety filter
    (built on an empty residual model) before it is executed. Barrier
    decrease is checked on every executed step.
    """
    model = empty_model(hyper or GpHyper())
    filt = SafetyFilter(params, timing, poly, cfg)
    violations, terminated, worst = 0, 0, math.inf
    for ep in range(episodes):
        env = SurrogateEnv(params, timing, RewardWeights(), horizon=steps, seed=make_rng(seed, ep, 0))
        rng = make_rng(seed, ep, 1)
        state = env.reset()
        for _ in range(steps):
            upper = state.upper
            nominal = upper[4:6] + rng.uniform(cfg.a_min, cfg.a_max)
            action = nominal
            if use_filter:
                action = nominal + filt.solve(filt.assemble(upper, nominal, model)).a_sf
            h = barrier_value_array(poly, upper)
            state, _, term, info = env.step(action)
            margin = barrier_value_array(poly, state.upper) - (1.0 - cfg.eta) * h
            worst = min(worst, float(margin.min()))
            if np.any(margin < -tol):
                violations += 1
            if term:
                terminated += 1
                break
            if info["truncated"]:
                break
    return InvarianceResult(episodes, steps, violations, terminated, worst)


def safety_report(params: LipmParams, timing: StepTiming, cfg: FilterConfig, steps: int, samples: int, seed: int,
                  literal_exponent: bool = False, oracle_samples: int | None = None, qp_samples: int | None = None,
                  rollout_episodes: int | None = None, hyper: GpHyper | None = None) -> dict:
    """Everything ``verify-safety`` prints, as one JSON-ready mapping."""
    if samples < 1:
        raise ValueError("verify-safety needs at least one sample")
    poly = SafePolytope.build(params, timing, steps, literal_exponent)
    filt = SafetyFilter(params, timing, poly, cfg)
    oracle_n = min(samples, 10_000) if oracle_samples is None else oracle_samples
    qp_n = min(samples, 1000) if qp_samples is None else qp_samples
    roll_n = min(samples, 100) if rollout_episodes is None else rollout_episodes
    radii = {
        conv: {f"cp{i}": capture_radius(params, timing, i, conv == "literal") for i in (1, 2)}
        for conv in ("omega", "literal")
    }
    invariance = invariance_rollouts(params, timing, poly, cfg, roll_n, 50, seed, True, hyper)
    return {
        "capture_steps": steps,
        "exponent_convention": "literal" if literal_exponent else "omega",
        "radii": radii,
        "inclusion": inclusion_violations(params, poly, samples, make_rng(seed, 0, 10)),
        "oracle": oracle_agreement(params, timing, poly, steps, oracle_n, make_rng(seed, 0, 11)),
        "qp": qp_gaps(filt, qp_n, make_rng(seed, 0, 12)),
        "invariance": invariance.to_dict(),
        "gp_calibration": gp_calibration(hyper or GpHyper(), 200, min(samples, 1000), make_rng(seed, 0, 13)),
    }
