"""Deterministic evaluation of a trained bundle: walking quality and push recovery."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import DisturbanceSpec, Push, PushTiming
from .gp import ResidualModel
from .ppo import PolicyBundle, TrainConfig, Transition, collect, decide_batch, make_rng

EVAL_STREAM = 1 << 21  # iteration key reserved for evaluation rollouts

TRAJECTORY_COLUMNS = (
    "episode", "step", "x", "y", "xd", "yd", "px", "py", "ax", "ay",
    "a_tvr_x", "a_tvr_y", "a_nn_x", "a_nn_y", "a_sf_x", "a_sf_y", "reward", "h_min", "terminated",
)


def trajectory_rows(transitions: list[Transition]):
    for t in transitions:
        yield [t.episode, t.step, *t.state.upper.tolist(), *t.action.tolist(), *t.a_tvr.tolist(),
               *t.a_theta.tolist(), *t.a_sf.tolist(), t.reward, t.h_min, int(t.terminated)]


def write_trajectory_csv(path: Path, transitions: list[Transition], extra: dict | None = None) -> None:
    """One row per footstep; ``extra`` adds constant leading columns such as a case label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*extra.keys(), *TRAJECTORY_COLUMNS])
        for row in trajectory_rows(transitions):
            w.writerow([*extra.values(), *row])


def walking_summary(transitions: list[Transition], episodes: list[dict], period: float) -> dict:
    """Travel distance, speed, stride and termination rate averaged over episodes."""
    if not episodes:
        return {"episodes": 0}
    dist = [float(np.linalg.norm(e["end"] - e["start"])) for e in episodes]
    speed = [d / (e["length"] * period) for d, e in zip(dist, episodes)]
    strides = [float(np.linalg.norm(t.action - t.state.upper[4:6])) for t in transitions]
    return {
        "episodes": len(episodes),
        "average_return": float(np.mean([e["return"] for e in episodes])),
        "travel_distance": float(np.mean(dist)),
        "mean_speed": float(np.mean(speed)),
        "mean_stride": float(np.mean(strides)) if strides else 0.0,
        "termination_rate": float(np.mean([e["terminated"] for e in episodes])),
        "mean_length": float(np.mean([e["length"] for e in episodes])),
    }


def evaluate(bundle: PolicyBundle, env_factory, model: ResidualModel, seed: int, episodes: int):
    """Roll out the policy mean on fixed evaluation seeds."""
    if episodes <= 0:
        return {"episodes": 0}, []
    probe = env_factory(make_rng(seed, EVAL_STREAM, 0, 0))
    cfg = TrainConfig(samples_per_episode=max(probe.horizon * episodes, 1))
    transitions, eps = collect(bundle, env_factory, model, cfg, seed, EVAL_STREAM, deterministic=True,
                               n_episodes=episodes)
    return walking_summary(transitions, eps, probe.timing.period), transitions


@dataclass(frozen=True)
class PushCase:
    name: str
    force: float  # N, applied on both horizontal axes
    when: PushTiming


PUSH_CASES = (
    PushCase("pre_apex_600N", 600.0, PushTiming.PRE_APEX),
    PushCase("post_apex_300N", 300.0, PushTiming.POST_APEX),
    PushCase("post_apex_600N", 600.0, PushTiming.POST_APEX),
)


def run_push_case(bundle: PolicyBundle, env_factory, model: ResidualModel, case: PushCase, seed: int,
                  push_step: int, settle_tol: float = 0.1) -> tuple[dict, list[Transition]]:
    """One deterministic episode with a single push halfway through the chosen phase.

    ``recovered`` means the episode reached its horizon without a fall;
    ``settle_steps`` counts footsteps after the push until the CoM velocity
    is back within ``settle_tol`` of the reference (None if it never is).
    """
    env = env_factory(make_rng(seed, EVAL_STREAM, 0, 0))
    rng = make_rng(seed, EVAL_STREAM, 0, 1)
    state = env.reset()
    span = env.timing.pre_switch if case.when is PushTiming.POST_APEX else env.timing.post_switch
    push = Push((case.force, case.force), case.when, 0.5 * span)
    transitions, fell_at, settle, ret = [], None, None, 0.0
    for k in range(env.horizon):
        dec = decide_batch(bundle, [state], env.desired_com_at_switch()[None, :], model, [rng], True)[0]
        nxt, r, term, info = env.step(dec.action, push if k == push_step else None)
        ret += r
        transitions.append(Transition(0, k, state, dec.features, dec.a_tvr, dec.a_theta, dec.a_theta_raw, dec.a_sf,
                                      dec.action, r, nxt, term, info["truncated"], dec.log_prob, dec.value, 0.0,
                                      dec.eps, nxt.upper - info["analytic"], info["h_min"]))
        state = nxt
        if k >= push_step and settle is None:
            if np.all(np.abs(nxt.upper[2:4] - env.ref.velocity) <= settle_tol):
                settle = k - push_step + 1
        if term:
            fell_at = k
            break
        if info["truncated"]:
            break
    summary = {"case": case.name, "force": case.force, "timing": case.when.value, "push_step": push_step,
               "recovered": fell_at is None, "fell_at_step": fell_at, "settle_steps": settle, "return": ret,
               "delta_v": case.force * env.disturbance.duration / env.disturbance.mass}
    return summary, transitions


def push_recovery(bundle: PolicyBundle, make_factory, model: ResidualModel, seed: int, push_step: int,
                  duration: float, mass: float):
    """Run the three named push cases; ``make_factory(spec)`` builds an env factory."""
    quiet = DisturbanceSpec(force=0.0, duration=duration, mass=mass, probability=0.0)
    factory = make_factory(quiet)
    results, trajectories = [], {}
    for case in PUSH_CASES:
        summary, trans = run_push_case(bundle, factory, model, case, seed, push_step)
        results.append(summary)
        trajectories[case.name] = trans
    return results, trajectories

