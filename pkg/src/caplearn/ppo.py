"""Policy learning loop: structured footstep actions, PPO updates, GP refits."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .capture import SafePolytope, barrier_value_array
from .env import ApexState, SurrogateEnv
from .gp import GpHyper, ResidualDataset, ResidualModel, empty_model
from .lipm import LipmParams, StepTiming
from .policy import Adam, GaussianPolicy, Mlp, ValueNet, featurize, gaussian_log_prob
from .safety import FilterConfig, SafetyFilter, compose_action
from .tvr import TvrGains, plan_from_apex

log = logging.getLogger(__name__)

UPDATE_STREAM = 1 << 20


class NumericalFault(RuntimeError):
    pass


def thread_cap() -> int:
    """Upper bound on simultaneously simulated environments from CAPLEARN_THREADS (0 = none)."""
    raw = os.environ.get("CAPLEARN_THREADS", "").strip()
    if not raw:
        return 0
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"CAPLEARN_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"CAPLEARN_THREADS must be a positive integer, got {raw!r}")
    return value


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream addressed by ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class ActionConfig:
    """Which terms make up the footstep; ``nn_clip`` bounds the learned offset."""

    use_tvr: bool = True
    use_nn: bool = True
    use_sf: bool = True
    nn_clip: float = 0.25


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 200
    samples_per_episode: int = 1024
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    ent_coef: float = 1e-3
    value_coef: float = 0.5
    n_envs: int = 0  # cap on lockstep envs per wave; 0 defers to CAPLEARN_THREADS
    update_policy: bool = True
    checkpoint_every: int = 50
    trajectory_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.clip_eps <= 0.5:
            raise ValueError(f"clip_eps must lie in (0, 0.5], got {self.clip_eps}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.episodes < 0 or self.samples_per_episode < 1 or self.epochs < 0 or self.minibatch < 1:
            raise ValueError("episodes, samples, epochs and minibatch must be positive")


@dataclass
class PolicyBundle:
    """Everything needed to turn an apex state into a footstep."""

    params: LipmParams
    timing: StepTiming
    gains: TvrGains
    policy: GaussianPolicy
    value: ValueNet
    filter_cfg: FilterConfig
    poly: SafePolytope
    actions: ActionConfig = field(default_factory=ActionConfig)

    def __post_init__(self):
        self.safety = SafetyFilter(self.params, self.timing, self.poly, self.filter_cfg)

    @classmethod
    def create(cls, params, timing, gains, filter_cfg, capture_steps=1, actions=None, hidden=(64, 64),
               init_std=0.1, seed=0, literal_exponent=False) -> "PolicyBundle":
        rng = make_rng(seed, UPDATE_STREAM + 1)
        poly = SafePolytope.build(params, timing, capture_steps, literal_exponent)
        return cls(params, timing, gains, GaussianPolicy.init(rng, hidden, init_std), ValueNet.init(rng, hidden),
                   filter_cfg, poly, actions or ActionConfig())


@dataclass(frozen=True)
class Decision:
    features: np.ndarray
    a_tvr: np.ndarray
    a_theta_raw: np.ndarray
    a_theta: np.ndarray
    a_sf: np.ndarray
    action: np.ndarray
    log_prob: float
    value: float
    eps: float
    h: np.ndarray


def decide_batch(
    bundle: PolicyBundle,
    states: list[ApexState],
    desired: np.ndarray,
    model: ResidualModel,
    rngs: list[np.random.Generator],
    deterministic: bool = False,
) -> list[Decision]:
    """Footsteps for a batch of apex states, one RNG per state."""
    p = bundle.params
    cfg = bundle.actions
    feats = np.stack([featurize(s, p.omega) for s in states])
    uppers = np.stack([s.upper for s in states])
    # row-by-row evaluation keeps each decision independent of the batch size,
    # which BLAS would otherwise leak into the last bits
    values = np.array([bundle.value(f[None, :])[0] for f in feats])
    means = np.stack([bundle.policy.mean(f[None, :])[0] for f in feats])
    std = bundle.policy.std
    if cfg.use_sf:
        preds = [model.predict(u) for u in uppers]
        mus = np.stack([m for m, _ in preds])
        sigmas = np.stack([s for _, s in preds])
    out = []
    for i, s in enumerate(states):
        if cfg.use_tvr:
            a_tvr = plan_from_apex(p, bundle.gains.with_desired(desired[i]), bundle.timing, s.com, s.stance)
        else:
            a_tvr = s.stance.copy()
        if cfg.use_nn:
            noise = np.zeros(2) if deterministic else rngs[i].standard_normal(2)
            raw = means[i] + std * noise
            logp = float(gaussian_log_prob(raw[None, :], means[i][None, :], bundle.policy.clamped_log_std)[0])
            a_theta = np.clip(raw, -cfg.nn_clip, cfg.nn_clip)
        else:
            raw = a_theta = np.zeros(2)
            logp = 0.0
        nominal = a_tvr + a_theta
        if cfg.use_sf:
            qp = bundle.safety.assemble_with(s.upper, nominal, mus[i], sigmas[i], model.hyper.k_delta)
            res = bundle.safety.solve(qp)
            a_sf, eps = res.a_sf, res.eps
        else:
            a_sf, eps = np.zeros(2), 0.0
        action = compose_action(a_tvr, a_theta, a_sf)
        out.append(Decision(feats[i], a_tvr, raw, a_theta, a_sf, action, logp, float(values[i]), eps,
                            barrier_value_array(bundle.poly, s.upper)))
    return out


@dataclass
class Transition:
    episode: int
    step: int
    state: ApexState
    features: np.ndarray
    a_tvr: np.ndarray
    a_theta: np.ndarray
    a_theta_raw: np.ndarray
    a_sf: np.ndarray
    action: np.ndarray
    reward: float
    next_state: ApexState
    terminated: bool
    truncated: bool
    log_prob_old: float
    value_old: float
    next_value: float
    eps: float
    residual_target: np.ndarray
    h_min: float


EnvFactory = Callable[[np.random.Generator], SurrogateEnv]


def collect(
    bundle: PolicyBundle,
    env_factory: EnvFactory,
    model: ResidualModel,
    cfg: TrainConfig,
    seed: int,
    iteration: int,
    deterministic: bool = False,
    n_episodes: int | None = None,
) -> tuple[list[Transition], list[dict]]:
    """Run whole episodes in lockstep waves until ``samples_per_episode`` transitions exist.

    Episode ``j`` of ``iteration`` draws its dynamics and action noise from
    streams keyed by ``(seed, iteration, j)`` so results do not depend on
    how episodes are grouped into waves.
    """
    transitions: list[Transition] = []
    episodes: list[dict] = []
    ep_index = 0
    cap = cfg.n_envs or thread_cap()
    while True:
        if n_episodes is not None:
            wave = n_episodes - ep_index
        else:
            probe = env_factory(make_rng(seed, iteration, ep_index, 0))
            wave = math.ceil((cfg.samples_per_episode - len(transitions)) / max(probe.horizon, 1))
        if cap:
            wave = min(wave, cap)
        if wave <= 0:
            break
        envs, rngs, states, ids, stats = [], [], [], [], []
        for j in range(wave):
            env = env_factory(make_rng(seed, iteration, ep_index + j, 0))
            envs.append(env)
            rngs.append(make_rng(seed, iteration, ep_index + j, 1))
            states.append(env.reset())
            ids.append(ep_index + j)
            stats.append({"episode": ep_index + j, "return": 0.0, "length": 0, "terminated": False,
                          "eps_sum": 0.0, "asf_sum": 0.0, "start": states[-1].upper[0:2].copy()})
        alive = list(range(wave))
        while alive:
            desired = np.stack([envs[i].desired_com_at_switch() for i in alive])
            decisions = decide_batch(bundle, [states[i] for i in alive], desired, model,
                                     [rngs[i] for i in alive], deterministic)
            pending = []
            for i, dec in zip(alive, decisions):
                env = envs[i]
                nxt, r, term, info = env.step(dec.action)
                target = nxt.upper - info["analytic"]
                st = stats[i]
                st["return"] += r
                st["length"] += 1
                st["eps_sum"] += dec.eps
                st["asf_sum"] += float(np.linalg.norm(dec.a_sf))
                done = term or info["truncated"]
                pending.append(Transition(ids[i], env.steps - 1, states[i], dec.features, dec.a_tvr, dec.a_theta,
                                          dec.a_theta_raw, dec.a_sf, dec.action, r, nxt, term, info["truncated"],
                                          dec.log_prob, dec.value, 0.0, dec.eps, target, info["h_min"]))
                states[i] = nxt
                if done:
                    st["terminated"] = bool(term)
                    st["end"] = nxt.upper[0:2].copy()
            transitions.extend(pending)
            alive = [i for i, t in zip(alive, pending) if not (t.terminated or t.truncated)]
        episodes.extend(stats)
        ep_index += wave
        if n_episodes is not None or len(transitions) >= cfg.samples_per_episode:
            break
    if n_episodes is None:
        # keep the shortest prefix of episodes reaching the sample budget so the
        # batch does not depend on the wave size
        total, keep = 0, 0
        for keep, st in enumerate(episodes, start=1):
            total += st["length"]
            if total >= cfg.samples_per_episode:
                break
        episodes = episodes[:keep]
        transitions = [t for t in transitions if t.episode < keep]
    transitions.sort(key=lambda t: (t.episode, t.step))
    _fill_next_values(bundle, transitions)
    return transitions, episodes


def _fill_next_values(bundle: PolicyBundle, transitions: list[Transition]) -> None:
    for cur, nxt in zip(transitions, transitions[1:]):
        if cur.episode == nxt.episode:
            cur.next_value = nxt.value_old
    ends = [t for t in transitions if t.truncated]
    if ends:
        feats = np.stack([featurize(t.next_state, bundle.params.omega) for t in ends])
        for t, v in zip(ends, bundle.value(feats)):
            t.next_value = float(v)


def gae(rewards, values, next_values, terminated, ends, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and return targets (unnormalised).

    ``ends`` marks the last step of each episode; ``terminated`` cuts the
    bootstrap value, a plain end (time limit) keeps it.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    nv = np.where(np.asarray(terminated, dtype=bool), 0.0, np.asarray(next_values, dtype=float))
    delta = r + gamma * nv - v
    adv = np.zeros_like(r)
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        if ends[t]:
            running = 0.0
        running = delta[t] + gamma * lam * running
        adv[t] = running
    return adv, adv + v


def compute_advantages(batch: list[Transition], cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Normalised advantages and value targets for an (episode, step)-ordered batch."""
    if not batch:
        raise ValueError("cannot compute advantages of an empty batch")
    ends = [t.terminated or t.truncated or i == len(batch) - 1 or batch[i + 1].episode != t.episode
            for i, t in enumerate(batch)]
    adv, ret = gae([t.reward for t in batch], [t.value_old for t in batch], [t.next_value for t in batch],
                   [t.terminated for t in batch], ends, cfg.gamma, cfg.gae_lambda)
    return normalize(adv), ret


def normalize(adv: np.ndarray) -> np.ndarray:
    sd = adv.std()
    return (adv - adv.mean()) / (sd if sd > 1e-8 else 1.0)


@dataclass(frozen=True)
class PpoBatch:
    features: np.ndarray
    actions: np.ndarray
    log_prob_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def take(self, idx) -> "PpoBatch":
        return PpoBatch(*(getattr(self, f)[idx] for f in ("features", "actions", "log_prob_old", "advantages", "returns")))


def ppo_loss(batch: PpoBatch, policy: GaussianPolicy, value: ValueNet, cfg: TrainConfig):
    """Clipped surrogate + value regression - entropy bonus, with gradients.

    Returns ``(loss, policy_grad_flat, value_grad_flat, info)``.
    """
    n = len(batch.advantages)
    logp = policy.log_prob(batch.features, batch.actions)
    ratio = np.exp(logp - batch.log_prob_old)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    surrogate = np.minimum(unclipped, clipped)
    v_loss, vgw, vgb = value.loss_and_grad(batch.features, batch.returns, cfg.value_coef)
    entropy = policy.entropy()
    loss = -float(np.mean(surrogate)) + v_loss - cfg.ent_coef * entropy
    # gradient flows only where the unclipped branch is the minimum
    active = unclipped <= clipped
    w = np.where(active, -ratio * adv / n, 0.0)
    gw, gb, g_log_std = policy.grad_log_prob(batch.features, batch.actions, w)
    in_range = (policy.log_std >= np.log(1e-4)) & (policy.log_std <= 0.0)
    g_log_std = g_log_std - cfg.ent_coef * in_range.astype(float)
    pgrad = np.concatenate([Mlp.flatten_grads(gw, gb), g_log_std])
    vgrad = Mlp.flatten_grads(vgw, vgb)
    info = {"surrogate": float(np.mean(surrogate)), "value_loss": v_loss, "entropy": entropy,
            "clip_frac": float(np.mean(~active))}
    return loss, pgrad, vgrad, info


def batch_from(transitions: list[Transition], cfg: TrainConfig) -> PpoBatch:
    adv, ret = compute_advantages(transitions, cfg)
    return PpoBatch(
        np.stack([t.features for t in transitions]),
        np.stack([t.a_theta_raw for t in transitions]),
        np.array([t.log_prob_old for t in transitions]),
        adv,
        ret,
    )


@dataclass
class Optimizers:
    policy: Adam
    value: Adam

    @classmethod
    def create(cls, cfg: TrainConfig) -> "Optimizers":
        return cls(Adam(cfg.lr_policy), Adam(cfg.lr_value))


def ppo_update(bundle: PolicyBundle, batch: PpoBatch, cfg: TrainConfig, opt: Optimizers,
               rng: np.random.Generator) -> dict:
    n = len(batch.advantages)
    infos = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = batch.take(order[start : start + cfg.minibatch])
            loss, pgrad, vgrad, info = ppo_loss(mb, bundle.policy, bundle.value, cfg)
            if not (math.isfinite(loss) and np.all(np.isfinite(pgrad)) and np.all(np.isfinite(vgrad))):
                raise NumericalFault(f"non-finite PPO loss or gradient (loss={loss})")
            bundle.policy.set_flat(opt.policy.step(bundle.policy.flat(), pgrad))
            bundle.value.net.set_flat(opt.value.step(bundle.value.net.flat(), vgrad))
            info["loss"] = loss
            infos.append(info)
    if not infos:
        return {}
    return {k: float(np.mean([i[k] for i in infos])) for k in infos[0]}


@dataclass
class TrainState:
    """Mutable training progress; everything a checkpoint needs besides the bundle."""

    iteration: int
    dataset: ResidualDataset
    model: ResidualModel
    optimizers: Optimizers
    history: list[dict] = field(default_factory=list)


def train(
    env_factory: EnvFactory,
    bundle: PolicyBundle,
    cfg: TrainConfig,
    seed: int,
    hyper: GpHyper | None = None,
    out_dir: Path | None = None,
    state: TrainState | None = None,
    on_iteration: Callable[[dict, list[Transition]], None] | None = None,
) -> tuple[PolicyBundle, list[dict]]:
    """Collect, optimise, refit the GP, clear the batch; once per training episode."""
    hyper = hyper or GpHyper()
    if state is None:
        state = TrainState(0, ResidualDataset(hyper.capacity, hyper=hyper), empty_model(hyper),
                           Optimizers.create(cfg))
    learn = cfg.update_policy and bundle.actions.use_nn
    for m in range(state.iteration, cfg.episodes):
        transitions, episodes = collect(bundle, env_factory, state.model, cfg, seed, m)
        update_info = {}
        if learn:
            batch = batch_from(transitions, cfg)
            try:
                update_info = ppo_update(bundle, batch, cfg, state.optimizers, make_rng(seed, m, UPDATE_STREAM))
            except NumericalFault:
                if out_dir is not None:
                    save_checkpoint(Path(out_dir) / "checkpoint_fault.json", bundle, state, seed)
                raise
        state.dataset.extend([t.state.upper for t in transitions], [t.residual_target for t in transitions])
        state.model = state.dataset.fit(hyper)
        metrics = episode_metrics(m, transitions, episodes, bundle)
        metrics.update({k: v for k, v in update_info.items()})
        state.history.append(metrics)
        state.iteration = m + 1
        if on_iteration is not None:
            on_iteration(metrics, transitions)
        if out_dir is not None and cfg.checkpoint_every and (m + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"checkpoint_{m + 1:05d}.json", bundle, state, seed)
        log.info("episode %d return %.2f terminations %d", m, metrics["average_return"], metrics["terminations"])
    bundle.train_state = state
    return bundle, state.history


def episode_metrics(m: int, transitions: list[Transition], episodes: list[dict], bundle: PolicyBundle) -> dict:
    n = max(len(transitions), 1)
    return {
        "episode": m,
        "samples": len(transitions),
        "rollouts": len(episodes),
        "average_return": float(np.mean([e["return"] for e in episodes])) if episodes else 0.0,
        "terminations": int(sum(e["terminated"] for e in episodes)),
        "mean_length": float(np.mean([e["length"] for e in episodes])) if episodes else 0.0,
        "mean_eps": float(sum(t.eps for t in transitions) / n),
        "mean_asf": float(sum(np.linalg.norm(t.a_sf) for t in transitions) / n),
        "policy_std": bundle.policy.std.tolist(),
    }


def save_checkpoint(path: Path, bundle: PolicyBundle, state: TrainState, seed: int, extra: dict | None = None) -> None:
    blob = {
        "version": 1,
        "iteration": state.iteration,
        "rng": {"generator": "philox", "seed": seed, "next_iteration": state.iteration},
        "policy": bundle.policy.to_json(),
        "value": bundle.value.net.to_json(),
        "optimizers": {"policy": state.optimizers.policy.to_json(), "value": state.optimizers.value.to_json()},
        "dataset": {"inputs": np.array(state.dataset.inputs).tolist(), "targets": np.array(state.dataset.targets).tolist()},
        "history": state.history,
    }
    if extra:
        blob.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(blob))
    tmp.replace(path)


def load_checkpoint(path: Path, bundle: PolicyBundle, hyper: GpHyper) -> tuple[TrainState, dict]:
    blob = json.loads(Path(path).read_text())
    policy = GaussianPolicy.from_json(blob["policy"])
    if policy.net.sizes != bundle.policy.net.sizes:
        raise ValueError(f"checkpoint layer sizes {policy.net.sizes} do not match config {bundle.policy.net.sizes}")
    bundle.policy = policy
    bundle.value = ValueNet(Mlp.from_json(blob["value"]))
    dataset = ResidualDataset(hyper.capacity, hyper=hyper)
    dataset.extend(np.array(blob["dataset"]["inputs"]).reshape(-1, 6), np.array(blob["dataset"]["targets"]).reshape(-1, 6))
    opts = Optimizers(Adam.from_json(blob["optimizers"]["policy"]), Adam.from_json(blob["optimizers"]["value"]))
    state = TrainState(blob["iteration"], dataset, dataset.fit(hyper), opts, blob.get("history", []))
    return state, blob
