import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caplearn import config as C
from caplearn.gp import empty_model
from caplearn.policy import GaussianPolicy, Mlp, ValueNet
from caplearn.ppo import (
    PpoBatch,
    TrainConfig,
    collect,
    compute_advantages,
    gae,
    make_rng,
    normalize,
    ppo_loss,
    thread_cap,
    train,
)
from caplearn.tvr import plan_from_apex
from oracles import central_diff, gae_direct, ppo_loss_scalar


def small_cfg(**train):
    base = {"episodes": 2, "samples_per_episode": 128, "epochs": 2, "minibatch": 32}
    base.update(train)
    return C.resolve(None, "draco_walking").replace(train=base)


# -- advantages ------------------------------------------------------------------

def test_gae_hand_example():
    adv, ret = gae([1.0, 0.5, -0.2], [0.3, 0.1, 0.4], [0.1, 0.4, 0.0], [0, 0, 1], [0, 0, 1], 0.9, 0.95)
    np.testing.assert_allclose(adv, [1.001185, 0.247, -0.6], atol=1e-12)
    np.testing.assert_allclose(ret, adv + [0.3, 0.1, 0.4], atol=1e-15)


@settings(max_examples=50)
@given(st.integers(1, 30), st.floats(0.5, 0.999), st.floats(0.0, 1.0), st.booleans(), st.integers(0, 9999))
def test_gae_matches_direct_sum(n, gamma, lam, terminal, seed):
    rng = np.random.default_rng(seed)
    r, v, nv = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
    nv[:-1] = v[1:]
    dones = np.zeros(n)
    dones[-1] = float(terminal)
    ends = np.zeros(n, dtype=bool)
    ends[-1] = True
    adv, _ = gae(r, v, nv, dones.astype(bool), ends, gamma, lam)
    np.testing.assert_allclose(adv, gae_direct(r, v, nv, dones, gamma, lam), atol=1e-10)


def test_gae_self_consistent_critic_zero():
    gamma, r = 0.99, 2.0
    n = 20
    v = np.full(n, r / (1 - gamma))
    adv, _ = gae(np.full(n, r), v, v, np.zeros(n, bool), np.eye(1, n, n - 1, dtype=bool)[0], gamma, 0.95)
    np.testing.assert_allclose(adv, 0.0, atol=1e-10)


def test_gae_lambda_one_is_return_minus_value():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=6), rng.normal(size=6)
    nv = np.append(v[1:], 0.0)
    ends = np.array([0, 0, 0, 0, 0, 1], bool)
    adv, _ = gae(r, v, nv, ends, ends, 0.9, 1.0)
    disc = [sum(0.9**j * r[k + j] for j in range(6 - k)) for k in range(6)]
    np.testing.assert_allclose(adv, np.array(disc) - v, atol=1e-12)


def test_gae_resets_between_episodes():
    adv, _ = gae([1.0, 1.0], [0.0, 0.0], [5.0, 0.0], [False, True], [True, True], 0.9, 0.9)
    np.testing.assert_allclose(adv, [1.0 + 0.9 * 5.0, 1.0])


def test_normalize_and_empty_batch():
    a = normalize(np.array([1.0, 2.0, 3.0]))
    assert a.mean() == pytest.approx(0.0, abs=1e-15) and a.std() == pytest.approx(1.0)
    np.testing.assert_array_equal(normalize(np.full(3, 4.0)), 0.0)
    with pytest.raises(ValueError):
        compute_advantages([], TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(clip_eps=0.6)


# -- loss ----------------------------------------------------------------------

def random_batch(rng, n=16, policy=None, spread=0.1):
    f = rng.normal(size=(n, 13))
    mean = policy.mean(f) if policy is not None else np.zeros((n, 2))
    a = mean + rng.normal(0, 0.1, (n, 2))
    lp_old = (policy.log_prob(f, a) if policy is not None else np.zeros(n)) + rng.normal(0, spread, n)
    return PpoBatch(f, a, lp_old, rng.normal(size=n), rng.normal(size=n))


def nets(rng):
    pol = GaussianPolicy.init(rng, init_std=0.2)
    pol.net = Mlp.init([13, 64, 64, 2], rng, out_scale=1.0)
    return pol, ValueNet.init(rng)


def test_ratio_identity():
    rng = np.random.default_rng(0)
    pol, val = nets(rng)
    b = random_batch(rng, policy=pol, spread=0.0)
    _, _, _, info = ppo_loss(b, pol, val, TrainConfig())
    assert info["surrogate"] == pytest.approx(b.advantages.mean(), abs=1e-12)
    assert info["clip_frac"] == 0.0


def test_clip_saturation_has_zero_policy_gradient():
    rng = np.random.default_rng(1)
    pol, val = nets(rng)
    b = random_batch(rng, policy=pol, spread=0.0)
    b = PpoBatch(b.features, b.actions, b.log_prob_old - 1.0, np.abs(b.advantages) + 0.1, b.returns)
    cfg = TrainConfig(ent_coef=0.0)
    _, pgrad, _, info = ppo_loss(b, pol, val, cfg)
    assert info["clip_frac"] == 1.0
    assert np.all(pgrad == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_loss_matches_scalar_reimplementation(seed):
    rng = np.random.default_rng(seed)
    pol, val = nets(rng)
    b = random_batch(rng, policy=pol, spread=0.3)
    cfg = TrainConfig()
    loss, *_ = ppo_loss(b, pol, val, cfg)
    want = ppo_loss_scalar(pol.log_prob(b.features, b.actions), b.log_prob_old, b.advantages, val(b.features),
                           b.returns, pol.entropy(), cfg.clip_eps, cfg.value_coef, cfg.ent_coef)
    assert loss == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradient_finite_differences(seed):
    rng = np.random.default_rng(300 + seed)
    pol, val = nets(rng)
    b = random_batch(rng, policy=pol, spread=0.3)
    cfg = TrainConfig()
    _, pgrad, vgrad, _ = ppo_loss(b, pol, val, cfg)
    theta = pol.flat()
    idx = rng.choice(len(theta), 30, replace=False)

    def f_pol(vec):
        p = pol.copy()
        p.set_flat(vec)
        return ppo_loss(b, p, val, cfg)[0]

    num = central_diff(f_pol, theta, idx, 1e-6)
    assert np.linalg.norm(pgrad[idx] - num) <= 1e-3 * max(np.linalg.norm(num), 1e-8)
    phi = val.net.flat()
    vidx = rng.choice(len(phi), 30, replace=False)

    def f_val(vec):
        v = val.copy()
        v.net.set_flat(vec)
        return ppo_loss(b, pol, v, cfg)[0]

    vnum = central_diff(f_val, phi, vidx, 1e-6)
    assert np.linalg.norm(vgrad[vidx] - vnum) <= 1e-3 * max(np.linalg.norm(vnum), 1e-8)


# -- training loop ---------------------------------------------------------------

def test_zero_episodes_returns_initial_policy():
    cfg = small_cfg(episodes=0)
    bundle = C.policy_bundle(cfg)
    before = bundle.policy.flat().copy()
    bundle, history = train(C.env_factory(cfg), bundle, C.train_config(cfg), 0, C.gp_hyper(cfg))
    assert history == []
    np.testing.assert_array_equal(bundle.policy.flat(), before)


def test_bit_exact_reproducibility():
    cfg = small_cfg()
    runs = [train(C.env_factory(cfg), C.policy_bundle(cfg), C.train_config(cfg), 0, C.gp_hyper(cfg)) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    np.testing.assert_array_equal(runs[0][0].policy.flat(), runs[1][0].policy.flat())


def test_thread_cap_does_not_change_results(monkeypatch):
    cfg = small_cfg()
    _, ref = train(C.env_factory(cfg), C.policy_bundle(cfg), C.train_config(cfg), 0, C.gp_hyper(cfg))
    monkeypatch.setenv("CAPLEARN_THREADS", "1")
    assert thread_cap() == 1
    _, capped = train(C.env_factory(cfg), C.policy_bundle(cfg), C.train_config(cfg), 0, C.gp_hyper(cfg))
    assert capped == ref
    monkeypatch.setenv("CAPLEARN_THREADS", "zero")
    with pytest.raises(ValueError):
        thread_cap()


def test_residual_targets_vanish_without_residual():
    cfg = small_cfg()
    bundle = C.policy_bundle(cfg)
    trans, _ = collect(bundle, C.env_factory(cfg), empty_model(C.gp_hyper(cfg)), C.train_config(cfg), 0, 0)
    assert len(trans) >= 128
    assert max(np.max(np.abs(t.residual_target)) for t in trans) <= 1e-9


def test_collect_stores_executed_action():
    cfg = small_cfg()
    bundle = C.policy_bundle(cfg)
    trans, eps = collect(bundle, C.env_factory(cfg), empty_model(C.gp_hyper(cfg)), C.train_config(cfg), 0, 0)
    for t in trans:
        np.testing.assert_array_equal(t.action, t.a_tvr + t.a_theta + t.a_sf)
        assert np.array_equal(t.next_state.stance, t.action)
        assert math.isfinite(t.log_prob_old)
    assert sum(e["length"] for e in eps) == len(trans)


def test_updates_disabled_equals_pure_tvr_baseline():
    """No learned term and no updates on a residual-free robot reproduces a hand-rolled TVR walker."""
    cfg = small_cfg(update_policy=False, episodes=2).replace(actions={"use_nn": False})
    _, history = train(C.env_factory(cfg), C.policy_bundle(cfg), C.train_config(cfg), 0, C.gp_hyper(cfg))
    params, timing, gains = C.lipm_params(cfg), C.step_timing(cfg), C.tvr_gains(cfg)
    factory = C.env_factory(cfg)
    for m, row in enumerate(history):
        returns, total, j = [], 0, 0
        while total < cfg.train.samples_per_episode:
            env = factory(make_rng(0, m, j, 0))
            s = env.reset()
            ret = 0.0
            for _ in range(env.horizon):
                a = plan_from_apex(params, gains.with_desired(env.desired_com_at_switch()), timing, s.com, s.stance)
                s, r, term, info = env.step(a)
                ret += r
                total += 1
                if term or info["truncated"]:
                    break
            returns.append(ret)
            j += 1
        assert row["average_return"] == pytest.approx(np.mean(returns), abs=1e-12)
        assert row["mean_asf"] == 0.0 and row["terminations"] == 0
