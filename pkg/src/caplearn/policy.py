"""Gaussian footstep policy and value network as small numpy MLPs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import ApexState, wrap_angle

N_FEATURES = 13
N_ACTIONS = 2
LOG_STD_MIN = math.log(1e-4)
LOG_STD_MAX = 0.0
LOG_2PI = math.log(2.0 * math.pi)


def featurize(state: ApexState, omega: float) -> np.ndarray:
    """Translation-invariant 13-vector of an apex state.

    Layout: CoM minus stance (2), CoM velocity (2), capture point minus
    stance (2), torso roll/pitch/yaw (3), torso rates (3), pivot yaw (1).
    """
    s = state.upper
    rel = s[0:2] - s[4:6]
    cp = rel + s[2:4] / omega
    rpy = wrap_angle(state.torso_rpy)
    return np.concatenate([rel, s[2:4], cp, rpy, state.torso_angvel, [wrap_angle(state.pivot_yaw)]])


@dataclass
class Mlp:
    """Fully connected tanh network with a linear output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_scale: float = 0.01) -> "Mlp":
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = math.sqrt(6.0 / n_in)  # scaled uniform fan-in
            w = rng.uniform(-bound, bound, size=(n_in, n_out)) / math.sqrt(2.0)
            if i == len(sizes) - 2:
                w *= out_scale
            weights.append(w)
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [np.atleast_2d(x)]
        h = acts[0]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> tuple[list, list]:
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = np.atleast_2d(grad_out)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(0)
            g = g @ self.weights[i].T
        return gw, gb

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for w, b in zip(self.weights, self.biases):
            for p in (w, b):
                p[...] = vec[i : i + p.size].reshape(p.shape)
                i += p.size

    @staticmethod
    def flatten_grads(gw, gb) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(gw, gb) for p in pair])

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_json(cls, blob: dict) -> "Mlp":
        return cls([np.array(w, dtype=float) for w in blob["weights"]], [np.array(b, dtype=float) for b in blob["biases"]])


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian over footstep offsets with a state-independent spread."""

    net: Mlp
    log_std: np.ndarray = field(default_factory=lambda: np.full(N_ACTIONS, math.log(0.1)))

    @classmethod
    def init(cls, rng: np.random.Generator, hidden=(64, 64), init_std: float = 0.1) -> "GaussianPolicy":
        net = Mlp.init([N_FEATURES, *hidden, N_ACTIONS], rng)
        return cls(net, np.full(N_ACTIONS, math.log(init_std)))

    @property
    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.clamped_log_std)

    def mean(self, features: np.ndarray) -> np.ndarray:
        return self.net(features)

    def sample(self, features: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        mu = self.mean(features)[0]
        a = mu + self.std * rng.standard_normal(N_ACTIONS)
        return a, float(self.log_prob(features, a)[0])

    def log_prob(self, features: np.ndarray, actions: np.ndarray) -> np.ndarray:
        mu = self.mean(features)
        return gaussian_log_prob(np.atleast_2d(actions), mu, self.clamped_log_std)

    def entropy(self) -> float:
        return float(np.sum(self.clamped_log_std + 0.5 * (LOG_2PI + 1.0)))

    def grad_log_prob(self, features: np.ndarray, actions: np.ndarray, weights=None):
        """Gradient of ``sum_i w_i log pi(a_i | s_i)`` w.r.t. net params and ``log_std``."""
        mu, acts = self.net.forward(features)
        a = np.atleast_2d(actions)
        w = np.ones(len(a)) if weights is None else np.asarray(weights, dtype=float)
        log_std = self.clamped_log_std
        var = np.exp(2.0 * log_std)
        z2 = (a - mu) ** 2 / var
        d_mu = w[:, None] * (a - mu) / var
        d_log_std = (w[:, None] * (z2 - 1.0)).sum(0)
        d_log_std = np.where((self.log_std < LOG_STD_MIN) | (self.log_std > LOG_STD_MAX), 0.0, d_log_std)
        gw, gb = self.net.backward(acts, d_mu)
        return gw, gb, d_log_std

    def flat(self) -> np.ndarray:
        return np.concatenate([self.net.flat(), self.log_std])

    def set_flat(self, vec: np.ndarray) -> None:
        n = len(vec) - N_ACTIONS
        self.net.set_flat(vec[:n])
        self.log_std[...] = vec[n:]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.net.copy(), self.log_std.copy())

    def to_json(self) -> dict:
        return {"net": self.net.to_json(), "log_std": self.log_std.tolist()}

    @classmethod
    def from_json(cls, blob: dict) -> "GaussianPolicy":
        return cls(Mlp.from_json(blob["net"]), np.array(blob["log_std"], dtype=float))


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z**2, axis=-1) - np.sum(log_std) - 0.5 * actions.shape[-1] * LOG_2PI


@dataclass
class ValueNet:
    net: Mlp

    @classmethod
    def init(cls, rng: np.random.Generator, hidden=(64, 64)) -> "ValueNet":
        return cls(Mlp.init([N_FEATURES, *hidden, 1], rng, out_scale=1.0))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return self.net(features)[:, 0]

    def loss_and_grad(self, features: np.ndarray, targets: np.ndarray, coef: float = 0.5):
        """``coef * mean((V - R)^2)`` and its parameter gradient."""
        v, acts = self.net.forward(features)
        err = v[:, 0] - targets
        loss = coef * float(np.mean(err**2))
        gw, gb = self.net.backward(acts, (2.0 * coef / len(err)) * err[:, None])
        return loss, gw, gb

    def copy(self) -> "ValueNet":
        return ValueNet(self.net.copy())


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def to_json(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    @classmethod
    def from_json(cls, blob: dict) -> "Adam":
        m = None if blob["m"] is None else np.array(blob["m"], dtype=float)
        v = None if blob["v"] is None else np.array(blob["v"], dtype=float)
        return cls(blob["lr"], blob["beta1"], blob["beta2"], blob["eps"], m, v, blob["t"])
