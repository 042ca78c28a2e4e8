"""Gaussian-process model of the step-to-step residual dynamics.

Every output dimension gets its own GP, but they share inputs and
hyperparameters, so a single Cholesky factor of ``K + noise I`` serves all
of them.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

INPUT_DIM = 6
OUTPUT_DIM = 6
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpHyper:
    lengthscales: tuple[float, ...] = (0.5,) * INPUT_DIM
    signal_var: float = 1e-3
    noise_var: float = 1e-6
    k_delta: float = 2.0
    capacity: int = 2000

    def __post_init__(self):
        ls = tuple(float(v) for v in self.lengthscales)
        object.__setattr__(self, "lengthscales", ls)
        if len(ls) != INPUT_DIM or min(ls) <= 0:
            raise ValueError(f"need {INPUT_DIM} positive lengthscales, got {ls}")
        if not (self.signal_var > 0 and self.noise_var > 0 and self.k_delta > 0):
            raise ValueError("signal_var, noise_var and k_delta must be positive")
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")


def kernel(a, b, hyper: GpHyper) -> float:
    """Squared-exponential covariance between two inputs."""
    d = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / np.asarray(hyper.lengthscales)
    return float(hyper.signal_var * np.exp(-0.5 * np.dot(d, d)))


def kernel_matrix(xa: np.ndarray, xb: np.ndarray, hyper: GpHyper) -> np.ndarray:
    ls = np.asarray(hyper.lengthscales)
    za, zb = xa / ls, xb / ls
    sq = (za**2).sum(1)[:, None] + (zb**2).sum(1)[None, :] - 2.0 * za @ zb.T
    return hyper.signal_var * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass(frozen=True)
class ResidualModel:
    """Immutable fitted snapshot; refits build a new instance."""

    hyper: GpHyper
    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, INPUT_DIM)))
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, OUTPUT_DIM)))
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    jitter: float = 0.0

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def predict(self, query) -> tuple[np.ndarray, np.ndarray]:
        mu, sigma = self.predict_batch(np.atleast_2d(np.asarray(query, dtype=float)))
        return mu[0], sigma[0]

    def predict_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation, each (n, 6)."""
        q = np.asarray(queries, dtype=float).reshape(-1, INPUT_DIM)
        prior_sd = np.sqrt(self.hyper.signal_var)
        if self.size == 0:
            return np.zeros((len(q), OUTPUT_DIM)), np.full((len(q), OUTPUT_DIM), prior_sd)
        k_star = kernel_matrix(q, self.inputs, self.hyper)
        mu = k_star @ self.alpha
        v = solve_triangular(self.chol, k_star.T, lower=True, check_finite=False)
        var = self.hyper.signal_var - (v**2).sum(0)
        sd = np.sqrt(np.clip(var, 0.0, None))
        return mu, np.repeat(sd[:, None], OUTPUT_DIM, axis=1)

    def to_json(self) -> dict:
        return {
            "hyper": asdict(self.hyper),
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def from_json(cls, blob: dict) -> "ResidualModel":
        hyper = GpHyper(**{k: tuple(v) if isinstance(v, list) else v for k, v in blob["hyper"].items()})
        inputs = np.asarray(blob["inputs"], dtype=float).reshape(-1, INPUT_DIM)
        targets = np.asarray(blob["targets"], dtype=float).reshape(-1, OUTPUT_DIM)
        # stored data is already canonical, refit reproduces the factor exactly
        return fit(inputs, targets, hyper, canonical=False)

    @classmethod
    def load(cls, path) -> "ResidualModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def empty_model(hyper: GpHyper) -> ResidualModel:
    return ResidualModel(hyper)


def fit(inputs, targets, hyper: GpHyper, canonical: bool = True) -> ResidualModel:
    """Factor ``K + noise I`` once and cache the weights for every output.

    With ``canonical`` the data is lexicographically sorted first so the fit
    does not depend on insertion order.
    """
    x = np.asarray(inputs, dtype=float).reshape(-1, INPUT_DIM)
    y = np.asarray(targets, dtype=float).reshape(-1, OUTPUT_DIM)
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree in length")
    if x.shape[0] == 0:
        return empty_model(hyper)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("GP training data must be finite")
    if canonical:
        order = np.lexsort(np.concatenate([x, y], axis=1).T[::-1])
        x, y = x[order], y[order]
    k = kernel_matrix(x, x, hyper)
    k[np.diag_indices_from(k)] += hyper.noise_var
    for jitter in JITTER_LADDER:
        try:
            chol = np.linalg.cholesky(k + jitter * np.eye(len(k)) if jitter else k)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((chol, True), y, check_finite=False)
        return ResidualModel(hyper, x, y, chol, alpha, jitter)
    raise GpFitError(f"kernel matrix of {len(k)} points not positive definite after jitter {JITTER_LADDER[-1]}")


def greedy_variance_subset(inputs: np.ndarray, hyper: GpHyper, m: int) -> np.ndarray:
    """Indices of ``m`` points picked greedily by largest remaining prior variance.

    This is a pivoted Cholesky of the kernel matrix; each pick is the point
    the already-chosen ones explain worst.
    """
    x = np.asarray(inputs, dtype=float).reshape(-1, INPUT_DIM)
    n = len(x)
    m = min(m, n)
    resid = np.full(n, hyper.signal_var + hyper.noise_var)
    basis = np.zeros((m, n))
    picked: list[int] = []
    for j in range(m):
        i = int(np.argmax(resid))
        picked.append(i)
        col = kernel_matrix(x, x[i : i + 1], hyper)[:, 0]
        col[i] += hyper.noise_var
        col -= basis[:j].T @ basis[:j, i]
        basis[j] = col / np.sqrt(resid[i])
        resid = np.maximum(resid - basis[j] ** 2, 0.0)
        resid[picked] = -np.inf
    return np.array(sorted(picked), dtype=int)


@dataclass
class ResidualDataset:
    """FIFO buffer of residual observations feeding the GP refits."""

    capacity: int = 2000
    subsample: bool = False
    hyper: GpHyper = field(default_factory=GpHyper)
    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    def extend(self, inputs, targets) -> None:
        for xi, yi in zip(np.asarray(inputs, dtype=float), np.asarray(targets, dtype=float)):
            self.inputs.append(xi)
            self.targets.append(yi)
        overflow = len(self.inputs) - self.capacity
        if overflow > 0 and self.subsample:
            keep = greedy_variance_subset(np.array(self.inputs), self.hyper, self.capacity)
            self.inputs = [self.inputs[i] for i in keep]
            self.targets = [self.targets[i] for i in keep]
        elif overflow > 0:
            del self.inputs[:overflow]
            del self.targets[:overflow]

    def __len__(self) -> int:
        return len(self.inputs)

    def fit(self, hyper: GpHyper) -> ResidualModel:
        if not self.inputs:
            return empty_model(hyper)
        return fit(np.array(self.inputs), np.array(self.targets), hyper)
