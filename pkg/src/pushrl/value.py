"""Quadratic value baseline and generalized advantage estimation.

The baseline is linear regression on [obs, obs^2, u, u^2, u^3, u^4, 1]
with u = t/T (37 features for the 16-dim task observation), fitted by
ridge-regularized normal equations on empirical discounted returns-to-go.
Normal equations accumulate per worker and merge by addition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularSystem

N_TIME_FEATURES = 5  # u, u^2, u^3, u^4, 1


def feature_dim(obs_dim: int) -> int:
    return 2 * obs_dim + N_TIME_FEATURES


def features(obs: np.ndarray, t: int, T: int) -> np.ndarray:
    """Baseline features for one observation at step t of horizon T."""
    obs = np.asarray(obs, dtype=np.float64)
    u = t / T
    return np.concatenate([obs, obs * obs, [u, u * u, u**3, u**4, 1.0]])


def feature_matrix(obs: np.ndarray, t0: int, T: int) -> np.ndarray:
    """Features for consecutive observations starting at step index t0."""
    obs = np.asarray(obs, dtype=np.float64)
    n = obs.shape[0]
    u = (t0 + np.arange(n)) / T
    cols = [obs, obs * obs, u[:, None], (u * u)[:, None], (u**3)[:, None], (u**4)[:, None], np.ones((n, 1))]
    return np.concatenate(cols, axis=1)


@dataclass
class ValueParams:
    weights: np.ndarray
    ridge: float = 1e-6


@dataclass
class NormalEquations:
    xtx: np.ndarray
    xty: np.ndarray
    count: int = 0

    @staticmethod
    def zeros(dim: int) -> "NormalEquations":
        return NormalEquations(np.zeros((dim, dim)), np.zeros(dim), 0)

    def add(self, other: "NormalEquations") -> "NormalEquations":
        return NormalEquations(self.xtx + other.xtx, self.xty + other.xty, self.count + other.count)


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def accumulate_neq(obs: np.ndarray, rewards: np.ndarray, gamma: float, T: int) -> NormalEquations:
    """Normal-equation contribution of one trajectory.

    obs has T'+1 rows; regression rows are steps 0..T'-1 with discounted
    return-to-go targets.
    """
    n = len(rewards)
    X = feature_matrix(obs[:n], 0, T)
    y = returns_to_go(np.asarray(rewards, dtype=np.float64), gamma)
    return NormalEquations(X.T @ X, X.T @ y, n)


def fit(neq: NormalEquations, ridge: float) -> ValueParams:
    """Solve (X'X + ridge I) w = X'y."""
    if neq.count <= 0:
        raise ValueError("cannot fit a value function from zero samples")
    d = neq.xtx.shape[0]
    A = neq.xtx + ridge * np.eye(d)
    try:
        from scipy.linalg import cho_factor, cho_solve

        c = cho_factor(A, lower=True)
        w = cho_solve(c, neq.xty)
    except Exception as e:  # LinAlgError: not positive definite
        raise SingularSystem(f"value normal equations singular (ridge={ridge})") from e
    if not np.all(np.isfinite(w)):
        raise SingularSystem(f"value fit produced non-finite weights (ridge={ridge})")
    return ValueParams(weights=w, ridge=ridge)


def value_series(vp: ValueParams, obs: np.ndarray, t0: int, T: int) -> np.ndarray:
    return feature_matrix(obs, t0, T) @ vp.weights


def gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Raw (pre-standardization) GAE advantages.

    values has len(rewards)+1 entries; the last is the bootstrap value of
    the final observation (time-indexed features make it well defined at
    truncation as well).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = len(rewards)
    adv = np.empty(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


def standardize(advs: list[np.ndarray]) -> tuple[list[np.ndarray], float, float]:
    """Standardize advantages across a batch (population statistics)."""
    flat = np.concatenate(advs)
    m = float(flat.mean())
    s = float(flat.std())
    if s < 1e-12:
        s = 1.0
    return [(a - m) / s for a in advs], m, s


def whitening_from_neq(neq: NormalEquations, obs_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Observation mean/std recovered from the constant-feature column.

    Feature rows are [obs, obs^2, ..., 1], so column -1 of X'X holds the
    raw sums of every feature; entries [0:obs_dim] are sum(obs) and
    [obs_dim:2*obs_dim] are sum(obs^2).
    """
    if neq.count <= 0:
        raise ValueError("empty normal equations")
    col = neq.xtx[:, -1]
    mean = col[:obs_dim] / neq.count
    var = col[obs_dim : 2 * obs_dim] / neq.count - mean * mean
    std = np.sqrt(np.maximum(var, 1e-12))
    return mean, std
