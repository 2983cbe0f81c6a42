"""Affine Gaussian policy with diagonal covariance.

Action mean is an affine map of the whitened observation; log-stds are
global parameters.  The flattened parameter vector is [W row-major, b,
log_std]; for the pushing task (6 actions, 16 observations) that is 108
entries.  Whitening statistics are carried with the parameters and are
part of the checkpoint; they are frozen after the first training
iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backend import kernel

LOG_STD_MIN = -20.0
LOG_STD_MAX = 3.0

TASK_ACTION_DIM = 6
TASK_OBS_DIM = 16

FORMAT_TAG = "pushrl-policy-v1"
FLATTEN_ORDER = "W-row-major,b,log_std"


@dataclass
class PolicyParams:
    W: np.ndarray
    b: np.ndarray
    log_std: np.ndarray
    whiten_mean: np.ndarray
    whiten_std: np.ndarray

    @property
    def action_dim(self) -> int:
        return self.W.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        na, no = self.W.shape
        return na * no + na + na

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.W.copy(),
            self.b.copy(),
            self.log_std.copy(),
            self.whiten_mean.copy(),
            self.whiten_std.copy(),
        )


def init_policy(action_dim: int, obs_dim: int, log_std_init: float = -1.0) -> PolicyParams:
    """Zero-mean start: W = b = 0 avoids initial torque spikes."""
    return PolicyParams(
        W=np.zeros((action_dim, obs_dim)),
        b=np.zeros(action_dim),
        log_std=np.full(action_dim, float(log_std_init)),
        whiten_mean=np.zeros(obs_dim),
        whiten_std=np.ones(obs_dim),
    )


def make_task_policy(log_std_init: float = -1.0) -> PolicyParams:
    p = init_policy(TASK_ACTION_DIM, TASK_OBS_DIM, log_std_init)
    assert p.dim == 108
    return p


def flatten(p: PolicyParams) -> np.ndarray:
    return np.concatenate([p.W.ravel(), p.b, p.log_std])


def unflatten(theta: np.ndarray, like: PolicyParams) -> PolicyParams:
    na, no = like.W.shape
    theta = np.asarray(theta, dtype=np.float64)
    W = theta[: na * no].reshape(na, no).copy()
    b = theta[na * no : na * no + na].copy()
    ls = theta[na * no + na :].copy()
    return PolicyParams(W, b, ls, like.whiten_mean.copy(), like.whiten_std.copy())


def apply_update(p: PolicyParams, dtheta: np.ndarray) -> PolicyParams:
    """New parameters theta + dtheta, with log_std clamped to its range."""
    out = unflatten(flatten(p) + dtheta, p)
    np.clip(out.log_std, LOG_STD_MIN, LOG_STD_MAX, out=out.log_std)
    return out


def mean_action(obs: np.ndarray, p: PolicyParams) -> np.ndarray:
    return kernel.affine_mean(p.W, p.b, p.whiten_mean, p.whiten_std, np.asarray(obs, dtype=np.float64))


def act(obs: np.ndarray, p: PolicyParams, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mu = mean_action(obs, p)
    noise = rng.standard_normal(p.action_dim)
    action = mu + np.exp(p.log_std) * noise
    lp = kernel.gaussian_logp(mu, p.log_std, action)
    return action, float(lp)


def log_prob(obs: np.ndarray, action: np.ndarray, p: PolicyParams) -> float:
    mu = mean_action(obs, p)
    return float(kernel.gaussian_logp(mu, p.log_std, np.asarray(action, dtype=np.float64)))


def grad_log_prob(obs: np.ndarray, action: np.ndarray, p: PolicyParams) -> np.ndarray:
    """Analytic score in the flattening order [W row-major, b, log_std]."""
    obs = np.asarray(obs, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    x = (obs - p.whiten_mean) / p.whiten_std
    mu = mean_action(obs, p)
    sd = np.exp(p.log_std)
    z = (action - mu) / sd
    gb = z / sd
    gW = np.outer(gb, x)
    gls = z * z - 1.0
    return np.concatenate([gW.ravel(), gb, gls])


def score_matrix(obs: np.ndarray, actions: np.ndarray, p: PolicyParams) -> np.ndarray:
    """Scores for a batch: row i is grad_log_prob(obs[i], actions[i]).

    Vectorized; equal to per-row grad_log_prob up to BLAS summation order.
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    X = (obs - p.whiten_mean) / p.whiten_std
    mu = X @ p.W.T + p.b
    sd = np.exp(p.log_std)
    Z = (actions - mu) / sd
    GB = Z / sd
    T = obs.shape[0]
    na, no = p.W.shape
    out = np.empty((T, na * no + 2 * na))
    out[:, : na * no] = (GB[:, :, None] * X[:, None, :]).reshape(T, na * no)
    out[:, na * no : na * no + na] = GB
    out[:, na * no + na :] = Z * Z - 1.0
    return out


def remap_whitening(p: PolicyParams, new_mean: np.ndarray, new_std: np.ndarray) -> PolicyParams:
    """Change whitening statistics without changing the policy function.

    W' x' + b' == W x + b for all raw observations, up to rounding.
    """
    new_mean = np.asarray(new_mean, dtype=np.float64)
    new_std = np.asarray(new_std, dtype=np.float64)
    # raw-space gain of the current parameters
    Wraw = p.W / p.whiten_std
    braw = p.b - Wraw @ p.whiten_mean
    W2 = Wraw * new_std
    b2 = braw + Wraw @ new_mean
    return PolicyParams(W2, b2, p.log_std.copy(), new_mean.copy(), new_std.copy())


def save_policy(p: PolicyParams, path: str, extra: dict | None = None) -> None:
    doc = {
        "format": FORMAT_TAG,
        "flatten_order": FLATTEN_ORDER,
        "action_dim": p.action_dim,
        "obs_dim": p.obs_dim,
        "whiten_mean": p.whiten_mean.tolist(),
        "whiten_std": p.whiten_std.tolist(),
        "theta": flatten(p).tolist(),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_policy(path: str) -> tuple[PolicyParams, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG} document")
    if doc.get("flatten_order") != FLATTEN_ORDER:
        raise ValueError(f"{path}: unknown flatten order {doc.get('flatten_order')!r}")
    na = int(doc["action_dim"])
    no = int(doc["obs_dim"])
    like = init_policy(na, no)
    like.whiten_mean = np.asarray(doc["whiten_mean"], dtype=np.float64)
    like.whiten_std = np.asarray(doc["whiten_std"], dtype=np.float64)
    p = unflatten(np.asarray(doc["theta"], dtype=np.float64), like)
    return p, doc
