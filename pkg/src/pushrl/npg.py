"""Score-function policy gradient, empirical Fisher, normalized step.

The update solves max g'(theta - theta_k) subject to a quadratic Fisher
trust region and rescales the natural direction so the quadratic form
equals the step budget delta exactly, which makes the step invariant to
any positive rescaling of the advantages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateGradient
from . import policy as policy_mod

FISHER_DAMPING = 1e-6
DEGENERATE_TOL = 1e-12


@dataclass
class GradientEstimate:
    g: np.ndarray
    sample_count: int


@dataclass
class FisherEstimate:
    F: np.ndarray
    sample_count: int


def policy_gradient(trajs: list, advantages: list[np.ndarray], p) -> GradientEstimate:
    """(1/NT) sum of score * advantage over all state-action pairs."""
    d = p.dim
    total = np.zeros(d)
    n = 0
    for traj, adv in zip(trajs, advantages):
        T = len(adv)
        if T == 0:
            continue
        S = policy_mod.score_matrix(traj.observations[:T], traj.actions, p)
        total += S.T @ np.asarray(adv, dtype=np.float64)
        n += T
    if n == 0:
        raise ValueError("no state-action pairs")
    return GradientEstimate(g=total / n, sample_count=n)


def fisher_from_scores(S: np.ndarray, damping: float = FISHER_DAMPING) -> FisherEstimate:
    """Empirical Fisher (1/N) S'S, symmetrized and damped."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n == 0:
        raise ValueError("at least one sample required")
    F = S.T @ S / n
    F = 0.5 * (F + F.T)
    return FisherEstimate(F=damp_fisher(F, damping), sample_count=n)


def damp_fisher(F: np.ndarray, damping: float = FISHER_DAMPING) -> np.ndarray:
    d = F.shape[0]
    tr = float(np.trace(F))
    return F + (damping * tr / d) * np.eye(d)


def fisher(trajs: list, p, damping: float = FISHER_DAMPING) -> FisherEstimate:
    """Empirical Fisher over all state-action pairs of the trajectories."""
    d = p.dim
    total = np.zeros((d, d))
    n = 0
    for traj in trajs:
        T = traj.actions.shape[0]
        if T == 0:
            continue
        S = policy_mod.score_matrix(traj.observations[:T], traj.actions, p)
        total += S.T @ S
        n += T
    if n == 0:
        raise ValueError("at least one state-action pair required")
    F = total / n
    F = 0.5 * (F + F.T)
    return FisherEstimate(F=damp_fisher(F, damping), sample_count=n)


def natural_step_full(g, F, delta: float) -> tuple[np.ndarray, float]:
    """Normalized natural step and the quadratic form g'F^-1 g."""
    gv = g.g if isinstance(g, GradientEstimate) else np.asarray(g, dtype=np.float64)
    Fm = F.F if isinstance(F, FisherEstimate) else np.asarray(F, dtype=np.float64)
    if delta <= 0:
        raise ValueError("delta must be positive")
    try:
        c = cho_factor(Fm, lower=True)
    except Exception as e:
        raise DegenerateGradient("Fisher matrix is not positive definite") from e
    x = cho_solve(c, gv)
    q = float(gv @ x)
    if q <= DEGENERATE_TOL:
        raise DegenerateGradient(f"g'F^-1 g = {q:.3e} below threshold")
    return np.sqrt(delta / q) * x, q


def natural_step(g: GradientEstimate | np.ndarray, F: FisherEstimate | np.ndarray, delta: float) -> np.ndarray:
    """sqrt(delta / g'F^-1 g) * F^-1 g via SPD factorization of (damped) F."""
    dtheta, _q = natural_step_full(g, F, delta)
    return dtheta
