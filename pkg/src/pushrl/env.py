"""Episodic pushing task: observations, reward, resets, rollouts.

Observation (16 entries, fixed order): q (6), qdot (6), object xy (2),
goal xy (2).  Object velocity is deliberately not observed.  The reward
is 1 - 3*dist(object, goal) - sum_i dist(tip_i, object) - 0.1*|a|^2,
evaluated on the post-transition state with the raw sampled action.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .backend import kernel
from .errors import ResetFailed
from .model import ModelParams
from .policy import PolicyParams
from .sim import SimState

OBS_DIM = 16
ACT_DIM = 6

OBS_LABELS = (
    "q_f0j0", "q_f0j1", "q_f1j0", "q_f1j1", "q_f2j0", "q_f2j1",
    "qd_f0j0", "qd_f0j1", "qd_f1j0", "qd_f1j1", "qd_f2j0", "qd_f2j1",
    "obj_x", "obj_y", "goal_x", "goal_y",
)

RESET_MAX_TRIES = 100
RESET_CLEARANCE = 1e-3  # extra tip-object separation required at reset (m)


def obs_to_dict(obs: np.ndarray) -> dict[str, float]:
    return {k: float(v) for k, v in zip(OBS_LABELS, obs)}


def dict_to_obs(d: dict[str, float]) -> np.ndarray:
    return np.array([d[k] for k in OBS_LABELS], dtype=np.float64)


@dataclass
class Trajectory:
    observations: np.ndarray  # (T+1, 16)
    actions: np.ndarray       # (T, 6) raw sampled actions
    rewards: np.ndarray       # (T,)
    log_probs: np.ndarray     # (T,)
    terminated_early: bool = False
    # internal bookkeeping (not part of the wire contract)
    states: np.ndarray | None = None  # (T+1, 17)
    goal: np.ndarray | None = None

    def __post_init__(self):
        T = self.actions.shape[0]
        assert self.observations.shape[0] == T + 1
        assert self.rewards.shape[0] == T and self.log_probs.shape[0] == T


@dataclass(frozen=True)
class EnsembleConfig:
    mass_mean: float = 0.34
    mass_std: float = 0.0
    base_pos_std: float = 0.0

    def validate(self) -> None:
        if self.mass_std < 0 or self.base_pos_std < 0:
            raise ValueError("ensemble stds must be nonnegative")


MIN_SAMPLED_MASS = 0.05


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 500
    restart_prob: float = 0.3
    torque_limit: float = 1.0
    goal_radius: float = 0.06
    dt: float = 0.0005
    substeps: int = 20
    # joint-limit ranges for random initialization; the underlying hardware
    # never documented these, so they live in config (see README)
    init_q1_range: tuple[float, float] = (-1.2, 1.2)
    init_q2_range: tuple[float, float] = (0.6, 2.9)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)


def sample_model(nominal: ModelParams, cfg: EnsembleConfig, rng: np.random.Generator) -> ModelParams:
    """Per-rollout model draw: Gaussian mass, Gaussian 2D base offsets."""
    cfg.validate()
    mass = cfg.mass_mean + cfg.mass_std * rng.standard_normal()
    if mass < MIN_SAMPLED_MASS:
        mass = MIN_SAMPLED_MASS
    offsets = cfg.base_pos_std * rng.standard_normal((3, 2))
    bases = tuple(
        (bx + float(offsets[f, 0]), by + float(offsets[f, 1]), bth)
        for f, (bx, by, bth) in enumerate(nominal.base_poses)
    )
    return replace(nominal, object_mass=float(mass), base_poses=bases)


def sample_goal(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random())
    ang = 2.0 * np.pi * rng.random()
    return np.array([r * np.cos(ang), r * np.sin(ang)])


class PushEnv:
    """Task wrapper around one simulator model."""

    def __init__(self, params: ModelParams, cfg: EnvConfig | None = None):
        self.params = params
        self.cfg = cfg if cfg is not None else EnvConfig()
        self._pvec = params.pack()

    def reward(self, obs: np.ndarray, action: np.ndarray) -> float:
        """Reward of an observation/action pair under this env's model."""
        obs = np.asarray(obs, dtype=np.float64)
        svec = np.zeros(17)
        svec[0:6] = obs[0:6]
        svec[12:14] = obs[12:14]
        return float(
            kernel.reward_fn(svec, float(obs[14]), float(obs[15]), np.asarray(action, dtype=np.float64), self._pvec)
        )

    def reset(
        self,
        rng: np.random.Generator,
        pool: list[Trajectory] | None = None,
        restart_prob: float | None = None,
        model: ModelParams | None = None,
    ) -> tuple[SimState, np.ndarray]:
        """Fresh or pool-restarted initial state plus a fresh goal.

        Fresh: joints uniform in the configured ranges, zero velocities,
        object at the origin, tips guaranteed non-contacting (resampled).
        Restart: a uniformly chosen recorded state from a previous
        trajectory whose return is in the top quartile of the pool.
        """
        if restart_prob is None:
            restart_prob = self.cfg.restart_prob
        if not (0.0 <= restart_prob <= 1.0):
            raise ValueError("restart_prob must be in [0, 1]")
        mp = model if model is not None else self.params
        pvec = mp.pack()

        state: SimState | None = None
        if pool and restart_prob > 0.0 and rng.random() < restart_prob:
            rets = np.array([float(np.sum(t.rewards)) for t in pool])
            thr = np.quantile(rets, 0.75)
            candidates = [t for t, r in zip(pool, rets) if r >= thr]
            traj = candidates[int(rng.integers(len(candidates)))]
            idx = int(rng.integers(traj.states.shape[0]))
            vec = traj.states[idx].copy()
            vec[16] = 0.0
            state = SimState.from_vector(vec)
        if state is None:
            lo = np.array([self.cfg.init_q1_range[0], self.cfg.init_q2_range[0]])
            hi = np.array([self.cfg.init_q1_range[1], self.cfg.init_q2_range[1]])
            reach = mp.fingertip_radius + mp.object_radius + RESET_CLEARANCE
            for _ in range(RESET_MAX_TRIES):
                q = rng.uniform(lo, hi, size=(3, 2)).ravel()
                tips = kernel.fk_tips(q, pvec)
                d = np.hypot(tips[:, 0], tips[:, 1])
                if np.all(d > reach):
                    state = SimState(q=q)
                    break
            else:
                raise ResetFailed(
                    f"no contact-free initial pose in {RESET_MAX_TRIES} draws; check geometry/joint ranges"
                )
        goal = sample_goal(rng, self.cfg.goal_radius)
        return state, goal

    def rollout(
        self,
        p: PolicyParams,
        model: ModelParams,
        horizon: int,
        rng: np.random.Generator,
        pool: list[Trajectory] | None = None,
        restart_prob: float | None = None,
    ) -> Trajectory:
        """One episode under a fixed model draw."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        state, goal = self.reset(rng, pool=pool, restart_prob=restart_prob, model=model)
        noise = rng.standard_normal((horizon, ACT_DIM))
        goals = np.repeat(goal[None, :], horizon + 1, axis=0)
        obs, actions, rewards, logps, states, steps, ok = kernel.rollout(
            state.to_vector(),
            model.pack(),
            p.W,
            p.b,
            p.log_std,
            p.whiten_mean,
            p.whiten_std,
            noise,
            goals,
            self.cfg.torque_limit,
            self.cfg.dt,
            self.cfg.substeps,
        )
        if steps < horizon:
            obs = obs[: steps + 1]
            actions = actions[:steps]
            rewards = rewards[:steps]
            logps = logps[:steps]
            states = states[: steps + 1]
        return Trajectory(
            observations=obs,
            actions=actions,
            rewards=rewards,
            log_probs=logps,
            terminated_early=not ok,
            states=states,
            goal=goal,
        )
