"""Spiral-tracking evaluation: goal path, rollouts, distance metric.

The target path spirals from the origin out to 4 cm over two turns in
two seconds, then completes one full circle at 4 cm in two more seconds.
Policies are evaluated by the mean per-step distance between object and
moving goal over stochastic rollouts from the canonical home pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernel
from .env import EnvConfig
from .model import ModelParams
from .policy import PolicyParams
from .sim import home_state

PATH_DURATION = 4.0
SPIRAL_TIME = 2.0
FINAL_RADIUS = 0.04
SPIRAL_TURNS = 2.0


def goal_path(t: float) -> np.ndarray:
    """Goal position at time t (seconds); out-of-range t clamps to [0, 4]."""
    if t < 0.0:
        t = 0.0
    elif t > PATH_DURATION:
        t = PATH_DURATION
    if t <= SPIRAL_TIME:
        r = FINAL_RADIUS * (t / SPIRAL_TIME)
        ang = 2.0 * math.pi * SPIRAL_TURNS * (t / SPIRAL_TIME)
    else:
        r = FINAL_RADIUS
        ang = 2.0 * math.pi * SPIRAL_TURNS + 2.0 * math.pi * (t - SPIRAL_TIME) / (PATH_DURATION - SPIRAL_TIME)
    return np.array([r * math.cos(ang), r * math.sin(ang)])


def goal_schedule(n_steps: int, ctrl_dt: float) -> np.ndarray:
    """(n_steps+1, 2) goal positions sampled at control times."""
    return np.stack([goal_path(i * ctrl_dt) for i in range(n_steps + 1)])


@dataclass
class EvalResult:
    distances: np.ndarray       # (rollouts, steps) per-step object-goal distance
    obj_series: np.ndarray      # (rollouts, steps, 2)
    goal_series: np.ndarray     # (steps, 2)
    mean_distance: float
    rollout_count: int
    failed_rollouts: int = 0
    rewards_mean: float = 0.0


def evaluate(
    p: PolicyParams,
    eval_model: ModelParams,
    n_rollouts: int,
    rng: np.random.Generator,
    cfg: EnvConfig | None = None,
    mean_action: bool = False,
) -> EvalResult:
    """Track the spiral path for 4 s from the home pose, n_rollouts times.

    The goal observation follows goal_path at every control step; the
    per-step distance pairs the post-step object position with the goal
    the controller was chasing.  Rollouts that lose the state to a
    simulation blow-up are excluded from the mean and counted separately.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    cfg = cfg if cfg is not None else EnvConfig()
    ctrl_dt = cfg.dt * cfg.substeps
    n_steps = int(round(PATH_DURATION / ctrl_dt))
    goals = goal_schedule(n_steps, ctrl_dt)
    start = home_state(eval_model).to_vector()
    pvec = eval_model.pack()

    dists = np.full((n_rollouts, n_steps), np.nan)
    obj = np.full((n_rollouts, n_steps, 2), np.nan)
    failed = 0
    rew_sum = 0.0
    rew_n = 0
    for i in range(n_rollouts):
        noise = (
            np.zeros((n_steps, 6))
            if mean_action
            else rng.standard_normal((n_steps, 6))
        )
        _obs, _actions, rewards, _logps, states, steps, ok = kernel.rollout(
            start,
            pvec,
            p.W,
            p.b,
            p.log_std,
            p.whiten_mean,
            p.whiten_std,
            noise,
            goals,
            cfg.torque_limit,
            cfg.dt,
            cfg.substeps,
        )
        if not ok:
            failed += 1
            continue
        pos = states[1:, 12:14]
        obj[i] = pos
        dists[i] = np.hypot(pos[:, 0] - goals[:n_steps, 0], pos[:, 1] - goals[:n_steps, 1])
        rew_sum += float(rewards.sum())
        rew_n += steps
    done = ~np.isnan(dists[:, 0])
    mean_d = float(dists[done].mean()) if done.any() else float("nan")
    return EvalResult(
        distances=dists,
        obj_series=obj,
        goal_series=goals[:n_steps],
        mean_distance=mean_d,
        rollout_count=n_rollouts,
        failed_rollouts=failed,
        rewards_mean=(rew_sum / rew_n) if rew_n else float("nan"),
    )


def write_eval_csv(res: EvalResult, path: str, ctrl_dt: float) -> None:
    with open(path, "w") as fh:
        fh.write("rollout,step,t,obj_x,obj_y,goal_x,goal_y,distance\n")
        for i in range(res.rollout_count):
            if np.isnan(res.distances[i, 0]):
                continue
            for s in range(res.distances.shape[1]):
                gx, gy = res.goal_series[s]
                ox, oy = res.obj_series[i, s]
                fh.write(
                    f"{i},{s},{(s + 1) * ctrl_dt!r},{ox!r},{oy!r},{gx!r},{gy!r},{res.distances[i, s]!r}\n"
                )


def dump_policy_weights(p: PolicyParams, path: str) -> None:
    """Gain-matrix CSV for heat-mapping: one row per actuator,
    16 gain columns plus bias and log_std."""
    from .env import OBS_LABELS

    header = ["actuator"] + list(OBS_LABELS) + ["bias", "log_std"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(p.action_dim):
            row = [f"torque_f{k // 2}j{k % 2}"]
            row += [repr(float(v)) for v in p.W[k]]
            row.append(repr(float(p.b[k])))
            row.append(repr(float(p.log_std[k])))
            fh.write(",".join(row) + "\n")
