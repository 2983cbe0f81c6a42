"""Planar three-finger pushing simulator: public API over the kernels.

Three two-link torque-controlled fingers and a disk object sliding on a
horizontal plane (no gravity component in-plane).  Contacts are penalty
springs with velocity-regularized Coulomb friction; ground friction is a
tanh-smoothed Coulomb deceleration plus a viscous term.  Integration is
semi-implicit Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernel
from .errors import NonFiniteState
from .model import ModelParams

STATE_SIZE = 17
MAX_DT = 0.002


@dataclass
class SimState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(6))
    obj_pos: np.ndarray = field(default_factory=lambda: np.zeros(2))
    obj_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    t: float = 0.0

    def to_vector(self) -> np.ndarray:
        v = np.empty(STATE_SIZE)
        v[0:6] = self.q
        v[6:12] = self.qdot
        v[12:14] = self.obj_pos
        v[14:16] = self.obj_vel
        v[16] = self.t
        return v

    @staticmethod
    def from_vector(v: np.ndarray) -> "SimState":
        v = np.asarray(v, dtype=np.float64)
        return SimState(
            q=v[0:6].copy(),
            qdot=v[6:12].copy(),
            obj_pos=v[12:14].copy(),
            obj_vel=v[14:16].copy(),
            t=float(v[16]),
        )


@dataclass(frozen=True)
class ContactForce:
    point: tuple[float, float]
    normal: tuple[float, float]
    normal_force: float
    tangent_force: float
    penetration: float


def forward_kinematics(q: np.ndarray, params: ModelParams) -> np.ndarray:
    """Fingertip positions, shape (3, 2).

    Joint angles are counterclockwise; q = (0, 0) extends the arm straight
    along the base orientation axis.
    """
    return kernel.fk_tips(np.asarray(q, dtype=np.float64), params.pack())


def contact_forces(state: SimState, params: ModelParams) -> list[ContactForce]:
    """Active penalty contacts between fingertips and the object."""
    table = kernel.contact_table(state.to_vector(), params.pack())
    out = []
    for f in range(3):
        row = table[f]
        if row[0] > 0.0:
            out.append(
                ContactForce(
                    point=(float(row[1]), float(row[2])),
                    normal=(float(row[3]), float(row[4])),
                    normal_force=float(row[5]),
                    tangent_force=float(row[6]),
                    penetration=float(row[7]),
                )
            )
    return out


def step(state: SimState, torques: np.ndarray, params: ModelParams, dt: float) -> SimState:
    """One physics substep (semi-implicit Euler).  dt must be in (0, 0.002]."""
    if not (0.0 < dt <= MAX_DT):
        raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt}")
    vec, ok = kernel.substeps(state.to_vector(), np.asarray(torques, dtype=np.float64), params.pack(), dt, 1)
    if not ok:
        raise NonFiniteState("simulation state became non-finite")
    return SimState.from_vector(vec)


def run_substeps(state: SimState, torques: np.ndarray, params: ModelParams, dt: float, n: int) -> SimState:
    """n substeps under constant torque (one control interval)."""
    if not (0.0 < dt <= MAX_DT):
        raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt}")
    vec, ok = kernel.substeps(state.to_vector(), np.asarray(torques, dtype=np.float64), params.pack(), dt, n)
    if not ok:
        raise NonFiniteState("simulation state became non-finite")
    return SimState.from_vector(vec)


def inverse_dynamics(
    conf_prev: np.ndarray,
    conf_cur: np.ndarray,
    conf_next: np.ndarray,
    params: ModelParams,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Applied generalized forces for a configuration triple.

    conf_* are 8-vectors [q (6), object xy (2)] at uniform spacing dt.
    Returns (tau_hat (6), obj_force (2), s_hat (8)): the joint torques
    that reproduce the finger motion, the unexplained external force on
    the object (zero when the motion is consistent with the model), and
    the sensor prediction (identity on the current configuration).
    """
    cm = np.asarray(conf_prev, dtype=np.float64)
    cc = np.asarray(conf_cur, dtype=np.float64)
    cp = np.asarray(conf_next, dtype=np.float64)
    tau_hat, fobj = kernel.inverse_dynamics(cm, cc, cp, params.pack(), dt)
    return tau_hat, fobj, cc.copy()


def home_state(params: ModelParams, tip_distance: float = 0.10) -> SimState:
    """Canonical rest pose: all tips at tip_distance from the origin, elbows bent."""
    l1, l2 = params.link_lengths
    q = np.zeros(6)
    for f in range(3):
        bx, by, _ = params.base_poses[f]
        reach = math.hypot(bx, by) - tip_distance
        # two-link IK along the base->origin axis, symmetric elbow-up branch
        c = (reach * reach - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        c = min(1.0, max(-1.0, c))
        q2 = math.acos(c)
        q1 = -math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        q[2 * f] = q1
        q[2 * f + 1] = q2
    return SimState(q=q)
