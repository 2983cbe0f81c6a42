"""Joint state-estimation and parameter identification by Gauss-Newton.

Minimizes, over the free physical parameters P and the state trajectory
Q, the stacked weighted residuals of (a) inverse-dynamics joint torques
against recorded motor torques, (b) the unexplained external force on
the object (zero for real data: only modeled forces act on it), and (c)
the identity sensor model against recorded sensors.  Without (b) the
object parameters would be structurally unidentifiable.

Finite-difference Jacobians; Levenberg-damped dense normal equations at
desk scale (a few thousand unknowns).  The per-sample locality of the
residual blocks is exploited only to assemble Jacobian columns cheaply,
not in the solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .backend import kernel
from .errors import ConfigError, NonFiniteResidual
from .model import ModelParams

CONF_DIM = 8    # q (6) + object xy (2)
BLOCK_DIM = 16  # 6 torque + 2 object-force + 8 sensor residuals per interior sample

# ModelParams scalar fields that may be identified.
FREE_PARAM_NAMES = (
    "object_mass",
    "object_radius",
    "ground_coulomb_decel",
    "ground_viscous",
    "contact_stiffness",
    "contact_damping",
    "contact_friction_mu",
    "fingertip_radius",
    "joint_damping",
)


@dataclass
class RecordedRun:
    torques: np.ndarray  # (n, 6)
    sensors: np.ndarray  # (n, 8): joint angles + object xy
    dt: float

    def __post_init__(self):
        self.torques = np.asarray(self.torques, dtype=np.float64)
        self.sensors = np.asarray(self.sensors, dtype=np.float64)
        if self.torques.ndim != 2 or self.torques.shape[1] != 6:
            raise ValueError("torques must be (n, 6)")
        if self.sensors.shape != (self.torques.shape[0], CONF_DIM):
            raise ValueError("sensors must be (n, 8)")
        if self.n < 3:
            raise ValueError("need at least 3 samples")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.torques.shape[0]


def save_run_csv(run: RecordedRun, path: str) -> None:
    cols = (
        ["time"]
        + [f"tau_{i}" for i in range(6)]
        + [f"q_{i}" for i in range(6)]
        + ["obj_x", "obj_y"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(run.n):
            row = [repr(i * run.dt)]
            row += [repr(float(v)) for v in run.torques[i]]
            row += [repr(float(v)) for v in run.sensors[i]]
            fh.write(",".join(row) + "\n")


def load_run_csv(path: str) -> RecordedRun:
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.shape == ():
        raise ConfigError(f"{path}: fewer than 2 data rows")
    t = data["time"]
    n = len(t)
    if n < 3:
        raise ConfigError(f"{path}: need at least 3 samples")
    dts = np.diff(t)
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-6, atol=1e-12):
        raise ConfigError(f"{path}: sampling is not uniform")
    torques = np.stack([data[f"tau_{i}"] for i in range(6)], axis=1)
    sensors = np.stack([data[f"q_{i}"] for i in range(6)] + [data["obj_x"], data["obj_y"]], axis=1)
    return RecordedRun(torques=torques, sensors=sensors, dt=dt)


@dataclass
class SysIdProblem:
    free: tuple[str, ...]
    p0: ModelParams
    q0: np.ndarray | None = None  # default: the sensor readings
    w_tau: float = 1.0
    w_s: float = 1.0e4

    def __post_init__(self):
        if not self.free:
            raise ValueError("at least one free parameter required")
        for name in self.free:
            if name not in FREE_PARAM_NAMES:
                raise ValueError(f"unknown free parameter {name!r}; choose from {FREE_PARAM_NAMES}")
        if not (self.w_tau > 0 and self.w_s > 0):
            raise ValueError("residual weights must be positive")


def apply_free(base: ModelParams, names: tuple[str, ...], vec: np.ndarray) -> ModelParams:
    return replace(base, **{n: float(v) for n, v in zip(names, vec)})


def _block(pvec: np.ndarray, Q: np.ndarray, run: RecordedRun, i: int, sw_tau: float, sw_s: float) -> np.ndarray:
    """Residual block of interior sample i: [torque(6), objforce(2), sensor(8)]."""
    tau_hat, fobj = kernel.inverse_dynamics(Q[i - 1], Q[i], Q[i + 1], pvec, run.dt)
    out = np.empty(BLOCK_DIM)
    out[0:6] = sw_tau * (tau_hat - run.torques[i])
    out[6:8] = sw_tau * fobj
    out[8:16] = sw_s * (Q[i] - run.sensors[i])
    return out


def residuals(P: ModelParams, Q: np.ndarray, run: RecordedRun, w_tau: float = 1.0, w_s: float = 1.0e4) -> np.ndarray:
    """Stacked residual vector over interior samples, (n-2)*16 entries."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (run.n, CONF_DIM):
        raise ValueError(f"Q must be ({run.n}, {CONF_DIM})")
    pvec = P.pack()
    sw_tau = math.sqrt(w_tau)
    sw_s = math.sqrt(w_s)
    out = np.empty((run.n - 2) * BLOCK_DIM)
    for i in range(1, run.n - 1):
        out[(i - 1) * BLOCK_DIM : i * BLOCK_DIM] = _block(pvec, Q, run, i, sw_tau, sw_s)
    if not np.all(np.isfinite(out)):
        raise NonFiniteResidual("residual vector contains non-finite entries")
    return out


@dataclass
class SysIdResult:
    params: ModelParams
    Q: np.ndarray
    cost: float
    iterations: int
    cost_trace: list[float] = field(default_factory=list)
    free: tuple[str, ...] = ()
    fitted: dict[str, float] = field(default_factory=dict)
    non_identifiable: tuple[str, ...] = ()
    confidence: dict[str, float] = field(default_factory=dict)


def _fd_step(x: float) -> float:
    return max(1e-6 * abs(x), 1e-8)


def _param_jacobian_cols(pfree, names, base, Q, run, sw_tau, sw_s) -> np.ndarray:
    """Central-difference Jacobian columns for the free physical parameters."""
    m = (run.n - 2) * BLOCK_DIM
    cols = np.empty((m, len(pfree)))
    for j, (name, xval) in enumerate(zip(names, pfree)):
        h = _fd_step(xval)
        vp = pfree.copy()
        vp[j] = xval + h
        rp = residuals(apply_free(base, names, vp), Q, run, sw_tau**2, sw_s**2)
        vp[j] = xval - h
        rm = residuals(apply_free(base, names, vp), Q, run, sw_tau**2, sw_s**2)
        cols[:, j] = (rp - rm) / (2.0 * h)
    return cols


def _state_jacobian(pvec, Q, run, sw_tau, sw_s) -> sp.csr_matrix:
    """Sparse Jacobian w.r.t. the flattened state trajectory Q.

    Perturbing sample i touches only residual blocks i-1, i, i+1, so each
    column needs at most six extra block evaluations.
    """
    n = run.n
    m = (n - 2) * BLOCK_DIM
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    Qw = Q.copy()
    for i in range(n):
        lo = max(1, i - 1)
        hi = min(n - 2, i + 1)
        if lo > hi:
            continue
        for c in range(CONF_DIM):
            x = Qw[i, c]
            h = _fd_step(x)
            col = i * CONF_DIM + c
            Qw[i, c] = x + h
            bp = [ _block(pvec, Qw, run, b, sw_tau, sw_s) for b in range(lo, hi + 1) ]
            Qw[i, c] = x - h
            bm = [ _block(pvec, Qw, run, b, sw_tau, sw_s) for b in range(lo, hi + 1) ]
            Qw[i, c] = x
            for bi, b in enumerate(range(lo, hi + 1)):
                dcol = (bp[bi] - bm[bi]) / (2.0 * h)
                base_row = (b - 1) * BLOCK_DIM
                nz = np.nonzero(dcol)[0]
                rows.extend(base_row + nz)
                cols.extend([col] * len(nz))
                vals.extend(dcol[nz])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n * CONF_DIM))


# Columns with norms below this (relative to the dynamics residual scale)
# are declared non-identifiable and frozen.
IDENT_TOL = 1e-9


def gauss_newton(
    problem: SysIdProblem,
    run: RecordedRun,
    max_iter: int = 200,
    cost_tol: float = 1e-10,
    step_tol: float = 1e-10,
    verbose: bool = False,
) -> SysIdResult:
    """Levenberg-damped Gauss-Newton over the joint (P, Q) vector."""
    names = tuple(problem.free)
    base = problem.p0
    pfree = np.array([getattr(base, nm) for nm in names], dtype=np.float64)
    Q = (problem.q0 if problem.q0 is not None else run.sensors).copy()
    sw_tau = math.sqrt(problem.w_tau)
    sw_s = math.sqrt(problem.w_s)

    def cost_of(pvecfree, Qcur):
        r = residuals(apply_free(base, names, pvecfree), Qcur, run, problem.w_tau, problem.w_s)
        return r, float(r @ r)

    r, cost = cost_of(pfree, Q)
    trace = [cost]
    lm = 1e-4
    non_ident: list[str] = []
    active = list(range(len(names)))
    jtj_diag_p = np.zeros(len(names))
    it = 0
    for it in range(1, max_iter + 1):
        P = apply_free(base, names, pfree)
        pvec = P.pack()
        Jp = _param_jacobian_cols(pfree, names, base, Q, run, sw_tau, sw_s)
        Jq = _state_jacobian(pvec, Q, run, sw_tau, sw_s)

        if it == 1:
            # identifiability screen: parameter columns that do not move the
            # residual at all (e.g. contact parameters with no contact in the
            # data) are frozen rather than "fitted"
            scale = max(1.0, float(np.linalg.norm(r)))
            colnorms = np.linalg.norm(Jp, axis=0)
            active = [j for j in range(len(names)) if colnorms[j] > IDENT_TOL * scale]
            non_ident = [names[j] for j in range(len(names)) if j not in active]
            if verbose and non_ident:
                print(f"non-identifiable parameters frozen: {non_ident}")
            if not active and verbose:
                print("warning: no identifiable free parameters")

        Jpa = Jp[:, active]
        ka = len(active)
        nq = Q.size
        # dense normal equations of the bordered system [Jpa | Jq]
        A = np.empty((ka + nq, ka + nq))
        A[:ka, :ka] = Jpa.T @ Jpa
        JqT_Jpa = Jq.T @ Jpa
        A[ka:, :ka] = JqT_Jpa
        A[:ka, ka:] = JqT_Jpa.T
        A[ka:, ka:] = (Jq.T @ Jq).toarray()
        rhs = np.concatenate([Jpa.T @ r, Jq.T @ r])
        dscale = np.maximum(np.diag(A), 1e-12)
        jtj_diag_p[:] = 0.0
        for idx, j in enumerate(active):
            jtj_diag_p[j] = A[idx, idx]

        accepted = False
        for _attempt in range(12):
            M = A.copy()
            M.flat[:: ka + nq + 1] += lm * dscale
            try:
                cf = cho_factor(M, lower=True, overwrite_a=True)
                dx = cho_solve(cf, -rhs)
            except Exception:
                # singular even after damping: raise damping and retry
                lm *= 10.0
                continue
            p_try = pfree.copy()
            for idx, j in enumerate(active):
                p_try[j] = pfree[j] + dx[idx]
            Q_try = Q + dx[ka:].reshape(Q.shape)
            try:
                r_try, cost_try = cost_of(p_try, Q_try)
            except NonFiniteResidual:
                lm *= 10.0
                continue
            if cost_try < cost:
                step_norm = float(np.linalg.norm(dx))
                rel_drop = (cost - cost_try) / max(cost, 1e-300)
                pfree, Q, r, cost = p_try, Q_try, r_try, cost_try
                trace.append(cost)
                lm = max(lm / 3.0, 1e-12)
                accepted = True
                if verbose:
                    print(f"iter {it}: cost {cost:.6e} lm {lm:.1e} step {step_norm:.3e}")
                break
            lm *= 10.0
        if not accepted:
            break
        if rel_drop < cost_tol or step_norm < step_tol:
            break

    m = (run.n - 2) * BLOCK_DIM
    dof = max(m - (len(active) + Q.size), 1)
    sigma2 = cost / dof
    conf = {}
    for j, nm in enumerate(names):
        if nm in non_ident or jtj_diag_p[j] <= 0:
            conf[nm] = float("inf")
        else:
            conf[nm] = float(math.sqrt(sigma2 / jtj_diag_p[j]))
    return SysIdResult(
        params=apply_free(base, names, pfree),
        Q=Q,
        cost=cost,
        iterations=it,
        cost_trace=trace,
        free=names,
        fitted={nm: float(v) for nm, v in zip(names, pfree)},
        non_identifiable=tuple(non_ident),
        confidence=conf,
    )


def write_fit_report(res: SysIdResult, problem: SysIdProblem, run: RecordedRun, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("system identification fit report\n")
        fh.write(f"samples: {run.n}  dt: {run.dt}  residuals: {(run.n - 2) * BLOCK_DIM}\n")
        fh.write(f"weights: w_tau={problem.w_tau} w_s={problem.w_s}\n")
        fh.write(f"iterations: {res.iterations}\n")
        fh.write(f"final cost: {res.cost:.6e}\n\n")
        fh.write("parameter        initial        fitted         confidence(~1sigma)\n")
        for nm in res.free:
            init = getattr(problem.p0, nm)
            flag = "  [NON-IDENTIFIABLE]" if nm in res.non_identifiable else ""
            fh.write(f"{nm:<16s} {init:<14.6g} {res.fitted[nm]:<14.6g} {res.confidence[nm]:.3g}{flag}\n")
        fh.write("\ncost trace:\n")
        for i, c in enumerate(res.cost_trace):
            fh.write(f"  {i:4d}  {c:.6e}\n")


def scripted_torques(n: int, dt: float, amp: float = 0.18, bias: float = 0.10) -> np.ndarray:
    """Pushing excitation: biased sinusoids that make and break contact."""
    t = np.arange(n) * dt
    tau = np.empty((n, 6))
    for f in range(3):
        ph = 2.0 * np.pi * f / 3.0
        tau[:, 2 * f] = bias * np.sin(2.0 * np.pi * 0.7 * t + ph) + amp * np.sin(2.0 * np.pi * 1.3 * t + 1.7 * ph)
        tau[:, 2 * f + 1] = -bias + amp * np.sin(2.0 * np.pi * 1.1 * t + 0.9 * ph + 0.5)
    return tau


def make_proxy_run(
    hidden: ModelParams,
    duration: float = 2.0,
    dt: float = 0.002,
    noise_std: float = 0.0,
    seed: int = 0,
    torques: np.ndarray | None = None,
) -> RecordedRun:
    """Record a pushing run from the hidden-parameter proxy simulator.

    Samples at the integration rate so the inverse dynamics invert the
    recording exactly; dt must satisfy the simulator's stability contract.
    """
    from .sim import home_state

    n = int(round(duration / dt)) + 1
    if torques is None:
        torques = scripted_torques(n, dt)
    pvec = hidden.pack()
    svec = home_state(hidden).to_vector()
    sensors = np.empty((n, CONF_DIM))
    for i in range(n):
        sensors[i, 0:6] = svec[0:6]
        sensors[i, 6:8] = svec[12:14]
        if i < n - 1:
            svec, ok = kernel.substeps(svec, torques[i], pvec, dt, 1)
            if not ok:
                raise NonFiniteResidual("proxy run blew up; reduce torque amplitude or dt")
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        sensors = sensors + noise_std * rng.standard_normal(sensors.shape)
    return RecordedRun(torques=torques, sensors=sensors, dt=dt)
