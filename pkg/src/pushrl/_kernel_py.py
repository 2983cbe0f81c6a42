"""Pure-Python simulation kernels (reference implementation).

The compiled extension (_speedups) mirrors this file operation for
operation; both must produce bit-identical results, so every arithmetic
expression is written in a fixed evaluation order and FMA contraction is
disabled in the extension build.  Keep the two files in sync.

State vector layout (17 doubles):
    [0:6]   q      joint angles, fingers interleaved (f0j1 f0j2 f1j1 ...)
    [6:12]  qdot
    [12:14] object position
    [14:16] object velocity
    [16]    time

Parameter vector layout: see model.ModelParams.pack().
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

STATE_SIZE = 17
NQ = 6
OBS_SIZE = 16
ACT_SIZE = 6

# Velocity scale of the tanh-smoothed ground Coulomb friction (m/s).
FRICTION_EPS = 1.0e-3
# Velocity scale of the regularized contact tangential friction (m/s).
SLIP_EPS = 1.0e-3

_NEG_HALF_LOG_2PI = -0.9189385332046727


def _finger_geometry(s, p, f):
    """Tip position and Jacobian of finger f at joint state s."""
    o = 9 + 7 * f
    bx = p[o]
    by = p[o + 1]
    bth = p[o + 2]
    l1 = p[o + 3]
    l2 = p[o + 4]
    q1 = s[2 * f]
    q2 = s[2 * f + 1]
    a1 = bth + q1
    a2 = a1 + q2
    c1 = math.cos(a1)
    s1 = math.sin(a1)
    c2 = math.cos(a2)
    s2 = math.sin(a2)
    ex = bx + l1 * c1 + l2 * c2
    ey = by + l1 * s1 + l2 * s2
    j11 = -l1 * s1 - l2 * s2
    j12 = -l2 * s2
    j21 = l1 * c1 + l2 * c2
    j22 = l2 * c2
    return ex, ey, j11, j12, j21, j22


def _forces(s, p):
    """Contact joint torques and net contact force on the object.

    Returns (tc[6], sfx, sfy, rows) where rows is the per-finger contact
    table [active, px, py, nx, ny, fn, ft, pen].
    """
    k = p[4]
    cdamp = p[5]
    mu = p[6]
    rtip = p[7]
    robj = p[1]
    opx = s[12]
    opy = s[13]
    ovx = s[14]
    ovy = s[15]
    tc = [0.0] * NQ
    sfx = 0.0
    sfy = 0.0
    rows = []
    for f in range(3):
        ex, ey, j11, j12, j21, j22 = _finger_geometry(s, p, f)
        dx = opx - ex
        dy = opy - ey
        d = math.sqrt(dx * dx + dy * dy)
        pen = rtip + robj - d
        if pen > 0.0 and d > 1e-12:
            nx = dx / d
            ny = dy / d
            qd1 = s[6 + 2 * f]
            qd2 = s[6 + 2 * f + 1]
            tvx = j11 * qd1 + j12 * qd2
            tvy = j21 * qd1 + j22 * qd2
            rvx = ovx - tvx
            rvy = ovy - tvy
            vn = rvx * nx + rvy * ny
            appr = -vn
            fn = k * pen + (cdamp * appr if appr > 0.0 else 0.0)
            if fn < 0.0:
                fn = 0.0
            tx = -ny
            ty = nx
            vt = rvx * tx + rvy * ty
            avt = abs(vt)
            sc = avt / SLIP_EPS
            if sc > 1.0:
                sc = 1.0
            ftm = mu * fn * sc
            if vt > 0.0:
                ft = -ftm
            elif vt < 0.0:
                ft = ftm
            else:
                ft = 0.0
            fx = fn * nx + ft * tx
            fy = fn * ny + ft * ty
            sfx += fx
            sfy += fy
            tc[2 * f] += j11 * (-fx) + j21 * (-fy)
            tc[2 * f + 1] += j12 * (-fx) + j22 * (-fy)
            rows.append((1.0, ex, ey, nx, ny, fn, ft, pen))
        else:
            rows.append((0.0, ex, ey, 0.0, 0.0, 0.0, 0.0, pen))
    return tc, sfx, sfy, rows


def _ground_coul(vx, vy, decel):
    v = math.sqrt(vx * vx + vy * vy)
    if v > 1e-12:
        return decel * math.tanh(v / FRICTION_EPS) / v
    return 0.0


def _substep_inplace(s, tau, p, dt):
    """One semi-implicit Euler substep; mutates s. Returns False on blow-up."""
    m = p[0]
    decel = p[2]
    visc = p[3]
    bj = p[8]

    tc, sfx, sfy, _rows = _forces(s, p)

    coul = _ground_coul(s[14], s[15], decel)
    ax = sfx / m - coul * s[14] - visc * s[14]
    ay = sfy / m - coul * s[15] - visc * s[15]

    for f in range(3):
        o = 9 + 7 * f
        i1 = p[o + 5]
        i2 = p[o + 6]
        qdd1 = (tau[2 * f] - bj * s[6 + 2 * f] + tc[2 * f]) / i1
        qdd2 = (tau[2 * f + 1] - bj * s[6 + 2 * f + 1] + tc[2 * f + 1]) / i2
        s[6 + 2 * f] = s[6 + 2 * f] + dt * qdd1
        s[6 + 2 * f + 1] = s[6 + 2 * f + 1] + dt * qdd2
        s[2 * f] = s[2 * f] + dt * s[6 + 2 * f]
        s[2 * f + 1] = s[2 * f + 1] + dt * s[6 + 2 * f + 1]

    s[14] = s[14] + dt * ax
    s[15] = s[15] + dt * ay
    s[12] = s[12] + dt * s[14]
    s[13] = s[13] + dt * s[15]
    s[16] = s[16] + dt

    for i in range(STATE_SIZE):
        if not math.isfinite(s[i]):
            return False
    return True


def substeps(svec, torques, pvec, dt, n):
    """Advance n substeps under constant torque. Returns (state, ok)."""
    s = [float(x) for x in svec]
    tau = [float(x) for x in torques]
    p = [float(x) for x in pvec]
    ok = True
    for _ in range(n):
        if not _substep_inplace(s, tau, p, dt):
            ok = False
            break
    return np.asarray(s, dtype=np.float64), ok


def fk_tips(q, pvec):
    """Fingertip positions (3, 2) for joint angles q."""
    s = [0.0] * STATE_SIZE
    for i in range(NQ):
        s[i] = float(q[i])
    p = [float(x) for x in pvec]
    out = np.empty((3, 2), dtype=np.float64)
    for f in range(3):
        ex, ey, *_ = _finger_geometry(s, p, f)
        out[f, 0] = ex
        out[f, 1] = ey
    return out


def contact_table(svec, pvec):
    """Per-finger contact rows [active, px, py, nx, ny, fn, ft, pen]."""
    s = [float(x) for x in svec]
    p = [float(x) for x in pvec]
    _tc, _sfx, _sfy, rows = _forces(s, p)
    return np.asarray(rows, dtype=np.float64)


def inverse_dynamics(conf_prev, conf_cur, conf_next, pvec, dt):
    """Generalized applied forces reproducing a configuration triple.

    conf_* are 8-vectors [q(6), object(2)].  Velocities are backward
    differences, accelerations second differences, exactly inverting the
    semi-implicit integrator.  Returns (tau_hat(6), obj_force(2)).
    """
    p = [float(x) for x in pvec]
    cm = [float(x) for x in conf_prev]
    cc = [float(x) for x in conf_cur]
    cp = [float(x) for x in conf_next]
    vel = [0.0] * 8
    acc = [0.0] * 8
    for i in range(8):
        vel[i] = (cc[i] - cm[i]) / dt
        acc[i] = ((cp[i] - cc[i]) - (cc[i] - cm[i])) / dt / dt

    s = [0.0] * STATE_SIZE
    for i in range(NQ):
        s[i] = cc[i]
        s[6 + i] = vel[i]
    s[12] = cc[6]
    s[13] = cc[7]
    s[14] = vel[6]
    s[15] = vel[7]

    tc, sfx, sfy, _rows = _forces(s, p)

    m = p[0]
    decel = p[2]
    visc = p[3]
    bj = p[8]
    tau_hat = np.empty(NQ, dtype=np.float64)
    for f in range(3):
        o = 9 + 7 * f
        i1 = p[o + 5]
        i2 = p[o + 6]
        tau_hat[2 * f] = i1 * acc[2 * f] + bj * vel[2 * f] - tc[2 * f]
        tau_hat[2 * f + 1] = i2 * acc[2 * f + 1] + bj * vel[2 * f + 1] - tc[2 * f + 1]

    coul = _ground_coul(vel[6], vel[7], decel)
    fobj = np.empty(2, dtype=np.float64)
    fobj[0] = m * (acc[6] + coul * vel[6] + visc * vel[6]) - sfx
    fobj[1] = m * (acc[7] + coul * vel[7] + visc * vel[7]) - sfy
    return tau_hat, fobj


def affine_mean(W, b, wmean, wstd, obs):
    """mu = W @ ((obs - wmean) / wstd) + b with a fixed summation order."""
    na, no = W.shape
    x = [0.0] * no
    for j in range(no):
        x[j] = (float(obs[j]) - float(wmean[j])) / float(wstd[j])
    mu = np.empty(na, dtype=np.float64)
    for kk in range(na):
        acc = 0.0
        for j in range(no):
            acc += float(W[kk, j]) * x[j]
        mu[kk] = acc + float(b[kk])
    return mu


def gaussian_logp(mu, log_std, action):
    """Diagonal Gaussian log-density, summed left to right."""
    lp = 0.0
    for kk in range(len(mu)):
        sd = math.exp(float(log_std[kk]))
        z = (float(action[kk]) - float(mu[kk])) / sd
        lp += -0.5 * z * z - float(log_std[kk]) + _NEG_HALF_LOG_2PI
    return lp


def _reward(s, gx, gy, a, p):
    dogx = s[12] - gx
    dogy = s[13] - gy
    r = 1.0 - 3.0 * math.sqrt(dogx * dogx + dogy * dogy)
    for f in range(3):
        ex, ey, *_ = _finger_geometry(s, p, f)
        dx = ex - s[12]
        dy = ey - s[13]
        r -= math.sqrt(dx * dx + dy * dy)
    cost = 0.0
    for kk in range(ACT_SIZE):
        cost += a[kk] * a[kk]
    r -= 0.1 * cost
    return r


def reward_fn(svec, gx, gy, action, pvec):
    """Reward of the state in svec given goal (gx, gy) and raw action."""
    s = [float(x) for x in svec]
    p = [float(x) for x in pvec]
    a = [float(x) for x in action]
    return _reward(s, float(gx), float(gy), a, p)


def rollout(svec0, pvec, W, b, log_std, wmean, wstd, noise, goals, torque_limit, dt, nsub):
    """Full control-rate rollout of the affine Gaussian policy.

    noise: (T, 6) standard-normal draws; goals: (T+1, 2).  Rewards are
    evaluated on the post-transition state with that step's raw action.
    Returns (obs(T+1,16), actions(T,6), rewards(T), logps(T),
    states(T+1,17), steps_done, ok); on blow-up the failing step is
    discarded and steps_done < T.
    """
    T = noise.shape[0]
    obs = np.zeros((T + 1, OBS_SIZE), dtype=np.float64)
    actions = np.zeros((T, ACT_SIZE), dtype=np.float64)
    rewards = np.zeros(T, dtype=np.float64)
    logps = np.zeros(T, dtype=np.float64)
    states = np.zeros((T + 1, STATE_SIZE), dtype=np.float64)

    s = [float(x) for x in svec0]
    p = [float(x) for x in pvec]
    Wl = [[float(W[i, j]) for j in range(OBS_SIZE)] for i in range(ACT_SIZE)]
    bl = [float(x) for x in b]
    lsl = [float(x) for x in log_std]
    wml = [float(x) for x in wmean]
    wsl = [float(x) for x in wstd]
    sig = [math.exp(v) for v in lsl]
    lim = float(torque_limit)

    ok = True
    steps = 0
    for t in range(T):
        gx = float(goals[t, 0])
        gy = float(goals[t, 1])
        for i in range(STATE_SIZE):
            states[t, i] = s[i]
        for i in range(12):
            obs[t, i] = s[i]
        obs[t, 12] = s[12]
        obs[t, 13] = s[13]
        obs[t, 14] = gx
        obs[t, 15] = gy

        x = [0.0] * OBS_SIZE
        for j in range(OBS_SIZE):
            x[j] = (obs[t, j] - wml[j]) / wsl[j]
        a = [0.0] * ACT_SIZE
        u = [0.0] * ACT_SIZE
        lp = 0.0
        for kk in range(ACT_SIZE):
            acc = 0.0
            for j in range(OBS_SIZE):
                acc += Wl[kk][j] * x[j]
            mu = acc + bl[kk]
            ak = mu + sig[kk] * float(noise[t, kk])
            z = (ak - mu) / sig[kk]
            lp += -0.5 * z * z - lsl[kk] + _NEG_HALF_LOG_2PI
            a[kk] = ak
            uk = ak
            if uk > lim:
                uk = lim
            elif uk < -lim:
                uk = -lim
            u[kk] = uk

        good = True
        for _ in range(nsub):
            if not _substep_inplace(s, u, p, dt):
                good = False
                break
        if not good:
            ok = False
            break

        ngx = float(goals[t + 1, 0])
        ngy = float(goals[t + 1, 1])
        for kk in range(ACT_SIZE):
            actions[t, kk] = a[kk]
        rewards[t] = _reward(s, ngx, ngy, a, p)
        logps[t] = lp
        steps = t + 1

    if ok:
        # On blow-up rows [steps] were already written with the last valid state.
        for i in range(STATE_SIZE):
            states[steps, i] = s[i]
        for i in range(12):
            obs[steps, i] = s[i]
        obs[steps, 12] = s[12]
        obs[steps, 13] = s[13]
        obs[steps, 14] = float(goals[steps, 0])
        obs[steps, 15] = float(goals[steps, 1])
    return obs, actions, rewards, logps, states, steps, ok
