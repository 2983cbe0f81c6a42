# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled simulation kernels.

Line-for-line mirror of _kernel_py (the pure-Python reference).  Both
backends must return bit-identical results; the build disables FMA
contraction to keep the arithmetic order observable.  Any change here
must be made in _kernel_py as well.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, tanh, exp, fabs, isfinite

cnp.import_array()

BACKEND_NAME = "cython"

STATE_SIZE = 17
NQ = 6
OBS_SIZE = 16
ACT_SIZE = 6

FRICTION_EPS = 1.0e-3
SLIP_EPS = 1.0e-3

cdef double _FRICTION_EPS = 1.0e-3
cdef double _SLIP_EPS = 1.0e-3
cdef double _NEG_HALF_LOG_2PI = -0.9189385332046727


cdef inline void _finger_geometry(double* s, double* p, int f, double* out) noexcept nogil:
    # out: ex, ey, j11, j12, j21, j22
    cdef int o = 9 + 7 * f
    cdef double bx = p[o]
    cdef double by = p[o + 1]
    cdef double bth = p[o + 2]
    cdef double l1 = p[o + 3]
    cdef double l2 = p[o + 4]
    cdef double q1 = s[2 * f]
    cdef double q2 = s[2 * f + 1]
    cdef double a1 = bth + q1
    cdef double a2 = a1 + q2
    cdef double c1 = cos(a1)
    cdef double s1 = sin(a1)
    cdef double c2 = cos(a2)
    cdef double s2 = sin(a2)
    out[0] = bx + l1 * c1 + l2 * c2
    out[1] = by + l1 * s1 + l2 * s2
    out[2] = -l1 * s1 - l2 * s2
    out[3] = -l2 * s2
    out[4] = l1 * c1 + l2 * c2
    out[5] = l2 * c2


cdef void _forces(double* s, double* p, double* tc, double* sf, double* rows) noexcept nogil:
    # tc: 6 joint torques, sf: (sfx, sfy), rows: 3*8 contact table (may be NULL-free: always filled)
    cdef double k = p[4]
    cdef double cdamp = p[5]
    cdef double mu = p[6]
    cdef double rtip = p[7]
    cdef double robj = p[1]
    cdef double opx = s[12]
    cdef double opy = s[13]
    cdef double ovx = s[14]
    cdef double ovy = s[15]
    cdef double g[6]
    cdef double dx, dy, d, pen, nx, ny, qd1, qd2, tvx, tvy, rvx, rvy
    cdef double vn, appr, fn, tx, ty, vt, avt, sc, ftm, ft, fx, fy
    cdef int f, i
    for i in range(6):
        tc[i] = 0.0
    sf[0] = 0.0
    sf[1] = 0.0
    for f in range(3):
        _finger_geometry(s, p, f, g)
        dx = opx - g[0]
        dy = opy - g[1]
        d = sqrt(dx * dx + dy * dy)
        pen = rtip + robj - d
        if pen > 0.0 and d > 1e-12:
            nx = dx / d
            ny = dy / d
            qd1 = s[6 + 2 * f]
            qd2 = s[6 + 2 * f + 1]
            tvx = g[2] * qd1 + g[3] * qd2
            tvy = g[4] * qd1 + g[5] * qd2
            rvx = ovx - tvx
            rvy = ovy - tvy
            vn = rvx * nx + rvy * ny
            appr = -vn
            if appr > 0.0:
                fn = k * pen + cdamp * appr
            else:
                fn = k * pen + 0.0
            if fn < 0.0:
                fn = 0.0
            tx = -ny
            ty = nx
            vt = rvx * tx + rvy * ty
            avt = fabs(vt)
            sc = avt / _SLIP_EPS
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
            sf[0] += fx
            sf[1] += fy
            tc[2 * f] += g[2] * (-fx) + g[4] * (-fy)
            tc[2 * f + 1] += g[3] * (-fx) + g[5] * (-fy)
            rows[8 * f + 0] = 1.0
            rows[8 * f + 1] = g[0]
            rows[8 * f + 2] = g[1]
            rows[8 * f + 3] = nx
            rows[8 * f + 4] = ny
            rows[8 * f + 5] = fn
            rows[8 * f + 6] = ft
            rows[8 * f + 7] = pen
        else:
            rows[8 * f + 0] = 0.0
            rows[8 * f + 1] = g[0]
            rows[8 * f + 2] = g[1]
            rows[8 * f + 3] = 0.0
            rows[8 * f + 4] = 0.0
            rows[8 * f + 5] = 0.0
            rows[8 * f + 6] = 0.0
            rows[8 * f + 7] = pen


cdef inline double _ground_coul(double vx, double vy, double decel) noexcept nogil:
    cdef double v = sqrt(vx * vx + vy * vy)
    if v > 1e-12:
        return decel * tanh(v / _FRICTION_EPS) / v
    return 0.0


cdef bint _substep_inplace(double* s, double* tau, double* p, double dt) noexcept nogil:
    cdef double m = p[0]
    cdef double decel = p[2]
    cdef double visc = p[3]
    cdef double bj = p[8]
    cdef double tc[6]
    cdef double sf[2]
    cdef double rows[24]
    cdef double coul, ax, ay, qdd1, qdd2, i1, i2
    cdef int f, o, i

    _forces(s, p, tc, sf, rows)

    coul = _ground_coul(s[14], s[15], decel)
    ax = sf[0] / m - coul * s[14] - visc * s[14]
    ay = sf[1] / m - coul * s[15] - visc * s[15]

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

    for i in range(17):
        if not isfinite(s[i]):
            return False
    return True


def substeps(svec, torques, pvec, double dt, int n):
    """Advance n substeps under constant torque. Returns (state, ok)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.ascontiguousarray(svec, dtype=np.float64).copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tau = np.ascontiguousarray(torques, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(pvec, dtype=np.float64)
    cdef double* sp = <double*> out.data
    cdef double* tp = <double*> tau.data
    cdef double* pp = <double*> p.data
    cdef bint ok = True
    cdef int i
    for i in range(n):
        if not _substep_inplace(sp, tp, pp, dt):
            ok = False
            break
    return out, bool(ok)


def fk_tips(q, pvec):
    """Fingertip positions (3, 2) for joint angles q."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] qa = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(pvec, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((3, 2), dtype=np.float64)
    cdef double s[17]
    cdef double g[6]
    cdef int i, f
    for i in range(17):
        s[i] = 0.0
    for i in range(6):
        s[i] = qa[i]
    cdef double* pp = <double*> p.data
    for f in range(3):
        _finger_geometry(s, pp, f, g)
        out[f, 0] = g[0]
        out[f, 1] = g[1]
    return out


def contact_table(svec, pvec):
    """Per-finger contact rows [active, px, py, nx, ny, fn, ft, pen]."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sa = np.ascontiguousarray(svec, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(pvec, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((3, 8), dtype=np.float64)
    cdef double tc[6]
    cdef double sf[2]
    cdef double rows[24]
    cdef int f, j
    _forces(<double*> sa.data, <double*> p.data, tc, sf, rows)
    for f in range(3):
        for j in range(8):
            out[f, j] = rows[8 * f + j]
    return out


def inverse_dynamics(conf_prev, conf_cur, conf_next, pvec, double dt):
    """Generalized applied forces reproducing a configuration triple."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cm = np.ascontiguousarray(conf_prev, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cc = np.ascontiguousarray(conf_cur, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cp = np.ascontiguousarray(conf_next, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(pvec, dtype=np.float64)
    cdef double vel[8]
    cdef double acc[8]
    cdef double s[17]
    cdef double tc[6]
    cdef double sf[2]
    cdef double rows[24]
    cdef int i, f, o
    for i in range(8):
        vel[i] = (cc[i] - cm[i]) / dt
        acc[i] = ((cp[i] - cc[i]) - (cc[i] - cm[i])) / dt / dt
    for i in range(17):
        s[i] = 0.0
    for i in range(6):
        s[i] = cc[i]
        s[6 + i] = vel[i]
    s[12] = cc[6]
    s[13] = cc[7]
    s[14] = vel[6]
    s[15] = vel[7]
    cdef double* pp = <double*> p.data
    _forces(s, pp, tc, sf, rows)
    cdef double m = pp[0]
    cdef double decel = pp[2]
    cdef double visc = pp[3]
    cdef double bj = pp[8]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tau_hat = np.empty(6, dtype=np.float64)
    cdef double i1, i2
    for f in range(3):
        o = 9 + 7 * f
        i1 = pp[o + 5]
        i2 = pp[o + 6]
        tau_hat[2 * f] = i1 * acc[2 * f] + bj * vel[2 * f] - tc[2 * f]
        tau_hat[2 * f + 1] = i2 * acc[2 * f + 1] + bj * vel[2 * f + 1] - tc[2 * f + 1]
    cdef double coul = _ground_coul(vel[6], vel[7], decel)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fobj = np.empty(2, dtype=np.float64)
    fobj[0] = m * (acc[6] + coul * vel[6] + visc * vel[6]) - sf[0]
    fobj[1] = m * (acc[7] + coul * vel[7] + visc * vel[7]) - sf[1]
    return tau_hat, fobj


def affine_mean(W, b, wmean, wstd, obs):
    """mu = W @ ((obs - wmean) / wstd) + b with a fixed summation order."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Wa = np.ascontiguousarray(W, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ba = np.ascontiguousarray(b, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wm = np.ascontiguousarray(wmean, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ws = np.ascontiguousarray(wstd, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ob = np.ascontiguousarray(obs, dtype=np.float64)
    cdef int na = Wa.shape[0]
    cdef int no = Wa.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.empty(no, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.empty(na, dtype=np.float64)
    cdef int j, kk
    cdef double acc
    for j in range(no):
        x[j] = (ob[j] - wm[j]) / ws[j]
    for kk in range(na):
        acc = 0.0
        for j in range(no):
            acc += Wa[kk, j] * x[j]
        mu[kk] = acc + ba[kk]
    return mu


def gaussian_logp(mu, log_std, action):
    """Diagonal Gaussian log-density, summed left to right."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m = np.ascontiguousarray(mu, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ls = np.ascontiguousarray(log_std, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ascontiguousarray(action, dtype=np.float64)
    cdef double lp = 0.0
    cdef double sd, z
    cdef int kk
    for kk in range(m.shape[0]):
        sd = exp(ls[kk])
        z = (a[kk] - m[kk]) / sd
        lp += -0.5 * z * z - ls[kk] + _NEG_HALF_LOG_2PI
    return lp


cdef double _reward(double* s, double gx, double gy, double* a, double* p) noexcept nogil:
    cdef double dogx = s[12] - gx
    cdef double dogy = s[13] - gy
    cdef double r = 1.0 - 3.0 * sqrt(dogx * dogx + dogy * dogy)
    cdef double g[6]
    cdef double dx, dy, cost
    cdef int f, kk
    for f in range(3):
        _finger_geometry(s, p, f, g)
        dx = g[0] - s[12]
        dy = g[1] - s[13]
        r -= sqrt(dx * dx + dy * dy)
    cost = 0.0
    for kk in range(6):
        cost += a[kk] * a[kk]
    r -= 0.1 * cost
    return r


def reward_fn(svec, double gx, double gy, action, pvec):
    """Reward of the state in svec given goal (gx, gy) and raw action."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sa = np.ascontiguousarray(svec, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] aa = np.ascontiguousarray(action, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(pvec, dtype=np.float64)
    return _reward(<double*> sa.data, gx, gy, <double*> aa.data, <double*> p.data)


def rollout(svec0, pvec, W, b, log_std, wmean, wstd, noise, goals, double torque_limit, double dt, int nsub):
    """Full control-rate rollout of the affine Gaussian policy.

    Mirrors _kernel_py.rollout; see there for semantics.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s0 = np.ascontiguousarray(svec0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(pvec, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Wa = np.ascontiguousarray(W, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ba = np.ascontiguousarray(b, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ls = np.ascontiguousarray(log_std, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wm = np.ascontiguousarray(wmean, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ws = np.ascontiguousarray(wstd, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nz = np.ascontiguousarray(noise, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gl = np.ascontiguousarray(goals, dtype=np.float64)

    cdef int T = nz.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] obs = np.zeros((T + 1, 16), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] actions = np.zeros((T, 6), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rewards = np.zeros(T, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logps = np.zeros(T, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] states = np.zeros((T + 1, 17), dtype=np.float64)

    cdef double s[17]
    cdef double sig[6]
    cdef double x[16]
    cdef double a[6]
    cdef double u[6]
    cdef double gx, gy, ngx, ngy, acc, mu, ak, z, lp, uk
    cdef double lim = torque_limit
    cdef double* pp = <double*> p.data
    cdef bint ok = True
    cdef bint good
    cdef int t, i, j, kk, steps

    for i in range(17):
        s[i] = s0[i]
    for kk in range(6):
        sig[kk] = exp(ls[kk])

    steps = 0
    for t in range(T):
        gx = gl[t, 0]
        gy = gl[t, 1]
        for i in range(17):
            states[t, i] = s[i]
        for i in range(12):
            obs[t, i] = s[i]
        obs[t, 12] = s[12]
        obs[t, 13] = s[13]
        obs[t, 14] = gx
        obs[t, 15] = gy

        for j in range(16):
            x[j] = (obs[t, j] - wm[j]) / ws[j]
        lp = 0.0
        for kk in range(6):
            acc = 0.0
            for j in range(16):
                acc += Wa[kk, j] * x[j]
            mu = acc + ba[kk]
            ak = mu + sig[kk] * nz[t, kk]
            z = (ak - mu) / sig[kk]
            lp += -0.5 * z * z - ls[kk] + _NEG_HALF_LOG_2PI
            a[kk] = ak
            uk = ak
            if uk > lim:
                uk = lim
            elif uk < -lim:
                uk = -lim
            u[kk] = uk

        good = True
        for i in range(nsub):
            if not _substep_inplace(s, u, pp, dt):
                good = False
                break
        if not good:
            ok = False
            break

        ngx = gl[t + 1, 0]
        ngy = gl[t + 1, 1]
        for kk in range(6):
            actions[t, kk] = a[kk]
        rewards[t] = _reward(s, ngx, ngy, a, pp)
        logps[t] = lp
        steps = t + 1

    if ok:
        for i in range(17):
            states[steps, i] = s[i]
        for i in range(12):
            obs[steps, i] = s[i]
        obs[steps, 12] = s[12]
        obs[steps, 13] = s[13]
        obs[steps, 14] = gl[steps, 0]
        obs[steps, 15] = gl[steps, 1]
    return obs, actions, rewards, logps, states, steps, bool(ok)
