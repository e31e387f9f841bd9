"""Inner loops of the equilibrium solver.

The 12-dimensional PMP system is ``y = (d1, v1, d2, v2, lam1[4], lam2[4])``
with costates ordered like the joint state. Kernel parameters are packed as::

    p = [b, gamma, u_min, u_max, lo_own1, lo_own2, lo_aggressive, hi]

where ``lo_own*`` are the lower edges of each player's own collision interval
(type dependent), ``lo_aggressive`` the lower edge for ``theta = 1``, and
``hi`` the shared upper edge.
"""
import math

import numpy as np

from ._jit import optional_njit

NY = 12


@optional_njit(cache=True)
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@optional_njit(cache=True)
def soft_box(d, lo, hi, gamma):
    """Logistic box and its first two derivatives in ``d``."""
    a = _sig(gamma * (d - lo))
    c = _sig(gamma * (hi - d))
    da = gamma * a * (1.0 - a)
    dc = -gamma * c * (1.0 - c)
    dda = gamma * gamma * a * (1.0 - a) * (1.0 - 2.0 * a)
    ddc = gamma * gamma * c * (1.0 - c) * (1.0 - 2.0 * c)
    return a * c, da * c + a * dc, dda * c + 2.0 * da * dc + a * ddc


@optional_njit(cache=True)
def _clip(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@optional_njit(cache=True)
def pmp_rhs(y, p, out):
    b, gam, umin, umax = p[0], p[1], p[2], p[3]
    lo1, lo2, loa, hi = p[4], p[5], p[6], p[7]
    d1, d2 = y[0], y[2]
    s1o, ds1o, _ = soft_box(d1, lo1, hi, gam)  # player 1, own type
    s2a, ds2a, _ = soft_box(d2, loa, hi, gam)  # player 2 seen as aggressive
    s2o, ds2o, _ = soft_box(d2, lo2, hi, gam)
    s1a, ds1a, _ = soft_box(d1, loa, hi, gam)
    out[0] = y[1]
    out[1] = _clip(0.5 * y[5], umin, umax)
    out[2] = y[3]
    out[3] = _clip(0.5 * y[11], umin, umax)
    out[4] = b * ds1o * s2a
    out[5] = -y[4]
    out[6] = b * s1o * ds2a
    out[7] = -y[6]
    out[8] = b * s2o * ds1a
    out[9] = -y[8]
    out[10] = b * ds2o * s1a
    out[11] = -y[10]


@optional_njit(cache=True)
def pmp_jac(y, p, J):
    b, gam, umin, umax = p[0], p[1], p[2], p[3]
    lo1, lo2, loa, hi = p[4], p[5], p[6], p[7]
    d1, d2 = y[0], y[2]
    s1o, ds1o, dds1o = soft_box(d1, lo1, hi, gam)
    s2a, ds2a, dds2a = soft_box(d2, loa, hi, gam)
    s2o, ds2o, dds2o = soft_box(d2, lo2, hi, gam)
    s1a, ds1a, dds1a = soft_box(d1, loa, hi, gam)
    J[:, :] = 0.0
    J[0, 1] = 1.0
    J[2, 3] = 1.0
    # clamp derivative is zero on the saturated side; the kink takes the interior value
    if umin < 0.5 * y[5] < umax:
        J[1, 5] = 0.5
    if umin < 0.5 * y[11] < umax:
        J[3, 11] = 0.5
    J[4, 0] = b * dds1o * s2a
    J[4, 2] = b * ds1o * ds2a
    J[5, 4] = -1.0
    J[6, 0] = b * ds1o * ds2a
    J[6, 2] = b * s1o * dds2a
    J[7, 6] = -1.0
    J[8, 0] = b * s2o * dds1a
    J[8, 2] = b * ds2o * ds1a
    J[9, 8] = -1.0
    J[10, 0] = b * ds2o * ds1a
    J[10, 2] = b * dds2o * s1a
    J[11, 10] = -1.0


@optional_njit(cache=True)
def pmp_jac_apply(y, p, M, out):
    """``out = J(y) @ M`` using the sparsity of the PMP Jacobian."""
    b, gam, umin, umax = p[0], p[1], p[2], p[3]
    lo1, lo2, loa, hi = p[4], p[5], p[6], p[7]
    d1, d2 = y[0], y[2]
    s1o, ds1o, dds1o = soft_box(d1, lo1, hi, gam)
    s2a, ds2a, dds2a = soft_box(d2, loa, hi, gam)
    s2o, ds2o, dds2o = soft_box(d2, lo2, hi, gam)
    s1a, ds1a, dds1a = soft_box(d1, loa, hi, gam)
    g1 = 0.5 if umin < 0.5 * y[5] < umax else 0.0
    g2 = 0.5 if umin < 0.5 * y[11] < umax else 0.0
    a40 = b * dds1o * s2a
    a42 = b * ds1o * ds2a
    a62 = b * s1o * dds2a
    a80 = b * s2o * dds1a
    a82 = b * ds2o * ds1a
    a102 = b * dds2o * s1a
    for c in range(M.shape[1]):
        m0 = M[0, c]
        m2 = M[2, c]
        out[0, c] = M[1, c]
        out[1, c] = g1 * M[5, c]
        out[2, c] = M[3, c]
        out[3, c] = g2 * M[11, c]
        out[4, c] = a40 * m0 + a42 * m2
        out[5, c] = -M[4, c]
        out[6, c] = a42 * m0 + a62 * m2
        out[7, c] = -M[6, c]
        out[8, c] = a80 * m0 + a82 * m2
        out[9, c] = -M[8, c]
        out[10, c] = a82 * m0 + a102 * m2
        out[11, c] = -M[10, c]


@optional_njit(cache=True)
def rk4_propagate(y0, h, nsteps, p, want_sens, path):
    """Integrate ``nsteps`` RK4 steps from ``y0``.

    Returns the end state and, when ``want_sens`` is set, the exact Jacobian of
    the discrete RK4 map with respect to ``y0``. If ``path`` has ``nsteps + 1``
    rows every intermediate state is written to it.
    """
    n = y0.shape[0]
    y = y0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    Phi = np.eye(n)
    D1 = np.empty((n, n))
    D2 = np.empty((n, n))
    D3 = np.empty((n, n))
    D4 = np.empty((n, n))
    M = np.empty((n, n))
    store = path.shape[0] == nsteps + 1
    if store:
        path[0, :] = y
    for step in range(nsteps):
        pmp_rhs(y, p, k1)
        if want_sens:
            pmp_jac_apply(y, p, Phi, D1)
        for j in range(n):
            tmp[j] = y[j] + 0.5 * h * k1[j]
        pmp_rhs(tmp, p, k2)
        if want_sens:
            for r in range(n):
                for c in range(n):
                    M[r, c] = Phi[r, c] + 0.5 * h * D1[r, c]
            pmp_jac_apply(tmp, p, M, D2)
        for j in range(n):
            tmp[j] = y[j] + 0.5 * h * k2[j]
        pmp_rhs(tmp, p, k3)
        if want_sens:
            for r in range(n):
                for c in range(n):
                    M[r, c] = Phi[r, c] + 0.5 * h * D2[r, c]
            pmp_jac_apply(tmp, p, M, D3)
        for j in range(n):
            tmp[j] = y[j] + h * k3[j]
        pmp_rhs(tmp, p, k4)
        if want_sens:
            for r in range(n):
                for c in range(n):
                    M[r, c] = Phi[r, c] + h * D3[r, c]
            pmp_jac_apply(tmp, p, M, D4)
            for r in range(n):
                for c in range(n):
                    Phi[r, c] += h / 6.0 * (D1[r, c] + 2.0 * D2[r, c] + 2.0 * D3[r, c] + D4[r, c])
        for j in range(n):
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if store:
            path[step + 1, :] = y
    return y, Phi


@optional_njit(cache=True)
def shoot_segments(nodes, h, nsteps, p, want_sens):
    """Propagate every multiple-shooting node over one segment."""
    m, n = nodes.shape
    ends = np.empty((m, n))
    sens = np.empty((m, n, n))
    nopath = np.empty((0, n))
    for k in range(m):
        y, Phi = rk4_propagate(nodes[k], h, nsteps, p, want_sens, nopath)
        ends[k, :] = y
        sens[k, :, :] = Phi
    return ends, sens


@optional_njit(cache=True)
def _entry_exit(d0, d1, lo, hi, h):
    """Sub-interval of ``[0, h]`` where a linearly moving ``d`` lies in ``[lo, hi]``."""
    if d1 == d0:
        if lo <= d0 <= hi:
            return 0.0, h
        return 0.0, 0.0
    ta = (lo - d0) / (d1 - d0) * h
    tb = (hi - d0) / (d1 - d0) * h
    if ta > tb:
        ta, tb = tb, ta
    return max(ta, 0.0), min(tb, h)


@optional_njit(cache=True)
def overlap_durations(d1, d2, times, lo_a, lo_b, hi):
    """Per-step time during which ``d1 in [lo_a, hi]`` and ``d2 in [lo_b, hi]`` hold together.

    Positions are interpolated linearly inside each step.
    """
    n = times.shape[0] - 1
    out = np.zeros(n)
    for k in range(n):
        h = times[k + 1] - times[k]
        a0, a1 = _entry_exit(d1[k], d1[k + 1], lo_a, hi, h)
        b0, b1 = _entry_exit(d2[k], d2[k + 1], lo_b, hi, h)
        w = min(a1, b1) - max(a0, b0)
        if w > 0.0:
            out[k] = w
    return out
