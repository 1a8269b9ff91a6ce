"""Compiled event loop for the thinned jump process.

All randomness is drawn outside in batches; the loop only consumes arrays,
so compiled and interpreted runs see identical inputs.  Without numba the
same functions run as plain Python (slow but exact).
"""

import math

import numpy as np

from .mollifier import _CHI_NORM, _GL_W, _GL_X

try:
    import numba as nb
    HAVE_NUMBA = True
except Exception:  # pragma: no cover
    HAVE_NUMBA = False

if HAVE_NUMBA:
    njit = nb.njit(cache=True)
else:  # pragma: no cover
    def njit(f):
        return f

HALF_PI = 0.5 * math.pi
GX = np.ascontiguousarray(_GL_X)
GW = np.ascontiguousarray(_GL_W)
CN = float(_CHI_NORM)


@njit
def chi_scalar(s):
    if abs(s) >= 1.0:
        return 0.0
    return CN * math.exp(-1.0 / (1.0 - s * s))


@njit
def primitive_scalar(u):
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return u
    a = -abs(u)
    half = 0.5 * (a + 1.0)
    off = 0.5 * (a - 1.0)
    acc = 0.0
    for k in range(GX.shape[0]):
        s = half * GX[k] + off
        acc += GW[k] * (a - s) * chi_scalar(s)
    acc *= half
    if u > 0.0:
        return u + acc
    return acc


@njit
def phi_scalar(x, eps, gam):
    u1 = (x - 2.0 * eps) / eps
    u2 = (x - gam) / eps
    if u1 <= -1.0:
        return 2.0 * eps
    if u2 >= 1.0:
        return gam
    if u1 >= 1.0 and u2 <= -1.0:
        return x
    return 2.0 * eps + eps * (primitive_scalar(u1) - primitive_scalar(u2))


@njit
def izeta_scalar(z, gz):
    t = abs(z) - gz
    if t <= 0.0:
        return 1.0
    if t >= 1.0:
        return 0.0
    return 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@njit
def advance(V, tt, ii, jj, zz, uu, k0, t_end, gz, eps, gam, gamma, nu, symmetric,
            acc, record, prev, partner, cons, pleg):
    """Process events k0, k0+1, ... while tt[k] <= t_end; return the first unprocessed k.

    V has shape (L, N, 2): one velocity array per coupled leg, all driven by
    the same (t, i, j, z, u).  acc[l, k] receives the acceptance flag, prev
    and partner the leg-0 pre-event velocities when ``record`` is set, and
    cons the running max of per-event relative momentum/energy errors.
    With ``pleg >= 0`` (one-sided only) every leg reads its partner velocity
    from leg ``pleg``, so all legs see the same partner law.
    """
    L = V.shape[0]
    B = tt.shape[0]
    c0 = HALF_PI ** (-nu)
    k = k0
    while k < B and tt[k] <= t_end:
        i = ii[k]
        j = jj[k]
        z = zz[k]
        u = uu[k]
        mag = (nu * abs(z) + c0) ** (-1.0 / nu)
        th = -mag if z < 0.0 else mag
        cs = math.cos(th) - 1.0
        sn = math.sin(th)
        for l in range(L):
            vix = V[l, i, 0]
            viy = V[l, i, 1]
            pl = l if pleg < 0 else pleg
            vjx = V[pl, j, 0]
            vjy = V[pl, j, 1]
            if record and l == 0:
                prev[k, 0] = vix
                prev[k, 1] = viy
                partner[k, 0] = vjx
                partner[k, 1] = vjy
            wx = vix - vjx
            wy = viy - vjy
            rate = phi_scalar(math.sqrt(wx * wx + wy * wy), eps[l], gam[l]) ** gamma
            ind = izeta_scalar(z, gz[l])
            if symmetric:
                ok = u <= rate * ind
            else:
                ok = u <= rate
            acc[l, k] = 1 if ok else 0
            if not ok:
                continue
            ax = 0.5 * (cs * wx - sn * wy)
            ay = 0.5 * (sn * wx + cs * wy)
            if symmetric:
                nix = vix + ax
                niy = viy + ay
                njx = vjx - ax
                njy = vjy - ay
                V[l, i, 0] = nix
                V[l, i, 1] = niy
                V[l, j, 0] = njx
                V[l, j, 1] = njy
                p_scale = math.sqrt(vix * vix + viy * viy) + math.sqrt(vjx * vjx + vjy * vjy)
                e_old = vix * vix + viy * viy + vjx * vjx + vjy * vjy
                e_new = nix * nix + niy * niy + njx * njx + njy * njy
                if p_scale > 0.0:
                    dp = math.sqrt((nix + njx - vix - vjx) ** 2 + (niy + njy - viy - vjy) ** 2) / p_scale
                    de = abs(e_new - e_old) / e_old
                    if dp > cons[0]:
                        cons[0] = dp
                    if de > cons[1]:
                        cons[1] = de
            else:
                V[l, i, 0] = vix + ind * ax
                V[l, i, 1] = viy + ind * ay
        k += 1
    return k


@njit
def far_counts(V, centers, r2):
    """counts[c, m] = #{i : |V_i - centers[c]|^2 >= r2[m]} for increasing r2."""
    C = centers.shape[0]
    M = r2.shape[0]
    out = np.zeros((C, M), dtype=np.int64)
    for c in range(C):
        cx = centers[c, 0]
        cy = centers[c, 1]
        for i in range(V.shape[0]):
            dx = V[i, 0] - cx
            dy = V[i, 1] - cy
            d2 = dx * dx + dy * dy
            for m in range(M):
                if d2 >= r2[m]:
                    out[c, m] += 1
                else:
                    break
    return out
