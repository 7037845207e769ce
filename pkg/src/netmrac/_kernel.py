"""Compiled closed-loop right-hand side and fixed-step RK4 driver.

Flat state layout (see StateLayout):
``[x (m*n) | z (m*q) | w (m*q) | x_leader (nl) | theta (m*p) | aux (m*p)]``
where ``q = n-1``, ``p = 2n`` and ``aux`` exists only for the two
high-order tuners (Xi for ht1, the parameter velocity for ht2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

GRADIENT, HT1, HT2 = 0, 1, 2
REF_STEP, REF_SQUARE, REF_SINE = 0, 1, 2


@dataclass(frozen=True)
class StateLayout:
    m: int
    n: int
    nl: int
    has_aux: bool

    @property
    def q(self) -> int:
        return self.n - 1

    @property
    def p(self) -> int:
        return 2 * self.n

    @property
    def x(self) -> slice:
        return slice(0, self.m * self.n)

    @property
    def z(self) -> slice:
        s = self.m * self.n
        return slice(s, s + self.m * self.q)

    @property
    def w(self) -> slice:
        s = self.m * (self.n + self.q)
        return slice(s, s + self.m * self.q)

    @property
    def aug(self) -> slice:
        """Plant and filter states, i.e. the augmented closed-loop state."""
        return slice(0, self.m * (self.n + 2 * self.q))

    @property
    def leader(self) -> slice:
        s = self.m * (self.n + 2 * self.q)
        return slice(s, s + self.nl)

    @property
    def theta(self) -> slice:
        s = self.leader.stop
        return slice(s, s + self.m * self.p)

    @property
    def aux(self) -> slice:
        s = self.theta.stop
        return slice(s, s + (self.m * self.p if self.has_aux else 0))

    @property
    def size(self) -> int:
        return self.aux.stop


@numba.njit(cache=True)
def reference(t, kind, par, left):
    """Reference value; ``left`` returns the left limit at square-wave switches."""
    if kind == REF_STEP:
        return par[0]
    if kind == REF_SQUARE:
        period = par[1]
        ph = t % period
        if left:
            if ph == 0.0 and t > 0.0:
                ph = period
            return par[0] if ph <= 0.5 * period else -par[0]
        return par[0] if ph < 0.5 * period else -par[0]
    k = len(par) // 3
    s = 0.0
    for j in range(k):
        s += par[j] * np.sin(par[k + j] * t + par[2 * k + j])
    return s


@numba.njit(cache=True)
def rhs(t, s, out, left, m, n, nl, A, B, C, kp, Lam, vt, Al, Bl, Cl, kl, L, al,
        nuu, nuy, kind, gam, bet, mu, sg, mask, rkind, rpar, frozen, eta):
    """Write ds/dt into ``out``; returns (y, y_leader, e, u, r)."""
    q = n - 1
    p = 2 * n
    oz = m * n
    ow = oz + m * q
    ol = ow + m * q
    ot = ol + nl
    oa = ot + m * p
    r = reference(t, rkind, rpar, left)
    yl = 0.0
    for a in range(nl):
        yl += Cl[a] * s[ol + a]
    yl *= kl
    y = np.empty(m)
    u = np.empty(m)
    e = np.empty(m)
    for i in range(m):
        yi = 0.0
        for a in range(n):
            yi += C[i, a] * s[i * n + a]
        y[i] = kp[i] * yi + nuy[i]
    nrm = 0.0
    for i in range(m):
        eta[i, 0] = r * mask[0]
        for a in range(q):
            eta[i, 1 + a] = s[oz + i * q + a] * mask[1 + a]
            eta[i, 1 + q + a] = s[ow + i * q + a] * mask[1 + q + a]
        eta[i, p - 1] = y[i] * mask[p - 1]
        ui = 0.0
        for a in range(p):
            ui += s[ot + i * p + a] * eta[i, a]
            nrm += eta[i, a] * eta[i, a]
        u[i] = ui
    for i in range(m):
        v = -al[i] * yl
        for j in range(m):
            v += L[i, j] * y[j]
        e[i] = v
    for i in range(m):
        for a in range(n):
            v = B[i, a] * (u[i] + nuu[i])
            for b in range(n):
                v += A[i, a, b] * s[i * n + b]
            out[i * n + a] = v
        for a in range(q):
            vz = vt[a] * u[i]
            vw = vt[a] * y[i]
            for b in range(q):
                vz += Lam[a, b] * s[oz + i * q + b]
                vw += Lam[a, b] * s[ow + i * q + b]
            out[oz + i * q + a] = vz
            out[ow + i * q + a] = vw
    for a in range(nl):
        v = Bl[a] * r
        for b in range(nl):
            v += Al[a, b] * s[ol + b]
        out[ol + a] = v
    nrm_factor = 1.0 + mu * nrm
    for i in range(m):
        g = 0.0
        for j in range(m):
            g += L[j, i] * e[j]
        g *= sg[i]
        for a in range(p):
            k0 = ot + i * p + a
            k1 = oa + i * p + a
            if frozen:
                out[k0] = 0.0
                if kind != GRADIENT:
                    out[k1] = 0.0
            elif kind == GRADIENT:
                out[k0] = -gam[i] * g * eta[i, a]
            elif kind == HT1:
                out[k1] = -gam[i] * g * eta[i, a]
                out[k0] = -bet[i] * nrm_factor * (s[k0] - s[k1])
            else:
                out[k0] = s[k1]
                out[k1] = -bet[i] * s[k1] - gam[i] * bet[i] * g * eta[i, a] / nrm_factor
    return y, yl, e, u, r


@numba.njit(cache=True)
def run(s0, h, nsteps, stride, keep_states, m, n, nl, A, B, C, kp, Lam, vt, Al, Bl, Cl, kl,
        L, al, nuu, nuy, kind, gam, bet, mu, sg, mask, rkind, rpar, frozen):
    """Classical RK4 from t=0 for ``nsteps`` steps, recording every ``stride``.

    Returns the records, the final state and the abort time (-1 when the
    state stayed finite; otherwise the last time at which it was finite).
    """
    s = s0.copy()
    dim = len(s)
    p = 2 * n
    ot = m * n + 2 * m * (n - 1) + nl
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    eta = np.empty((m, p))
    nrec = nsteps // stride + 1
    rec_t = np.empty(nrec)
    rec_r = np.empty(nrec)
    rec_e = np.empty((nrec, m))
    rec_y = np.empty((nrec, m))
    rec_yl = np.empty(nrec)
    rec_u = np.empty((nrec, m))
    rec_th = np.empty((nrec, m * p))
    rec_s = np.empty((nrec if keep_states else 0, dim))
    ri = 0
    for it in range(nsteps + 1):
        t = it * h
        y, yl, e, u, r = rhs(t, s, k1, False, m, n, nl, A, B, C, kp, Lam, vt, Al, Bl, Cl, kl, L, al,
                             nuu, nuy, kind, gam, bet, mu, sg, mask, rkind, rpar, frozen, eta)
        if it % stride == 0:
            rec_t[ri] = t
            rec_r[ri] = r
            rec_e[ri] = e
            rec_y[ri] = y
            rec_yl[ri] = yl
            rec_u[ri] = u
            for a in range(m * p):
                rec_th[ri, a] = s[ot + a]
            if keep_states:
                rec_s[ri] = s
            ri += 1
        if it == nsteps:
            break
        for a in range(dim):
            tmp[a] = s[a] + 0.5 * h * k1[a]
        rhs(t + 0.5 * h, tmp, k2, False, m, n, nl, A, B, C, kp, Lam, vt, Al, Bl, Cl, kl, L, al,
            nuu, nuy, kind, gam, bet, mu, sg, mask, rkind, rpar, frozen, eta)
        for a in range(dim):
            tmp[a] = s[a] + 0.5 * h * k2[a]
        rhs(t + 0.5 * h, tmp, k3, False, m, n, nl, A, B, C, kp, Lam, vt, Al, Bl, Cl, kl, L, al,
            nuu, nuy, kind, gam, bet, mu, sg, mask, rkind, rpar, frozen, eta)
        for a in range(dim):
            tmp[a] = s[a] + h * k3[a]
        # the step ends at t+h, so discontinuous references use their left limit
        rhs(t + h, tmp, k4, True, m, n, nl, A, B, C, kp, Lam, vt, Al, Bl, Cl, kl, L, al,
            nuu, nuy, kind, gam, bet, mu, sg, mask, rkind, rpar, frozen, eta)
        ok = True
        for a in range(dim):
            v = s[a] + h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            if not np.isfinite(v):
                ok = False
            tmp[a] = v
        if not ok:
            return (rec_t[:ri], rec_r[:ri], rec_e[:ri], rec_y[:ri], rec_yl[:ri], rec_u[:ri],
                    rec_th[:ri], rec_s[:ri], s, t)
        for a in range(dim):
            s[a] = tmp[a]
    return (rec_t[:ri], rec_r[:ri], rec_e[:ri], rec_y[:ri], rec_yl[:ri], rec_u[:ri],
            rec_th[:ri], rec_s[:min(ri, rec_s.shape[0])], s, -1.0)
