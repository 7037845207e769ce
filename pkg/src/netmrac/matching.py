"""Ideal controller gains from the polynomial matching identity.

With the control law ``u = k r + psi'z + phi'w + tau y`` and the filters
``z' = Lam z + th u``, ``w' = Lam w + th y`` the closed loop of a plant
``k_p n/d`` equals the leader ``k_l n_l/d_l`` exactly when ``k = k_l/k_p`` and

    psi(s) d + k_p n (phi(s) + tau d_lam) = d_lam d - (d_lam/n_l) d_l n,

where ``psi(s)``, ``phi(s)`` are the filter numerators picked out by the gain
vectors.  The unknown block ``phi(s) + tau d_lam`` has degree n-1 and its
leading coefficient is ``tau`` because ``d_lam`` is monic.

Coefficient vectors in the linear system are in descending powers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegreeMismatch,
    DimensionMismatch,
    IncompatibleFilter,
    NonHurwitzZeros,
    NotHurwitz,
    RankDeficient,
)
from .lti import Polynomial, StateSpaceModel, TransferFunction, companion, is_hurwitz, poly_divmod
from .network import NetworkMatrices

RANK_TOL = 1e-10
MATCH_TOL = 1e-9


def _char_poly(M: np.ndarray) -> Polynomial:
    if M.size == 0:
        return Polynomial((1.0,))
    return Polynomial(tuple(np.real(np.poly(M))[::-1]))


class DegenerateFilter(IncompatibleFilter):
    pass


@dataclass(frozen=True, eq=False)
class FilterSpec:
    """Known filter pair ``(Lam, th)`` of order n-1 shared by every agent.

    ``n_matrix`` row ``a`` holds the ascending coefficients of the numerator
    of ``e_a' (sI - Lam)^-1 th``, so a gain vector ``g`` realizes the transfer
    function ``(n_matrix.T @ g)(s) / d_lambda(s)``.
    """

    Lambda: np.ndarray
    theta: np.ndarray
    d_lambda: Polynomial
    n_matrix: np.ndarray

    @classmethod
    def from_matrices(cls, Lambda, theta) -> "FilterSpec":
        Lam = np.atleast_2d(np.asarray(Lambda, dtype=float))
        if Lam.size == 0:
            Lam = np.zeros((0, 0))
        q = Lam.shape[0]
        th = np.asarray(theta, dtype=float).reshape(q)
        if Lam.shape != (q, q):
            raise DimensionMismatch("Lambda must be square")
        if q and np.max(np.linalg.eigvals(Lam).real) >= 0:
            raise NotHurwitz("filter matrix Lambda is not Hurwitz")
        ctrb = np.column_stack([np.linalg.matrix_power(Lam, k) @ th for k in range(q)]) if q \
            else np.zeros((0, 0))
        if q and np.linalg.matrix_rank(ctrb) < q:
            raise DegenerateFilter("(Lambda, theta) is not controllable")
        d_lam = _char_poly(Lam)
        N = np.zeros((q, q))
        for a in range(q):
            E = np.zeros((q, q))
            E[:, a] = th
            # det(sI - Lam + th e_a') - det(sI - Lam) = e_a' adj(sI - Lam) th
            num = _char_poly(Lam - E) - d_lam
            c = np.asarray(num.coeffs)[:q]
            N[a, : len(c)] = c
        for v in (Lam, th, N):
            v.setflags(write=False)
        return cls(Lam, th, d_lam, N)

    @classmethod
    def from_poly(cls, d_lambda: Polynomial) -> "FilterSpec":
        """Controllable canonical filter with characteristic polynomial ``d_lambda``."""
        d = d_lambda.monic()
        q = d.degree
        if q == 0:
            return cls.from_matrices(np.zeros((0, 0)), np.zeros(0))
        if not is_hurwitz(d):
            raise NotHurwitz("filter polynomial is not Hurwitz")
        th = np.zeros(q)
        th[-1] = 1.0
        return cls.from_matrices(companion(d), th)

    @classmethod
    def default_for(cls, leader: TransferFunction) -> "FilterSpec":
        """Filter whose characteristic polynomial is the leader numerator."""
        return cls.from_poly(leader.num)

    @property
    def order(self) -> int:
        return self.Lambda.shape[0]


@dataclass(frozen=True, eq=False)
class IdealGains:
    """Ideal gains of one agent; ``theta`` is ordered ``[k*, psi, phi, tau]``."""

    k_star: float
    psi: np.ndarray
    phi: np.ndarray
    tau: float

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.k_star], self.psi, self.phi, [self.tau]])

    @classmethod
    def from_theta(cls, theta) -> "IdealGains":
        th = np.asarray(theta, dtype=float)
        q = (len(th) - 2) // 2
        return cls(float(th[0]), th[1:1 + q].copy(), th[1 + q:1 + 2 * q].copy(), float(th[-1]))


@dataclass(frozen=True, eq=False)
class MatchingSystem:
    S_bar: np.ndarray
    Pi_bar: np.ndarray
    n: int


def _conv_matrix(p: Polynomial, ncols: int, nrows: int) -> np.ndarray:
    """Columns are descending coefficient vectors of ``p * s^k`` for k = ncols-1..0."""
    c = p.descending()
    T = np.zeros((nrows, ncols))
    for col in range(ncols):
        top = nrows - ncols + col - p.degree
        T[top:top + len(c), col] = c
    return T


def _check_pair(plant: TransferFunction, leader: TransferFunction, filt: FilterSpec) -> Polynomial:
    n = plant.order
    if leader.order != n:
        raise DegreeMismatch(f"plant order {n} differs from leader order {leader.order}")
    if plant.relative_degree != 1 or leader.relative_degree != 1:
        raise DegreeMismatch("plant and leader must have relative degree 1")
    if filt.order != n - 1:
        raise DegreeMismatch(f"filter order {filt.order}, expected {n - 1}")
    if plant.num.degree >= 1 and not is_hurwitz(plant.num):
        raise NonHurwitzZeros(f"plant zeros {plant.num.roots()} are not all in the open LHP")
    lam0, rem = poly_divmod(filt.d_lambda, leader.num)
    if np.max(np.abs(rem.coeffs)) > 1e-9 * max(1.0, np.max(np.abs(filt.d_lambda.coeffs))):
        raise IncompatibleFilter("filter polynomial is not a multiple of the leader numerator")
    return lam0


def _target(plant, leader, filt, lam0, k_star) -> Polynomial:
    scale = k_star * plant.gain / leader.gain
    return filt.d_lambda * plant.den - (lam0 * leader.den * plant.num) * scale


def build_matching_system(plant: TransferFunction, leader: TransferFunction,
                          filt: FilterSpec | None = None) -> MatchingSystem:
    filt = filt or FilterSpec.default_for(leader)
    lam0 = _check_pair(plant, leader, filt)
    n = plant.order
    size = 2 * n - 1
    k_star = leader.gain / plant.gain
    pi = _target(plant, leader, filt, lam0, k_star)
    pi_desc = np.zeros(size)
    c = pi.descending()
    if pi.degree > size - 1 and np.max(np.abs(c[: len(c) - size])) > 1e-9:
        raise DegreeMismatch("target polynomial degree exceeds 2n-2")
    c = c[-size:]
    pi_desc[size - len(c):] = c
    S = np.hstack([_conv_matrix(plant.den, n - 1, size),
                   plant.gain * _conv_matrix(plant.num, n, size)])
    return MatchingSystem(S, pi_desc, n)


def solve_ideal_gains(plant: TransferFunction, leader: TransferFunction,
                      filt: FilterSpec | None = None) -> IdealGains:
    filt = filt or FilterSpec.default_for(leader)
    sysm = build_matching_system(plant, leader, filt)
    n = sysm.n
    sv = np.linalg.svd(sysm.S_bar, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficient(f"matching matrix is singular (sigma_min/sigma_max = {sv[-1] / sv[0]:.2e});"
                            " plant numerator and denominator share a root")
    xi = np.linalg.solve(sysm.S_bar, sysm.Pi_bar)
    psi_poly = Polynomial.from_descending(xi[: n - 1]) if n > 1 else Polynomial((0.0,))
    chi = Polynomial.from_descending(xi[n - 1:])
    tau = float(xi[n - 1])
    phi_poly = chi - filt.d_lambda * tau
    q = n - 1

    def to_gain(p: Polynomial) -> np.ndarray:
        if q == 0:
            return np.zeros(0)
        asc = np.zeros(q)
        c = np.asarray(p.coeffs)[:q]
        asc[: len(c)] = c
        return np.linalg.solve(filt.n_matrix.T, asc)

    return IdealGains(leader.gain / plant.gain, to_gain(psi_poly), to_gain(phi_poly), tau)


def _gain_poly(g: np.ndarray, filt: FilterSpec) -> Polynomial:
    if filt.order == 0:
        return Polynomial((0.0,))
    return Polynomial(tuple(filt.n_matrix.T @ np.asarray(g, dtype=float)))


def verify_matching(gains: IdealGains, plant: TransferFunction, leader: TransferFunction,
                    filt: FilterSpec | None = None) -> float:
    """Max absolute coefficient difference between both sides of the identity."""
    filt = filt or FilterSpec.default_for(leader)
    lam0, _ = poly_divmod(filt.d_lambda, leader.num)
    psi = _gain_poly(gains.psi, filt)
    phi = _gain_poly(gains.phi, filt)
    lhs = psi * plant.den + (phi + filt.d_lambda * gains.tau) * plant.num * plant.gain
    rhs = _target(plant, leader, filt, lam0, gains.k_star)
    diff = lhs - rhs
    return float(np.max(np.abs(diff.coeffs)))


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    """Matched closed loop in the global ordering ``[x (agent-major), z, w]``."""

    A_a: np.ndarray
    B_a: np.ndarray
    C_a: np.ndarray
    L_hat: np.ndarray
    A_hat: np.ndarray

    @property
    def dim(self) -> int:
        return self.A_a.shape[0]


def agent_augmented(ss: StateSpaceModel, g: IdealGains, filt: FilterSpec):
    """Per-agent matched loop ``(A, B, C)`` with state ``[x, z, w]``."""
    n = ss.order
    q = filt.order
    B = ss.B
    kC = ss.gain * ss.C
    th = filt.theta.reshape(q, 1)
    A = np.zeros((n + 2 * q, n + 2 * q))
    A[:n, :n] = ss.A + g.tau * B @ kC
    A[:n, n:n + q] = B @ g.psi.reshape(1, q)
    A[:n, n + q:] = B @ g.phi.reshape(1, q)
    A[n:n + q, :n] = g.tau * th @ kC
    A[n:n + q, n:n + q] = filt.Lambda + th @ g.psi.reshape(1, q)
    A[n:n + q, n + q:] = th @ g.phi.reshape(1, q)
    A[n + q:, :n] = th @ kC
    A[n + q:, n + q:] = filt.Lambda
    Bv = np.concatenate([B[:, 0], filt.theta, np.zeros(q)])
    Cv = np.concatenate([kC[0], np.zeros(2 * q)])
    return A, Bv, Cv


def assemble_augmented(plant_ss: list, gains: list, filt: FilterSpec,
                       mats: NetworkMatrices) -> AugmentedSystem:
    m = len(plant_ss)
    if len(gains) != m or mats.m != m:
        raise DimensionMismatch("plant, gain and network sizes differ")
    n = plant_ss[0].order
    q = filt.order
    if any(ss.order != n for ss in plant_ss) or any(len(g.psi) != q for g in gains):
        raise DimensionMismatch("all agents must share the plant and filter orders")
    N = m * (n + 2 * q)
    A = np.zeros((N, N))
    B = np.zeros((N, m))
    C = np.zeros((m, N))
    idx = []
    for i in range(m):
        idx.append(np.concatenate([i * n + np.arange(n),
                                   m * n + i * q + np.arange(q),
                                   m * (n + q) + i * q + np.arange(q)]).astype(int))
    for i, (ss, g) in enumerate(zip(plant_ss, gains)):
        Ai, Bi, Ci = agent_augmented(ss, g, filt)
        A[np.ix_(idx[i], idx[i])] = Ai
        B[idx[i], i] = Bi
        C[i, idx[i]] = Ci
    eye = np.eye(2 * m * q)
    L_hat = scipy.linalg.block_diag(np.kron(mats.L_m, np.eye(n)), eye)
    A_hat = scipy.linalg.block_diag(np.kron(mats.A_ell, np.eye(n)), eye)
    return AugmentedSystem(A, B, C, L_hat, A_hat)


def _require_hurwitz(A: np.ndarray):
    lam = np.linalg.eigvals(A)
    if lam.size and np.max(lam.real) >= 0:
        raise NotHurwitz(f"max Re eig = {np.max(lam.real):.3g}")


def lyapunov_diagnostics(A_a, B_a, C_a, Q_a=None):
    """Solve ``A'P + PA = -Q`` and report ``||P B - C'||_inf``.

    ``Q`` defaults to ``2I``.  The residual is a diagnostic only: it is small
    only when ``Q`` happens to be compatible with a positive-real
    factorization.
    """
    A = np.atleast_2d(np.asarray(A_a, dtype=float))
    B = np.asarray(B_a, dtype=float).reshape(A.shape[0], -1)
    C = np.asarray(C_a, dtype=float).reshape(-1, A.shape[0])
    Q = 2.0 * np.eye(A.shape[0]) if Q_a is None else np.atleast_2d(np.asarray(Q_a, dtype=float))
    _require_hurwitz(A)
    P = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    P = 0.5 * (P + P.T)
    res = float(np.max(np.abs(P @ B - C.T))) if B.size else 0.0
    return P, res


@dataclass(frozen=True, eq=False)
class PassivityCertificate:
    """``P > 0`` with ``A'P + PA = -Q``, ``Q >= margin I`` and ``P B = C' M``."""

    P: np.ndarray
    Q: np.ndarray
    margin: float
    residual: float

    @property
    def q_min(self) -> float:
        return float(np.linalg.eigvalsh(self.Q).min())


def passivity_certificate(A_a, B_a, C_a, M, *, p_floor: float = 1e-6,
                          margin_cap: float = 1e3) -> PassivityCertificate:
    """Semidefinite search for a Lyapunov matrix satisfying ``P B = C' M``.

    Maximizes the decay margin ``t`` in ``A'P + PA <= -t I``.  With
    ``M = L'L S`` (S the diagonal of plant gain signs) this is the matrix
    that makes the adaptive-loop energy function decrease.
    """
    import cvxpy as cp

    A = np.asarray(A_a, dtype=float)
    B = np.asarray(B_a, dtype=float)
    C = np.asarray(C_a, dtype=float)
    _require_hurwitz(A)
    N = A.shape[0]
    P = cp.Variable((N, N), symmetric=True)
    t = cp.Variable()
    cons = [P >> p_floor * np.eye(N),
            A.T @ P + P @ A << -t * np.eye(N),
            P @ B == C.T @ np.asarray(M, dtype=float),
            t <= margin_cap]
    prob = cp.Problem(cp.Maximize(t), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate") or t.value is None or t.value <= 0:
        raise NotHurwitz(f"no passivity certificate found (status {prob.status})")
    Pv = 0.5 * (P.value + P.value.T)
    Q = -(A.T @ Pv + Pv @ A)
    res = float(np.max(np.abs(Pv @ B - C.T @ M)))
    return PassivityCertificate(Pv, Q, float(t.value), res)
