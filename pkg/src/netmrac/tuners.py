"""Adaptive parameter laws, regressor assembly and stability diagnostics.

Each agent i owns a parameter row ``theta_i`` of length 2n multiplying its
regressor ``eta_i = [r, z_i, w_i, y_i]``.  All three laws are driven by the
same measurable signal ``g_i = sign(k_p,i) (L' e)_i``:

* gradient: ``theta' = -gamma g eta``
* ht1:      ``xi' = -gamma g eta``, ``theta' = -beta N (theta - xi)``
* ht2:      ``theta'' + beta theta' = -gamma beta g eta / N``

with ``N = 1 + mu |eta_bar|^2`` taken over the stacked regressor of all agents.
The control law always uses ``theta`` (the first state of the pair).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._kernel import GRADIENT, HT1, HT2, StateLayout
from .errors import ConfigInvalid, DimensionMismatch, MissingIdealGains, NotHurwitz


class TunerKind(str, enum.Enum):
    GRADIENT = "gradient"
    HT1 = "ht1"
    HT2 = "ht2"

    @classmethod
    def parse(cls, v) -> "TunerKind":
        return v if isinstance(v, cls) else cls(str(v).strip().lower())

    @property
    def code(self) -> int:
        return {TunerKind.GRADIENT: GRADIENT, TunerKind.HT1: HT1, TunerKind.HT2: HT2}[self]

    @property
    def has_aux(self) -> bool:
        return self is not TunerKind.GRADIENT


# Per-kind defaults.  At equal gamma the filtered laws adapt more slowly than the
# gradient law, so they get a larger gamma; beta*N*h must stay well inside the
# RK4 stability region, which bounds mu from above.
DEFAULT_GAINS = {
    TunerKind.GRADIENT: dict(gamma=1.0, beta=1.0, mu=0.0),
    TunerKind.HT1: dict(gamma=10.0, beta=5.0, mu=1e-3),
    TunerKind.HT2: dict(gamma=10.0, beta=100.0, mu=1e-5),
}

Q_SCALINGS = ("linear", "exponential", "none")


@dataclass(frozen=True)
class TunerConfig:
    """Gains of an adaptive law.

    ``q_scaling`` multiplies gamma and beta of an agent according to its
    distance q from the leader: ``"linear"`` uses q, ``"exponential"`` uses
    2**(q-1), ``"none"`` uses 1, and a tuple gives explicit multipliers for
    q = 1, 2, ... (the last entry is reused for deeper levels).
    """

    kind: TunerKind = TunerKind.GRADIENT
    gamma: float = 1.0
    beta: float = 1.0
    mu: float = 0.0
    sign_kp: tuple | None = None
    q_scaling: object = "linear"

    def __post_init__(self):
        object.__setattr__(self, "kind", TunerKind.parse(self.kind))
        if not (self.gamma > 0 and self.beta > 0):
            raise ConfigInvalid("gamma and beta must be positive")
        if not self.mu >= 0:
            raise ConfigInvalid("mu must be non-negative")
        if self.sign_kp is not None:
            sg = tuple(float(np.sign(v)) for v in self.sign_kp)
            if any(v == 0 for v in sg):
                raise ConfigInvalid("sign_kp entries must be +1 or -1")
            object.__setattr__(self, "sign_kp", sg)
        qs = self.q_scaling
        if isinstance(qs, str):
            if qs not in Q_SCALINGS:
                raise ConfigInvalid(f"q_scaling must be one of {Q_SCALINGS} or a list")
        else:
            qs = tuple(float(v) for v in qs)
            if not qs or any(v <= 0 for v in qs):
                raise ConfigInvalid("q_scaling multipliers must be positive")
            if any(b < a for a, b in zip(qs, qs[1:])):
                raise ConfigInvalid("q_scaling must be non-decreasing in q")
            object.__setattr__(self, "q_scaling", qs)

    @classmethod
    def default(cls, kind="gradient", **overrides) -> "TunerConfig":
        kind = TunerKind.parse(kind)
        kw = dict(DEFAULT_GAINS[kind])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=kind, **kw)

    def multipliers(self, q_level) -> np.ndarray:
        q = np.asarray(q_level, dtype=int)
        qs = self.q_scaling
        if qs == "linear":
            return q.astype(float)
        if qs == "exponential":
            return 2.0 ** (q - 1)
        if qs == "none":
            return np.ones(len(q))
        arr = np.asarray(qs)
        return arr[np.minimum(q, len(arr)) - 1]

    def agent_gains(self, q_level) -> tuple[np.ndarray, np.ndarray]:
        c = self.multipliers(q_level)
        return self.gamma * c, self.beta * c

    def signs(self, m: int) -> np.ndarray:
        if self.sign_kp is None:
            return np.ones(m)
        if len(self.sign_kp) != m:
            raise DimensionMismatch(f"sign_kp has {len(self.sign_kp)} entries, expected {m}")
        return np.asarray(self.sign_kp)


@dataclass
class TunerState:
    """Parameter rows per agent; ``aux`` is Xi (ht1) or the velocity (ht2)."""

    kind: TunerKind
    theta: np.ndarray
    aux: np.ndarray | None = None

    def __post_init__(self):
        self.kind = TunerKind.parse(self.kind)
        self.theta = np.array(self.theta, dtype=float, ndmin=2)
        if self.kind.has_aux:
            self.aux = np.zeros_like(self.theta) if self.aux is None else \
                np.array(self.aux, dtype=float, ndmin=2)
            if self.aux.shape != self.theta.shape:
                raise DimensionMismatch("aux and theta shapes differ")
        else:
            self.aux = None

    @classmethod
    def zeros(cls, kind, m: int, p: int) -> "TunerState":
        return cls(kind, np.zeros((m, p)))

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @staticmethod
    def block_matrix(rows: np.ndarray) -> np.ndarray:
        """``(p*m) x m`` matrix whose column i carries agent i's row in block i."""
        m, p = rows.shape
        out = np.zeros((p * m, m))
        for i in range(m):
            out[i * p:(i + 1) * p, i] = rows[i]
        return out

    def as_matrix(self, which: str = "theta") -> np.ndarray:
        return self.block_matrix(getattr(self, which))

    def pack(self) -> np.ndarray:
        parts = [self.theta.ravel()]
        if self.aux is not None:
            parts.append(self.aux.ravel())
        return np.concatenate(parts)

    @classmethod
    def unpack(cls, kind, flat, m: int, p: int) -> "TunerState":
        kind = TunerKind.parse(kind)
        flat = np.asarray(flat, dtype=float)
        th = flat[: m * p].reshape(m, p)
        aux = flat[m * p: 2 * m * p].reshape(m, p) if kind.has_aux else None
        return cls(kind, th.copy(), None if aux is None else aux.copy())


@dataclass(frozen=True, eq=False)
class RegressorVector:
    eta: np.ndarray  # (m, p)

    @property
    def eta_bar(self) -> np.ndarray:
        return self.eta.ravel()


def regressor(r: float, z, omega, y) -> RegressorVector:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = len(y)
    z = np.asarray(z, dtype=float).reshape(m, -1) if np.size(z) else np.zeros((m, 0))
    omega = np.asarray(omega, dtype=float).reshape(m, -1) if np.size(omega) else np.zeros((m, 0))
    if z.shape != omega.shape:
        raise DimensionMismatch("z and omega must have the same shape")
    eta = np.column_stack([np.full(m, float(r)), z, omega, y])
    return RegressorVector(eta)


def normalization(eta_bar, mu: float) -> float:
    if mu < 0:
        raise ConfigInvalid("mu must be non-negative")
    v = np.asarray(getattr(eta_bar, "eta_bar", eta_bar), dtype=float).ravel()
    return 1.0 + mu * float(v @ v)


def _drive(e_bar, eta, cfg: TunerConfig, L_m, q_level):
    eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
    e_bar = np.asarray(e_bar, dtype=float).ravel()
    L_m = np.atleast_2d(np.asarray(L_m, dtype=float))
    m = len(e_bar)
    if eta.ndim != 2 or eta.shape[0] != m or L_m.shape != (m, m):
        raise DimensionMismatch(f"need e of length m, eta of shape (m, p), L of shape (m, m); m={m}")
    q_level = np.ones(m, dtype=int) if q_level is None else np.asarray(q_level, dtype=int)
    gam, bet = cfg.agent_gains(q_level)
    g = cfg.signs(m) * (L_m.T @ e_bar)
    return eta, g, gam, bet


def _check_state(state: TunerState, eta: np.ndarray, kind: TunerKind):
    if state.kind is not kind:
        raise ConfigInvalid(f"state is for {state.kind.value}, expected {kind.value}")
    if state.theta.shape != eta.shape:
        raise DimensionMismatch(f"parameter shape {state.theta.shape} vs regressor {eta.shape}")


def gradient_rhs(state: TunerState, e_bar, eta, cfg: TunerConfig, L_m, q_level=None) -> np.ndarray:
    """Derivative of the parameter rows under the gradient law."""
    eta, g, gam, _ = _drive(e_bar, eta, cfg, L_m, q_level)
    _check_state(state, eta, TunerKind.GRADIENT)
    return -(gam * g)[:, None] * eta


def ht1_rhs(state: TunerState, e_bar, eta, cfg: TunerConfig, L_m, q_level=None):
    """``(dTheta1, dXi1)`` for the first high-order law."""
    eta, g, gam, bet = _drive(e_bar, eta, cfg, L_m, q_level)
    _check_state(state, eta, TunerKind.HT1)
    N = normalization(eta, cfg.mu)
    dxi = -(gam * g)[:, None] * eta
    dth = -(bet * N)[:, None] * (state.theta - state.aux)
    return dth, dxi


def ht2_rhs(state: TunerState, e_bar, eta, cfg: TunerConfig, L_m, q_level=None):
    """``(dTheta2, dTheta2_dot)`` for the second high-order law."""
    eta, g, gam, bet = _drive(e_bar, eta, cfg, L_m, q_level)
    _check_state(state, eta, TunerKind.HT2)
    N = normalization(eta, cfg.mu)
    dvel = -bet[:, None] * state.aux - (gam * bet * g / N)[:, None] * eta
    return state.aux.copy(), dvel


def tuner_rhs(state: TunerState, e_bar, eta, cfg: TunerConfig, L_m, q_level=None) -> TunerState:
    """Dispatch on ``state.kind``; returns the derivative packed as a TunerState."""
    if state.kind is TunerKind.GRADIENT:
        return TunerState(state.kind, gradient_rhs(state, e_bar, eta, cfg, L_m, q_level))
    fn = ht1_rhs if state.kind is TunerKind.HT1 else ht2_rhs
    dth, daux = fn(state, e_bar, eta, cfg, L_m, q_level)
    return TunerState(state.kind, dth, daux)


def mu_lower_bound(A_a, B_a, C_a, L_hat, gamma_m: float, beta_m: float) -> float:
    """``2 (gamma/beta) ||B' L_hat P||_F^2`` with ``A'P + PA = -2I``.

    ``C_a`` is accepted for interface symmetry with the other diagnostics; the
    bound only depends on the Lyapunov matrix.
    """
    A = np.atleast_2d(np.asarray(A_a, dtype=float))
    N = A.shape[0]
    B = np.asarray(B_a, dtype=float).reshape(N, -1)
    Lh = np.atleast_2d(np.asarray(L_hat, dtype=float))
    lam = np.linalg.eigvals(A)
    if np.max(lam.real) >= 0:
        raise NotHurwitz(f"max Re eig = {np.max(lam.real):.3g}")
    P = scipy.linalg.solve_continuous_lyapunov(A.T, -2.0 * np.eye(N))
    return float(2.0 * gamma_m / beta_m * np.linalg.norm(B.T @ Lh @ P, "fro") ** 2)


def certified_mu_bound(P, Q, B_a, gamma_m: float, beta_m: float) -> float:
    """Normalization level that makes the ht1 energy function non-increasing.

    For ``A'P + PA = -Q`` and ``P B = C' L'L S`` the cross term of the energy
    derivative is dominated once ``mu >= 4 (gamma/beta) ||B'P||_F^2 / lambda_min(Q)``.
    """
    qmin = float(np.linalg.eigvalsh(0.5 * (Q + np.asarray(Q).T)).min())
    return float(4.0 * gamma_m / beta_m * np.linalg.norm(np.asarray(B_a).T @ P, "fro") ** 2 / qmin)


@dataclass
class MonitorReport:
    V: np.ndarray
    max_increase: float
    max_V: float
    tol: float = 1e-6
    increments: np.ndarray = field(default=None, repr=False)

    @property
    def relative_increase(self) -> float:
        return self.max_increase / self.max_V if self.max_V > 0 else 0.0

    @property
    def non_increasing(self) -> bool:
        return self.max_increase <= self.tol * max(self.max_V, np.finfo(float).tiny)


def lyapunov_monitor(states, matched_states, P, gains, cfg: TunerConfig, layout: StateLayout,
                     q_level=None, tol: float = 1e-6) -> MonitorReport:
    """Evaluate the adaptive-loop energy function along a recorded run.

    ``states`` and ``matched_states`` are recorded full states (rows = samples)
    of the adaptive run and of the matched run with the same reference.  The
    error ``eps`` is the difference of their plant/filter parts; with
    ``theta~ = theta - theta*``:

    * gradient: ``V = eps'P eps + sum_i |theta~_i|^2 / gamma_i``
    * ht1:      ``V = eps'P eps + sum_i (|theta_i - xi_i|^2 + |xi~_i|^2) / gamma_i``
    * ht2:      ``V = eps'P eps + sum_i |theta~_i|^2 / gamma_i + |theta_i'|^2 / (gamma_i beta_i)``
      (reported for inspection; no monotonicity claim is made for it).
    """
    if gains is None or len(gains) == 0:
        raise MissingIdealGains("the energy function needs the ideal gains")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    matched = np.atleast_2d(np.asarray(matched_states, dtype=float))
    if states.shape[0] != matched.shape[0]:
        raise DimensionMismatch("adaptive and matched records differ in length")
    m, p = layout.m, layout.p
    theta_star = np.array([np.asarray(getattr(g, "theta", g), dtype=float) for g in gains])
    if theta_star.shape != (m, p):
        raise DimensionMismatch(f"ideal gains shape {theta_star.shape}, expected {(m, p)}")
    q_level = np.ones(m, dtype=int) if q_level is None else np.asarray(q_level)
    gam, bet = cfg.agent_gains(q_level)
    eps = states[:, layout.aug] - matched[:, layout.aug]
    V = np.einsum("ti,ij,tj->t", eps, P, eps)
    th = states[:, layout.theta].reshape(-1, m, p)
    if cfg.kind is TunerKind.GRADIENT:
        V = V + np.sum(np.sum((th - theta_star) ** 2, axis=2) / gam, axis=1)
    else:
        aux = states[:, layout.aux].reshape(-1, m, p)
        if cfg.kind is TunerKind.HT1:
            V = V + np.sum((np.sum((th - aux) ** 2, axis=2)
                            + np.sum((aux - theta_star) ** 2, axis=2)) / gam, axis=1)
        else:
            V = V + np.sum(np.sum((th - theta_star) ** 2, axis=2) / gam
                           + np.sum(aux ** 2, axis=2) / (gam * bet), axis=1)
    inc = np.diff(V)
    max_inc = float(max(inc.max(initial=0.0), 0.0))
    return MonitorReport(V, max_inc, float(V.max(initial=0.0)), tol, inc)
