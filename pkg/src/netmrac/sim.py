"""Closed-loop scenario assembly and fixed-step integration."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernel
from ._kernel import StateLayout
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    NonFinite,
    NetMRACError,
)
from .lti import TransferFunction, is_hurwitz, realize_ccf
from .matching import FilterSpec, assemble_augmented, passivity_certificate, solve_ideal_gains
from .network import (
    NetworkMatrices,
    NetworkSpec,
    assemble_matrices,
    build_topology,
    error_signal,
    load_preset,
    validate_network,
)
from .tuners import (
    TunerConfig,
    TunerKind,
    TunerState,
    certified_mu_bound,
    lyapunov_monitor,
    mu_lower_bound,
    regressor,
    tuner_rhs,
)

# k as a function of the agent index i for each network size of the plant family
K_MAP = {
    1: lambda i: 9 * i,
    3: lambda i: 4 * i - 3,
    5: lambda i: 2 * i - 1,
    7: lambda i: (4 * i - 1) / 3,
    9: lambda i: i,
    11: lambda i: (4 * i + 1) / 5,
    13: lambda i: (2 * i + 1) / 3,
}
M_GRID = tuple(sorted(K_MAP))


def family_plant(k: float) -> TransferFunction:
    """``(s + k + 4) / ((s - 1 - k)(s - 2 - k))``: unstable, minimum phase, unit gain."""
    return TransferFunction.from_coeffs([1.0, k + 4.0], np.polymul([1.0, -(1.0 + k)], [1.0, -(2.0 + k)]))


def family_plants(m: int) -> list:
    if m not in K_MAP:
        raise ConfigInvalid(f"plant family is defined for m in {M_GRID}, got {m}")
    return [family_plant(K_MAP[m](i)) for i in range(1, m + 1)]


def default_leader() -> TransferFunction:
    return TransferFunction.from_coeffs([3.0, 3.0], [1.0, 5.0, 6.0])


class Mode(str, enum.Enum):
    FULL = "full"
    GAIN_ONLY = "gain_only"
    MATCHED = "matched"

    @classmethod
    def parse(cls, v) -> "Mode":
        return v if isinstance(v, cls) else cls(str(v).strip().lower())


class RefKind(str, enum.Enum):
    STEP = "step"
    SQUARE = "square"
    SINE_SUM = "sine_sum"


@dataclass(frozen=True)
class ReferenceSpec:
    """``step``: constant ``amplitude``; ``square``: +-``amplitude`` with
    ``period``, positive on ``[kP, kP + P/2)``; ``sine_sum``:
    ``sum a_j sin(w_j t + p_j)`` with ``amplitudes``, ``frequencies``, ``phases``.
    """

    kind: RefKind = RefKind.SQUARE
    amplitude: float = 10.0
    period: float = 40.0
    amplitudes: tuple = ()
    frequencies: tuple = ()
    phases: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", RefKind(self.kind))
        if self.kind is RefKind.SQUARE and not self.period > 0:
            raise ConfigInvalid("square-wave period must be positive")
        if self.kind is RefKind.SINE_SUM:
            a = tuple(float(v) for v in self.amplitudes)
            f = tuple(float(v) for v in self.frequencies)
            ph = tuple(float(v) for v in self.phases) or (0.0,) * len(a)
            if not a or len(a) != len(f) or len(ph) != len(a):
                raise ConfigInvalid("sine_sum needs equal-length amplitudes/frequencies/phases")
            object.__setattr__(self, "amplitudes", a)
            object.__setattr__(self, "frequencies", f)
            object.__setattr__(self, "phases", ph)

    @property
    def magnitude(self) -> float:
        if self.kind is RefKind.SINE_SUM:
            return float(np.sum(np.abs(self.amplitudes)))
        return abs(float(self.amplitude))

    def kernel_args(self):
        if self.kind is RefKind.STEP:
            return _kernel.REF_STEP, np.array([float(self.amplitude)])
        if self.kind is RefKind.SQUARE:
            return _kernel.REF_SQUARE, np.array([float(self.amplitude), float(self.period)])
        return _kernel.REF_SINE, np.array(self.amplitudes + self.frequencies + self.phases)


def reference_signal(t, spec: ReferenceSpec, left: bool = False):
    """Reference at time(s) ``t``; ``left`` gives the left limit at jumps."""
    kind, par = spec.kernel_args()
    if np.ndim(t) == 0:
        return float(_kernel.reference(float(t), kind, par, left))
    return np.array([_kernel.reference(float(v), kind, par, left) for v in np.ravel(t)])


@dataclass(frozen=True)
class DisturbanceSpec:
    """Constant input and output disturbances (scalars broadcast to all agents)."""

    nu_u: object = 0.0
    nu_y: object = 0.0

    def vectors(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for v in (self.nu_u, self.nu_y):
            a = np.broadcast_to(np.asarray(v, dtype=float), (m,)) if np.ndim(v) == 0 \
                else np.asarray(v, dtype=float)
            if a.shape != (m,):
                raise DimensionMismatch(f"disturbance has {a.size} entries, expected {m}")
            out.append(a.copy())
        return out[0], out[1]

    def magnitude(self) -> float:
        return float(max(np.max(np.abs(self.nu_u)), np.max(np.abs(self.nu_y))))


@dataclass(frozen=True)
class InitialConditions:
    """Per-block initial values; ``None`` means zero.

    ``theta`` may be an ``(m, p)`` array or ``"ideal"`` (start at the ideal
    gains); ``theta_noise`` adds seeded Gaussian noise of that standard
    deviation to the initial parameters.
    """

    x: object = None
    z: object = None
    w: object = None
    x_leader: object = None
    theta: object = None
    aux: object = None
    theta_noise: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    network: NetworkSpec
    plants: tuple
    leader: TransferFunction = field(default_factory=default_leader)
    filter: FilterSpec | None = None
    tuner: TunerConfig = field(default_factory=TunerConfig.default)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    T: float = 200.0
    h: float = 1e-3
    stride: int = 10
    initial: InitialConditions = field(default_factory=InitialConditions)
    mode: Mode = Mode.FULL
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "plants", tuple(self.plants))
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not self.h > 0 or not self.T >= self.h:
            raise ConfigInvalid("need h > 0 and T >= h")
        steps = self.T / self.h
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigInvalid("T must be an integer multiple of h")
        if int(self.stride) < 1:
            raise ConfigInvalid("record stride must be >= 1")
        if len(self.plants) != self.network.m:
            raise ConfigInvalid(f"{len(self.plants)} plants for {self.network.m} agents")
        n = self.leader.order
        for i, p in enumerate(self.plants, 1):
            if p.relative_degree != 1:
                raise ConfigInvalid(f"agent {i}: relative degree {p.relative_degree}, expected 1")
            if p.order != n:
                raise ConfigInvalid(f"agent {i}: order {p.order} differs from leader order {n}")
            if p.num.degree >= 1 and not is_hurwitz(p.num):
                raise ConfigInvalid(f"agent {i}: zeros not in the open left half plane")
        if self.disturbance.magnitude() > 0 and \
                not self.reference.magnitude > self.disturbance.magnitude():
            raise ConfigInvalid("reference magnitude must exceed the disturbance magnitude")

    @property
    def m(self) -> int:
        return self.network.m

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.h))

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def network_spec(topology: str, m: int, **kw) -> NetworkSpec:
    """Built-in topology by name; ``random`` loads the shipped nine-agent preset."""
    if str(topology).lower() == "random":
        spec = load_preset("random")
        if spec.m != m:
            raise ConfigInvalid(f"the random preset has {spec.m} agents, not {m}")
        return spec
    return build_topology(topology, m, **kw)


def family_scenario(topology: str = "star_like", m: int = 3, tuner="gradient", *,
                    disturbance: DisturbanceSpec | None = None, **kw) -> ScenarioConfig:
    """Scenario on the built-in plant family with default settings."""
    cfg = tuner if isinstance(tuner, TunerConfig) else TunerConfig.default(tuner)
    return ScenarioConfig(network=network_spec(topology, m), plants=tuple(family_plants(m)),
                          tuner=cfg, disturbance=disturbance or DisturbanceSpec(), **kw)


@dataclass(eq=False)
class Prepared:
    """Numerical arrays of a scenario, ready for the kernel."""

    config: ScenarioConfig
    mats: NetworkMatrices
    filt: FilterSpec
    gains: list | None
    layout: StateLayout
    s0: np.ndarray
    mask: np.ndarray
    args: dict

    @property
    def theta_star(self) -> np.ndarray | None:
        if self.gains is None:
            return None
        return np.array([g.theta for g in self.gains]) * self.mask


def _block(v, shape, name):
    if v is None:
        return np.zeros(shape)
    a = np.asarray(v, dtype=float)
    try:
        return np.broadcast_to(a, shape).astype(float).copy()
    except ValueError:
        raise DimensionMismatch(f"initial {name} has shape {a.shape}, expected {shape}") from None


def prepare(config: ScenarioConfig) -> Prepared:
    mats = assemble_matrices(config.network)
    rep = validate_network(mats)
    if not rep.ok:
        raise ConfigInvalid("network fails validation:\n" + str(rep))
    m = config.m
    leader = config.leader
    filt = config.filter or FilterSpec.default_for(leader)
    n = leader.order
    if filt.order != n - 1:
        raise ConfigInvalid(f"filter order {filt.order}, expected {n - 1}")
    kind = config.tuner.kind
    layout = StateLayout(m, n, n, kind.has_aux)
    p = layout.p
    try:
        gains = [solve_ideal_gains(pl, leader, filt) for pl in config.plants]
    except NetMRACError:
        if config.mode is Mode.MATCHED:
            raise
        gains = None
    mask = np.ones(p)
    if config.mode is Mode.GAIN_ONLY:
        mask[1:] = 0.0
    ss = [realize_ccf(pl) for pl in config.plants]
    lss = realize_ccf(leader)
    ic = config.initial
    s0 = np.zeros(layout.size)
    s0[layout.x] = _block(ic.x, (m, n), "x").ravel()
    s0[layout.z] = _block(ic.z, (m, n - 1), "z").ravel()
    s0[layout.w] = _block(ic.w, (m, n - 1), "w").ravel()
    s0[layout.leader] = _block(ic.x_leader, (n,), "x_leader")
    if config.mode is Mode.MATCHED or (isinstance(ic.theta, str) and ic.theta == "ideal"):
        if gains is None:
            raise ConfigInvalid("ideal gains are not available for this scenario")
        th0 = np.array([g.theta for g in gains]) * mask
    elif isinstance(ic.theta, str):
        raise ConfigInvalid(f"unknown initial theta {ic.theta!r}")
    else:
        th0 = _block(ic.theta, (m, p), "theta")
    if ic.theta_noise and config.mode is not Mode.MATCHED:
        rng = np.random.default_rng(config.seed)
        th0 = th0 + ic.theta_noise * rng.standard_normal((m, p)) * mask
    s0[layout.theta] = th0.ravel()
    if kind.has_aux:
        # ht1 starts its auxiliary state at theta(0) unless told otherwise
        default_aux = th0 if kind is TunerKind.HT1 else np.zeros((m, p))
        s0[layout.aux] = (default_aux if ic.aux is None else _block(ic.aux, (m, p), "aux")).ravel()
    gam, bet = config.tuner.agent_gains(mats.q_level)
    sg = np.asarray(config.tuner.sign_kp, dtype=float) if config.tuner.sign_kp is not None \
        else np.sign([pl.gain for pl in config.plants]).astype(float)
    if sg.shape != (m,):
        raise ConfigInvalid(f"sign_kp has {sg.size} entries, expected {m}")
    nuu, nuy = config.disturbance.vectors(m)
    rkind, rpar = config.reference.kernel_args()
    args = dict(
        m=m, n=n, nl=n,
        A=np.array([s.A for s in ss]), B=np.array([s.B[:, 0] for s in ss]),
        C=np.array([s.C[0] for s in ss]), kp=np.array([s.gain for s in ss]),
        Lam=np.ascontiguousarray(filt.Lambda, dtype=float).reshape(n - 1, n - 1),
        vt=np.array(filt.theta, dtype=float),
        Al=np.array(lss.A), Bl=np.array(lss.B[:, 0]), Cl=np.array(lss.C[0]), kl=float(lss.gain),
        L=np.array(mats.L_m), al=mats.leader_weights, nuu=nuu, nuy=nuy,
        kind=kind.code, gam=gam, bet=bet, mu=float(config.tuner.mu), sg=sg, mask=mask,
        rkind=rkind, rpar=rpar, frozen=config.mode is Mode.MATCHED,
    )
    return Prepared(config, mats, filt, gains, layout, s0, mask, args)


def closed_loop_rhs(state, t: float, config, left: bool = False) -> np.ndarray:
    """Time derivative of the flat closed-loop state.

    Plain numpy evaluation built from the network and tuner functions; the
    compiled integrator uses an equivalent kernel.  ``config`` may be a
    ScenarioConfig or a Prepared scenario.
    """
    pr = config if isinstance(config, Prepared) else prepare(config)
    lay, a = pr.layout, pr.args
    s = np.asarray(state, dtype=float)
    if s.shape != (lay.size,):
        raise DimensionMismatch(f"state has {s.size} entries, expected {lay.size}")
    m, n, q = lay.m, lay.n, lay.q
    x = s[lay.x].reshape(m, n)
    z = s[lay.z].reshape(m, q)
    w = s[lay.w].reshape(m, q)
    xl = s[lay.leader]
    tstate = TunerState.unpack(pr.config.tuner.kind, s[lay.theta.start:], m, lay.p)
    r = reference_signal(t, pr.config.reference, left)
    y = a["kp"] * np.einsum("ia,ia->i", a["C"], x) + a["nuy"]
    yl = a["kl"] * a["Cl"] @ xl
    eta = regressor(r, z, w, y).eta * pr.mask
    u = np.einsum("ia,ia->i", tstate.theta, eta)
    e = error_signal(pr.mats, y, yl)
    dx = np.einsum("iab,ib->ia", a["A"], x) + a["B"] * (u + a["nuu"])[:, None]
    dz = z @ a["Lam"].T + np.outer(u, a["vt"])
    dw = w @ a["Lam"].T + np.outer(y, a["vt"])
    dxl = a["Al"] @ xl + a["Bl"] * r
    if a["frozen"]:
        dtun = np.zeros(lay.size - lay.theta.start)
    else:
        cfg = dataclasses.replace(pr.config.tuner, sign_kp=tuple(a["sg"]))
        dtun = tuner_rhs(tstate, e, eta, cfg, pr.mats.L_m, pr.mats.q_level).pack()
    out = np.concatenate([dx.ravel(), dz.ravel(), dw.ravel(), dxl, dtun])
    if not np.all(np.isfinite(out)):
        raise NonFinite(t)
    return out


def rk4(f, y0, h: float, nsteps: int, t0: float = 0.0, record: bool = False):
    """Classical fixed-step Runge-Kutta for ``y' = f(t, y)``.

    Returns the final state, or ``(times, states)`` when ``record`` is set.
    """
    y = np.array(y0, dtype=float)
    path = [y.copy()] if record else None
    t = t0
    for _ in range(int(nsteps)):
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (_ + 1) * h
        if record:
            path.append(y.copy())
    if record:
        return t0 + h * np.arange(len(path)), np.array(path)
    return y


@dataclass(eq=False)
class Trajectory:
    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    y_leader: np.ndarray
    e: np.ndarray
    u: np.ndarray
    theta: np.ndarray  # (samples, m, p) control parameters
    theta_star: np.ndarray | None
    layout: StateLayout
    h: float
    stride: int
    states: np.ndarray | None = None
    final_state: np.ndarray | None = None
    aborted_at: float | None = None

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def dt(self) -> float:
        return self.h * self.stride

    def __len__(self):
        return len(self.t)

    @property
    def theta_err_norm(self) -> np.ndarray:
        if self.theta_star is None:
            return np.full(len(self.t), np.nan)
        d = self.theta - self.theta_star[None]
        return np.sqrt(np.sum(d * d, axis=(1, 2)))

    def header(self) -> list[str]:
        m = self.m
        return (["t"] + [f"y_{i}" for i in range(1, m + 1)] + ["y_leader"]
                + [f"e_{i}" for i in range(1, m + 1)] + [f"u_{i}" for i in range(1, m + 1)]
                + ["theta_err_norm"])

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.y, self.y_leader, self.e, self.u, self.theta_err_norm])

    def to_csv(self, path) -> Path:
        path = Path(path)
        np.savetxt(path, self.table(), delimiter=",", fmt="%.9g",
                   header=",".join(self.header()), comments="")
        return path

    def digest(self) -> str:
        """SHA-256 of the raw recorded arrays (bit-level reproducibility check)."""
        hsh = hashlib.sha256()
        for a in (self.t, self.r, self.y, self.y_leader, self.e, self.u, self.theta):
            hsh.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return hsh.hexdigest()


def integrate(config: ScenarioConfig, *, keep_states: bool = False,
              stride: int | None = None) -> Trajectory:
    """RK4 from 0 to T with step h, recording every ``stride`` steps.

    Raises NonFinite (with the partial trajectory attached) if the state
    blows up.
    """
    pr = config if isinstance(config, Prepared) else prepare(config)
    cfg = pr.config
    st = int(stride or cfg.stride)
    a = pr.args
    out = _kernel.run(pr.s0, float(cfg.h), cfg.nsteps, st, bool(keep_states), a["m"], a["n"], a["nl"],
                      a["A"], a["B"], a["C"], a["kp"], a["Lam"], a["vt"], a["Al"], a["Bl"], a["Cl"],
                      a["kl"], a["L"], a["al"], a["nuu"], a["nuy"], a["kind"], a["gam"], a["bet"],
                      a["mu"], a["sg"], a["mask"], a["rkind"], a["rpar"], a["frozen"])
    t, r, e, y, yl, u, th, states, final, abort = out
    lay = pr.layout
    traj = Trajectory(t, r, y, yl, e, u, th.reshape(len(t), lay.m, lay.p), pr.theta_star, lay,
                      float(cfg.h), st, states if keep_states else None, final,
                      None if abort < 0 else float(abort))
    if abort >= 0:
        raise NonFinite(float(abort), traj)
    return traj


def run_matched(config: ScenarioConfig, **kw) -> Trajectory:
    """Integrate with parameters frozen at the ideal gains."""
    return integrate(config.replace(mode=Mode.MATCHED), **kw)


@dataclass(frozen=True)
class EnergyCheck:
    """Outcome of monitoring the adaptive energy function along a run."""

    report: object
    mu_structural: float
    mu_certified: float
    certificate: object

    @property
    def mu_required(self) -> float:
        return max(self.mu_structural, self.mu_certified)


def mu_bounds(config: ScenarioConfig):
    """Structural and certified normalization bounds for a scenario.

    Returns (structural, certified, certificate). Both bounds use the
    largest adaptation gain and the smallest relaxation rate over agents.
    """
    pr = prepare(config)
    if pr.gains is None:
        raise ConfigInvalid("ideal gains are not available for this scenario")
    aug = assemble_augmented([realize_ccf(p) for p in config.plants], pr.gains, pr.filt, pr.mats)
    cert = passivity_certificate(aug.A_a, aug.B_a, aug.C_a, pr.mats.L_m.T @ pr.mats.L_m)
    gm, bm = float(np.max(pr.args["gam"])), float(np.min(pr.args["bet"]))
    structural = mu_lower_bound(aug.A_a, aug.B_a, aug.C_a, aug.L_hat, gm, bm)
    certified = certified_mu_bound(cert.P, cert.Q, aug.B_a, gm, bm)
    return structural, certified, cert


def energy_check(config: ScenarioConfig, tol: float = 1e-6) -> EnergyCheck:
    """Run the adaptive and matched loops and monitor the energy function.

    The states are recorded at the scenario stride; the monitor sees the
    difference between the two runs driven by the same reference.
    """
    structural, certified, cert = mu_bounds(config)
    pr = prepare(config)
    tr = integrate(pr, keep_states=True)
    tm = run_matched(config, keep_states=True)
    rep = lyapunov_monitor(tr.states, tm.states, cert.P, pr.gains, config.tuner, pr.layout,
                           pr.mats.q_level, tol=tol)
    return EnergyCheck(rep, structural, certified, cert)
