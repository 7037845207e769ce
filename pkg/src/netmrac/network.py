"""Communication graph: construction, matrices, validation and the distributed error.

Agents are numbered 1..m in every user-facing structure (edge lists, files);
matrices are 0-indexed as usual.  A follower edge ``(i, j, w)`` means agent
``i`` measures agent ``j`` with weight ``w``.  Incoming weights of each agent,
including its leader weight, sum to one.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    ConfigParseError,
    DimensionMismatch,
    InvalidCount,
    UnreachableAgent,
    WeightPolicyViolation,
)

WEIGHT_TOL = 1e-12
BALANCE_TOL = 1e-12
LEADER = "L"


class Topology(str, enum.Enum):
    STAR_LIKE = "star_like"
    CYCLIC_LIKE = "cyclic_like"
    PATH = "path"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, name: str) -> "Topology":
        if isinstance(name, cls):
            return name
        aliases = {"star": cls.STAR_LIKE, "cyclic": cls.CYCLIC_LIKE}
        key = str(name).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class WeightPolicy:
    """Edge weights used by the built-in topologies.

    ``star_leader`` is the leader share of every star agent (the remainder is
    split evenly between the two ring neighbours); ``cyclic_leader`` is the
    leader share of agent 1 in the cyclic topology.
    """

    star_leader: float = 0.5
    cyclic_leader: float = 0.5


@dataclass(frozen=True)
class NetworkSpec:
    m: int
    topology: Topology
    follower_edges: tuple = ()
    leader_edges: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if int(self.m) < 1:
            raise InvalidCount(f"m must be >= 1, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "topology", Topology.parse(self.topology))
        fe = tuple((int(i), int(j), float(w)) for i, j, w in self.follower_edges)
        le = tuple((int(i), float(w)) for i, w in self.leader_edges)
        object.__setattr__(self, "follower_edges", fe)
        object.__setattr__(self, "leader_edges", le)
        self._check()

    def _check(self):
        m = self.m
        seen = set()
        incoming = np.zeros(m)
        for i, j, w in self.follower_edges:
            if not (1 <= i <= m and 1 <= j <= m):
                raise InvalidCount(f"edge ({i}, {j}) outside agents 1..{m}")
            if i == j:
                raise WeightPolicyViolation(f"self edge on agent {i}")
            if (i, j) in seen:
                raise WeightPolicyViolation(f"duplicate edge {j} -> {i}")
            seen.add((i, j))
            if not w > 0:
                raise WeightPolicyViolation(f"non-positive weight {w} on {j} -> {i}")
            incoming[i - 1] += w
        leaders = set()
        for i, w in self.leader_edges:
            if not 1 <= i <= m:
                raise InvalidCount(f"leader edge to agent {i} outside 1..{m}")
            if i in leaders:
                raise WeightPolicyViolation(f"duplicate leader edge to agent {i}")
            leaders.add(i)
            if not w > 0:
                raise WeightPolicyViolation(f"non-positive leader weight {w} on agent {i}")
            incoming[i - 1] += w
        bad = np.flatnonzero(np.abs(incoming - 1.0) > WEIGHT_TOL)
        if bad.size:
            i = bad[0]
            raise WeightPolicyViolation(
                f"incoming weights of agent {i + 1} sum to {incoming[i]:.12g}, not 1")


@dataclass(frozen=True, eq=False)
class NetworkMatrices:
    L_m: np.ndarray
    A_ell: np.ndarray
    A_m: np.ndarray
    D: np.ndarray
    q_level: np.ndarray

    def __post_init__(self):
        for name in ("L_m", "A_ell", "A_m", "D", "q_level"):
            v = np.array(getattr(self, name), dtype=int if name == "q_level" else float)
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def m(self) -> int:
        return self.L_m.shape[0]

    @property
    def leader_weights(self) -> np.ndarray:
        return np.diag(self.A_ell).copy()


def _ring_neighbours(i: int, m: int) -> list[int]:
    return sorted({(i - 2) % m + 1, i % m + 1})


def build_topology(kind, m: int, weights: WeightPolicy | None = None,
                   follower_edges: Iterable = (), leader_edges: Iterable = (),
                   seed: int = 0) -> NetworkSpec:
    """Edge lists of a built-in topology (or a pass-through for ``custom``)."""
    kind = Topology.parse(kind)
    if int(m) < 1:
        raise InvalidCount(f"m must be >= 1, got {m}")
    w = weights or WeightPolicy()
    if kind is Topology.CUSTOM:
        return NetworkSpec(m, kind, tuple(follower_edges), tuple(leader_edges), seed)
    if m == 1:
        return NetworkSpec(1, kind, (), ((1, 1.0),), seed)
    fe, le = [], []
    if kind is Topology.STAR_LIKE:
        if not 0 < w.star_leader <= 1:
            raise WeightPolicyViolation("star leader weight must lie in (0, 1]")
        for i in range(1, m + 1):
            le.append((i, w.star_leader))
            nb = _ring_neighbours(i, m)
            share = (1.0 - w.star_leader) / len(nb)
            if share > 0:
                fe.extend((i, j, share) for j in nb)
    elif kind is Topology.PATH:
        le.append((1, 1.0))
        fe.extend((i, i - 1, 1.0) for i in range(2, m + 1))
    elif kind is Topology.CYCLIC_LIKE:
        if not 0 < w.cyclic_leader <= 1:
            raise WeightPolicyViolation("cyclic leader weight must lie in (0, 1]")
        le.append((1, w.cyclic_leader))
        if w.cyclic_leader < 1:
            fe.append((1, m, 1.0 - w.cyclic_leader))
        fe.extend((i, i - 1, 1.0) for i in range(2, m + 1))
    return NetworkSpec(m, kind, tuple(fe), tuple(le), seed)


def _bfs_levels(A_m: np.ndarray, leader_w: np.ndarray) -> np.ndarray:
    """Hop distance from the leader; 0 marks unreachable agents."""
    m = len(leader_w)
    q = np.zeros(m, dtype=int)
    queue = deque()
    for i in np.flatnonzero(leader_w > 0):
        q[i] = 1
        queue.append(i)
    while queue:
        j = queue.popleft()
        # agents that measure j
        for i in np.flatnonzero(A_m[:, j] > 0):
            if q[i] == 0:
                q[i] = q[j] + 1
                queue.append(i)
    return q


def assemble_matrices(spec: NetworkSpec) -> NetworkMatrices:
    m = spec.m
    A_m = np.zeros((m, m))
    for i, j, w in spec.follower_edges:
        A_m[i - 1, j - 1] = w
    lw = np.zeros(m)
    for i, w in spec.leader_edges:
        lw[i - 1] = w
    D = np.diag(A_m.sum(axis=1) + lw)
    q = _bfs_levels(A_m, lw)
    if np.any(q == 0):
        missing = [int(i) + 1 for i in np.flatnonzero(q == 0)]
        raise UnreachableAgent(f"no directed path from the leader to agents {missing}")
    return NetworkMatrices(D - A_m, np.diag(lw), A_m, D, q)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class NetworkReport:
    checks: list = field(default_factory=list)
    balance_residual: float = float("nan")
    min_real_eig: float = float("nan")

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = [f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]
        return "\n".join(lines)


def validate_network(mats: NetworkMatrices) -> NetworkReport:
    """Structural checks on the assembled matrices; failures are reported, not raised."""
    m = mats.m
    rep = NetworkReport()
    one = np.ones(m)
    res = float(np.max(np.abs((mats.L_m - mats.A_ell) @ one)))
    rep.balance_residual = res
    rep.checks.append(CheckResult("balance", res <= BALANCE_TOL,
                                  f"||(L - A_ell) 1||_inf = {res:.3e}"))
    lam = float(np.min(np.linalg.eigvals(mats.L_m).real))
    rep.min_real_eig = lam
    rep.checks.append(CheckResult("spectrum", lam > 0, f"min Re eig(L) = {lam:.6g}"))
    off = mats.A_ell - np.diag(np.diag(mats.A_ell))
    lw = np.diag(mats.A_ell)
    ok = (not np.any(off)) and np.all(lw >= 0) and np.all(lw <= 1) and np.max(lw) > 0
    rep.checks.append(CheckResult("leader_weights", bool(ok),
                                  f"diag(A_ell) in [{lw.min():.3g}, {lw.max():.3g}]"))
    derr = float(np.max(np.abs(mats.D - np.eye(m))))
    rep.checks.append(CheckResult("unit_degree", derr <= WEIGHT_TOL, f"||D - I||_max = {derr:.3e}"))
    q = _bfs_levels(mats.A_m, lw)
    unreached = [int(i) + 1 for i in np.flatnonzero(q == 0)]
    rep.checks.append(CheckResult("reachability", not unreached,
                                  "all agents reachable" if not unreached
                                  else f"unreachable agents {unreached}"))
    return rep


def error_signal(mats: NetworkMatrices, y, y_leader) -> np.ndarray:
    """Distributed synchronization error ``L_m y - A_ell y_leader``.

    ``y_leader`` may be a scalar or an m-vector.
    """
    y = np.asarray(y, dtype=float)
    yl = np.broadcast_to(np.asarray(y_leader, dtype=float), y.shape) if np.ndim(y_leader) == 0 \
        else np.asarray(y_leader, dtype=float)
    if y.shape != (mats.m,) or yl.shape != (mats.m,):
        raise DimensionMismatch(f"expected vectors of length {mats.m}")
    return mats.L_m @ y - mats.A_ell @ yl


def parse_edges(text: str, m: int | None = None, source: str = "<string>") -> NetworkSpec:
    """Parse ``src dst weight`` records (``L`` as src denotes the leader).

    ``src -> dst`` means dst measures src.  Blank lines and ``#`` comments are
    ignored; anything else that does not parse raises ConfigParseError.
    """
    fe, le = [], []
    seen = set()
    top = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{source}:{lineno}"
        if len(parts) != 3:
            raise ConfigParseError(f"{where}: expected 'src dst weight', got {raw!r}")
        src, dst, wtxt = parts
        try:
            w = float(wtxt)
            d = int(dst)
            s = None if src == LEADER else int(src)
        except ValueError:
            raise ConfigParseError(f"{where}: cannot parse {raw!r}") from None
        if not np.isfinite(w):
            raise ConfigParseError(f"{where}: weight must be finite")
        if d < 1 or (s is not None and s < 1):
            raise ConfigParseError(f"{where}: agent indices start at 1")
        key = (src, d)
        if key in seen:
            raise ConfigParseError(f"{where}: duplicate edge {src} -> {d}")
        seen.add(key)
        top = max(top, d, s or 0)
        if s is None:
            le.append((d, w))
        else:
            fe.append((d, s, w))
    if m is None:
        m = top
    if m < 1:
        raise ConfigParseError(f"{source}: no edges")
    if top > m:
        raise ConfigParseError(f"{source}: agent index {top} exceeds m={m}")
    return NetworkSpec(m, Topology.CUSTOM, tuple(fe), tuple(le))


def load_edges(path, m: int | None = None) -> NetworkSpec:
    path = Path(path)
    return parse_edges(path.read_text(), m, str(path))


def format_edges(spec: NetworkSpec) -> str:
    lines = [f"{LEADER} {i} {w:.17g}" for i, w in spec.leader_edges]
    lines += [f"{j} {i} {w:.17g}" for i, j, w in spec.follower_edges]
    return "\n".join(lines) + "\n"


PRESET_DIR = Path(__file__).parent / "presets"


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.edges"))


def load_preset(name: str) -> NetworkSpec:
    """Named edge-file preset shipped with the package (e.g. ``random``)."""
    path = PRESET_DIR / f"{name}.edges"
    if not path.exists():
        raise ConfigParseError(f"unknown preset {name!r}; available: {preset_names()}")
    return load_edges(path)
