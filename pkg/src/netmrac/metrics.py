"""L2 and L-infinity performance of the synchronization error, and result tables."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyTrajectory

METRIC_COLUMNS = ["topology", "m", "tuner", "l2_squared", "l2", "linf", "horizon", "step", "seed"]


@dataclass
class MetricsRecord:
    topology: str
    m: int
    tuner: str
    l2_squared: float
    l2: float
    linf: float
    horizon: float
    step: float
    seed: int = 0
    per_agent_l2_squared: list = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("per_agent_l2_squared")
        return d


def _samples(traj):
    e = getattr(traj, "e", traj)
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] == 0:
        raise EmptyTrajectory("trajectory has no samples")
    return e


def l2_norm(traj, dt: float | None = None) -> dict:
    """Trapezoidal ``int |e_i|^2 dt`` per agent, their sum, and its square root.

    ``traj`` is a Trajectory or an (samples x agents) array with spacing ``dt``.
    """
    e = _samples(traj)
    dt = float(traj.dt) if dt is None else float(dt)
    if e.shape[0] < 2:
        per = np.zeros(e.shape[1])
    else:
        sq = e * e
        per = dt * (sq.sum(axis=0) - 0.5 * (sq[0] + sq[-1]))
    total = float(per.sum())
    return {"per_agent": per, "l2_squared": total, "l2": float(np.sqrt(total))}


def linf_norm(traj) -> float:
    return float(np.max(np.abs(_samples(traj))))


def evaluate(traj, topology: str, tuner: str, horizon: float, seed: int = 0) -> MetricsRecord:
    l2 = l2_norm(traj)
    return MetricsRecord(str(topology), int(traj.m), str(tuner), l2["l2_squared"], l2["l2"],
                         linf_norm(traj), float(horizon), float(traj.h), int(seed),
                         [float(v) for v in l2["per_agent"]])


def final_window_mean(traj, window: float) -> float:
    """Mean over ``[T - window, T]`` of the Euclidean norm of the error vector."""
    e = _samples(traj)
    t = np.asarray(traj.t)
    sel = t >= t[-1] - window - 1e-12
    return float(np.mean(np.linalg.norm(e[sel], axis=1)))


def write_records(records, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow({k: _fmt(v) for k, v in r.row().items()})
    return path


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else v


@dataclass
class Table:
    columns: list
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path


def aggregate_table(records, value: str = "l2_squared", by: str = "m") -> Table:
    """Pivot records into a grid.

    ``by="m"`` gives rows ``(topology, tuner)`` against columns m (the
    norm-versus-network-size layout); ``by="tuner"`` gives rows ``(topology, m)``
    against tuner columns (the tuner-comparison layout).
    """
    records = list(records)
    if by == "m":
        keys = sorted({(r.topology, r.tuner) for r in records})
        cols = sorted({r.m for r in records})
        cell = {((r.topology, r.tuner), r.m): getattr(r, value) for r in records}
        header = ["topology", "tuner"] + [f"m={c}" for c in cols]
    elif by == "tuner":
        order = {"gradient": 0, "ht1": 1, "ht2": 2}
        keys = sorted({(r.topology, r.m) for r in records})
        cols = sorted({r.tuner for r in records}, key=lambda k: (order.get(k, 9), k))
        cell = {((r.topology, r.m), r.tuner): getattr(r, value) for r in records}
        header = ["topology", "m"] + list(cols)
    else:
        raise ValueError("by must be 'm' or 'tuner'")
    rows = [list(k) + [cell.get((k, c), float("nan")) for c in cols] for k in keys]
    return Table(header, rows)
