"""Command-line front end: validate, simulate and sweep scenarios.

Configuration files are flat ``key = value`` text with dotted keys, ``#``
comments and whitespace- or comma-separated lists.  Known keys and defaults
are listed in DEFAULTS.  Command-line flags override file values, which
override defaults.

Exit codes: 0 success, 1 validation failure, 2 parse error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigInvalid, ConfigParseError, NetMRACError, NonFinite
from .lti import Polynomial, TransferFunction, is_hurwitz, is_spr
from .matching import FilterSpec, solve_ideal_gains
from .metrics import MetricsRecord, aggregate_table, evaluate, final_window_mean, write_records
from .network import (
    Topology,
    WeightPolicy,
    assemble_matrices,
    build_topology,
    load_edges,
    load_preset,
    validate_network,
)
from .sim import (
    DisturbanceSpec,
    InitialConditions,
    ReferenceSpec,
    ScenarioConfig,
    family_plants,
    integrate,
)
from .tuners import DEFAULT_GAINS, TunerConfig, TunerKind

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_NONFINITE = 0, 1, 2, 3

DEFAULTS = {
    "network.topology": "star_like",
    "network.m": 3,
    "network.edges_file": "",
    "network.star_leader_weight": 0.5,
    "network.cyclic_leader_weight": 0.5,
    "leader.num": [3.0, 3.0],
    "leader.den": [1.0, 5.0, 6.0],
    "filter.d_lambda": [],
    "tuner.kind": "gradient",
    "tuner.gamma": None,
    "tuner.beta": None,
    "tuner.mu": None,
    "tuner.q_scaling": "linear",
    "tuner.sign_kp": [],
    "reference.kind": "square",
    "reference.amplitude": 10.0,
    "reference.period": 40.0,
    "reference.amplitudes": [],
    "reference.frequencies": [],
    "reference.phases": [],
    "disturbance.nu_u": 0.0,
    "disturbance.nu_y": 0.0,
    "init.theta": "zero",
    "init.theta_noise": 0.0,
    "init.x": [],
    "sim.T": 200.0,
    "sim.h": 1e-3,
    "sim.stride": 10,
    "sim.mode": "full",
    "sim.seed": 0,
}
# per-agent plant overrides: plant.<i>.num / plant.<i>.den (descending coefficients)
LIST_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, list)} | {"disturbance.nu_u",
                                                                       "disturbance.nu_y",
                                                                       "tuner.q_scaling"}
INT_KEYS = {"network.m", "sim.stride", "sim.seed"}
STR_KEYS = {"network.topology", "network.edges_file", "tuner.kind", "reference.kind",
            "init.theta", "sim.mode"}


def _is_plant_key(key: str) -> bool:
    parts = key.split(".")
    return len(parts) == 3 and parts[0] == "plant" and parts[1].isdigit() and parts[2] in ("num", "den")


def _parse_value(key: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if key in STR_KEYS:
            return raw
        if key in INT_KEYS:
            return int(raw)
        if key == "tuner.q_scaling":
            return raw if raw.isalpha() else [float(v) for v in raw.replace(",", " ").split()]
        if key in LIST_KEYS or _is_plant_key(key):
            vals = [float(v) for v in raw.replace(",", " ").split()]
            if key.startswith("disturbance.") and len(vals) == 1:
                return vals[0]
            return vals
        return float(raw)
    except ValueError:
        raise ConfigParseError(f"{where}: bad value {raw!r} for {key}") from None


def parse_config_text(text: str, source: str = "<string>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            raise ConfigParseError(f"{where}: expected 'key = value'")
        key, val = (s.strip() for s in body.split("=", 1))
        if key not in DEFAULTS and not _is_plant_key(key):
            raise ConfigParseError(f"{where}: unknown key {key!r}")
        if key in out:
            raise ConfigParseError(f"{where}: duplicate key {key!r}")
        out[key] = _parse_value(key, val, where)
    return out


def load_config(path) -> dict:
    """Read a config file, or the embedded config of a run manifest (``.json``)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            data = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError):
            raise ConfigParseError(f"{path}: not a run manifest") from None
        cfg = {}
        for k, v in data.items():
            if k not in DEFAULTS and not _is_plant_key(k):
                raise ConfigParseError(f"{path}: unknown key {k!r}")
            cfg[k] = v
        return cfg
    return parse_config_text(text, str(path))


def resolve(file_cfg: dict, overrides: dict | None = None) -> dict:
    """Merge defaults, file values and flag overrides; fill kind-dependent gains."""
    cfg = dict(DEFAULTS)
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        kind = TunerKind.parse(cfg["tuner.kind"])
    except ValueError:
        raise ConfigParseError(f"unknown tuner kind {cfg['tuner.kind']!r}") from None
    cfg["tuner.kind"] = kind.value
    for g in ("gamma", "beta", "mu"):
        if cfg[f"tuner.{g}"] is None:
            cfg[f"tuner.{g}"] = DEFAULT_GAINS[kind][g]
    top = str(cfg["network.topology"]).strip().lower()
    if top != "random":
        try:
            top = Topology.parse(top).value
        except ValueError:
            raise ConfigParseError(f"unknown topology {top!r}") from None
    cfg["network.topology"] = top
    return cfg


def _network(cfg: dict):
    top = str(cfg["network.topology"]).lower()
    m = int(cfg["network.m"])
    if top == "random":
        spec = load_preset("random")
        if m != spec.m:
            raise ConfigInvalid(f"the random preset has {spec.m} agents, not {m}")
        return spec
    if top == "custom":
        if not cfg["network.edges_file"]:
            raise ConfigParseError("custom topology needs network.edges_file")
        return load_edges(cfg["network.edges_file"], m)
    pol = WeightPolicy(cfg["network.star_leader_weight"], cfg["network.cyclic_leader_weight"])
    try:
        return build_topology(top, m, pol)
    except ValueError as exc:
        if isinstance(exc, NetMRACError):
            raise
        raise ConfigParseError(f"unknown topology {top!r}") from None


def _plants(cfg: dict, m: int) -> list:
    custom = {}
    for k, v in cfg.items():
        if _is_plant_key(k):
            _, idx, part = k.split(".")
            custom.setdefault(int(idx), {})[part] = v
    plants = family_plants(m) if len(custom) < m else [None] * m
    for idx, d in custom.items():
        if not 1 <= idx <= m or set(d) != {"num", "den"}:
            raise ConfigParseError(f"plant.{idx} needs both num and den and 1 <= {idx} <= {m}")
        plants[idx - 1] = TransferFunction.from_coeffs(d["num"], d["den"])
    if any(p is None for p in plants):
        raise ConfigInvalid("family plants are only defined for some m; give plant.<i> for all agents")
    return plants


def build_scenario(cfg: dict) -> ScenarioConfig:
    """ScenarioConfig from a resolved flat config."""
    net = _network(cfg)
    plants = _plants(cfg, net.m)
    leader = TransferFunction.from_coeffs(cfg["leader.num"], cfg["leader.den"])
    filt = FilterSpec.from_poly(Polynomial.from_descending(cfg["filter.d_lambda"])) \
        if cfg["filter.d_lambda"] else None
    qs = cfg["tuner.q_scaling"]
    tuner = TunerConfig(kind=cfg["tuner.kind"], gamma=cfg["tuner.gamma"], beta=cfg["tuner.beta"],
                        mu=cfg["tuner.mu"], sign_kp=tuple(cfg["tuner.sign_kp"]) or None,
                        q_scaling=qs if isinstance(qs, str) else tuple(qs))
    ref = ReferenceSpec(cfg["reference.kind"], cfg["reference.amplitude"], cfg["reference.period"],
                        tuple(cfg["reference.amplitudes"]), tuple(cfg["reference.frequencies"]),
                        tuple(cfg["reference.phases"]))
    dist = DisturbanceSpec(cfg["disturbance.nu_u"], cfg["disturbance.nu_y"])
    theta0 = cfg["init.theta"]
    if theta0 not in ("zero", "ideal"):
        raise ConfigParseError("init.theta must be 'zero' or 'ideal'")
    x0 = np.asarray(cfg["init.x"], dtype=float)
    init = InitialConditions(x=x0.reshape(net.m, -1) if x0.size else None,
                             theta="ideal" if theta0 == "ideal" else None,
                             theta_noise=float(cfg["init.theta_noise"]))
    try:
        return ScenarioConfig(network=net, plants=tuple(plants), leader=leader, filter=filt,
                              tuner=tuner, reference=ref, disturbance=dist, T=float(cfg["sim.T"]),
                              h=float(cfg["sim.h"]), stride=int(cfg["sim.stride"]), initial=init,
                              mode=cfg["sim.mode"], seed=int(cfg["sim.seed"]))
    except ValueError as exc:
        if isinstance(exc, NetMRACError):
            raise
        raise ConfigParseError(str(exc)) from None


def validation_report(cfg: dict) -> tuple[bool, list[str]]:
    """Agent, leader and network checks as ``(ok, report lines)``."""
    lines, ok = [], True

    def check(name, passed, detail=""):
        nonlocal ok
        ok &= bool(passed)
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))

    net = _network(cfg)
    try:
        mats = assemble_matrices(net)
    except NetMRACError as exc:
        check("network", False, str(exc))
        return ok, lines
    for c in validate_network(mats).checks:
        check(f"network {c.name}", c.passed, c.detail)
    leader = TransferFunction.from_coeffs(cfg["leader.num"], cfg["leader.den"])
    check("leader stable", is_hurwitz(leader.den))
    check("leader SPR", is_spr(leader))
    try:
        plants = _plants(cfg, net.m)
    except ConfigInvalid as exc:
        check("plants", False, str(exc))
        return ok, lines
    for i, p in enumerate(plants, 1):
        check(f"agent {i} relative degree 1", p.relative_degree == 1, f"n_d = {p.relative_degree}")
        check(f"agent {i} order matches leader", p.order == leader.order)
        zeros_ok = p.num.degree < 1 or is_hurwitz(p.num)
        check(f"agent {i} minimum phase", zeros_ok,
              "" if zeros_ok else f"zeros {np.round(p.num.roots(), 6).tolist()}")
        if p.relative_degree == 1 and p.order == leader.order and zeros_ok:
            try:
                solve_ideal_gains(p, leader)
                check(f"agent {i} matching solvable", True)
            except NetMRACError as exc:
                check(f"agent {i} matching solvable", False, str(exc))
    return ok, lines


def _echo(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in sorted(cfg.items())}


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_one(cfg: dict, out_dir, label: str = "", write_trace: bool = True) -> dict:
    """Simulate one resolved config, write its artifacts and return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scen = build_scenario(cfg)
    t0 = time.perf_counter()
    status, last = "ok", None
    try:
        traj = integrate(scen)
    except NonFinite as exc:
        status, last, traj = "nonfinite", exc.last_finite_time, exc.trajectory
    duration = time.perf_counter() - t0
    manifest = {"version": __version__, "status": status, "label": label,
                "config": _echo(cfg), "duration_s": duration, "last_finite_time": last,
                "artifacts": {}}
    if traj is not None and len(traj):
        rec = evaluate(traj, cfg["network.topology"], cfg["tuner.kind"], scen.T, scen.seed)
        manifest["trace_sha256"] = traj.digest()
        manifest["metrics"] = {**rec.row(), "per_agent_l2_squared": rec.per_agent_l2_squared,
                               "final_error_inf": float(np.max(np.abs(traj.e[-1]))),
                               "final_window_mean": final_window_mean(traj, min(40.0, scen.T))}
        if write_trace:
            trace = out_dir / "trace.csv"
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-")
            os.close(fd)
            traj.to_csv(tmp)
            os.replace(tmp, trace)
            manifest["artifacts"]["trace"] = str(trace)
        mpath = out_dir / "metrics.csv"
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-")
        os.close(fd)
        write_records([rec], tmp)
        os.replace(tmp, mpath)
        manifest["artifacts"]["metrics"] = str(mpath)
    manifest["artifacts"]["manifest"] = str(out_dir / "manifest.json")
    _atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=2, default=float) + "\n")
    return manifest


def _overrides(args) -> dict:
    return {"sim.stride": getattr(args, "stride", None), "sim.seed": getattr(args, "seed", None)}


def _load(args) -> dict:
    file_cfg = load_config(args.config) if args.config else {}
    return resolve(file_cfg, _overrides(args))


def cmd_validate(args) -> int:
    cfg = _load(args)
    ok, lines = validation_report(cfg)
    print("\n".join(lines))
    print("valid" if ok else "INVALID")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_simulate(args) -> int:
    cfg = _load(args)
    ok, lines = validation_report(cfg)
    if not ok:
        print("\n".join(line for line in lines if line.startswith("[FAIL]")), file=sys.stderr)
        return EXIT_INVALID
    man = run_one(cfg, args.out, write_trace=not args.no_trace)
    if man["status"] != "ok":
        print(f"numerical abort after t={man['last_finite_time']:g}; manifest: "
              f"{man['artifacts']['manifest']}", file=sys.stderr)
        return EXIT_NONFINITE
    mt = man["metrics"]
    print(f"l2_squared={mt['l2_squared']:.6g} l2={mt['l2']:.6g} linf={mt['linf']:.6g} "
          f"trace_sha256={man['trace_sha256'][:16]}")
    return EXIT_OK


def _cell(job):
    key, cfg, out_dir, write_trace = job
    try:
        return key, run_one(cfg, out_dir, label="/".join(map(str, key)), write_trace=write_trace)
    except NetMRACError as exc:
        return key, {"status": "error", "error": f"{type(exc).__name__}: {exc}", "config": _echo(cfg)}


def _split(text: str | None) -> list[str]:
    return [v for v in (text or "").replace(",", " ").split() if v]


def sweep(file_cfg: dict, topologies, ms, tuners, out_dir, workers: int = 1,
          write_trace: bool = True, overrides: dict | None = None) -> tuple[list, list]:
    """Run a topology x m x tuner grid; returns (records, manifests) in grid order.

    Tuner gains not set in ``file_cfg`` take the per-kind defaults of each cell.
    """
    out_dir = Path(out_dir)
    jobs = []
    for top in topologies:
        for m in ms:
            for tk in tuners:
                key = (top, int(m), tk)
                cell = {**file_cfg, "network.topology": top, "network.m": int(m), "tuner.kind": tk}
                jobs.append((key, resolve(cell, overrides), out_dir / "cells" / f"{top}-m{m}-{tk}",
                             write_trace))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = dict(ex.map(_cell, jobs))
    else:
        done = dict(map(_cell, jobs))
    records, manifests = [], []
    for key, *_ in jobs:
        man = done[key]
        manifests.append(man)
        if "metrics" in man:
            mt = man["metrics"]
            records.append(MetricsRecord(mt["topology"], int(mt["m"]), mt["tuner"], mt["l2_squared"],
                                         mt["l2"], mt["linf"], mt["horizon"], mt["step"], int(mt["seed"]),
                                         mt["per_agent_l2_squared"]))
    write_records(records, out_dir / "metrics.csv")
    for value in ("l2_squared", "l2", "linf"):
        aggregate_table(records, value, by="m").write(out_dir / f"table_by_m_{value}.csv")
        aggregate_table(records, value, by="tuner").write(out_dir / f"table_by_tuner_{value}.csv")
    summary = [{"cell": "/".join(map(str, j[0])), "status": man.get("status"),
                "error": man.get("error")} for j, man in zip(jobs, manifests)]
    _atomic_write(out_dir / "sweep.json", json.dumps(summary, indent=2) + "\n")
    return records, manifests


def cmd_sweep(args) -> int:
    file_cfg = load_config(args.config) if args.config else {}
    tops, tuners = _split(args.topologies), _split(args.tuners)
    try:
        ms = [int(v) for v in _split(args.m)]
    except ValueError:
        raise ConfigParseError(f"bad m list {args.m!r}") from None
    if not (tops and ms and tuners):
        print("empty grid", file=sys.stderr)
        return EXIT_PARSE
    _, manifests = sweep(file_cfg, tops, ms, tuners, args.out, args.workers, not args.no_trace,
                         _overrides(args))
    failed = [m for m in manifests if m.get("status") != "ok"]
    print(f"{len(manifests) - len(failed)}/{len(manifests)} cells ok; tables in {args.out}")
    if any(m.get("status") == "nonfinite" for m in failed):
        return EXIT_NONFINITE
    return EXIT_INVALID if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netmrac", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="config file (dotted keys) or run manifest (.json)")
        sp.add_argument("--stride", type=int, help="record every N integration steps")
        sp.add_argument("--seed", type=int, help="seed for randomized initial parameters")
        if out:
            sp.add_argument("--out", default="out", help="output directory")
            sp.add_argument("--no-trace", action="store_true", help="skip trajectory CSV output")

    common(sub.add_parser("validate", help="check agents, leader and network"), out=False)
    common(sub.add_parser("simulate", help="run one scenario"))
    sw = sub.add_parser("sweep", help="run a topology x m x tuner grid")
    common(sw)
    sw.add_argument("--topologies", default="star_like,cyclic_like,path")
    sw.add_argument("--m", default="1,3,5,7,9,11,13")
    sw.add_argument("--tuners", default="gradient")
    sw.add_argument("--workers", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    handlers = {"validate": cmd_validate, "simulate": cmd_simulate, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NetMRACError as exc:
        print(f"invalid configuration: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
