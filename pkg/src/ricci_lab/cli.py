"""Command-line scenario runner.

    ricci-lab simulate --config scenario.cfg [--out DIR] [--grid M] [--dt DT]
    ricci-lab analyze-example --G 0.1 0.01 0.001 --c 0.5 --p 2.5 3 4
    ricci-lab scan-iso --G 0.2 0.1 0.05 0.025 --c 0.5 --b-count 64

Scenario files are INI (sections ``profile``, ``flow``, ``cutoff``,
``monitors``, ``output``) or the same structure as JSON.  Exit codes: 0 for
a completed run (t_end, pinch or curvature cap), 2 for numeric failure, 1 for
a malformed config.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import RicciLabError
from .flow import FlowConfig, run_flow
from .geometry import build_cutoff, build_cylinder, build_dumbbell, build_round_sphere
from .monitors import extension_tracker, lrf_energy_monitor, perelman_monitor, pinch_monitor
from .norms import dumbbell_band_row, iso_quotient_scan, sobolev_from_iso

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

SCHEMA = {
    "profile": {"builder": str, "q": int, "M": int, "rho": float, "G": float, "c": float,
                "width": float, "gauge": str, "period": float},
    "flow": {"mode": str, "t_end": float, "dt": str, "cfl": float, "snapshot_every": int,
             "pinch_fraction": float, "rm_cap": float, "remesh": bool},
    "cutoff": {"s0": float, "r_in": float, "r_out": float, "shoulder": float},
    "monitors": {"list": str, "mu": float, "C_s": float, "energy_C": float,
                 "alpha": float, "eps_r": float, "s0": float},
    "output": {"dir": str},
}
REQUIRED = {"profile": ("builder",), "flow": ("t_end",)}
BUILDERS = ("round_sphere", "dumbbell", "cylinder")
MONITORS = ("pinch", "extension", "energy", "perelman", "frozen")


class ConfigError(Exception):
    """Malformed scenario; the message names the line or ``[section] key``."""


def _coerce(section: str, key: str, raw, kind):
    where = f"[{section}] {key}"
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(f"not an integer: {raw!r}")
            return int(raw)
        if kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(f"not finite: {raw!r}")
            return value
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _normalise(raw: dict) -> dict:
    out = {}
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}]: expected a table of keys")
        out[section] = {}
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")
            out[section][key] = _coerce(section, key, value, SCHEMA[section][key])
    for section, keys in REQUIRED.items():
        for key in keys:
            if key not in out.get(section, {}):
                raise ConfigError(f"[{section}] {key}: required")
    return out


def _ini_error(exc: configparser.Error) -> str:
    if isinstance(exc, configparser.ParsingError) and exc.errors:
        lineno, line = exc.errors[0]
        return f"line {lineno}: cannot parse {line.strip()!r}"
    lineno = getattr(exc, "lineno", None)
    msg = getattr(exc, "message", str(exc)).splitlines()[0]
    return f"line {lineno}: {msg}" if lineno else msg


def parse_config_text(text: str, fmt: str = "ini") -> dict:
    if fmt not in ("ini", "json"):
        raise ConfigError(f"unknown config format {fmt!r}")
    if fmt == "json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("line 1: top level must be an object")
        return _normalise(raw)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(_ini_error(exc)) from None
    return _normalise({s: dict(parser.items(s)) for s in parser.sections()})


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config_text(text, "json" if path.endswith(".json") else "ini")


def config_hash(cfg: dict) -> str:
    """Digest of everything except the output location."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


@dataclass
class Scenario:
    cfg: dict
    profile: object
    flow: FlowConfig
    monitors: tuple[str, ...]


def build_scenario(cfg: dict) -> Scenario:
    """Turn a normalised config into library objects; value errors become ConfigError."""
    prof_cfg = cfg["profile"]
    builder = prof_cfg["builder"]
    q = prof_cfg.get("q", 3)
    M = prof_cfg.get("M", 400)
    try:
        if builder == "round_sphere":
            profile = build_round_sphere(prof_cfg.get("rho", 1.0), q, M)
        elif builder == "cylinder":
            profile = build_cylinder(prof_cfg.get("rho", 1.0), q, M, prof_cfg.get("period", 2 * math.pi))
        elif builder == "dumbbell":
            for key in ("G", "c"):
                if key not in prof_cfg:
                    raise ConfigError(f"[profile] {key}: required for the dumbbell builder")
            profile = build_dumbbell(prof_cfg["G"], prof_cfg["c"], q=q, width=prof_cfg.get("width", 0.5),
                                     M=M, gauge=prof_cfg.get("gauge", "arclength"))
        else:
            raise ConfigError(f"[profile] builder: must be one of {BUILDERS}")
    except (ValueError, RicciLabError) as exc:
        raise ConfigError(f"[profile]: {exc}") from None

    fl = cfg["flow"]
    mode = fl.get("mode", "ricci")
    cutoff = None
    if mode == "local_ricci":
        cut = cfg.get("cutoff")
        if not cut or any(k not in cut for k in ("s0", "r_in", "r_out")):
            raise ConfigError("[cutoff]: s0, r_in and r_out are required for local_ricci")
        try:
            cutoff = build_cutoff(profile, cut["s0"], cut["r_in"], cut["r_out"], cut.get("shoulder", 0.3))
        except (ValueError, RicciLabError) as exc:
            raise ConfigError(f"[cutoff]: {exc}") from None
    dt_raw = fl.get("dt", "adaptive")
    dt = None if dt_raw == "adaptive" else _coerce("flow", "dt", dt_raw, float)
    try:
        flow = FlowConfig(mode=mode, cutoff=cutoff, t_end=fl["t_end"], dt=dt, cfl=fl.get("cfl", 0.5),
                          snapshot_every=fl.get("snapshot_every", 100),
                          pinch_fraction=fl.get("pinch_fraction", 1e-3), rm_cap=fl.get("rm_cap"),
                          remesh=fl.get("remesh", False))
    except (ValueError, RicciLabError) as exc:
        raise ConfigError(f"[flow]: {exc}") from None
    names = tuple(m.strip() for m in cfg.get("monitors", {}).get("list", "").split(",") if m.strip())
    for name in names:
        if name not in MONITORS:
            raise ConfigError(f"[monitors] list: unknown monitor {name!r}")
    return Scenario(cfg, profile, flow, names)


def apply_overrides(cfg: dict, grid: int | None, dt: float | None, out: str | None) -> dict:
    cfg = json.loads(json.dumps(cfg))
    if grid is not None:
        cfg["profile"]["M"] = grid
    if dt is not None:
        cfg["flow"]["dt"] = repr(float(dt))
    if out is not None:
        cfg.setdefault("output", {})["dir"] = out
    return cfg


def _monitor_reports(sc: Scenario, traj) -> dict:
    mon = sc.cfg.get("monitors", {})
    reports = {"summary": {"stop_reason": traj.stop_reason, "t_stop": traj.t_stop, "steps": traj.steps,
                           "message": traj.message, "psi_max_final": float(traj.series["psi_max"][-1]),
                           "waist_final": float(traj.series["waist"][-1]),
                           "remesh_times": list(traj.remesh_times)}}
    for name in sc.monitors:
        if name == "pinch":
            G = sc.cfg["profile"].get("G")
            reports["pinch"] = json.loads(pinch_monitor(traj, mon.get("mu", 2.0), G).to_json())
        elif name == "extension":
            reports["extension"] = json.loads(extension_tracker(traj).to_json())
        elif name == "energy":
            A0 = sobolev_from_iso(traj.initial.dim, mon["C_s"]) if "C_s" in mon else None
            rep = lrf_energy_monitor(traj, A0, mon.get("energy_C", 100.0))
            reports["energy"] = {k: v for k, v in json.loads(rep.to_json()).items()
                                 if k not in ("times", "energy", "energy2")}
        elif name == "perelman":
            rep = perelman_monitor(traj, mon.get("alpha", 1.0), mon.get("eps_r", 1.0), mon.get("s0", 0.0))
            reports["perelman"] = json.loads(rep.to_json())
        elif name == "frozen":
            frozen = traj.chi == 0
            same = all(np.array_equal(p.phi[frozen], traj.initial.phi[frozen])
                       and np.array_equal(p.psi[frozen], traj.initial.psi[frozen]) for p in traj.profiles)
            reports["frozen"] = {"nodes": int(frozen.sum()), "bit_identical": bool(same)}
    return reports


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    try:
        cfg = apply_overrides(load_config(args.config), args.grid, args.dt, args.out)
        sc = build_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.get("output", {}).get("dir") or "ricci_lab_out"
    os.makedirs(out, exist_ok=True)
    traj = run_flow(sc.profile, sc.flow)
    _write(os.path.join(out, "series.csv"), traj.to_csv())
    traj.write_snapshots(os.path.join(out, "snapshots"))
    reports = _monitor_reports(sc, traj)
    _write(os.path.join(out, "monitors.json"), json.dumps(reports, sort_keys=True, indent=1) + "\n")
    manifest = {"config": cfg, "config_hash": config_hash(cfg), "version": __version__,
                "grid": {"M": sc.profile.n - 1, "q": sc.profile.q, "topology": sc.profile.topology},
                "stop_reason": traj.stop_reason, "seed": args.seed, "snapshots": len(traj.times)}
    _write(os.path.join(out, "manifest.json"), json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    print(f"{traj.stop_reason} at t = {traj.t_stop:.10g} after {traj.steps} steps -> {out}")
    return EXIT_NUMERIC if traj.stop_reason == "numeric_failure" else EXIT_OK


# ---------------------------------------------------------------------------
# example analysis and isoperimetric scans


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(list(rows[0]))
    for r in rows:
        wr.writerow([repr(float(v)) for v in r.values()])
    return buf.getvalue()


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _example_job(args):
    return dumbbell_band_row(*args)


def cmd_analyze_example(args) -> int:
    rows = _map(_example_job, [(G, args.c, tuple(args.p), args.grid or 3200) for G in args.G], args.jobs)
    text = _rows_to_csv(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "example.csv"), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def iso_scan_rows(G: float, c: float, b_count: int, M: int = 3200):
    prof = build_dumbbell(G, c, q=3, M=M, gauge="neck")
    b = c * np.arange(1, b_count + 1) / b_count
    scan = iso_quotient_scan(prof, b, s_lo=0.0)
    return [(G, float(bb), float(Q)) for bb, Q in zip(scan.b, scan.Q)]


def _iso_job(args):
    return iso_scan_rows(*args)


def cmd_scan_iso(args) -> int:
    per_G = _map(_iso_job, [(G, args.c, args.b_count, args.grid or 3200) for G in args.G], args.jobs)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["G", "b", "Q"])
    summary = {"per_G": {}, "c": args.c, "b_count": args.b_count}
    for rows in per_G:
        for row in rows:
            wr.writerow([repr(v) for v in row])
        Q = np.array([r[2] for r in rows])
        d = np.diff(Q)
        trend = "increasing" if np.all(d > 0) else "decreasing" if np.all(d < 0) else "mixed"
        summary["per_G"][repr(rows[0][0])] = {"sup": float(Q.max()), "finite": bool(np.all(np.isfinite(Q))),
                                              "trend": trend}
    summary["sup"] = max(v["sup"] for v in summary["per_G"].values())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "iso_scan.csv"), buf.getvalue())
        _write(os.path.join(args.out, "iso_summary.json"), json.dumps(summary, sort_keys=True, indent=1) + "\n")
    else:
        sys.stdout.write(buf.getvalue())
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ricci-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory")
        p.add_argument("--grid", type=int, help="grid intervals M")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")

    sim = sub.add_parser("simulate", help="run a flow scenario")
    sim.add_argument("--config", required=True)
    sim.add_argument("--dt", type=float, help="fixed time step (overrides the config)")
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    ex = sub.add_parser("analyze-example", help="band norms of the dumbbell neck")
    ex.add_argument("--G", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025, 0.001])
    ex.add_argument("--c", type=float, default=0.5)
    ex.add_argument("--p", type=float, nargs="+", default=[2.5, 3.0, 4.0])
    common(ex)
    ex.set_defaults(func=cmd_analyze_example)

    iso = sub.add_parser("scan-iso", help="isoperimetric quotients over neck-anchored bands")
    iso.add_argument("--G", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    iso.add_argument("--c", type=float, default=0.5)
    iso.add_argument("--b-count", type=int, default=64)
    common(iso)
    iso.set_defaults(func=cmd_scan_iso)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
