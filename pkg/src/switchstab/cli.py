"""Command line front end: check, simulate, exponent and plotdata.

Exit codes: 0 pass, 1 usage or config error, 2 verdict failure,
3 numerical hard failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (DIST_FLOOR, EnsembleConfig, audit_ensemble, estimate_lyapunov_exponent,
                       run_ensemble, switch_statistics)
from .certificates import (QNDSpec, certify_classical, certify_quantum, exponent_bound_classical,
                           exponent_bound_quantum, gamma, lbar, phi_delta, psi_delta_bound,
                           qnd_constants, qnd_exponent_bound)
from .classical import linear1d_exact_exponent
from .config import (RunConfig, as_array, build_system, config_hash, initial_state, load_raw,
                     parse_raw, to_raw, with_overrides)
from .errors import ConfigError, NumericalFailure
from .operators import matrix_to_pairs

EXIT_OK, EXIT_CONFIG, EXIT_VERDICT, EXIT_NUMERICAL = 0, 1, 2, 3
PLOT_FIELDS = ("d0", "logd0", "obs", "mode")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def _report_base(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "config": to_raw(cfg),
        "config_hash": config_hash(cfg),
        "seeds": {"base_seed": cfg.run.seed, "path_seed": "SeedSequence([base_seed, path_index])",
                  "certificate_seed": cfg.certificates.seed if cfg.certificates else None},
        "versions": {"switchstab": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    return path


# -- check ------------------------------------------------------------------------

def run_check(cfg: RunConfig, strict=False):
    """Certificate report and overall verdict for a config."""
    system = build_system(cfg)
    cb = cfg.certificates
    n = cb.samples if cb else 2000
    rng = np.random.default_rng(np.random.SeedSequence([cb.seed if cb else 0, 0xC0DE]))
    if cfg.system.kind == "quantum":
        rep = certify_quantum(
            system, rng, n=n,
            XR=as_array(cb.X_R) if cb and cb.X_R is not None else None,
            delta=cb.delta if cb else None,
            qnd_blocks=[list(b) for b in cb.qnd_blocks] if cb and cb.qnd_blocks else None)
    else:
        rep = certify_classical(system, rng, n=n)
    if strict or cb is None or cb.require is None:
        required = sorted(rep.verdicts)
    else:
        required = list(cb.require)
    missing = [k for k in required if k not in rep.verdicts]
    ok = rep.passed(required) and not missing
    report = _report_base(cfg, "check")
    report.update(certificates=rep.as_dict(), verdicts=dict(rep.verdicts),
                  required=required, not_computed=missing, ok=ok)
    return report, ok


# -- simulate ---------------------------------------------------------------------

def _records(tr):
    """JSONL lines of one path: samples interleaved with switch and jump events."""
    events = [(s.t, {"t": s.t, "event": "switch", **{k: v for k, v in s.as_dict().items() if k != "t"}})
              for s in tr.switches if s.changed]
    events += [(e["t"], {"event": e.get("kind", "event"), **e}) for e in tr.events]
    events.sort(key=lambda p: p[0])
    lines, pos = [], 0
    for i, t in enumerate(tr.t):
        while pos < len(events) and events[pos][0] <= t:
            lines.append(dumps(events[pos][1]))
            pos += 1
        if tr.kind == "quantum":
            rec = {"t": float(t), "rho": matrix_to_pairs(tr.states[i]), "mode": int(tr.modes[i]),
                   "d0": float(tr.distance[i]), "trK": float(tr.observable[i])}
        else:
            rec = {"t": float(t), "x": tr.states[i].tolist(), "mode": int(tr.modes[i]),
                   "dist": float(tr.distance[i]), "V": float(tr.observable[i])}
        lines.append(dumps(rec))
    lines.extend(dumps(e[1]) for e in events[pos:])
    return lines


def write_trajectories(trajs, out_dir) -> list:
    tdir = Path(out_dir) / "trajectories"
    tdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(trajs):
        p = tdir / f"traj_{i:05d}.jsonl"
        p.write_text("\n".join(_records(tr)) + "\n")
        paths.append(p)
    return paths


def _ensemble(cfg: RunConfig, workers=None):
    system = build_system(cfg)
    ecfg = EnsembleConfig(cfg.run.n_traj, cfg.run.T, cfg.run.dt, cfg.run.seed,
                          cfg.run.burn_in, cfg.output.stride)
    res = run_ensemble(system, ecfg, initial_state(cfg), fixed_mode=cfg.run.fixed_mode,
                       scheme=cfg.run.scheme, workers=workers)
    return system, res.trajectories


def _summary(cfg, system, trajs):
    audit = audit_ensemble(trajs, system.hyst, system.m)
    stats = switch_statistics(trajs, cfg.controller.j)
    final = np.array([tr.distance[-1] for tr in trajs])
    return {
        "switch_stats": stats.as_dict(),
        "audit": {"n": audit.n, "ok": audit.ok, "failures": audit.failures[:20]},
        "final_distance": {"median": float(np.median(final)), "max": float(final.max())},
        "no_descent_flags": int(sum(tr.no_descent_flags for tr in trajs)),
    }


def run_simulate(cfg: RunConfig, out_dir=None, workers=None):
    """Simulate the ensemble; writes files when ``out_dir`` is given."""
    system, trajs = _ensemble(cfg, workers)
    report = _report_base(cfg, "simulate")
    report.update(_summary(cfg, system, trajs))
    report["verdicts"] = {"audit": report["audit"]["ok"]}
    report["ok"] = report["audit"]["ok"]
    if out_dir is not None:
        if cfg.output.trajectories:
            write_trajectories(trajs, out_dir)
        write_report(report, out_dir)
    return report, trajs


# -- exponent ---------------------------------------------------------------------

def exponent_bound(cfg: RunConfig, system) -> float:
    e = cfg.exponent
    j = cfg.controller.j
    if e.bound == "value":
        return e.value
    if e.bound == "classical":
        return exponent_bound_classical(*e.constants)
    if e.bound == "linear1d":
        p = dict(cfg.system.params)
        pick = lambda v: float(np.atleast_1d(v)[j - 1])  # noqa: E731
        return linear1d_exact_exponent(pick(p["a"]), pick(p["b"]), pick(p["gamma"]), float(p["c"]))
    spec = system.mode(j)
    cb = cfg.certificates
    if e.bound == "qnd":
        q = QNDSpec.from_operators(spec.C, spec.D, [list(b) for b in cb.qnd_blocks])
        return qnd_exponent_bound(*qnd_constants(q))
    XR = as_array(cb.X_R)
    return exponent_bound_quantum(lbar(spec, XR), gamma(XR, spec.C), phi_delta(XR, spec.D, cb.delta),
                                  psi_delta_bound(XR, spec.D, cb.delta), cb.delta)


def run_exponent(cfg: RunConfig, out_dir=None, workers=None):
    if cfg.exponent is None:
        raise ConfigError(["exponent: block required for the exponent command"])
    system, trajs = _ensemble(cfg, workers)
    bound = exponent_bound(cfg, system)
    try:
        est = estimate_lyapunov_exponent(trajs, cfg.run.burn_in, bound)
    except ValueError as exc:
        raise ConfigError([f"run: {exc}"]) from exc
    tol = cfg.exponent.tolerance
    warnings = []
    if est.ci_halfwidth > tol:
        warnings.append(f"confidence half-width {est.ci_halfwidth:.3g} exceeds tolerance {tol}; "
                        "increase T or n_traj")
    ok = bool(est.within_bound(tol))
    report = _report_base(cfg, "exponent")
    report.update(_summary(cfg, system, trajs))
    report.update(exponent=est.as_dict(), tolerance=tol, warnings=warnings,
                  verdicts={"exponent": ok, "audit": report["audit"]["ok"]})
    report["ok"] = ok and report["audit"]["ok"]
    if out_dir is not None:
        write_report(report, out_dir)
    return report, report["ok"]


# -- plot data --------------------------------------------------------------------

@dataclass
class _Loaded:
    t: np.ndarray
    distance: np.ndarray
    observable: np.ndarray
    modes: np.ndarray


def load_trajectories(path) -> list:
    """Read sample records back from a directory of JSONL trajectory files."""
    p = Path(path)
    if (p / "trajectories").is_dir():
        p = p / "trajectories"
    out = []
    for f in sorted(p.glob("traj_*.jsonl")):
        rows = [json.loads(line) for line in f.read_text().splitlines() if line]
        rows = [r for r in rows if "event" not in r]
        dkey, okey = ("d0", "trK") if rows and "d0" in rows[0] else ("dist", "V")
        out.append(_Loaded(np.array([r["t"] for r in rows]), np.array([r[dkey] for r in rows]),
                           np.array([r[okey] for r in rows]), np.array([r["mode"] for r in rows])))
    return out


def emit_plotdata(trajs, fields, path) -> Path:
    """Tidy CSV with columns t, field, value, traj_id."""
    fields = list(fields)
    bad = [f for f in fields if f not in PLOT_FIELDS]
    if bad:
        raise ValueError(f"unknown field(s) {bad}; known: {list(PLOT_FIELDS)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "field", "value", "traj_id"])
        for i, tr in enumerate(trajs):
            cols = {
                "d0": tr.distance,
                "logd0": np.log(np.maximum(tr.distance, DIST_FLOOR)),
                "obs": tr.observable,
                "mode": tr.modes,
            }
            for f in fields:
                for t, v in zip(tr.t, cols[f]):
                    w.writerow([repr(float(t)), f, repr(float(v)) if f != "mode" else int(v), i])
    return path


# -- entry point ------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="switchstab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("check", "simulate", "exponent"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML or JSON run config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory (default: output.dir)")
        s.add_argument("--traj", type=int, help="number of trajectories")
        s.add_argument("--dt", type=float)
        s.add_argument("--t-final", type=float, dest="t_final")
        s.add_argument("--strict", action="store_true", help="require every computed verdict")
    s = sub.add_parser("plotdata")
    s.add_argument("--input", required=True, help="simulate output directory")
    s.add_argument("--out", required=True, help="CSV file to write")
    s.add_argument("--fields", default="d0", help=f"comma list from {','.join(PLOT_FIELDS)}")
    return p


def _load(args) -> RunConfig:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"--config: {exc}"]) from exc
    raw = load_raw(text)
    cfg = parse_raw(raw)
    return with_overrides(cfg, seed=args.seed, n_traj=args.traj, dt=args.dt, T=args.t_final)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "plotdata":
            trajs = load_trajectories(args.input)
            emit_plotdata(trajs, [f.strip() for f in args.fields.split(",") if f.strip()], args.out)
            return EXIT_OK
        cfg = _load(args)
        out = args.out or cfg.output.dir
        if args.command == "check":
            report, ok = run_check(cfg, strict=args.strict)
            write_report(report, out)
        elif args.command == "simulate":
            report, _ = run_simulate(cfg, out)
            ok = report["ok"]
        else:
            report, ok = run_exponent(cfg, out)
            for w in report["warnings"]:
                print(f"warning: {w}", file=sys.stderr)
        print(dumps({k: report[k] for k in ("command", "config_hash", "verdicts", "ok")}))
        return EXIT_OK if ok else EXIT_VERDICT
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
