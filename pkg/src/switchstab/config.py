"""Run configurations: schema, typed dataclasses and canonical emission.

Configs are YAML (JSON is accepted as a subset). Complex matrices are
nested lists whose entries are ``[re, im]`` pairs; a bare number is read as
a real entry. ``emit_config`` writes the canonical JSON form, and
``parse_config(emit_config(cfg)) == cfg`` for every valid config.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace

import jsonschema
import numpy as np
import yaml

from .classical import FAMILIES, ClassicalSwitchedSystem, QuadraticV
from .errors import ConfigError
from .operators import QuantumSubsystemSpec, hermitian_defect
from .quantum import MAX_JUMP_PROB, QuantumSwitchedSystem
from .switching import Hysteresis

VERDICTS = ("invariance", "e_delta", "qnd", "local_decay", "attractivity", "jump_direction")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_ENTRY = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}
_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": _ENTRY}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_MODE = _obj({"name": {"type": "string"}, "H": _MATRIX, "L": _MATRIX, "C": _MATRIX, "D": _MATRIX})

SCHEMA = _obj({
    "system": _obj({
        "kind": {"enum": ["quantum", "classical"]},
        "dim": {"type": "integer", "minimum": 2},
        "dS": {"type": "integer", "minimum": 1},
        "H0": _MATRIX,
        "modes": {"type": "array", "minItems": 1, "items": _MODE},
        "family": {"type": "string"},
        "params": {"type": "object"},
        "target": {"type": "array", "items": _NUM, "minItems": 1},
    }, ["kind"]),
    "controller": _obj({
        "j": {"type": "integer", "minimum": 1},
        "l": _POS, "l_star": _POS, "epsilon": _POS, "r": _NUM,
        "K_R": _MATRIX,
        "V": {"enum": ["quadratic"]},
    }, ["j", "l", "l_star", "epsilon", "r"]),
    "run": _obj({
        "T": _POS, "dt": _POS,
        "n_traj": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "burn_in": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "rho0": _MATRIX,
        "x0": {"type": "array", "items": _NUM, "minItems": 1},
        "fixed_mode": {"type": ["integer", "null"], "minimum": 1},
        "scheme": {"enum": ["kraus", "euler"]},
    }, ["T", "dt", "n_traj", "seed"]),
    "output": _obj({
        "dir": {"type": "string"},
        "stride": {"type": "integer", "minimum": 1},
        "trajectories": {"type": "boolean"},
    }),
    "certificates": _obj({
        "X_R": _MATRIX,
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "qnd_blocks": {"type": "array", "minItems": 2,
                       "items": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}}},
        "samples": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "require": {"type": "array", "items": {"enum": list(VERDICTS)}},
    }),
    "exponent": _obj({
        "bound": {"enum": ["qnd", "power", "classical", "linear1d", "value"]},
        "value": _NUM,
        "constants": _obj({"c2": _POS, "c3": {"type": "number", "minimum": 0},
                           "c4": {"type": "number", "minimum": 0},
                           "c5": {"type": "number", "minimum": 0}}, ["c2", "c3", "c4", "c5"]),
        "tolerance": {"type": "number", "minimum": 0},
    }, ["bound"]),
}, ["system", "controller", "run"])

Matrix = tuple  # tuple of rows of complex


def _to_matrix(data) -> Matrix:
    return tuple(tuple(complex(e[0], e[1]) if isinstance(e, (list, tuple)) else complex(e)
                       for e in row) for row in data)


def _from_matrix(M: Matrix):
    return [[[z.real, z.imag] for z in row] for row in M]


def as_array(M: Matrix):
    return np.array(M, dtype=complex)


class FrozenMap(tuple):
    """Hashable stand-in for a parameter mapping: sorted (key, value) pairs."""


def _freeze(obj):
    if isinstance(obj, dict):
        return FrozenMap(sorted((k, _freeze(v)) for k, v in obj.items()))
    if isinstance(obj, (list, tuple)):
        return tuple(_freeze(v) for v in obj)
    return float(obj) if isinstance(obj, int) and not isinstance(obj, bool) else obj


def _thaw(obj):
    if isinstance(obj, FrozenMap):
        return {k: _thaw(v) for k, v in obj}
    if isinstance(obj, tuple):
        return [_thaw(v) for v in obj]
    return obj


@dataclass(frozen=True)
class ModeConfig:
    name: str = ""
    H: Matrix | None = None
    L: Matrix | None = None
    C: Matrix | None = None
    D: Matrix | None = None


@dataclass(frozen=True)
class SystemConfig:
    kind: str
    dim: int | None = None
    dS: int | None = None
    H0: Matrix | None = None
    modes: tuple = ()
    family: str | None = None
    params: FrozenMap = FrozenMap()
    target: tuple | None = None


@dataclass(frozen=True)
class ControllerConfig:
    j: int
    l: float
    l_star: float
    epsilon: float
    r: float
    K_R: Matrix | None = None
    V: str = "quadratic"


@dataclass(frozen=True)
class RunBlock:
    T: float
    dt: float
    n_traj: int
    seed: int
    burn_in: float = 0.5
    rho0: Matrix | None = None
    x0: tuple | None = None
    fixed_mode: int | None = None
    scheme: str = "kraus"


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"
    stride: int = 1
    trajectories: bool = True


@dataclass(frozen=True)
class CertificatesBlock:
    X_R: Matrix | None = None
    delta: float | None = None
    qnd_blocks: tuple | None = None
    samples: int = 2000
    seed: int = 0
    require: tuple | None = None


@dataclass(frozen=True)
class ExponentBlock:
    bound: str
    value: float | None = None
    constants: tuple | None = None  # (c2, c3, c4, c5)
    tolerance: float = 0.15


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    controller: ControllerConfig
    run: RunBlock
    output: OutputBlock = field(default_factory=OutputBlock)
    certificates: CertificatesBlock | None = None
    exponent: ExponentBlock | None = None


# -- parsing ----------------------------------------------------------------------

def _path(err) -> str:
    parts = [str(p) if not isinstance(p, int) else f"[{p}]" for p in err.absolute_path]
    out = ""
    for p in parts:
        out += p if p.startswith("[") or not out else "." + p
    return out or "<root>"


def _schema_errors(raw) -> list:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    return [f"{_path(e)}: {e.message}" for e in errs]


def _build(raw) -> RunConfig:
    s = raw["system"]
    modes = tuple(ModeConfig(name=m.get("name", ""),
                             **{k: _to_matrix(m[k]) if k in m else None for k in ("H", "L", "C", "D")})
                  for m in s.get("modes", []))
    system = SystemConfig(
        kind=s["kind"], dim=s.get("dim"), dS=s.get("dS"),
        H0=_to_matrix(s["H0"]) if "H0" in s else None, modes=modes,
        family=s.get("family"), params=_freeze(s.get("params", {})),
        target=tuple(float(v) for v in s["target"]) if "target" in s else None,
    )
    c = raw["controller"]
    controller = ControllerConfig(
        j=c["j"], l=float(c["l"]), l_star=float(c["l_star"]), epsilon=float(c["epsilon"]),
        r=float(c["r"]), K_R=_to_matrix(c["K_R"]) if "K_R" in c else None, V=c.get("V", "quadratic"))
    r = raw["run"]
    run = RunBlock(
        T=float(r["T"]), dt=float(r["dt"]), n_traj=r["n_traj"], seed=r["seed"],
        burn_in=float(r.get("burn_in", 0.5)),
        rho0=_to_matrix(r["rho0"]) if "rho0" in r else None,
        x0=tuple(float(v) for v in r["x0"]) if "x0" in r else None,
        fixed_mode=r.get("fixed_mode"), scheme=r.get("scheme", "kraus"))
    o = raw.get("output", {})
    output = OutputBlock(dir=o.get("dir", "out"), stride=o.get("stride", 1),
                         trajectories=o.get("trajectories", True))
    cert = None
    if "certificates" in raw:
        cb = raw["certificates"]
        cert = CertificatesBlock(
            X_R=_to_matrix(cb["X_R"]) if "X_R" in cb else None,
            delta=float(cb["delta"]) if "delta" in cb else None,
            qnd_blocks=tuple(tuple(b) for b in cb["qnd_blocks"]) if "qnd_blocks" in cb else None,
            samples=cb.get("samples", 2000), seed=cb.get("seed", 0),
            require=tuple(cb["require"]) if "require" in cb else None)
    expo = None
    if "exponent" in raw:
        eb = raw["exponent"]
        k = eb.get("constants")
        expo = ExponentBlock(
            bound=eb["bound"], value=float(eb["value"]) if "value" in eb else None,
            constants=tuple(float(k[n]) for n in ("c2", "c3", "c4", "c5")) if k else None,
            tolerance=float(eb.get("tolerance", 0.15)))
    return RunConfig(system, controller, run, output, cert, expo)


def _check_square(M, d, where, errs):
    if M is None:
        return None
    A = as_array(M) if all(len(row) == len(M) for row in M) else None
    if A is None or A.shape != (d, d):
        shape = f"{len(M)}x{len(M[0])}" if A is None else f"{A.shape[0]}x{A.shape[1]}"
        errs.append(f"{where}: expected {d}x{d} matrix, got {shape}")
        return None
    return A


def _semantic_errors(cfg: RunConfig) -> list:
    errs = []
    c, s, r = cfg.controller, cfg.system, cfg.run
    if not 0.0 < c.r < 1.0:
        errs.append(f"controller.r: r must lie in (0,1), got {c.r}")
    if not c.epsilon < c.l_star:
        errs.append("controller.epsilon: epsilon must lie in (0, l_star)")
    if not 0.0 < c.l_star - c.epsilon < c.l:
        errs.append("controller: radii must satisfy 0 < l_star - epsilon < l")
    if r.T <= r.dt:
        errs.append("run.T: horizon must exceed dt")
    elif abs(round(r.T / r.dt) * r.dt - r.T) > 1e-9 * max(1.0, r.T):
        errs.append("run.T: must be a multiple of dt")
    m = 0
    if s.kind == "quantum":
        m = len(s.modes)
        for key in ("dim", "dS"):
            if getattr(s, key) is None:
                errs.append(f"system.{key}: required for quantum systems")
        if not s.modes:
            errs.append("system.modes: at least one mode is required for quantum systems")
        if s.family is not None or s.params or s.target is not None:
            errs.append("system: family, params and target apply to classical systems only")
        if s.dim is not None and s.dS is not None:
            d, dS = s.dim, s.dS
            if not dS < d:
                errs.append(f"system.dS: must be below dim={d}")
            H0 = _check_square(s.H0, d, "system.H0", errs)
            if H0 is not None and hermitian_defect(H0) > 1e-10:
                errs.append(f"system.H0: not Hermitian (max asymmetry {hermitian_defect(H0):.3g})")
            for i, mode in enumerate(s.modes):
                mats = {}
                for key in ("H", "L", "C", "D"):
                    mats[key] = _check_square(getattr(mode, key), d, f"system.modes[{i}].{key}", errs)
                H = mats["H"]
                if H is not None and hermitian_defect(H) > 1e-10:
                    errs.append(f"system.modes[{i}].H: not Hermitian (max asymmetry {hermitian_defect(H):.3g})")
                D = mats["D"]
                if D is not None:
                    sup = float(np.linalg.eigvalsh(D.conj().T @ D)[-1])
                    if sup * r.dt > MAX_JUMP_PROB:
                        errs.append(f"system.modes[{i}].D: sup jump rate {sup:.3g} times dt exceeds {MAX_JUMP_PROB}")
            if dS < d:
                if c.K_R is None:
                    errs.append("controller.K_R: required for quantum systems")
                else:
                    K = _check_square(c.K_R, d - dS, "controller.K_R", errs)
                    if K is not None and (hermitian_defect(K) > 1e-10
                                          or np.linalg.eigvalsh(0.5 * (K + K.conj().T))[0] < -1e-10):
                        errs.append("controller.K_R: must be Hermitian positive semidefinite")
            if r.rho0 is None:
                errs.append("run.rho0: required for quantum systems")
            else:
                rho = _check_square(r.rho0, d, "run.rho0", errs)
                if rho is not None:
                    if hermitian_defect(rho) > 1e-10:
                        errs.append("run.rho0: not Hermitian")
                    elif abs(np.trace(rho).real - 1) > 1e-9 or np.linalg.eigvalsh(rho)[0] < -1e-9:
                        errs.append("run.rho0: not a density matrix (trace 1, positive semidefinite)")
            if cfg.certificates is not None and dS < d:
                cb = cfg.certificates
                X = _check_square(cb.X_R, d - dS, "certificates.X_R", errs)
                if X is not None and np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0] <= 1e-10:
                    errs.append("certificates.X_R: must be positive definite")
                if (cb.X_R is None) != (cb.delta is None):
                    errs.append("certificates: X_R and delta must be given together")
                if cb.qnd_blocks is not None:
                    flat = sorted(i for b in cb.qnd_blocks for i in b)
                    if flat != list(range(d)):
                        errs.append(f"certificates.qnd_blocks: must partition 0..{d - 1}")
                    elif sorted(cb.qnd_blocks[0]) != list(range(dS)):
                        errs.append("certificates.qnd_blocks: first block must be the target indices")
    else:
        if s.family is None:
            errs.append("system.family: required for classical systems")
        elif s.family not in FAMILIES:
            errs.append(f"system.family: unknown family {s.family!r} (known: {sorted(FAMILIES)})")
        else:
            try:
                m = len(FAMILIES[s.family](**_thaw(s.params) if s.params else {}))
            except (TypeError, ValueError) as exc:
                errs.append(f"system.params: {exc}")
        if s.modes or s.H0 is not None or s.dim is not None or s.dS is not None:
            errs.append("system: dim, dS, H0 and modes apply to quantum systems only")
        if c.K_R is not None:
            errs.append("controller.K_R: applies to quantum systems only")
        if r.x0 is None:
            errs.append("run.x0: required for classical systems")
        if s.target is not None and r.x0 is not None and len(s.target) != len(r.x0):
            errs.append("run.x0: dimension differs from system.target")
        if cfg.certificates is not None and any(
                v is not None for v in (cfg.certificates.X_R, cfg.certificates.qnd_blocks)):
            errs.append("certificates: X_R and qnd_blocks apply to quantum systems only")
    if m and c.j > m:
        errs.append(f"controller.j: mode {c.j} exceeds mode count {m}")
    if m and r.fixed_mode is not None and r.fixed_mode > m:
        errs.append(f"run.fixed_mode: mode {r.fixed_mode} exceeds mode count {m}")
    e = cfg.exponent
    if e is not None:
        if e.bound == "value" and e.value is None:
            errs.append("exponent.value: required when bound is 'value'")
        if e.bound == "classical" and e.constants is None:
            errs.append("exponent.constants: required when bound is 'classical'")
        if e.bound in ("qnd", "power"):
            cb = cfg.certificates
            need = "qnd_blocks" if e.bound == "qnd" else "X_R"
            if cb is None or getattr(cb, need) is None:
                errs.append(f"exponent.bound: '{e.bound}' needs certificates.{need}")
        if e.bound == "linear1d" and s.family != "linear1d":
            errs.append("exponent.bound: 'linear1d' needs a linear1d system")
    return errs


class _Loader(yaml.SafeLoader):
    """SafeLoader that reads 1e-10 as a float, as YAML 1.2 and JSON do."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_raw(text: str):
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<root>: not valid YAML: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: config must be a mapping"])
    return raw


def parse_raw(raw) -> RunConfig:
    errs = _schema_errors(raw)
    try:
        cfg = _build(raw)
        errs += _semantic_errors(cfg)
    except Exception:  # structure too broken for the semantic pass
        if not errs:
            raise
    if errs:
        raise ConfigError(errs)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Validate a config text; raises ConfigError listing every problem."""
    return parse_raw(load_raw(text))


# -- emission ----------------------------------------------------------------------

def to_raw(cfg: RunConfig) -> dict:
    s = cfg.system
    system = {"kind": s.kind}
    if s.kind == "quantum":
        system.update(dim=s.dim, dS=s.dS)
        if s.H0 is not None:
            system["H0"] = _from_matrix(s.H0)
        system["modes"] = []
        for mcfg in s.modes:
            entry = {"name": mcfg.name}
            for key in ("H", "L", "C", "D"):
                if getattr(mcfg, key) is not None:
                    entry[key] = _from_matrix(getattr(mcfg, key))
            system["modes"].append(entry)
    else:
        system["family"] = s.family
        system["params"] = _thaw(s.params) if s.params else {}
        if s.target is not None:
            system["target"] = list(s.target)
    c = cfg.controller
    controller = {k: getattr(c, k) for k in ("j", "l", "l_star", "epsilon", "r", "V")}
    if c.K_R is not None:
        controller["K_R"] = _from_matrix(c.K_R)
    r = cfg.run
    run = {k: getattr(r, k) for k in ("T", "dt", "n_traj", "seed", "burn_in", "fixed_mode", "scheme")}
    if r.rho0 is not None:
        run["rho0"] = _from_matrix(r.rho0)
    if r.x0 is not None:
        run["x0"] = list(r.x0)
    out = {"system": system, "controller": controller, "run": run, "output": asdict(cfg.output)}
    if cfg.certificates is not None:
        cb = cfg.certificates
        block = {"samples": cb.samples, "seed": cb.seed}
        if cb.X_R is not None:
            block["X_R"] = _from_matrix(cb.X_R)
            block["delta"] = cb.delta
        if cb.qnd_blocks is not None:
            block["qnd_blocks"] = [list(b) for b in cb.qnd_blocks]
        if cb.require is not None:
            block["require"] = list(cb.require)
        out["certificates"] = block
    if cfg.exponent is not None:
        e = cfg.exponent
        block = {"bound": e.bound, "tolerance": e.tolerance}
        if e.value is not None:
            block["value"] = e.value
        if e.constants is not None:
            block["constants"] = dict(zip(("c2", "c3", "c4", "c5"), e.constants))
        out["exponent"] = block
    return out


def emit_config(cfg: RunConfig) -> str:
    """Canonical JSON text of a config (sorted keys, two-space indent)."""
    return json.dumps(to_raw(cfg), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Replace run fields (seed, n_traj, dt, T) and revalidate."""
    kw = {k: v for k, v in kw.items() if v is not None}
    if not kw:
        return cfg
    raw = to_raw(replace(cfg, run=replace(cfg.run, **kw)))
    return parse_raw(raw)


# -- building runtime objects --------------------------------------------------

def _hysteresis(cfg: RunConfig) -> Hysteresis:
    c = cfg.controller
    return Hysteresis(c.l, c.l_star, c.epsilon, c.r, c.j)


def build_system(cfg: RunConfig):
    s = cfg.system
    if s.kind == "quantum":
        d = s.dim
        H0 = as_array(s.H0) if s.H0 is not None else None
        modes = [QuantumSubsystemSpec.build(
            d, H0=H0, name=mc.name,
            **{k: as_array(getattr(mc, k)) for k in ("H", "L", "C", "D") if getattr(mc, k) is not None})
            for mc in s.modes]
        return QuantumSwitchedSystem(tuple(modes), s.dS, as_array(cfg.controller.K_R), _hysteresis(cfg))
    subs = FAMILIES[s.family](**(_thaw(s.params) if s.params else {}))
    dim = len(cfg.run.x0)
    target = np.array(s.target if s.target is not None else [0.0] * dim)
    return ClassicalSwitchedSystem(subs, QuadraticV(dim, center=target), target, _hysteresis(cfg))


def initial_state(cfg: RunConfig):
    if cfg.system.kind == "quantum":
        return as_array(cfg.run.rho0)
    return np.array(cfg.run.x0, dtype=float)


__all__ = [f.name for f in fields(RunConfig)] + [
    "RunConfig", "parse_config", "emit_config", "config_hash", "build_system",
    "initial_state", "with_overrides", "SCHEMA", "VERDICTS",
]
