"""Ensembles and the statistics computed from them."""
from __future__ import annotations

import multiprocessing as mp
import os
from dataclasses import dataclass, field

import numpy as np

from .classical import ClassicalSwitchedSystem, simulate_sigma1_batch
from .quantum import QuantumSwitchedSystem, simulate_sigma2_batch
from .switching import Trajectory, audit_trajectory

WORKERS_ENV = "SWITCHSTAB_WORKERS"
DIST_FLOOR = 1e-300


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int
    T: float
    dt: float
    base_seed: int = 0
    burn_in_fraction: float = 0.5
    stride: int = 1

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if not self.dt > 0 or not self.T > self.dt:
            raise ValueError("need dt > 0 and T > dt")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")


@dataclass
class EnsembleResult:
    trajectories: list
    config: EnsembleConfig
    seeds: list


def path_rng(base_seed: int, index: int) -> np.random.Generator:
    """Generator of path ``index``; depends on nothing else."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(index)]))


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


# state handed to forked workers by inheritance, so systems built from
# closures never need to be pickled
_JOB: dict = {}


def _run_chunk(indices):
    job = _JOB
    cfg = job["cfg"]
    rngs = [path_rng(cfg.base_seed, i) for i in indices]
    seeds = [(cfg.base_seed, int(i)) for i in indices]
    kw = dict(stride=cfg.stride, fixed_mode=job["fixed_mode"], seeds=seeds)
    system = job["system"]
    if isinstance(system, QuantumSwitchedSystem):
        return simulate_sigma2_batch(system, job["initial"], cfg.T, cfg.dt, rngs,
                                     scheme=job["scheme"], **kw)
    return simulate_sigma1_batch(system, job["initial"], cfg.T, cfg.dt, rngs, **kw)


def run_ensemble(system, cfg: EnsembleConfig, initial, *, fixed_mode=None,
                 scheme="kraus", workers=None) -> EnsembleResult:
    """Simulate cfg.n_traj paths of a classical or quantum switched system.

    Path i draws from a generator seeded by (base_seed, i), and paths never
    interact, so the output does not depend on the worker count.
    """
    if not isinstance(system, (QuantumSwitchedSystem, ClassicalSwitchedSystem)):
        raise TypeError(f"unsupported system type {type(system).__name__}")
    workers = default_workers() if workers is None else max(1, int(workers))
    chunks = [c for c in np.array_split(np.arange(cfg.n_traj), min(workers, cfg.n_traj)) if c.size]
    _JOB.clear()
    _JOB.update(system=system, cfg=cfg, initial=initial, fixed_mode=fixed_mode, scheme=scheme)
    try:
        if len(chunks) == 1:
            parts = [_run_chunk(chunks[0])]
        else:
            ctx = mp.get_context("fork")
            with ctx.Pool(len(chunks)) as pool:
                parts = pool.map(_run_chunk, chunks)
    finally:
        _JOB.clear()
    trajs = [t for part in parts for t in part]
    return EnsembleResult(trajs, cfg, [(cfg.base_seed, i) for i in range(cfg.n_traj)])


@dataclass
class ExponentEstimate:
    slope: float
    ci_halfwidth: float
    per_traj_slopes: list
    bound_used: float | None = None
    n_used: int = 0
    n_floored: int = 0
    window: tuple = (0.0, 0.0)

    def within_bound(self, tol: float = 0.0) -> bool | None:
        if self.bound_used is None:
            return None
        return self.slope <= self.bound_used + tol

    def as_dict(self):
        return {
            "slope": self.slope, "ci_halfwidth": self.ci_halfwidth,
            "bound": self.bound_used, "n_used": self.n_used,
            "n_floored": self.n_floored, "window": list(self.window),
        }


def _ols(t, y):
    tc = t - t.mean()
    sxx = float(tc @ tc)
    slope = float(tc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * tc
    se = np.sqrt(float(resid @ resid) / max(len(t) - 2, 1) / sxx)
    return slope, se


def estimate_lyapunov_exponent(trajs, burn_in_fraction=0.5, bound=None,
                               min_samples=100) -> ExponentEstimate:
    """Tail regression of log distance against time, averaged over paths.

    Paths whose tail touches DIST_FLOOR are left out of the average and
    counted in ``n_floored``.
    """
    if not trajs:
        raise ValueError("no trajectories")
    slopes, ses, floored = [], [], 0
    window = None
    for tr in trajs:
        T = tr.t[-1]
        mask = tr.t >= burn_in_fraction * T
        if mask.sum() < min_samples:
            raise ValueError(f"only {mask.sum()} samples after burn-in, need {min_samples}")
        d = tr.distance[mask]
        if np.any(d < DIST_FLOOR):
            floored += 1
            continue
        s, se = _ols(tr.t[mask], np.log(d))
        slopes.append(s)
        ses.append(se)
        window = (float(tr.t[mask][0]), float(T))
    if not slopes:
        raise ValueError("every path reached the distance floor; segment is degenerate")
    arr = np.array(slopes)
    if arr.size > 1:
        half = 1.96 * arr.std(ddof=1) / np.sqrt(arr.size)
    else:
        half = 1.96 * ses[0]
    return ExponentEstimate(float(arr.mean()), float(half), slopes, bound,
                            int(arr.size), floored, window)


@dataclass
class SwitchStats:
    counts: dict
    last_switch_times: list
    settled_fraction: float
    final_mode_distribution: dict
    median_count: float
    horizon: float
    tail_fraction: float = 0.2

    def as_dict(self):
        return {
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "settled_fraction": self.settled_fraction,
            "final_mode_distribution": {str(k): v for k, v in sorted(self.final_mode_distribution.items())},
            "median_count": self.median_count,
            "max_last_switch_time": max(self.last_switch_times, default=0.0),
            "horizon": self.horizon,
            "tail_fraction": self.tail_fraction,
        }


def switch_statistics(trajs, j: int, tail_fraction: float = 0.2) -> SwitchStats:
    """Switch-count histogram and the share of paths settled in mode j.

    A path is settled when it ends in mode j and its active index did not
    change during the last ``tail_fraction`` of the horizon.
    """
    n = len(trajs)
    counts: dict = {}
    finals: dict = {}
    last, settled = [], 0
    horizon = float(trajs[0].t[-1]) if trajs else 0.0
    for tr in trajs:
        c = tr.n_switches
        counts[c] = counts.get(c, 0) + 1
        fm = tr.final_mode
        finals[fm] = finals.get(fm, 0) + 1
        ls = tr.last_switch_time()
        last.append(ls)
        if fm == j and (c == 0 or ls < (1 - tail_fraction) * tr.t[-1]):
            settled += 1
    dist = {k: v / n for k, v in finals.items()} if n else {}
    med = float(np.median([tr.n_switches for tr in trajs])) if n else 0.0
    return SwitchStats(counts, last, settled / n if n else 0.0, dist, med, horizon, tail_fraction)


def wilson_interval(k: int, n: int, z: float = 1.96):
    """Wilson score interval for a binomial proportion; returns (lo, hi)."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z / den * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


def exit_probability(trajs, l, l_star, epsilon, mu1_of_l, mu2_of_lstar_eps):
    """Share of inner-started paths that reach distance l, against its bound.

    The bound is alpha = mu2(l_star - epsilon) / mu1(l). The verdict passes
    when the observed fraction is at most alpha + 3 sigma, with sigma the
    half-width of the one-sigma Wilson interval.
    """
    start_ok = [tr for tr in trajs if tr.distance[0] < l_star - epsilon]
    if not start_ok:
        raise ValueError("no trajectory starts inside the inner band")
    n = len(start_ok)
    k = sum(bool(np.any(tr.distance >= l)) for tr in start_ok)
    alpha = mu2_of_lstar_eps / mu1_of_l
    lo1, hi1 = wilson_interval(k, n, z=1.0)
    lo, hi = wilson_interval(k, n)
    sigma = 0.5 * (hi1 - lo1)
    frac = k / n
    return {
        "n": n, "exits": k, "fraction": frac, "wilson95": [lo, hi], "sigma": sigma,
        "alpha": alpha, "vacuous": alpha >= 1.0, "pass": frac <= alpha + 3 * sigma,
        "skipped": len(trajs) - n,
    }


def mean_vs_lindblad(trajs, ode_t, ode_states, dt):
    """Largest HS distance between the ensemble mean state and an ODE solution."""
    if any(not tr.pinned for tr in trajs):
        raise ValueError("ensemble used switching; the mean oracle needs a fixed mode")
    t = trajs[0].t
    mean = np.mean([tr.states for tr in trajs], axis=0)
    pos = np.searchsorted(ode_t, t - 1e-9 * max(1.0, t[-1]))
    if np.any(pos >= len(ode_t)) or not np.allclose(ode_t[pos], t, atol=1e-9):
        raise ValueError("ODE sample times do not cover the trajectory grid")
    dev = np.linalg.norm(mean - ode_states[pos], axis=(-2, -1))
    n = len(trajs)
    thr = 3.0 / np.sqrt(n) + 5.0 * dt
    return {"max_deviation": float(dev.max()), "threshold": thr,
            "pass": bool(dev.max() <= thr), "deviation": dev}


@dataclass
class AuditSummary:
    n: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def audit_ensemble(trajs, hyst, n_modes) -> AuditSummary:
    out = AuditSummary(len(trajs))
    for i, tr in enumerate(trajs):
        rep = audit_trajectory(tr, hyst, n_modes)
        if not rep.ok:
            out.failures.append((i, rep.problems))
    return out


__all__ = [
    "EnsembleConfig", "EnsembleResult", "ExponentEstimate", "SwitchStats",
    "Trajectory", "audit_ensemble", "default_workers", "estimate_lyapunov_exponent",
    "exit_probability", "mean_vs_lindblad", "path_rng", "run_ensemble",
    "switch_statistics", "wilson_interval",
]
