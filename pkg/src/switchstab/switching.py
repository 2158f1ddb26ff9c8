"""Hysteresis switching controller, trajectory container and auditor.

The controller is shared by the classical and quantum simulators. It acts
on a batch of paths at once, but every decision depends only on the row
of the batch it concerns, so a path evolves identically whether it is
simulated alone or alongside others.

Mode labels are 1-based throughout, matching how systems are described.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INNER = 0
OUTER = 1
TAG_NAMES = {INNER: "inner", OUTER: "outer"}


@dataclass(frozen=True)
class Hysteresis:
    """Radii and ratio of the two-band switching law.

    Paths within ``l_star - epsilon`` of the target run mode ``j`` until they
    drift out to ``l``. Outside, a path runs the generator-minimizing mode
    ``p`` while that mode keeps its value below ``r`` times the minimum.
    """

    l: float
    l_star: float
    epsilon: float
    r: float
    j: int

    def __post_init__(self):
        errs = []
        if not 0.0 < self.r < 1.0:
            errs.append(f"r must lie in (0,1), got {self.r}")
        if not 0.0 < self.epsilon < self.l_star:
            errs.append(f"epsilon must lie in (0, l_star), got {self.epsilon}")
        if not 0.0 < self.l_star - self.epsilon < self.l:
            errs.append("radii must satisfy 0 < l_star - epsilon < l")
        if self.j < 1:
            errs.append(f"j is a 1-based mode label, got {self.j}")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def inner_radius(self) -> float:
        return self.l_star - self.epsilon


@dataclass(frozen=True)
class SwitchRecord:
    t: float
    index: int
    tag: int
    distance: float
    changed: bool  # active index differs from the previous record

    def as_dict(self):
        return {"t": self.t, "kind": "switch", "mode": self.index,
                "tag": TAG_NAMES[self.tag], "distance": self.distance,
                "changed": self.changed}


class Controller:
    """Vectorized hysteresis controller.

    ``values_fn(idx)`` must return the generator values of every mode for
    the paths ``idx`` as an array of shape ``(len(idx), m)``. When
    ``hyst`` is None all paths stay pinned to ``fixed_mode``.
    """

    def __init__(self, n, m, hyst: Hysteresis | None, fixed_mode: int | None = None):
        self.n, self.m = n, m
        self.hyst = hyst
        self.fixed = fixed_mode
        if hyst is None and fixed_mode is None:
            raise ValueError("either a hysteresis law or a fixed mode is required")
        if hyst is not None and hyst.j > m:
            raise ValueError(f"stabilizing mode {hyst.j} exceeds mode count {m}")
        self.active = np.full(n, fixed_mode or 1, dtype=np.int64)
        self.tag = np.full(n, INNER, dtype=np.int64)
        self.log: list[list[SwitchRecord]] = [[] for _ in range(n)]
        self.no_descent_flags = np.zeros(n, dtype=np.int64)

    def _choose(self, idx, dist, values_fn, t, initial=False):
        h = self.hyst
        inner = dist[idx] < h.inner_radius
        new_idx = np.full(idx.size, h.j, dtype=np.int64)
        new_tag = np.full(idx.size, INNER, dtype=np.int64)
        out = idx[~inner]
        if out.size:
            vals = values_fn(out)
            best = np.argmin(vals, axis=1)
            vmin = vals[np.arange(out.size), best]
            self.no_descent_flags[out] += vmin >= 0.0
            new_idx[~inner] = best + 1
            new_tag[~inner] = OUTER
        for pos, i in enumerate(idx):
            p, g = int(new_idx[pos]), int(new_tag[pos])
            if not initial and p == self.active[i] and g == self.tag[i]:
                continue
            changed = initial or p != self.active[i]
            self.log[i].append(SwitchRecord(float(t), p, g, float(dist[i]), bool(changed)))
            self.active[i] = p
            self.tag[i] = g

    def start(self, t, dist, values_fn):
        if self.hyst is None:
            for i in range(self.n):
                self.log[i].append(SwitchRecord(float(t), self.fixed, INNER, float(dist[i]), True))
            return
        self._choose(np.arange(self.n), dist, values_fn, t, initial=True)

    def update(self, t, dist, values_fn):
        if self.hyst is None:
            return
        h = self.hyst
        exits = (self.tag == INNER) & (dist >= h.l)
        outer = np.nonzero(self.tag == OUTER)[0]
        if outer.size:
            vals = values_fn(outer)
            own = vals[np.arange(outer.size), self.active[outer] - 1]
            theta = (dist[outer] >= h.inner_radius) & (own < h.r * vals.min(axis=1))
            exits[outer[~theta]] = True
        idx = np.nonzero(exits)[0]
        if idx.size:
            self._choose(idx, dist, values_fn, t)


class NoiseStreams:
    """Per-path random draws, generated in fixed-size blocks.

    Each path owns its Generator and always consumes the same draws per
    step, whatever mode it is in and whichever batch it belongs to. This is
    what makes ensemble output independent of how paths are split between
    workers.
    """

    def __init__(self, rngs, n_normal=1, uniform=False, jump_mean=0.0,
                 mark_bound=0.0, block=512):
        self.rngs = list(rngs)
        self.q = n_normal
        self.uniform = uniform
        self.jump_mean = jump_mean
        self.c = mark_bound
        self.block = block
        self._pos = block

    def _refill(self):
        B, n = self.block, len(self.rngs)
        self._normal = np.empty((n, B, self.q))
        self._unif = np.empty((n, B)) if self.uniform else None
        self._counts = np.zeros((n, B), dtype=np.int64)
        self._marks, self._offsets, self._ptr = [], [], np.zeros(n, dtype=np.int64)
        for i, rng in enumerate(self.rngs):
            self._normal[i] = rng.standard_normal((B, self.q))
            if self.uniform:
                self._unif[i] = rng.random(B)
            if self.jump_mean > 0:
                cnt = rng.poisson(self.jump_mean, B)
                self._counts[i] = cnt
                tot = int(cnt.sum())
                self._marks.append(rng.uniform(-self.c, self.c, tot))
                self._offsets.append(rng.random(tot))
        self._pos = 0

    def next(self):
        """Draws for one step: normals (n, q), uniforms (n,) and jump marks.

        Jumps come back as a dict path -> (marks, offsets in [0,1)).
        """
        if self._pos >= self.block:
            self._refill()
        k = self._pos
        self._pos += 1
        normal = self._normal[:, k]
        unif = self._unif[:, k] if self.uniform else None
        jumps = {}
        if self.jump_mean > 0:
            for i in np.nonzero(self._counts[:, k])[0]:
                c = int(self._counts[i, k])
                p = int(self._ptr[i])
                jumps[int(i)] = (self._marks[i][p:p + c], self._offsets[i][p:p + c])
                self._ptr[i] = p + c
        return normal, unif, jumps


@dataclass
class Trajectory:
    """Sampled path of a switched system.

    ``states`` has shape (ns, d) for classical paths and (ns, d, d) for
    density matrices. ``observable`` is V(x) for classical paths and
    Tr(K rho) for quantum ones.
    """

    kind: str
    t: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    distance: np.ndarray
    observable: np.ndarray
    switches: list = field(default_factory=list)
    events: list = field(default_factory=list)
    seed: tuple | None = None
    no_descent_flags: int = 0
    pinned: bool = False

    @property
    def n_switches(self) -> int:
        """Number of changes of the active index after the initial choice."""
        return sum(1 for s in self.switches[1:] if s.changed)

    @property
    def final_mode(self) -> int:
        return int(self.modes[-1])

    def last_switch_time(self) -> float:
        changed = [s.t for s in self.switches[1:] if s.changed]
        return changed[-1] if changed else 0.0


@dataclass
class AuditReport:
    ok: bool
    problems: list

    def __bool__(self):
        return self.ok


def audit_trajectory(traj: Trajectory, hyst: Hysteresis | None, n_modes: int) -> AuditReport:
    """Check the controller bookkeeping of one path.

    Verifies strictly increasing switch times, one valid active mode per
    sample that agrees with the switch log, and that every inner episode
    was entered below ``l_star - epsilon`` and left only at ``l`` or beyond.
    """
    problems = []
    recs = traj.switches
    if not recs:
        problems.append("empty switch log")
        return AuditReport(False, problems)
    times = np.array([s.t for s in recs])
    if np.any(np.diff(times) <= 0):
        problems.append("switch times not strictly increasing")
    modes = np.asarray(traj.modes)
    if modes.ndim != 1 or modes.shape != traj.t.shape:
        problems.append("mode array does not give one mode per sample")
    elif np.any((modes < 1) | (modes > n_modes)):
        problems.append("sample with no valid active mode")
    else:
        k = np.searchsorted(times, traj.t, side="right") - 1
        if np.any(k < 0):
            problems.append("samples before the first controller decision")
        else:
            expect = np.array([recs[i].index for i in k])
            if np.any(expect != modes):
                problems.append("sampled mode disagrees with switch log")
    if hyst is not None and not traj.pinned:
        for prev, cur in zip(recs, recs[1:]):
            if cur.tag == INNER and cur.distance >= hyst.inner_radius:
                problems.append(f"inner entry at t={cur.t} with distance {cur.distance}")
            if prev.tag == INNER and cur.distance < hyst.l:
                problems.append(f"inner exit at t={cur.t} before reaching l")
        first = recs[0]
        if first.tag == INNER and first.distance >= hyst.inner_radius:
            problems.append("initial inner choice outside the inner band")
    return AuditReport(not problems, problems)
