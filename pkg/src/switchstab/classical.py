"""Switched jump-diffusions driven by a state-dependent hysteresis law.

A subsystem is dX = f(X) dt + g(X) dW + int_{|z|<=c} h(X-, z) N~(dt, dz)
with N a Poisson random measure of intensity dt dz. Jumps are simulated
from the raw measure (a clock of rate 2c with uniform marks), so the
compensator int h(x, z) dz is subtracted from the drift.

State arrays have shape (..., d); drift returns (..., d), diffusion returns
(..., d, q) and jump(x, z) broadcasts z against the leading axes of x.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import NumericalFailure
from .switching import Controller, Hysteresis, NoiseStreams, Trajectory

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


@dataclass(frozen=True)
class ClassicalSubsystem:
    drift: Callable
    diffusion: Callable
    jump: Callable | None = None
    c: float = 0.0
    name: str = ""

    def noise_dim(self, x) -> int:
        return int(np.shape(self.diffusion(np.asarray(x, dtype=float)))[-1])

    def quadrature(self):
        """Gauss-Legendre marks and weights on [-c, c]."""
        return self.c * GL_NODES, self.c * GL_WEIGHTS

    def compensator(self, x):
        if self.jump is None or self.c == 0:
            return np.zeros_like(x)
        z, w = self.quadrature()
        h = self.jump(x[..., None, :], z)
        return np.einsum("...kd,k->...d", h, w)


class QuadraticV:
    """V(x) = (x - x0)^T P (x - x0); defaults to the squared distance."""

    def __init__(self, dim: int, P=None, center=None):
        self.P = np.eye(dim) if P is None else np.asarray(P, dtype=float)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def value(self, x):
        y = np.asarray(x) - self.center
        return np.einsum("...i,ij,...j->...", y, self.P, y)

    def grad(self, x):
        y = np.asarray(x) - self.center
        return y @ (self.P + self.P.T)

    def hess(self, x):
        x = np.asarray(x)
        return np.broadcast_to(self.P + self.P.T, x.shape[:-1] + self.P.shape)


class NumericV:
    """Value-only Lyapunov function; derivatives by central differences.

    The step is 1e-5 * (1 + |x|) at each point.
    """

    def __init__(self, fn, rel_step: float = 1e-5):
        self.fn = fn
        self.rel = rel_step

    def value(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def _h(self, x):
        return self.rel * (1.0 + np.linalg.norm(x, axis=-1))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        h = self._h(x)[..., None]
        d = x.shape[-1]
        out = np.empty_like(x)
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            out[..., i] = (self.fn(x + h * e) - self.fn(x - h * e)) / (2 * h[..., 0])
        return out

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        h = self._h(x)[..., None]
        d = x.shape[-1]
        out = np.empty(x.shape + (d,))
        eye = np.eye(d)
        for i in range(d):
            for k in range(i, d):
                ei, ek = h * eye[i], h * eye[k]
                val = (self.fn(x + ei + ek) - self.fn(x + ei - ek)
                       - self.fn(x - ei + ek) + self.fn(x - ei - ek)) / (4 * h[..., 0] ** 2)
                out[..., i, k] = out[..., k, i] = val
        return out


def generator_AV(sub: ClassicalSubsystem, V, x):
    """Ito generator of V under one subsystem, evaluated at x (..., d).

    grad V . f + tr(g^T hess V g) / 2 + int_{-c}^{c} [V(x+h) - V - grad V . h] dz,
    with the jump integral done by 64-node Gauss-Legendre.
    """
    x = np.asarray(x, dtype=float)
    gV = V.grad(x)
    out = np.einsum("...i,...i->...", gV, sub.drift(x))
    g = sub.diffusion(x)
    out = out + 0.5 * np.einsum("...iq,...ij,...jq->...", g, V.hess(x), g)
    if sub.jump is not None and sub.c > 0:
        z, w = sub.quadrature()
        h = sub.jump(x[..., None, :], z)
        bracket = V.value(x[..., None, :] + h) - V.value(x)[..., None] \
            - np.einsum("...d,...kd->...k", gV, h)
        if not np.all(np.isfinite(bracket)):
            raise FloatingPointError("V is not finite along the jump range")
        out = out + bracket @ w
    return out


@dataclass(frozen=True)
class ClassicalSwitchedSystem:
    subsystems: tuple
    V: object
    target: np.ndarray
    hyst: Hysteresis

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "target", np.atleast_1d(np.asarray(self.target, dtype=float)))
        if self.hyst.j > len(self.subsystems):
            raise ValueError(f"stabilizing mode {self.hyst.j} exceeds mode count")

    @property
    def m(self) -> int:
        return len(self.subsystems)

    @property
    def dim(self) -> int:
        return self.target.size

    def distance(self, x):
        return np.linalg.norm(np.asarray(x) - self.target, axis=-1)

    def values(self, x):
        """A_k V(x) for every mode, stacked on the last axis."""
        return np.stack([generator_AV(s, self.V, x) for s in self.subsystems], axis=-1)


def select_sigma1(x, sys: ClassicalSwitchedSystem) -> int:
    """Mode chosen by the switching law at x (1-based, lowest index on ties)."""
    if sys.distance(x) < sys.hyst.inner_radius:
        return sys.hyst.j
    return int(np.argmin(sys.values(x))) + 1


def _apply_jumps(sub, x, marks, offsets):
    """Apply a step's jumps to one state in time order; returns (x, kept)."""
    kept = []
    for k in np.argsort(offsets, kind="stable"):
        z = marks[k]
        if abs(z) <= sub.c:
            x = x + sub.jump(x, z)
            kept.append((float(offsets[k]), float(z)))
    return x, kept


def step_jump_diffusion(sub: ClassicalSubsystem, x, dt, rng, t=0.0):
    """One Euler-Maruyama step plus the jumps of the Poisson clock."""
    x = np.asarray(x, dtype=float)
    g = sub.diffusion(x)
    dW = np.sqrt(dt) * rng.standard_normal(g.shape[-1])
    out = x + (sub.drift(x) - sub.compensator(x)) * dt + g @ dW
    events = []
    if sub.jump is not None and sub.c > 0:
        cnt = rng.poisson(2 * sub.c * dt)
        marks = rng.uniform(-sub.c, sub.c, cnt)
        offs = rng.random(cnt)
        out, kept = _apply_jumps(sub, out, marks, offs)
        events = [{"t": t + o * dt, "kind": "jump", "z": z} for o, z in kept]
    if not np.all(np.isfinite(out)):
        raise NumericalFailure(f"non-finite state after step at t={t}")
    return out, events


def simulate_sigma1_batch(sys: ClassicalSwitchedSystem, x0, T, dt, rngs, *,
                          stride=1, fixed_mode=None, seeds=None):
    """Simulate len(rngs) independent paths under the switching law.

    The jump clock runs at the largest rate 2 c_max and marks beyond a
    mode's own bound are discarded, so modes may have different c.
    """
    n = len(rngs)
    seeds = seeds if seeds is not None else [None] * n
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a positive multiple of dt")
    x = np.repeat(np.atleast_1d(np.asarray(x0, dtype=float))[None], n, axis=0)
    subs = sys.subsystems
    qs = [s.noise_dim(x[0]) for s in subs]
    c_max = max((s.c for s in subs if s.jump is not None), default=0.0)
    noise = NoiseStreams(rngs, n_normal=max(qs), jump_mean=2 * c_max * dt, mark_bound=c_max)
    ctrl = Controller(n, sys.m, None if fixed_mode else sys.hyst, fixed_mode)
    values_fn = lambda idx: sys.values(x[idx])  # noqa: E731

    sample_steps = list(range(0, steps + 1, stride))
    if sample_steps[-1] != steps:
        sample_steps.append(steps)
    ns = len(sample_steps)
    S_x = np.empty((n, ns, sys.dim))
    S_mode = np.empty((n, ns), dtype=np.int64)
    S_dist = np.empty((n, ns))
    S_V = np.empty((n, ns))
    events = [[] for _ in range(n)]

    def record(col, dist):
        S_x[:, col] = x
        S_mode[:, col] = ctrl.active
        S_dist[:, col] = dist
        S_V[:, col] = sys.V.value(x)

    dist = sys.distance(x)
    ctrl.start(0.0, dist, values_fn)
    record(0, dist)
    col = 1
    sq = np.sqrt(dt)
    for s in range(1, steps + 1):
        t0 = (s - 1) * dt
        normal, _, jumps = noise.next()
        new = np.empty_like(x)
        for k in np.unique(ctrl.active):
            idx = np.nonzero(ctrl.active == k)[0]
            sub = subs[k - 1]
            xi = x[idx]
            dW = sq * normal[idx, :qs[k - 1]]
            drift = sub.drift(xi) - sub.compensator(xi)
            new[idx] = xi + drift * dt + np.einsum("nij,nj->ni", sub.diffusion(xi), dW)
        for i, (marks, offs) in jumps.items():
            k = int(ctrl.active[i])
            sub = subs[k - 1]
            if sub.jump is None:
                continue
            new[i], kept = _apply_jumps(sub, new[i], marks, offs)
            events[i].extend({"t": t0 + o * dt, "kind": "jump", "mode": k, "z": z} for o, z in kept)
        x = new
        if not np.all(np.isfinite(x)):
            bad = int(np.nonzero(~np.all(np.isfinite(x), axis=1))[0][0])
            raise NumericalFailure(f"path {bad} (seed {seeds[bad]}): non-finite state at t={s * dt}")
        dist = sys.distance(x)
        ctrl.update(s * dt, dist, values_fn)
        if col < ns and sample_steps[col] == s:
            record(col, dist)
            col += 1

    times = np.array(sample_steps) * dt
    return [
        Trajectory("classical", times, S_x[i], S_mode[i], S_dist[i], S_V[i],
                   switches=ctrl.log[i], events=events[i], seed=seeds[i],
                   no_descent_flags=int(ctrl.no_descent_flags[i]), pinned=fixed_mode is not None)
        for i in range(n)
    ]


def simulate_sigma1(sys: ClassicalSwitchedSystem, x0, T, dt, rng, **kw) -> Trajectory:
    return simulate_sigma1_batch(sys, x0, T, dt, [rng], **kw)[0]


def _ray_distance(region, x, directions, r_max, iters=40):
    """Smallest distance from x to the region boundary along the given rays."""
    best = np.inf
    inside = bool(region(x))
    for u in directions:
        if bool(region(x + r_max * u)) == inside:
            continue
        lo, hi = 0.0, r_max
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if bool(region(x + mid * u)) == inside:
                lo = mid
            else:
                hi = mid
        best = min(best, hi)
    return best


def check_partition_assumption(sub: ClassicalSubsystem, region, sampler, n, rng, *,
                               boundary_distance=None, nonattain_delta=None, r_max=10.0):
    """Sampled check that jumps neither cross nor leave a region.

    ``region(x)`` is a membership predicate. The distance to its boundary
    comes from ``boundary_distance(x)`` when supplied, otherwise from a ray
    search along 32 fixed directions plus the coordinate axes. That search
    can only overestimate the true distance, so the check stays necessary,
    not sufficient.
    """
    marks = np.linspace(-sub.c, sub.c, 64)
    crossing = leaving = nonattain = tested = 0
    min_ratio = np.inf
    dirs = None
    for _ in range(n):
        x = np.asarray(sampler(rng), dtype=float)
        if not region(x):
            continue
        tested += 1
        if sub.jump is None or sub.c == 0:
            continue
        h = np.array([sub.jump(x, z) for z in marks])
        size = float(np.max(np.linalg.norm(h, axis=-1)))
        if boundary_distance is not None:
            dist = float(boundary_distance(x))
        else:
            if dirs is None:
                d = x.size
                fixed = np.random.default_rng(0).standard_normal((32, d))
                dirs = np.vstack([np.eye(d), -np.eye(d),
                                  fixed / np.linalg.norm(fixed, axis=1, keepdims=True)])
            dist = _ray_distance(region, x, dirs, r_max)
        crossing += not dist > size
        leaving += not all(region(x + hk) for hk in h)
        if nonattain_delta is not None:
            nx = np.linalg.norm(x)
            if nx > 0:
                ratio = float(np.min(np.linalg.norm(x + h, axis=-1)) / nx)
                min_ratio = min(min_ratio, ratio)
                nonattain += ratio < nonattain_delta
    return {
        "tested": tested,
        "crossing_violations": int(crossing),
        "leaving_violations": int(leaving),
        "nonattain_violations": int(nonattain),
        "min_jump_ratio": None if not np.isfinite(min_ratio) else min_ratio,
        "pass": crossing == 0 and leaving == 0 and nonattain == 0,
    }


def linear1d_exact_exponent(a, b, gamma, c) -> float:
    """Almost-sure exponent of dX = aX dt + bX dW + int gamma X z N~(dt, dz)."""
    if gamma != 0 and abs(gamma) * c >= 1:
        raise ValueError("1 + gamma z must stay positive on [-c, c]")
    if gamma == 0 or c == 0:
        return a - 0.5 * b * b
    val, _ = integrate.quad(lambda z: np.log1p(gamma * z) - gamma * z, -c, c,
                            epsabs=1e-14, epsrel=1e-12)
    return a - 0.5 * b * b + val


# -- built-in families --------------------------------------------------------

class _Linear:
    """f = a x, g = b x, h = gamma x z in one dimension."""

    def __init__(self, a, b, gamma):
        self.a, self.b, self.gamma = float(a), float(b), float(gamma)

    def drift(self, x):
        return self.a * x

    def diffusion(self, x):
        return (self.b * x)[..., None]

    def jump(self, x, z):
        return self.gamma * x * np.asarray(z)[..., None]


class _Radial:
    """Radial drift x * phi(|x|^2) with multiplicative noise and jumps."""

    def __init__(self, coef, b, gamma):
        self.coef = tuple(float(v) for v in coef)  # phi(s) = c0 + c1 s
        self.b, self.gamma = float(b), float(gamma)

    def drift(self, x):
        s = np.sum(x * x, axis=-1, keepdims=True)
        return x * (self.coef[0] + self.coef[1] * s)

    def diffusion(self, x):
        return (self.b * x)[..., None]

    def jump(self, x, z):
        return self.gamma * x * np.asarray(z)[..., None]


def linear1d(a, b, gamma, c) -> tuple:
    """One scalar linear mode per entry of a, b and gamma; scalars broadcast."""
    try:
        a, b, gamma = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float))
                                            for v in (a, b, gamma)))
    except ValueError:
        raise ValueError("a, b and gamma need the same length") from None
    out = []
    for k, (ak, bk, gk) in enumerate(zip(a, b, gamma), 1):
        lin = _Linear(ak, bk, gk)
        out.append(ClassicalSubsystem(lin.drift, lin.diffusion, lin.jump if gk else None,
                                      float(c), name=f"linear{k}"))
    return tuple(out)


def doublewell2d(kappa=1.0, radius=1.5, beta=0.25, b=0.2, gamma=0.1, c=0.5) -> tuple:
    """Two planar modes, neither globally stabilizing on its own.

    Mode 1 follows the Mexican-hat potential kappa (|x|^2 - radius^2)^2 / 4:
    it pulls states onto the ring |x| = radius but repels them from the
    origin. Mode 2 has drift -x + beta |x|^2 x, contracting near the origin
    and diverging beyond 1/sqrt(beta).
    """
    ring = _Radial((kappa * radius ** 2, -kappa), b, gamma)
    local = _Radial((-1.0, beta), b, gamma)
    jump = gamma != 0
    return (
        ClassicalSubsystem(ring.drift, ring.diffusion, ring.jump if jump else None, c, "ring"),
        ClassicalSubsystem(local.drift, local.diffusion, local.jump if jump else None, c, "local"),
    )


FAMILIES = {"linear1d": linear1d, "doublewell2d": doublewell2d}


def register_family(name: str, factory: Callable) -> None:
    """Make a custom subsystem factory addressable from configs."""
    FAMILIES[name] = factory
