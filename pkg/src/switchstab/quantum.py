"""Switched stochastic master equation with diffusive and counting records.

Inter-jump dynamics
-------------------
The filter is driven by the compensated counting process, so between
detections the state follows

    d rho = [F(rho) - v_D(rho) (J_D(rho) - rho)] dt + G(rho) dW
          = [F(rho) - D rho D* + v_D(rho) rho] dt + G(rho) dW,

and a detection replaces rho by J_D(rho) = D rho D* / v_D(rho). Detections
fire with probability 1 - exp(-v_D dt) per step.

Two integrators are provided for the inter-jump part. ``"euler"`` is the
plain Euler-Maruyama update of the equation above. ``"kraus"`` (default)
applies M rho M* + dt L rho L* and renormalizes, with

    M = I + dt (-i H - (L*L + C*C + D*D) / 2) + C dy,
    dy = dW + Tr[(C + C*) rho] dt.

Expanding the normalization reproduces the same drift and diffusion to
first order, but the update is positive by construction. Pure states sit on
the boundary of the state space, and there Euler-Maruyama overshoots by
O(dt) every step, far beyond any sensible repair tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure, PositivityError
from .operators import (
    TOL_RATE, QuantumSubsystemSpec, dag, diffusion_G, distance_d0, drift_F,
    extend, heisenberg_adjoint, hermitian_defect, jump_map, project_density,
    trace, trace_product,
)
from .switching import Controller, Hysteresis, NoiseStreams, Trajectory

MAX_JUMP_PROB = 0.1


@dataclass(frozen=True)
class QuantumSwitchedSystem:
    modes: tuple
    dS: int
    K_R: np.ndarray
    hyst: Hysteresis

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise ValueError("at least one mode is required")
        dims = {s.dim for s in modes}
        if len(dims) != 1:
            raise ValueError(f"modes have different dimensions {sorted(dims)}")
        d = modes[0].dim
        if not 1 <= self.dS < d:
            raise ValueError(f"dS must satisfy 1 <= dS < {d}")
        KR = np.array(self.K_R, dtype=complex, ndmin=2)
        if KR.shape != (d - self.dS, d - self.dS):
            raise ValueError(f"K_R must be {d - self.dS}x{d - self.dS}, got {KR.shape}")
        if hermitian_defect(KR) > 1e-10:
            raise ValueError("K_R must be Hermitian")
        if np.linalg.eigvalsh(0.5 * (KR + dag(KR)))[0] < -1e-10:
            raise ValueError("K_R must be positive semidefinite")
        object.__setattr__(self, "K_R", KR)
        if self.hyst.j > len(modes):
            raise ValueError(f"stabilizing mode {self.hyst.j} exceeds mode count {len(modes)}")

    @property
    def dim(self) -> int:
        return self.modes[0].dim

    @property
    def m(self) -> int:
        return len(self.modes)

    @property
    def K(self):
        return extend(self.K_R, self.dS)

    @property
    def j(self) -> int:
        return self.hyst.j

    def mode(self, k: int) -> QuantumSubsystemSpec:
        return self.modes[k - 1]

    def values(self, rho):
        """Tr(K F_k(rho)) for every mode; rho may be a stack."""
        A = np.stack([heisenberg_adjoint(s, self.K) for s in self.modes])
        return _values(A, rho)


def _values(adj, rho):
    rho = np.asarray(rho)
    return np.real(np.einsum("kij,...ji->...k", adj, rho))


def LK(rho, sys: QuantumSwitchedSystem):
    """Minimum over modes of Tr(K F_k(rho)) and its lowest 1-based argmin."""
    vals = sys.values(rho)
    k = int(np.argmin(vals))
    return float(vals[k]), k + 1


def region_sigma2(rho, sys: QuantumSwitchedSystem, p: int):
    """Membership tests used by the switching law for a path running mode p."""
    d0 = float(distance_d0(rho, sys.dS))
    vals = sys.values(rho)
    h = sys.hyst
    return {
        "d0": d0,
        "inner_entry": d0 < h.inner_radius,
        "inner_exit": d0 >= h.l,
        "in_theta": bool(d0 >= h.inner_radius and vals[p - 1] < h.r * vals.min()),
        "values": vals,
    }


class _Mode:
    """Precomputed matrices for stepping one mode on a batch of states."""

    def __init__(self, spec: QuantumSubsystemSpec):
        d = spec.dim
        self.spec = spec
        self.I = np.eye(d, dtype=complex)
        self.C, self.Cd = spec.C, dag(spec.C)
        self.L, self.Ld = spec.L, dag(spec.L)
        self.D, self.Dd = spec.D, dag(spec.D)
        self.DdD = self.Dd @ self.D
        self.has_L = bool(np.any(spec.L != 0))
        self.K = -1j * spec.hamiltonian - 0.5 * (self.Ld @ self.L + self.Cd @ self.C + self.DdD)

    def rates(self, rho):
        return np.real(trace_product(self.DdD, rho))

    def kraus(self, rho, dW, dt):
        dy = dW + 2.0 * np.real(trace_product(self.C, rho)) * dt
        M = self.I + dt * self.K + self.C * dy[:, None, None]
        out = M @ rho @ dag(M)
        if self.has_L:
            out = out + dt * (self.L @ rho @ self.Ld)
        return out / np.real(trace(out))[:, None, None]

    def euler(self, rho, dW, dt):
        DrD = self.D @ rho @ self.Dd
        v = np.real(trace(DrD))
        drift = drift_F(self.spec, rho) - DrD + v[:, None, None] * rho
        return rho + dt * drift + diffusion_G(self.C, rho) * dW[:, None, None]

    def step(self, rho, dW, u, dt, scheme):
        """Advance a batch; returns new states, jump mask and pre-jump rates."""
        v = self.rates(rho)
        fire = (u < -np.expm1(-v * dt)) & (v > TOL_RATE)
        out = self.kraus(rho, dW, dt) if scheme == "kraus" else self.euler(rho, dW, dt)
        if np.any(fire):
            r = rho[fire]
            post = self.D @ r @ self.Dd
            out[fire] = post / v[fire][:, None, None]
        return out, fire, v


def _check_dt(modes, dt):
    for k, s in enumerate(modes, 1):
        if s.max_jump_rate() * dt > MAX_JUMP_PROB:
            raise ValueError(
                f"mode {k}: sup jump rate {s.max_jump_rate():.3g} times dt exceeds {MAX_JUMP_PROB}")


def sme_step(spec: QuantumSubsystemSpec, rho, dt, rng, scheme="kraus"):
    """One integration step of a single path; returns (rho', events)."""
    _check_dt([spec], dt)
    mode = _Mode(spec)
    dW = np.sqrt(dt) * rng.standard_normal(1)
    u = rng.random(1)
    out, fire, v = mode.step(np.asarray(rho, dtype=complex)[None], dW, u, dt, scheme)
    events = [{"kind": "jump", "rate": float(v[0])}] if fire[0] else []
    return project_density(out[0]), events


def _repair(rho, seeds, idx):
    try:
        return project_density(rho)
    except PositivityError as exc:
        for pos, i in enumerate(idx):
            try:
                project_density(rho[pos])
            except PositivityError:
                raise NumericalFailure(f"path {int(i)} (seed {seeds[int(i)]}): {exc}") from exc
        raise


def simulate_sigma2_batch(sys: QuantumSwitchedSystem, rho0, T, dt, rngs, *,
                          stride=1, scheme="kraus", fixed_mode=None, seeds=None):
    """Simulate len(rngs) independent paths of the switched SME.

    With ``fixed_mode`` set, switching is disabled and every path runs that
    mode. Returns a list of Trajectory objects sampled every ``stride`` steps.
    """
    if scheme not in ("kraus", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    _check_dt(sys.modes, dt)
    n = len(rngs)
    seeds = seeds if seeds is not None else [None] * n
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a positive multiple of dt")
    modes = [_Mode(s) for s in sys.modes]
    K = sys.K
    adj = np.stack([heisenberg_adjoint(s, K) for s in sys.modes])
    rho = np.repeat(np.asarray(rho0, dtype=complex)[None], n, axis=0)
    rho = project_density(rho)
    noise = NoiseStreams(rngs, n_normal=1, uniform=True)
    ctrl = Controller(n, sys.m, None if fixed_mode else sys.hyst, fixed_mode)
    values_fn = lambda idx: _values(adj, rho[idx])  # noqa: E731

    sample_steps = list(range(0, steps + 1, stride))
    if sample_steps[-1] != steps:
        sample_steps.append(steps)
    ns = len(sample_steps)
    d = sys.dim
    S_rho = np.empty((n, ns, d, d), dtype=complex)
    S_mode = np.empty((n, ns), dtype=np.int64)
    S_d0 = np.empty((n, ns))
    S_trK = np.empty((n, ns))
    events = [[] for _ in range(n)]

    def record(col, dist):
        S_rho[:, col] = rho
        S_mode[:, col] = ctrl.active
        S_d0[:, col] = dist
        S_trK[:, col] = np.real(trace_product(K, rho))

    dist = distance_d0(rho, sys.dS)
    ctrl.start(0.0, dist, values_fn)
    record(0, dist)
    col = 1
    sq = np.sqrt(dt)
    for s in range(1, steps + 1):
        t = s * dt
        normal, unif, _ = noise.next()
        new = np.empty_like(rho)
        for k in np.unique(ctrl.active):
            idx = np.nonzero(ctrl.active == k)[0]
            out, fire, v = modes[k - 1].step(rho[idx], sq * normal[idx, 0], unif[idx], dt, scheme)
            new[idx] = _repair(out, seeds, idx)
            for pos in np.nonzero(fire)[0]:
                events[idx[pos]].append({"t": t, "kind": "jump", "mode": int(k), "rate": float(v[pos])})
        rho = new
        dist = distance_d0(rho, sys.dS)
        ctrl.update(t, dist, values_fn)
        if col < ns and sample_steps[col] == s:
            record(col, dist)
            col += 1

    times = np.array(sample_steps) * dt
    return [
        Trajectory("quantum", times, S_rho[i], S_mode[i], S_d0[i], S_trK[i],
                   switches=ctrl.log[i], events=events[i], seed=seeds[i],
                   no_descent_flags=int(ctrl.no_descent_flags[i]), pinned=fixed_mode is not None)
        for i in range(n)
    ]


def simulate_sigma2(sys: QuantumSwitchedSystem, rho0, T, dt, rng, **kw) -> Trajectory:
    return simulate_sigma2_batch(sys, rho0, T, dt, [rng], **kw)[0]


def lindblad_mean_ode(spec: QuantumSubsystemSpec, rho0, T, dt, stride=1):
    """RK4 solution of d rho/dt = F(rho); returns (times, states)."""
    steps = int(round(T / dt))
    rho = np.asarray(rho0, dtype=complex)
    f = lambda r: drift_F(spec, r)  # noqa: E731
    ts, out = [0.0], [rho.copy()]
    for s in range(1, steps + 1):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if s % stride == 0 or s == steps:
            ts.append(s * dt)
            out.append(rho.copy())
    return np.array(ts), np.array(out)


def generator_sme(spec: QuantumSubsystemSpec, V, rho) -> float:
    """Infinitesimal generator of the SME applied to a functional V at rho.

    dV[F] + d2V[G, G] / 2 + v_D (V(J) - V(rho) - dV[J - rho]). The jump
    bracket is dropped when the detection rate vanishes.
    """
    rho = np.asarray(rho, dtype=complex)
    out = V.d1(rho, drift_F(spec, rho)) + 0.5 * V.d2(rho, diffusion_G(spec.C, rho))
    J, v = jump_map(spec.D, rho)
    if J is not None:
        out += v * (V.value(J) - V.value(rho) - V.d1(rho, J - rho))
    return float(out)


def check_jump_direction_quantum(sys: QuantumSwitchedSystem, sampler, n, rng):
    """Count sampled states whose detection jump leaves their region.

    Two tests: a state in the region of mode k must stay there after a jump
    of mode k, and a state in the inner band must land within l after a jump
    of the stabilizing mode.
    """
    h = sys.hyst
    theta_viol = np.zeros(sys.m, dtype=np.int64)
    theta_tested = np.zeros(sys.m, dtype=np.int64)
    inner_viol = inner_tested = 0
    worst = 0.0
    for _ in range(n):
        rho = sampler(rng)
        reg = {k: region_sigma2(rho, sys, k)["in_theta"] for k in range(1, sys.m + 1)}
        for k in range(1, sys.m + 1):
            if not reg[k]:
                continue
            J, _ = jump_map(sys.mode(k).D, rho)
            if J is None:
                continue
            theta_tested[k - 1] += 1
            if not region_sigma2(J, sys, k)["in_theta"]:
                theta_viol[k - 1] += 1
        if distance_d0(rho, sys.dS) < h.inner_radius:
            J, _ = jump_map(sys.mode(h.j).D, rho)
            if J is not None:
                inner_tested += 1
                dj = float(distance_d0(J, sys.dS))
                worst = max(worst, dj)
                inner_viol += dj >= h.l
    return {
        "theta_violations": theta_viol.tolist(),
        "theta_tested": theta_tested.tolist(),
        "inner_violations": int(inner_viol),
        "inner_tested": int(inner_tested),
        "max_post_jump_d0": worst,
        "pass": bool(theta_viol.sum() == 0 and inner_viol == 0),
        "n": n,
    }

