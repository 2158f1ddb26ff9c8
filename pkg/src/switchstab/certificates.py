"""Stability certificates for switched open quantum systems.

Closed-form scalars (decay rates, measurement gains, exponent bounds) plus
sampled checks of the hypotheses those scalars rely on. The sampled checks
are necessary-condition tests: passing them does not prove a hypothesis.

An operator on the R block is passed as ``XR``; its extension to the full
space is [[0, 0], [0, XR]] and dS is inferred from the operator it is
paired with.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classical import ClassicalSwitchedSystem, generator_AV
from .functionals import PowerFunctional, SqrtPopulations
from .operators import (
    QuantumSubsystemSpec, block_decompose, dag, distance_d0, extend,
    random_density, trace_product,
)
from .quantum import QuantumSwitchedSystem, check_jump_direction_quantum, generator_sme

TOL_INVARIANCE = 1e-9
PSI_FLOOR = -1e3


def _eigh_bounds(A):
    w = np.linalg.eigvalsh(0.5 * (A + dag(A)))
    return float(w[0]), float(w[-1])


def _require_pd(XR, name="XR"):
    XR = np.atleast_2d(np.asarray(XR, dtype=complex))
    lo, _ = _eigh_bounds(XR)
    if lo <= 1e-10:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {lo:.3g})")
    return XR


def _dS_for(XR, A):
    return np.asarray(A).shape[-1] - np.atleast_2d(XR).shape[-1]


# -- invariance ---------------------------------------------------------------

def check_invariance(spec: QuantumSubsystemSpec, dS: int):
    """Residuals of the block conditions that keep span(e_0..e_{dS-1}) invariant.

    The channels must not map the target into its complement (zero Q
    blocks), and the Hamiltonian coupling must cancel the channels' P blocks.
    """
    blocks = {name: block_decompose(A, dS) for name, A in
              (("L", spec.L), ("C", spec.C), ("D", spec.D), ("H", spec.hamiltonian))}
    res = {f"{k}_Q": float(np.linalg.norm(blocks[k].Q)) for k in ("L", "C", "D")}
    acc = sum(dag(blocks[k].S) @ blocks[k].P for k in ("L", "C", "D"))
    res["hamiltonian_P"] = float(np.linalg.norm(1j * blocks["H"].P - 0.5 * acc))
    return {"residuals": res, "pass": all(v <= TOL_INVARIANCE for v in res.values())}


# -- reduced generator on the R block -----------------------------------------

def _reduced_parts(spec, dR):
    dS = spec.dim - dR
    H = block_decompose(spec.hamiltonian, dS).R
    parts = []
    for A in spec.channels:
        b = block_decompose(A, dS)
        parts.append((b.R, dag(b.P) @ b.P + dag(b.R) @ b.R))
    return H, parts


def reduced_generator_R(spec: QuantumSubsystemSpec, rho_R):
    """Generator restricted to the R block, acting on an R-block operator."""
    rho_R = np.atleast_2d(np.asarray(rho_R, dtype=complex))
    H, parts = _reduced_parts(spec, rho_R.shape[-1])
    out = -1j * (H @ rho_R - rho_R @ H)
    for AR, N in parts:
        out = out + AR @ rho_R @ dag(AR) - 0.5 * (N @ rho_R + rho_R @ N)
    return out


def adjoint_generator_R(spec: QuantumSubsystemSpec, XR):
    """Hilbert-Schmidt adjoint of reduced_generator_R."""
    XR = np.atleast_2d(np.asarray(XR, dtype=complex))
    H, parts = _reduced_parts(spec, XR.shape[-1])
    out = 1j * (H @ XR - XR @ H)
    for AR, N in parts:
        out = out + dag(AR) @ XR @ AR - 0.5 * (N @ XR + XR @ N)
    return out


def _inv_sqrt(XR):
    w, U = np.linalg.eigh(XR)
    return (U / np.sqrt(w)) @ dag(U)


def lbar(spec: QuantumSubsystemSpec, XR) -> float:
    """Smallest lambda with adjoint_generator_R(XR) <= lambda XR."""
    XR = _require_pd(XR)
    W = _inv_sqrt(XR)
    M = W @ adjoint_generator_R(spec, XR) @ W
    return _eigh_bounds(M)[1]


def lbar_residuals(spec, XR, value=None):
    """Feasibility and minimality residuals of an lbar value.

    ``feasible`` is the least eigenvalue of lambda XR - F*(XR), which must
    be >= -1e-9. ``tight`` is the least eigenvalue after lowering lambda by
    1e-6, which must be negative.
    """
    XR = _require_pd(XR)
    lam = lbar(spec, XR) if value is None else value
    F = adjoint_generator_R(spec, XR)
    return {"feasible": _eigh_bounds(lam * XR - F)[0],
            "tight": _eigh_bounds((lam - 1e-6) * XR - F)[0]}


# -- measurement gains ---------------------------------------------------------

def gamma(XR, C) -> float:
    """Lower bound on the diffusive gain Tr(X G_C(rho)) / Tr(X rho) near the target."""
    XR = _require_pd(XR)
    C = np.asarray(C, dtype=complex)
    b = block_decompose(C, _dS_for(XR, C))
    if np.linalg.norm(b.Q) > TOL_INVARIANCE:
        raise ValueError("C maps the target into its complement (nonzero Q block)")
    s_lo, s_hi = _eigh_bounds(b.S + dag(b.S))
    Z = XR @ b.R + dag(b.R) @ XR
    z_lo, z_hi = _eigh_bounds(Z)
    x_lo, _ = _eigh_bounds(XR)
    up = max(0.0, z_hi / x_lo)
    if up < s_lo:
        return s_lo - up
    down = min(0.0, z_lo / x_lo)
    if down > s_hi:
        return down - s_hi
    return 0.0


def gamma_projector(C, dS: int) -> float:
    """gamma with X the projector onto the complement of the target."""
    b = block_decompose(np.asarray(C, dtype=complex), dS)
    if np.linalg.norm(b.Q) > TOL_INVARIANCE:
        raise ValueError("C maps the target into its complement (nonzero Q block)")
    lo, hi = _eigh_bounds(b.S + dag(b.S))
    if lo > 0:
        return lo
    if hi < 0:
        return hi
    return 0.0


def _jump_blocks(XR, D):
    XR = _require_pd(XR)
    D = np.asarray(D, dtype=complex)
    b = block_decompose(D, _dS_for(XR, D))
    if np.linalg.norm(b.Q) > TOL_INVARIANCE:
        raise ValueError("D maps the target into its complement (nonzero Q block)")
    return XR, _eigh_bounds(dag(b.S) @ b.S), _eigh_bounds(dag(b.R) @ XR @ b.R), _eigh_bounds(XR)


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0,1), got {delta}")


def phi_delta(XR, D, delta) -> float:
    """Upper bound on the counting-measurement term of the power generator."""
    _check_delta(delta)
    _, (s_lo, s_hi), (r_lo, r_hi), (x_lo, x_hi) = _jump_blocks(XR, D)
    first = (r_hi / x_lo) ** delta * max(s_hi, 0.0) ** (1 - delta)
    return first - (1 - delta) * s_lo - delta * r_lo / x_hi


def e_delta(spec: QuantumSubsystemSpec, XR, delta) -> float:
    """Decay margin of Tr(X rho)^delta near the target; positive is good."""
    _check_delta(delta)
    return (-delta * lbar(spec, XR)
            + 0.5 * delta * (1 - delta) * gamma(XR, spec.C) ** 2
            - phi_delta(XR, spec.D, delta))


def psi_delta_bound(XR, D, delta, floor=PSI_FLOOR, return_flag=False):
    """Extra (nonpositive) decay contributed by counting near the target.

    With g(x) = delta log x + 1 - x^delta, evaluates g at whichever end of
    [r_lo, r_hi] lies closer to 1 when the whole interval sits on one side
    of 1, scaled by the least eigenvalue of D_S* D_S. Values below ``floor``
    are clamped and flagged.
    """
    _check_delta(delta)
    _, (s_lo, s_hi), (r_lo, r_hi), (x_lo, x_hi) = _jump_blocks(XR, D)
    if s_lo <= 1e-12:
        raise ValueError("D_S* D_S must be positive definite")
    lo = r_lo / (s_hi * x_hi)
    hi = r_hi / (s_lo * x_lo)
    g = lambda x: delta * np.log(x) + 1 - x ** delta if x > 0 else -np.inf  # noqa: E731
    if hi < 1:
        val = g(hi) * s_lo
    elif lo > 1:
        val = g(lo) * s_lo
    else:
        val = 0.0
    clamped = val < floor
    val = float(max(val, floor))
    return (val, clamped) if return_flag else val


@dataclass(frozen=True)
class QNDSpec:
    projections: tuple
    c: tuple
    a: tuple

    def __post_init__(self):
        P = [np.asarray(p, dtype=complex) for p in self.projections]
        if len(P) < 2 or not len(P) == len(self.c) == len(self.a):
            raise ValueError("need matching projections and coefficients, at least two blocks")
        eye = np.eye(P[0].shape[0])
        if np.abs(sum(P) - eye).max() > 1e-10:
            raise ValueError("projections must sum to the identity")
        for i, A in enumerate(P):
            if np.abs(A @ A - A).max() > 1e-10:
                raise ValueError(f"projection {i} is not idempotent")
            for B in P[i + 1:]:
                if np.abs(A @ B).max() > 1e-10:
                    raise ValueError("projections must be pairwise orthogonal")
        object.__setattr__(self, "projections", tuple(P))

    @classmethod
    def from_operators(cls, C, D, blocks):
        """Read block coefficients off operators that are constant on each block.

        ``blocks`` lists basis indices per block, target block first.
        """
        C, D = np.asarray(C, dtype=complex), np.asarray(D, dtype=complex)
        d = C.shape[0]
        P, cs, as_ = [], [], []
        for idx in blocks:
            p = np.zeros((d, d), dtype=complex)
            p[idx, idx] = 1
            P.append(p)
            cs.append(np.trace(p @ C) / len(idx))
            as_.append(np.trace(p @ D) / len(idx))
        for name, A, coef in (("C", C, cs), ("D", D, as_)):
            recon = sum(c * p for c, p in zip(coef, P))
            if np.abs(recon - A).max() > 1e-10:
                raise ValueError(f"{name} is not a combination of the block projections")
        return cls(tuple(P), tuple(cs), tuple(as_))


def qnd_constants(q: QNDSpec):
    """Squared gaps of the measurement coefficients relative to the target block."""
    c = np.real(np.asarray(q.c))
    a = np.abs(np.asarray(q.a))
    return float(np.min((c[1:] - c[0]) ** 2)), float(np.min((a[1:] - a[0]) ** 2))


def qnd_exponent_bound(c_lower, a_lower) -> float:
    return -(c_lower + a_lower) / 2.0


def exponent_bound_classical(c2, c3, c4, c5) -> float:
    if c2 <= 0:
        raise ValueError("c2 must be positive")
    return -(2 * c3 + c4 + 2 * c5) / (2 * c2)


def exponent_bound_quantum(lbar_value, gamma_value, phi, psi, delta) -> float:
    _check_delta(delta)
    return (2 * delta * lbar_value - delta * gamma_value ** 2 + 2 * (phi + psi)) / (2 * delta)


# -- samplers ------------------------------------------------------------------

def _loguniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _unit(rng, d):
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def near_target_sampler(dim, dS, l, coherent=False, s_min=1e-6):
    """States within d0 <= l of the target.

    By default rho = (1-s) rho_S (+) s rho_R with random blocks and s
    log-uniform in [s_min, l]. With ``coherent`` the sampler returns pure
    states sqrt(1-s) psi_S + sqrt(s) psi_R, whose coherences dominate d0.
    """
    dR = dim - dS
    if coherent:
        s_max = 1.0 - np.sqrt(1.0 - l * l)

        def sample(rng):
            s = _loguniform(rng, min(s_min, s_max / 2), s_max)
            psi = np.concatenate([np.sqrt(1 - s) * _unit(rng, dS), np.sqrt(s) * _unit(rng, dR)])
            return np.outer(psi, psi.conj())
        return sample

    def sample(rng):
        s = _loguniform(rng, s_min, l)
        rho = np.zeros((dim, dim), dtype=complex)
        rho[:dS, :dS] = (1 - s) * random_density(dS, rng)
        rho[dS:, dS:] = s * random_density(dR, rng)
        return rho
    return sample


def mixed_near_target_sampler(dim, dS, l):
    """Alternates block-diagonal and coherent near-target samples."""
    a = near_target_sampler(dim, dS, l)
    b = near_target_sampler(dim, dS, l, coherent=True)
    return lambda rng: a(rng) if rng.random() < 0.5 else b(rng)


def outside_sampler(dim, dS, radius, max_tries=10000):
    """States with d0 >= radius, mixing full-rank, pure and near-boundary draws."""
    dR = dim - dS
    s_lo = 1.0 - np.sqrt(max(0.0, 1.0 - radius * radius))

    def draw(rng):
        u = rng.random()
        if u < 1 / 3:
            return random_density(dim, rng)
        if u < 2 / 3:
            psi = _unit(rng, dim)
            return np.outer(psi, psi.conj())
        s = _loguniform(rng, max(s_lo, 1e-12), 1.0)
        psi = np.concatenate([np.sqrt(1 - s) * _unit(rng, dS), np.sqrt(s) * _unit(rng, dR)])
        return np.outer(psi, psi.conj())

    def sample(rng):
        for _ in range(max_tries):
            rho = draw(rng)
            if distance_d0(rho, dS) >= radius:
                return rho
        raise RuntimeError("outside_sampler exhausted its retries")
    return sample


def ball_sampler(center, r_lo, r_hi):
    """Uniform direction, radius uniform in [r_lo, r_hi] around center."""
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def sample(rng):
        u = rng.standard_normal(center.size)
        u /= np.linalg.norm(u)
        return center + rng.uniform(r_lo, r_hi) * u
    return sample


# -- sampled hypothesis checks ------------------------------------------------

def verify_local_lyapunov(system, V, l, sampler, n, rng):
    """Largest A_j V / V over sampled states near the target.

    Works for both system kinds; the decay margin is minus that maximum.
    """
    j = system.hyst.j
    if isinstance(system, QuantumSwitchedSystem):
        spec = system.mode(j)
        dist = lambda s: float(distance_d0(s, system.dS))  # noqa: E731
        gen = lambda s: generator_sme(spec, V, s)  # noqa: E731
        val = V.value
    elif isinstance(system, ClassicalSwitchedSystem):
        sub = system.subsystems[j - 1]
        dist = lambda s: float(system.distance(s))  # noqa: E731
        gen = lambda s: float(generator_AV(sub, V, s))  # noqa: E731
        val = lambda s: float(V.value(s))  # noqa: E731
    else:
        raise TypeError("expected a switched system")
    worst, used, rejected = -np.inf, 0, 0
    for _ in range(n):
        s = sampler(rng)
        if dist(s) > l:
            rejected += 1
            continue
        v = val(s)
        if not v > 0:
            rejected += 1
            continue
        worst = max(worst, gen(s) / v)
        used += 1
    if used == 0:
        raise RuntimeError("sampler produced no usable states")
    return {"max_ratio": worst, "margin": -worst, "pass": bool(-worst > 0),
            "n": n, "used": used, "rejected": rejected, "l": l}


def verify_attractivity(system, exclusion_radius, sampler, n, rng):
    """Empirical margin of the minimum generator value away from the target.

    Quantum systems use Tr(K F_k(rho)); classical systems use A_k V(x).
    ``coverage`` is the share of samples that lie in the region of their
    argmin mode.
    """
    if isinstance(system, QuantumSwitchedSystem):
        dist = lambda s: float(distance_d0(s, system.dS))  # noqa: E731
    elif isinstance(system, ClassicalSwitchedSystem):
        dist = lambda s: float(system.distance(s))  # noqa: E731
    else:
        raise TypeError("expected a switched system")
    r = system.hyst.r
    worst, covered, used = -np.inf, 0, 0
    for _ in range(n):
        s = sampler(rng)
        if dist(s) < exclusion_radius:
            continue
        vals = np.asarray(system.values(s))
        vmin = float(vals.min())
        worst = max(worst, vmin)
        covered += vmin < r * vmin
        used += 1
    if used == 0:
        raise RuntimeError("sampler produced no states outside the exclusion radius")
    return {"gap": -worst, "pass": bool(-worst > 0), "coverage": covered / used,
            "n": n, "used": used}


def estimate_comparison_constants(dS, XR, sampler, n, rng):
    """Empirical c1 <= d0 / Tr(X rho) and c2 >= d0 / sqrt(Tr(X rho))."""
    XR = _require_pd(XR)
    X = extend(XR, dS)
    lo, hi, used = np.inf, 0.0, 0
    for _ in range(n):
        rho = sampler(rng)
        y = float(np.real(trace_product(X, rho)))
        d = float(distance_d0(rho, dS))
        if y <= 1e-300 or d <= 1e-300:
            continue
        lo = min(lo, d / y)
        hi = max(hi, d / np.sqrt(y))
        used += 1
    if used == 0:
        raise RuntimeError("degenerate sampler: every state sits on the target")
    return float(lo), float(hi)


@dataclass
class CertificateReport:
    invariance_residuals: dict = field(default_factory=dict)
    lbar: dict = field(default_factory=dict)
    gamma: float | None = None
    phi_delta: float | None = None
    psi_delta_bound: float | None = None
    psi_clamped: bool = False
    e_delta: float | None = None
    qnd_c_lower: float | None = None
    qnd_a_lower: float | None = None
    exponent_bound: float | None = None
    c1_est: float | None = None
    c2_est: float | None = None
    local_decay_margin: float | None = None
    attractivity_gap: float | None = None
    attractivity_coverage: float | None = None
    jump_direction: dict | None = None
    verdicts: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items()}

    def passed(self, required=None) -> bool:
        keys = self.verdicts if required is None else required
        return all(self.verdicts.get(k, False) for k in keys)


def certify_quantum(sys: QuantumSwitchedSystem, rng, *, XR=None, delta=None,
                    qnd_blocks=None, n=2000) -> CertificateReport:
    """Every certificate that applies to the given system and options."""
    rep = CertificateReport(metadata={"n": n, "dS": sys.dS, "j": sys.j})
    spec = sys.mode(sys.j)
    inv = check_invariance(spec, sys.dS)
    rep.invariance_residuals = inv["residuals"]
    rep.verdicts["invariance"] = inv["pass"]
    rep.residuals["invariance"] = max(inv["residuals"].values())
    dR = sys.dim - sys.dS
    V = None
    if XR is not None and delta is not None:
        XR = np.atleast_2d(np.asarray(XR, dtype=complex))
        rep.lbar = {str(k): lbar(s, XR) for k, s in enumerate(sys.modes, 1)}
        try:
            rep.gamma = gamma(XR, spec.C)
            rep.phi_delta = phi_delta(XR, spec.D, delta)
            rep.e_delta = e_delta(spec, XR, delta)
            rep.verdicts["e_delta"] = rep.e_delta > 0
            rep.residuals["e_delta"] = rep.e_delta
            try:
                rep.psi_delta_bound, rep.psi_clamped = psi_delta_bound(XR, spec.D, delta, return_flag=True)
            except ValueError:
                rep.psi_delta_bound = 0.0
            rep.exponent_bound = exponent_bound_quantum(
                rep.lbar[str(sys.j)], rep.gamma, rep.phi_delta, rep.psi_delta_bound, delta)
        except ValueError as exc:
            rep.metadata["power_certificate_error"] = str(exc)
            rep.verdicts["e_delta"] = False
            rep.residuals["e_delta"] = float("nan")
        rep.c1_est, rep.c2_est = estimate_comparison_constants(
            sys.dS, XR, near_target_sampler(sys.dim, sys.dS, 1.0), min(n, 1000), rng)
        V = PowerFunctional(extend(XR, sys.dS), delta)
    if qnd_blocks is not None:
        try:
            q = QNDSpec.from_operators(spec.C, spec.D, qnd_blocks)
        except ValueError as exc:
            rep.metadata["qnd_error"] = str(exc)
            rep.verdicts["qnd"] = False
            rep.residuals["qnd"] = float("nan")
        else:
            rep.qnd_c_lower, rep.qnd_a_lower = qnd_constants(q)
            rate = qnd_exponent_bound(rep.qnd_c_lower, rep.qnd_a_lower)
            rep.verdicts["qnd"] = rate < 0
            rep.residuals["qnd"] = rate
            if rep.exponent_bound is None:
                rep.exponent_bound = rate
            if V is None:
                V = SqrtPopulations(q.projections[1:])
    if V is None:
        V = PowerFunctional(extend(np.eye(dR), sys.dS), 0.5)
    dec = verify_local_lyapunov(sys, V, sys.hyst.l,
                               mixed_near_target_sampler(sys.dim, sys.dS, sys.hyst.l), n, rng)
    rep.local_decay_margin = dec["margin"]
    rep.verdicts["local_decay"] = dec["pass"]
    rep.residuals["local_decay"] = dec["margin"]
    att = verify_attractivity(sys, sys.hyst.inner_radius,
                             outside_sampler(sys.dim, sys.dS, sys.hyst.inner_radius), n, rng)
    rep.attractivity_gap = att["gap"]
    rep.attractivity_coverage = att["coverage"]
    rep.verdicts["attractivity"] = att["pass"]
    rep.residuals["attractivity"] = att["gap"]
    mix = outside_sampler(sys.dim, sys.dS, 0.0)
    near = mixed_near_target_sampler(sys.dim, sys.dS, sys.hyst.inner_radius)
    jd = check_jump_direction_quantum(sys, lambda g: near(g) if g.random() < 0.5 else mix(g), n, rng)
    rep.jump_direction = jd
    rep.verdicts["jump_direction"] = jd["pass"]
    rep.residuals["jump_direction"] = float(sum(jd["theta_violations"]) + jd["inner_violations"])
    return rep


def certify_classical(sys: ClassicalSwitchedSystem, rng, *, n=2000, r_max=None) -> CertificateReport:
    rep = CertificateReport(metadata={"n": n, "j": sys.hyst.j})
    h = sys.hyst
    dec = verify_local_lyapunov(sys, sys.V, h.l, ball_sampler(sys.target, 1e-6, h.l), n, rng)
    rep.local_decay_margin = dec["margin"]
    rep.verdicts["local_decay"] = dec["pass"]
    rep.residuals["local_decay"] = dec["margin"]
    outer = r_max if r_max is not None else 10.0 * h.l
    att = verify_attractivity(sys, h.inner_radius, ball_sampler(sys.target, h.inner_radius, outer), n, rng)
    rep.attractivity_gap = att["gap"]
    rep.attractivity_coverage = att["coverage"]
    rep.verdicts["attractivity"] = att["pass"]
    rep.residuals["attractivity"] = att["gap"]
    rep.metadata["attractivity_sample_radius"] = outer
    return rep
