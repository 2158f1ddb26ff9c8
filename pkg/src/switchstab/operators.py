"""Dense operator algebra for open quantum systems.

Every function accepts a single ``(d, d)`` matrix or a stack ``(..., d, d)``
where that is cheap to support, so the simulators can push whole ensembles
through the same code path.

Conventions: the target subspace is spanned by the first ``dS`` basis
vectors; ``P`` is the upper-right (S-row, R-column) block and ``Q`` the
lower-left one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PositivityError

TOL_HERM = 1e-10
TOL_POS = 1e-9
TOL_RATE = 1e-12
TOL_REPAIR = 1e-7
# negative eigenvalues smaller than this are rounding noise and left alone,
# so tiny off-target populations keep their relative precision
TOL_CLIP = 1e-12

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# lowering operator: maps e1 to e0
SM = np.array([[0, 1], [0, 0]], dtype=complex)
SP = SM.conj().T


def dag(A):
    return np.conj(np.swapaxes(A, -1, -2))


def trace(A):
    return np.trace(A, axis1=-2, axis2=-1)


def trace_product(A, B):
    """Tr(A B) without forming the product; broadcasts over leading axes."""
    return np.sum(A * np.swapaxes(B, -1, -2), axis=(-2, -1))


def _square(A, name="matrix"):
    A = np.asarray(A, dtype=complex)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


def _same_dim(*mats):
    dims = {m.shape[-1] for m in mats}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")


def hermitian_defect(A) -> float:
    A = np.asarray(A)
    return float(np.max(np.abs(A - dag(A)), initial=0.0))


def is_hermitian(A, tol=TOL_HERM) -> bool:
    return hermitian_defect(A) <= tol


def dissipator(C, A):
    """C A C* - (C*C A + A C*C) / 2."""
    C = _square(C, "C")
    A = _square(A, "A")
    _same_dim(C, A)
    Cd = dag(C)
    CdC = Cd @ C
    return C @ A @ Cd - 0.5 * (CdC @ A + A @ CdC)


def jump_rate(D, rho):
    """Detection intensity Tr(D rho D*), real part."""
    D = np.asarray(D, dtype=complex)
    return np.real(trace_product(dag(D) @ D, rho))


def jump_map(D, rho):
    """Post-detection state and its rate.

    Returns ``(state, rate)``. When the rate is at or below ``TOL_RATE`` the
    jump cannot fire and ``state`` is None.
    """
    D = _square(D, "D")
    rho = _square(rho, "rho")
    _same_dim(D, rho)
    unnorm = D @ rho @ dag(D)
    rate = float(np.real(trace(unnorm)))
    if rate <= TOL_RATE:
        return None, max(rate, 0.0)
    out = unnorm / rate
    return 0.5 * (out + dag(out)), rate


@dataclass(frozen=True)
class QuantumSubsystemSpec:
    """Operators of one measured open system.

    ``H0`` is the free Hamiltonian shared by all modes, ``H`` the mode's
    control Hamiltonian, ``L`` an unmonitored channel, ``C`` the diffusive
    measurement and ``D`` the counting measurement.
    """

    H0: np.ndarray
    H: np.ndarray
    L: np.ndarray
    C: np.ndarray
    D: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        mats = {}
        for key in ("H0", "H", "L", "C", "D"):
            m = np.array(getattr(self, key), dtype=complex)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DimensionError(f"{key} must be square, got {m.shape}")
            m.setflags(write=False)
            mats[key] = m
            object.__setattr__(self, key, m)
        _same_dim(*mats.values())
        for key in ("H0", "H"):
            defect = hermitian_defect(mats[key])
            if defect > TOL_HERM:
                raise ValueError(f"{key} is not Hermitian (max asymmetry {defect:.3g})")

    @classmethod
    def build(cls, dim, H0=None, H=None, L=None, C=None, D=None, name=""):
        z = np.zeros((dim, dim), dtype=complex)
        pick = lambda m: z if m is None else m  # noqa: E731
        return cls(pick(H0), pick(H), pick(L), pick(C), pick(D), name=name)

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def hamiltonian(self):
        return self.H0 + self.H

    @property
    def channels(self):
        return (self.L, self.C, self.D)

    def max_jump_rate(self) -> float:
        """sup over states of Tr(D rho D*), the top eigenvalue of D*D."""
        return float(np.linalg.eigvalsh(dag(self.D) @ self.D)[-1])


def drift_F(spec: QuantumSubsystemSpec, rho):
    """Lindblad generator: -i[H0+H, rho] plus the three dissipators."""
    rho = _square(rho, "rho")
    _same_dim(spec.H0, rho)
    Ht = spec.hamiltonian
    out = -1j * (Ht @ rho - rho @ Ht)
    for A in spec.channels:
        out = out + dissipator(A, rho)
    return out


def diffusion_G(C, rho):
    """C rho + rho C* - Tr[(C + C*) rho] rho."""
    C = _square(C, "C")
    rho = _square(rho, "rho")
    _same_dim(C, rho)
    Crho = C @ rho
    m = np.real(trace(Crho)) * 2.0
    return Crho + dag(Crho) - np.asarray(m)[..., None, None] * rho


def heisenberg_adjoint(spec: QuantumSubsystemSpec, X):
    """Adjoint of drift_F under the Hilbert-Schmidt product.

    Tr(X drift_F(rho)) == Tr(heisenberg_adjoint(X) rho) for every rho.
    """
    X = _square(X, "X")
    Ht = spec.hamiltonian
    out = 1j * (Ht @ X - X @ Ht)
    for A in spec.channels:
        Ad = dag(A)
        AdA = Ad @ A
        out = out + Ad @ X @ A - 0.5 * (AdA @ X + X @ AdA)
    return out


@dataclass(frozen=True)
class BlockDecomposition:
    S: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def assemble(self):
        return np.block([[self.S, self.P], [self.Q, self.R]])


def block_decompose(A, dS: int) -> BlockDecomposition:
    A = _square(A)
    d = A.shape[-1]
    if not 1 <= dS < d:
        raise DimensionError(f"dS must satisfy 1 <= dS < {d}, got {dS}")
    return BlockDecomposition(
        A[..., :dS, :dS].copy(), A[..., :dS, dS:].copy(),
        A[..., dS:, :dS].copy(), A[..., dS:, dS:].copy(),
    )


def extend(XR, dS: int):
    """Embed an R-block operator as [[0, 0], [0, XR]]."""
    XR = _square(XR, "XR")
    dR = XR.shape[-1]
    out = np.zeros(XR.shape[:-2] + (dS + dR, dS + dR), dtype=complex)
    out[..., dS:, dS:] = XR
    return out


def target_projector(dim: int, dS: int):
    P = np.zeros((dim, dim), dtype=complex)
    P[:dS, :dS] = np.eye(dS)
    return P


def distance_d0(rho, dS: int):
    """Frobenius norm of rho - Pi0 rho Pi0.

    Only the P, Q and R blocks survive the subtraction, so the norm is read
    off those entries directly.
    """
    rho = np.asarray(rho)
    d = rho.shape[-1]
    if not 1 <= dS <= d:
        raise DimensionError(f"dS must satisfy 1 <= dS <= {d}, got {dS}")
    a2 = np.abs(rho) ** 2
    total = a2[..., :, dS:].sum(axis=(-2, -1)) + a2[..., dS:, :dS].sum(axis=(-2, -1))
    return np.sqrt(total)


def project_density(A, tol_repair: float = TOL_REPAIR):
    """Nearest-by-clipping density matrix.

    Hermitizes, clips negative eigenvalues and renormalizes the trace.
    Raises PositivityError when the most negative eigenvalue is below
    ``-tol_repair``, which signals a step size that is too coarse.
    """
    A = _square(A)
    scale = max(1.0, float(np.max(np.abs(A), initial=0.0)))
    defect = hermitian_defect(A)
    if defect > TOL_HERM * scale:
        raise ValueError(f"input is not Hermitian (max asymmetry {defect:.3g})")
    H = 0.5 * (A + dag(A))
    single = H.ndim == 2
    Hs = H[None] if single else H.reshape((-1,) + H.shape[-2:])
    w = np.linalg.eigvalsh(Hs)
    wmin = w[:, 0]
    if np.any(wmin < -tol_repair):
        raise PositivityError(
            f"min eigenvalue {wmin.min():.3g} below -{tol_repair:g}; reduce dt")
    bad = np.nonzero(wmin < -TOL_CLIP)[0]
    if bad.size:
        Hs = Hs.copy()
        vals, vecs = np.linalg.eigh(Hs[bad])
        vals = np.clip(vals, 0.0, None)
        Hs[bad] = (vecs * vals[:, None, :]) @ dag(vecs)
    tr = np.real(trace(Hs))
    if np.any(tr <= 0):
        raise PositivityError("trace is not positive after repair")
    out = Hs / tr[:, None, None]
    return out[0] if single else out.reshape(H.shape)


def is_density(rho, tol=TOL_POS) -> bool:
    rho = np.asarray(rho)
    if hermitian_defect(rho) > TOL_HERM:
        return False
    if abs(np.real(trace(rho)) - 1.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (rho + dag(rho)))[0] >= -tol)


# -- random objects for tests and samplers ---------------------------------

def random_matrix(dim, rng, scale=1.0):
    return scale * (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)


def random_hermitian(dim, rng, scale=1.0):
    G = random_matrix(dim, rng, scale)
    return 0.5 * (G + dag(G))


def random_density(dim, rng, rank=None):
    """Density matrix from the Hilbert-Schmidt (Ginibre) ensemble."""
    k = dim if rank is None else rank
    G = rng.standard_normal((dim, k)) + 1j * rng.standard_normal((dim, k))
    rho = G @ dag(G)
    return rho / np.real(np.trace(rho))


def random_pure(dim, rng):
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_spec(dim, rng, scale=1.0) -> QuantumSubsystemSpec:
    return QuantumSubsystemSpec(
        random_hermitian(dim, rng, scale), random_hermitian(dim, rng, scale),
        random_matrix(dim, rng, scale), random_matrix(dim, rng, scale),
        random_matrix(dim, rng, scale),
    )


def invariant_spec(dim, dS, rng, scale=1.0, H0=None) -> QuantumSubsystemSpec:
    """Random spec that leaves the span of the first dS basis vectors invariant.

    Channels get a zero Q block and the Hamiltonian's P block is solved from
    the invariance identity i H_P = (L_S* L_P + C_S* C_P + D_S* D_P) / 2.
    """
    chans = []
    for _ in range(3):
        A = random_matrix(dim, rng, scale)
        A[dS:, :dS] = 0
        chans.append(A)
    acc = sum(dag(A[:dS, :dS]) @ A[:dS, dS:] for A in chans)
    base = random_hermitian(dim, rng, scale)
    H0 = np.zeros((dim, dim), dtype=complex) if H0 is None else np.asarray(H0, dtype=complex)
    Hp = -0.5j * acc - H0[:dS, dS:]
    base[:dS, dS:] = Hp
    base[dS:, :dS] = dag(Hp)
    return QuantumSubsystemSpec(H0, base, *chans)


# -- serialization ----------------------------------------------------------

def matrix_to_pairs(A):
    A = np.asarray(A, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in A]


def pairs_to_matrix(data):
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise DimensionError(f"expected nested [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]
