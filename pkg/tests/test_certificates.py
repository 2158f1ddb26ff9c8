import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lindbladian, apply_super
from switchstab.certificates import (
    QNDSpec, adjoint_generator_R, ball_sampler, check_invariance, e_delta,
    estimate_comparison_constants, exponent_bound_classical, exponent_bound_quantum,
    gamma, gamma_projector, lbar, lbar_residuals, near_target_sampler, outside_sampler,
    phi_delta, psi_delta_bound, qnd_constants, qnd_exponent_bound, reduced_generator_R,
    verify_attractivity, verify_local_lyapunov,
)
from switchstab.classical import ClassicalSwitchedSystem, QuadraticV, linear1d
from switchstab.functionals import PowerFunctional
from switchstab.operators import (
    SM, SX, QuantumSubsystemSpec, block_decompose, diffusion_G, extend,
    random_density, random_hermitian, random_matrix, random_spec, trace_product,
)
from switchstab.quantum import QuantumSwitchedSystem
from switchstab.switching import Hysteresis

seeds = st.integers(0, 2**32 - 1)
ONE = np.eye(1)


def diag(*v):
    return np.diag(v).astype(complex)


def qnd_system(l=0.3, l_star=0.3, eps=0.1):
    escape = QuantumSubsystemSpec.build(2, H=SX, name="escape")
    qnd = QuantumSubsystemSpec.build(2, C=diag(0, 1), D=diag(1, 2), name="qnd")
    return QuantumSwitchedSystem((escape, qnd), 1, ONE, Hysteresis(l, l_star, eps, 0.5, 2))


def pd_matrix(d, g):
    A = random_matrix(d, g)
    return A @ A.conj().T + 0.2 * np.eye(d)


# -- invariance ---------------------------------------------------------------------

def test_invariance_block_diagonal_passes(rng):
    spec = QuantumSubsystemSpec.build(3, H=diag(1, 2, 3), C=diag(0, 1, 1), D=diag(1, 1, 2))
    out = check_invariance(spec, 1)
    assert out["pass"] and max(out["residuals"].values()) == 0.0


def test_invariance_detects_jump_leak():
    D = np.zeros((2, 2), dtype=complex)
    D[1, 0] = 1.0  # Q block maps the target out
    out = check_invariance(QuantumSubsystemSpec.build(2, D=D), 1)
    assert out["residuals"]["D_Q"] == pytest.approx(1.0)
    assert not out["pass"]


def test_invariance_hamiltonian_compensates_measurement(rng):
    d, dS = 3, 1
    C = random_matrix(d, rng)
    C[dS:, :dS] = 0
    b = block_decompose(C, dS)
    HP = -0.5j * b.S.conj().T @ b.P
    H = np.zeros((d, d), dtype=complex)
    H[:dS, dS:] = HP
    H[dS:, :dS] = HP.conj().T
    out = check_invariance(QuantumSubsystemSpec.build(d, H=H, C=C), dS)
    assert out["pass"], out


# -- reduced generator --------------------------------------------------------------

def test_adjoint_generator_examples():
    spec = QuantumSubsystemSpec.build(3)
    assert np.allclose(adjoint_generator_R(spec, np.eye(2)), 0)
    spec = QuantumSubsystemSpec.build(2, L=diag(0, 1))
    assert np.allclose(adjoint_generator_R(spec, [[3.7]]), 0)


@given(seeds, st.integers(2, 5), st.data())
def test_adjoint_generator_duality(seed, d, data):
    dS = data.draw(st.integers(1, d - 1))
    g = np.random.default_rng(seed)
    spec = random_spec(d, g)
    X, rho = random_hermitian(d - dS, g), random_hermitian(d - dS, g)
    lhs = trace_product(adjoint_generator_R(spec, X), rho)
    rhs = trace_product(X, reduced_generator_R(spec, rho))
    assert abs(lhs - rhs) < 1e-10
    A = adjoint_generator_R(spec, X)
    assert np.abs(A - A.conj().T).max() < 1e-11


def test_reduced_generator_is_r_block_of_full_generator(rng):
    # for block-diagonal rho the R block of F(rho) only depends on rho_R
    spec = random_spec(4, rng)
    dS = 2
    rhoR = random_density(2, rng)
    rho = extend(rhoR, dS)
    full = apply_super(lindbladian(spec.hamiltonian, spec.channels), rho)
    assert np.allclose(block_decompose(full, dS).R, reduced_generator_R(spec, rhoR), atol=1e-12)


def test_lbar_examples(rng):
    assert lbar(QuantumSubsystemSpec.build(3), np.eye(2)) == 0.0
    L = np.zeros((4, 4), dtype=complex)
    L[:2, 2:] = np.diag([1.0, np.sqrt(2.0)])  # F*(I) = -L_P* L_P = diag(-1, -2)
    spec = QuantumSubsystemSpec.build(4, L=L)
    assert np.allclose(adjoint_generator_R(spec, np.eye(2)), diag(-1, -2))
    assert lbar(spec, np.eye(2)) == pytest.approx(-1.0, abs=1e-12)


@given(seeds)
def test_lbar_scale_invariant(seed):
    g = np.random.default_rng(seed)
    spec, XR = random_spec(4, g), pd_matrix(2, g)
    assert lbar(spec, 2 * XR) == pytest.approx(lbar(spec, XR), abs=1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_lbar_is_least_feasible(seed):
    g = np.random.default_rng(seed)
    d = int(g.integers(2, 6))
    dS = int(g.integers(1, d))
    spec, XR = random_spec(d, g), pd_matrix(d - dS, g)
    res = lbar_residuals(spec, XR)
    assert res["feasible"] >= -1e-9
    assert res["tight"] < 0


def test_lbar_rejects_singular_weight():
    with pytest.raises(ValueError, match="positive definite"):
        lbar(QuantumSubsystemSpec.build(3), diag(1, 0))


# -- measurement gains --------------------------------------------------------------

def test_gamma_examples():
    assert gamma(ONE, np.eye(2)) == 0.0
    assert gamma(ONE, diag(1, 0)) == pytest.approx(2.0, abs=1e-12)
    assert gamma(ONE, np.zeros((2, 2))) == 0.0


def test_gamma_requires_zero_q_block():
    with pytest.raises(ValueError):
        gamma(ONE, SX)


def test_gamma_projector_examples():
    C = np.zeros((3, 3), dtype=complex)
    C[:2, :2] = diag(0.5, 1.5)
    assert gamma_projector(C, 2) == pytest.approx(1.0)
    assert gamma_projector(np.zeros((3, 3)), 2) == 0.0
    C[:2, :2] = diag(-0.5, -1.0)
    # largest eigenvalue of a negative definite C_S + C_S*; a state supported
    # on the -1 eigenvector attains |Tr((C_S + C_S*) rho_S)| = 1
    assert gamma_projector(C, 2) == pytest.approx(-1.0)


def _gamma_case_i_spec(g, d=3, dS=1):
    C = 0.1 * random_matrix(d, g)
    C[dS:, :dS] = 0
    C[:dS, :dS] += 2.0 * np.eye(dS)
    return C


@pytest.mark.parametrize("seed", range(5))
def test_gamma_bounds_diffusive_gain_near_target(seed):
    g = np.random.default_rng(seed)
    C, XR = _gamma_case_i_spec(g), pd_matrix(2, g)
    G0 = gamma(XR, C)
    assert G0 > 0
    X = extend(XR, 1)
    sample = near_target_sampler(3, 1, 1e-3)
    for _ in range(400):
        rho = sample(g)
        ratio = np.real(trace_product(X, diffusion_G(C, rho))) / np.real(trace_product(X, rho))
        assert ratio ** 2 >= G0 ** 2 - 1e-2


def test_phi_delta_examples():
    assert phi_delta(ONE, np.zeros((2, 2)), 0.5) == 0.0
    assert phi_delta(ONE, np.eye(2), 0.5) == pytest.approx(0.0, abs=1e-12)
    assert phi_delta(ONE, diag(1, 0), 0.5) == pytest.approx(-0.5, abs=1e-12)


def test_phi_delta_argument_checks():
    with pytest.raises(ValueError):
        phi_delta(ONE, np.eye(2), 1.0)
    with pytest.raises(ValueError):
        phi_delta(ONE, SX, 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_phi_bounds_jump_term_near_target(seed):
    g = np.random.default_rng(seed)
    D = random_matrix(3, g)
    D[1:, :1] = 0
    XR, delta = pd_matrix(2, g), 0.5
    bound = phi_delta(XR, D, delta)
    X = extend(XR, 1)
    sample = near_target_sampler(3, 1, 1e-3)
    for _ in range(400):
        rho = sample(g)
        DrD = D @ rho @ D.conj().T
        v = np.trace(DrD).real
        r = np.real(trace_product(X, DrD)) / v / np.real(trace_product(X, rho))
        assert (r ** delta - (1 - delta) - delta * r) * v <= bound + 1e-2


def test_e_delta_examples():
    assert e_delta(QuantumSubsystemSpec.build(2), ONE, 0.5) == 0.0
    L = np.zeros((2, 2), dtype=complex)
    L[0, 1] = np.sqrt(2.0)  # lbar = -2; D = I gives Phi = 0; C = 0 gives Gamma = 0
    spec = QuantumSubsystemSpec.build(2, L=L, D=np.eye(2))
    assert lbar(spec, ONE) == pytest.approx(-2.0)
    assert e_delta(spec, ONE, 0.5) == pytest.approx(1.0, abs=1e-12)


def test_e_delta_small_delta_limit():
    D = diag(1.0, 2.0, 0.5)
    spec = QuantumSubsystemSpec.build(3, D=D)
    Ds = D[:2, :2]
    lo, hi = np.linalg.eigvalsh(Ds.conj().T @ Ds)[[0, -1]]
    assert e_delta(spec, ONE, 1e-9) == pytest.approx(-(hi - lo), abs=1e-6)


def test_psi_examples():
    assert psi_delta_bound(ONE, np.eye(2), 0.5) == 0.0
    val, clamped = psi_delta_bound(ONE, diag(1, 0), 0.5, return_flag=True)
    assert clamped and val == -1e3
    assert psi_delta_bound(ONE, diag(1, 0.5), 0.5) == pytest.approx(0.5 * np.log(0.25) + 0.5, abs=1e-12)
    assert psi_delta_bound(ONE, diag(1, 0.5), 0.5) <= 0


def test_psi_requires_invertible_target_jump():
    with pytest.raises(ValueError):
        psi_delta_bound(ONE, diag(0, 1), 0.5)


# -- QND ------------------------------------------------------------------------------

def test_qnd_examples():
    q = QNDSpec.from_operators(diag(0, 1), diag(1, 2), [[0], [1]])
    assert qnd_constants(q) == (1.0, 1.0)
    assert qnd_exponent_bound(*qnd_constants(q)) == -1.0
    P = [diag(1, 0), diag(0, 1)]
    assert qnd_constants(QNDSpec(P, (1, 1), (1, 2)))[0] == 0.0
    P3 = [diag(1, 0, 0), diag(0, 1, 0), diag(0, 0, 1)]
    assert qnd_constants(QNDSpec(P3, (0, 1, 3), (0, 0, 0))) == (1.0, 0.0)


def test_qnd_spec_validation():
    with pytest.raises(ValueError):
        QNDSpec([diag(1, 0), diag(1, 1)], (0, 1), (0, 1))
    with pytest.raises(ValueError):
        QNDSpec.from_operators(SX, np.eye(2), [[0], [1]])


def test_exponent_bounds():
    assert exponent_bound_classical(2, 1, 0, 0) == -0.5
    assert exponent_bound_classical(1, 0, 0, 0) == 0.0
    assert exponent_bound_classical(2, 1, 1, 1) == -1.25
    assert exponent_bound_quantum(-1, 0, 0, 0, 0.5) == -1.0
    assert exponent_bound_quantum(0, 0, 0, 0, 0.5) == 0.0
    assert exponent_bound_quantum(0, 2, 0, 0, 0.5) == -2.0


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5), st.floats(-5, 0), st.floats(0.01, 0.99))
def test_quantum_bound_is_exact_rational(lb, g, phi, psi, delta):
    expect = lb - g * g / 2 + (phi + psi) / delta
    assert exponent_bound_quantum(lb, g, phi, psi, delta) == pytest.approx(expect, rel=1e-12, abs=1e-12)


# -- sampled checks -------------------------------------------------------------------

def test_local_lyapunov_qnd_power_functional(rng):
    sys = qnd_system()
    V = PowerFunctional(extend(ONE, 1), 0.5)
    out = verify_local_lyapunov(sys, V, 0.1, near_target_sampler(2, 1, 0.1, coherent=True), 10_000, rng)
    assert out["pass"] and out["margin"] >= 0.9


def test_local_lyapunov_frozen_system_fails(rng):
    frozen = QuantumSubsystemSpec.build(2)
    sys = QuantumSwitchedSystem((frozen,), 1, ONE, Hysteresis(0.3, 0.3, 0.1, 0.5, 1))
    V = PowerFunctional(extend(ONE, 1), 0.5)
    out = verify_local_lyapunov(sys, V, 0.1, near_target_sampler(2, 1, 0.1), 200, rng)
    assert out["margin"] == pytest.approx(0.0, abs=1e-12) and not out["pass"]


def test_local_lyapunov_linear_classical(rng):
    sys = ClassicalSwitchedSystem(linear1d(-1.0, 0.0, 0.0, 0.0), QuadraticV(1), np.zeros(1),
                                  Hysteresis(0.5, 0.5, 0.2, 0.5, 1))
    out = verify_local_lyapunov(sys, sys.V, 0.5, ball_sampler(np.zeros(1), 1e-3, 0.5), 500, rng)
    assert out["margin"] == pytest.approx(2.0, abs=1e-9)


def test_attractivity_gap_for_decay_mode(rng):
    decay = QuantumSubsystemSpec.build(2, L=SM)
    qnd = QuantumSubsystemSpec.build(2, C=diag(0, 1), D=diag(1, 2))
    sys = QuantumSwitchedSystem((decay, qnd), 1, ONE, Hysteresis(0.3, 0.3, 0.1, 0.5, 2))
    gap = 1 - np.sqrt(1 - 0.2 ** 2)
    out = verify_attractivity(sys, 0.2, outside_sampler(2, 1, 0.2), 4000, rng)
    assert out["pass"]
    assert gap - 1e-12 <= out["gap"] <= 1.2 * gap


def test_attractivity_frozen_fails(rng):
    frozen = QuantumSubsystemSpec.build(2)
    sys = QuantumSwitchedSystem((frozen, frozen), 1, ONE, Hysteresis(0.3, 0.3, 0.1, 0.5, 2))
    out = verify_attractivity(sys, 0.2, outside_sampler(2, 1, 0.2), 300, rng)
    assert not out["pass"] and out["gap"] == pytest.approx(0.0, abs=1e-12)


def test_attractivity_single_mode_coverage(rng):
    sys = QuantumSwitchedSystem((QuantumSubsystemSpec.build(2, L=SM),), 1, ONE,
                                Hysteresis(0.3, 0.3, 0.1, 0.5, 1))
    out = verify_attractivity(sys, 0.2, outside_sampler(2, 1, 0.2), 300, rng)
    assert out["pass"] and out["coverage"] == 1.0


def _diag_family(g):
    p = float(g.uniform(1e-6, 1.0))
    return diag(1 - p, p)


def test_comparison_constants_diagonal_family(rng):
    c1, c2 = estimate_comparison_constants(1, ONE, _diag_family, 2000, rng)
    assert c1 == pytest.approx(1.0, abs=1e-12)
    assert 0.95 < c2 <= 1.0 + 1e-12
    c1b, _ = estimate_comparison_constants(1, 2 * ONE, _diag_family, 2000, rng)
    assert c1b == pytest.approx(c1 / 2)


def test_comparison_constants_reject_target_states(rng):
    with pytest.raises(RuntimeError):
        estimate_comparison_constants(1, ONE, lambda g: diag(1, 0), 10, rng)
