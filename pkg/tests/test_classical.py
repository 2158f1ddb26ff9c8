import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import jump_integral_closed, jump_integral_series, rk4_scalar
from switchstab.analysis import path_rng
from switchstab.classical import (
    FAMILIES, ClassicalSubsystem, ClassicalSwitchedSystem, NumericV, QuadraticV,
    check_partition_assumption, doublewell2d, generator_AV, linear1d, linear1d_exact_exponent,
    register_family, select_sigma1, simulate_sigma1, simulate_sigma1_batch, step_jump_diffusion,
)
from switchstab.switching import Hysteresis, audit_trajectory

HYST1 = Hysteresis(0.5, 0.5, 0.2, 0.5, 1)


def zero_sub():
    return ClassicalSubsystem(lambda x: 0 * x, lambda x: (0 * x)[..., None])


def linear_system(a, b, gamma=0.0, c=0.0, j=1, hyst=None):
    hyst = hyst or Hysteresis(0.5, 0.5, 0.2, 0.5, j)
    return ClassicalSwitchedSystem(linear1d(a, b, gamma, c), QuadraticV(1), np.zeros(1), hyst)


# -- generator ----------------------------------------------------------------------

def test_generator_zero_dynamics():
    assert generator_AV(zero_sub(), QuadraticV(2), np.array([1.0, -2.0])) == 0.0


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-5, 5))
def test_generator_linear_diffusion(a, b, x):
    (sub,) = linear1d(a, b, 0.0, 0.0)
    assert generator_AV(sub, QuadraticV(1), np.array([x])) == pytest.approx(
        (2 * a + b * b) * x * x, rel=1e-12, abs=1e-12)


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-0.9, 0.9), st.floats(0.1, 1.0), st.floats(-5, 5))
def test_generator_linear_with_jumps(a, b, gamma, c, x):
    (sub,) = linear1d(a, b, gamma, c)
    expect = (2 * a + b * b + 2 * gamma ** 2 * c ** 3 / 3) * x * x
    assert abs(generator_AV(sub, QuadraticV(1), np.array([x])) - expect) <= 1e-8 * max(1.0, abs(expect))


def test_numeric_v_matches_quadratic(rng):
    subs = doublewell2d()
    Vq = QuadraticV(2)
    Vn = NumericV(lambda x: np.sum(x * x, axis=-1))
    for _ in range(20):
        x = rng.normal(size=2)
        for s in subs:
            assert generator_AV(s, Vn, x) == pytest.approx(generator_AV(s, Vq, x), rel=1e-5, abs=1e-6)


def test_generator_is_batched(rng):
    subs = doublewell2d()
    xs = rng.normal(size=(7, 2))
    batch = generator_AV(subs[0], QuadraticV(2), xs)
    assert np.allclose(batch, [generator_AV(subs[0], QuadraticV(2), x) for x in xs])


def test_compensator_of_symmetric_and_asymmetric_jumps():
    (sub,) = linear1d(-1, 0, 0.5, 0.8)
    assert np.allclose(sub.compensator(np.array([2.0])), 0, atol=1e-14)
    sq = ClassicalSubsystem(lambda x: 0 * x, lambda x: (0 * x)[..., None],
                            lambda x, z: x * np.asarray(z)[..., None] ** 2, 0.8)
    assert sq.compensator(np.array([3.0]))[0] == pytest.approx(3.0 * 2 * 0.8 ** 3 / 3, rel=1e-13)


# -- switching law ---------------------------------------------------------------------

def test_select_inside_inner_band_picks_j():
    sys = linear_system([-0.5, -1.0], [0, 0], [0, 0], hyst=Hysteresis(0.5, 0.5, 0.2, 0.5, 1))
    assert select_sigma1(np.array([0.1]), sys) == 1


def test_select_outside_picks_steepest_descent():
    sys = linear_system([-0.5, -1.0], [0, 0], [0, 0], hyst=Hysteresis(0.5, 0.5, 0.2, 0.5, 1))
    x = np.array([10.0])
    assert np.allclose(sys.values(x), [-100.0, -200.0])
    assert select_sigma1(x, sys) == 2


def test_select_tie_goes_to_lowest_index():
    sys = linear_system([-1.0, -1.0], [0, 0], [0, 0], hyst=Hysteresis(0.5, 0.5, 0.2, 0.5, 2))
    assert select_sigma1(np.array([3.0]), sys) == 1


# -- stepping -----------------------------------------------------------------------------

def test_step_frozen_dynamics(rng):
    x, ev = step_jump_diffusion(zero_sub(), np.array([1.5]), 0.1, rng)
    assert x[0] == 1.5 and ev == []


def test_step_forced_euler(rng):
    sub = ClassicalSubsystem(lambda x: -x, lambda x: (0 * x)[..., None])
    x, _ = step_jump_diffusion(sub, np.array([1.0]), 0.1, rng)
    assert x[0] == pytest.approx(0.9, abs=1e-15)


def test_step_records_jumps(rng):
    (sub,) = linear1d(0.0, 0.0, 0.5, 1.0)
    events = []
    for k in range(200):
        _, ev = step_jump_diffusion(sub, np.array([1.0]), 0.05, rng, t=k * 0.05)
        events += ev
    # clock rate 2c = 2 over a horizon of 10
    assert 5 < len(events) < 40
    assert all(-1 <= e["z"] <= 1 for e in events)


@pytest.mark.parametrize("dt", [1e-2, 5e-3, 2.5e-3])
def test_deterministic_reduction_to_ode(dt):
    (ring, _) = doublewell2d(b=0.0, gamma=0.0)
    sys = ClassicalSwitchedSystem((ring,), QuadraticV(2), np.zeros(2), HYST1)
    tr = simulate_sigma1(sys, np.array([0.3, 0.0]), 2.0, dt, path_rng(0, 0), fixed_mode=1)
    # radial ODE r' = r (R^2 - r^2) with R = 1.5
    ref = rk4_scalar(lambda r: r * (2.25 - r * r), 0.3, 2.0, 1e-4)[:: int(round(dt / 1e-4))]
    err = np.max(np.abs(tr.distance - ref))
    assert err <= 2.0 * dt


# -- simulation ----------------------------------------------------------------------------

def test_single_mode_has_no_switches():
    sys = linear_system(-1.0, 0.2)
    tr = simulate_sigma1(sys, np.array([3.0]), 5.0, 1e-3, path_rng(1, 0))
    assert tr.n_switches == 0
    assert tr.distance[-1] < 0.1 * tr.distance[0]


def test_inner_start_keeps_mode_and_decay_rate():
    sys = linear_system([-1.0, 0.5], [0.5, 0.0], [0.0, 0.0], j=1)
    trs = simulate_sigma1_batch(sys, np.array([0.1]), 20.0, 1e-3,
                                [path_rng(2, i) for i in range(20)], stride=10)
    slopes = []
    for tr in trs:
        assert tr.n_switches == 0 and np.all(tr.modes == 1)
        slopes.append(np.polyfit(tr.t, np.log(tr.distance), 1)[0])
    assert np.mean(slopes) == pytest.approx(-1.125, abs=0.1)


def test_two_mode_system_settles_in_j():
    sys = linear_system([-3.0, -1.0], [1.5, 0.3], [0.0, 0.0], j=2)
    trs = simulate_sigma1_batch(sys, np.array([5.0]), 10.0, 1e-3,
                                [path_rng(3, i) for i in range(40)], stride=10)
    assert all(tr.final_mode == 2 for tr in trs)
    assert all(audit_trajectory(tr, sys.hyst, 2).ok for tr in trs)
    assert max(tr.n_switches for tr in trs) < 20


@given(st.integers(0, 10_000))
def test_paths_pass_audit(seed):
    sys = ClassicalSwitchedSystem(doublewell2d(), QuadraticV(2), np.zeros(2),
                                  Hysteresis(1.0, 1.0, 0.3, 0.5, 2))
    tr = simulate_sigma1(sys, np.array([3.0, 0.5]), 2.0, 2e-3, path_rng(seed, 0))
    rep = audit_trajectory(tr, sys.hyst, 2)
    assert rep.ok, rep.problems
    times = [s.t for s in tr.switches]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_batch_matches_single_paths():
    sys = linear_system([-3.0, -1.0], [1.5, 0.3], [0.2, 0.0], c=0.5, j=2)
    batch = simulate_sigma1_batch(sys, np.array([5.0]), 1.0, 1e-3, [path_rng(9, i) for i in range(3)])
    for i in range(3):
        solo = simulate_sigma1(sys, np.array([5.0]), 1.0, 1e-3, path_rng(9, i))
        assert np.array_equal(solo.states, batch[i].states)
        assert np.array_equal(solo.modes, batch[i].modes)


def test_mean_square_decays_for_stable_mode():
    sys = linear_system(-1.0, 0.5)
    trs = simulate_sigma1_batch(sys, np.array([1.0]), 3.0, 1e-3,
                                [path_rng(4, i) for i in range(400)], stride=100)
    V = np.array([tr.observable for tr in trs])
    mean, se = V.mean(axis=0), V.std(axis=0, ddof=1) / np.sqrt(len(trs))
    assert np.all(np.diff(mean) <= 3 * (se[1:] + se[:-1]))
    # x_T^2 is lognormal; its log has mean 2 (a - b^2 / 2) T
    logs = np.log(V[:, -1])
    assert abs(logs.mean() - 2 * (-1.0 - 0.125) * 3.0) <= 4 * logs.std(ddof=1) / np.sqrt(len(logs))


def test_jump_marks_thinned_per_mode():
    a = linear1d([-1.0, -1.0], [0.0, 0.0], [0.5, 0.5], 1.0)
    narrow = ClassicalSubsystem(a[1].drift, a[1].diffusion, a[1].jump, 0.2)
    sys = ClassicalSwitchedSystem((a[0], narrow), QuadraticV(1), np.zeros(1), HYST1)
    tr = simulate_sigma1(sys, np.array([1.0]), 20.0, 1e-2, path_rng(5, 0), fixed_mode=2)
    assert tr.events and all(abs(e["z"]) <= 0.2 for e in tr.events)


# -- partition check -------------------------------------------------------------------------

def annulus(lo, hi):
    return lambda x: lo < np.linalg.norm(x) < hi


def test_partition_no_jumps_passes(rng):
    sub = ClassicalSubsystem(lambda x: -x, lambda x: (0 * x)[..., None])
    out = check_partition_assumption(sub, annulus(1, 2), lambda g: g.uniform(-3, 3, 2), 200, rng)
    assert out["pass"] and out["tested"] > 0


def test_partition_small_jumps_inside_annulus(rng):
    c = 0.05
    sub = ClassicalSubsystem(lambda x: -x, lambda x: (0 * x)[..., None],
                             lambda x, z: x * np.asarray(z)[..., None], c)
    # stay where the margin to both circles exceeds c |x|
    def sampler(g):
        r = g.uniform(1.0 / (1 - 1.5 * c), 2.0 / (1 + 1.5 * c))
        u = g.normal(size=2)
        return r * u / np.linalg.norm(u)
    out = check_partition_assumption(sub, annulus(1, 2), sampler, 200, rng)
    assert out["pass"], out


def test_partition_forced_crossing_fails(rng):
    sub = ClassicalSubsystem(lambda x: -x, lambda x: (0 * x)[..., None],
                             lambda x, z: 2.0 * x * np.asarray(z)[..., None] + 0 * x, 1.0)
    out = check_partition_assumption(sub, annulus(1, 2), lambda g: np.array([1.5, 0.0]), 20, rng)
    assert not out["pass"] and out["crossing_violations"] > 0


# -- exact exponent ------------------------------------------------------------------------------

def test_exact_exponent_examples():
    assert linear1d_exact_exponent(-1, 0.5, 0, 0) == -1.125
    assert linear1d_exact_exponent(0, 0, 0, 1) == 0.0


@given(st.floats(-0.95, 0.95), st.floats(0.05, 1.0))
def test_exact_exponent_jump_integral(gamma, c):
    val = linear1d_exact_exponent(0.0, 0.0, gamma, c)
    assert val == pytest.approx(jump_integral_closed(gamma, c), abs=1e-10)
    if abs(gamma) * c < 0.5:
        assert val == pytest.approx(jump_integral_series(gamma, c), abs=1e-12)


def test_exact_exponent_domain():
    with pytest.raises(ValueError):
        linear1d_exact_exponent(0, 0, 1.5, 1.0)


def test_family_registry():
    register_family("pair", lambda a=-1.0: linear1d([a, a], [0, 0], [0, 0], 0.0))
    assert len(FAMILIES["pair"]()) == 2
    del FAMILIES["pair"]
