import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupclip.engine import Network
from groupclip.tasks import SyntheticTask
from groupclip.tensor import RngState
from groupclip.theory import (AssumptionError, DomainError, GaussianNoise, RademacherNoise,
                              SetupError, ShiftedNoise, TheoryParams, convergence_experiment,
                              counterexample_verify, distance_measure,
                              distance_measure_inverse, fit_loglog_slope, full_grad_norm,
                              inverse_slope_at_zero, lemma_lower_bound_check,
                              nondecreasing_within, nondp_rate_experiment, proof_learning_rate)
from groupclip.verify import asymptotic_theory_params, random_separating_pair

params = st.builds(TheoryParams, xi=st.floats(0.1, 5.0), gamma=st.floats(1e-3, 1.0),
                   r=st.floats(1.05, 5.0), M=st.integers(1, 16))


def measure_mp(x, p):
    mpmath.mp.dps = 50
    x, xi, g, r, M = map(mpmath.mpf, (x, p.xi, p.gamma, p.r, p.M))
    c = xi / (r * mpmath.sqrt(M))
    return x * (g / ((r - 1) * (x + c) + g) - g / ((r + 1) * (x + c) + g))


def test_measure_examples():
    p = TheoryParams(xi=1.0, gamma=0.01, r=2.0, M=1)
    assert distance_measure(0.0, p) == 0.0
    # c = 1/2: 0.01/1.51 - 0.01/4.51
    assert distance_measure(1.0, p) == pytest.approx(0.01 / 1.51 - 0.01 / 4.51, rel=1e-14)
    assert distance_measure(2.0, p) > distance_measure(1.0, p)


@settings(max_examples=200)
@given(params, st.floats(0, 50))
def test_measure_matches_high_precision(p, x):
    assert distance_measure(x, p) == pytest.approx(float(measure_mp(x, p)), rel=1e-12,
                                                   abs=1e-300)


@settings(max_examples=200)
@given(params, st.lists(st.integers(0, 2000), min_size=2, max_size=20, unique=True))
def test_measure_strictly_increasing_and_bounded(p, ticks):
    # grid spacing 0.01 keeps neighbouring values apart in float64
    ys = distance_measure(np.sort(ticks) / 100.0, p)
    assert np.all(np.diff(ys) > 0)
    assert np.all(ys < p.sup)


@settings(max_examples=300)
@given(params, st.floats(0, 10))
def test_round_trips(p, x):
    assert abs(distance_measure_inverse(distance_measure(x, p), p) - x) < 1e-8 * (1 + x)
    y = distance_measure(x, p)
    assert abs(distance_measure(distance_measure_inverse(y, p), p) - y) < 1e-8 * (1 + y)


def test_inverse_domain():
    p = TheoryParams(xi=1.0)
    assert distance_measure_inverse(0.0, p) == 0.0
    with pytest.raises(DomainError):
        distance_measure_inverse(-1e-9, p)
    with pytest.raises(DomainError):
        distance_measure_inverse(p.sup, p)


def test_small_y_slope():
    gen = np.random.default_rng(0)
    for _ in range(200):
        p = asymptotic_theory_params(gen)
        for y in (1e-6, 1e-7):
            ratio = distance_measure_inverse(y, p) / y / inverse_slope_at_zero(p)
            assert abs(ratio - 1) < 1e-3


def test_slope_closed_form_matches_high_precision_limit():
    p = TheoryParams(xi=0.7, gamma=0.05, r=3.0, M=4)
    mpmath.mp.dps = 60
    x = mpmath.mpf("1e-25")
    slope = x / measure_mp(x, p)
    assert inverse_slope_at_zero(p) == pytest.approx(float(slope), rel=1e-12)


def test_params_validation():
    for bad in (dict(xi=0.0), dict(xi=1.0, gamma=0.0), dict(xi=1.0, r=1.0),
                dict(xi=1.0, M=0), dict(xi=1.0, rho=1.0)):
        with pytest.raises(ValueError):
            TheoryParams(**bad)


def test_bound_zero_gradient():
    p = TheoryParams(xi=1.0)
    chk = lemma_lower_bound_check(np.zeros(3), p, num_samples=10_000)
    assert chk.lhs == 0.0 and chk.rhs == 0.0 and chk.passed


def test_bound_small_gradient_is_clamped():
    p = TheoryParams(xi=1.0, r=2.0, M=1)
    g = np.array([0.3, 0.0])
    chk = lemma_lower_bound_check(g, p, num_samples=10_000)
    assert chk.x_r < 0 and chk.rhs == 0.0 and chk.passed


def test_bound_reference_configuration():
    p = TheoryParams(xi=0.5, gamma=0.01, r=2.0, M=1)
    chk = lemma_lower_bound_check(np.array([0.6, 0.8]), p, GaussianNoise(0.5 / math.sqrt(2)),
                                  num_samples=10 ** 6, rng=RngState(1))
    assert chk.lhs >= chk.rhs
    assert chk.passed


def test_bound_with_sign_noise():
    p = TheoryParams(xi=1.0, M=2)
    chk = lemma_lower_bound_check(np.array([1.0, -0.5, 2.0, 0.1]), p,
                                  RademacherNoise(1.0 / math.sqrt(8)), num_samples=50_000)
    assert chk.passed


def test_bound_assumption_checks():
    p = TheoryParams(xi=1.0)
    with pytest.raises(AssumptionError):
        lemma_lower_bound_check(np.ones(2), p, ShiftedNoise(0.1), num_samples=10)
    with pytest.raises(AssumptionError):
        lemma_lower_bound_check(np.ones(2), p, GaussianNoise(1.0), num_samples=10)


def abadi_outputs(g, R_blocks):
    out = []
    for u, R in zip(np.split(g, 2), R_blocks):
        n = np.linalg.norm(u)
        out.append(u if n == 0 else u * min(1.0, R / n))
    return np.concatenate(out)


def flat_abadi(g, R):
    n = np.linalg.norm(g)
    return g * min(1.0, R / n)


def test_counterexample_pair_is_not_representable():
    gi, gj = np.array([3.0, 4.0]), np.array([3.5, 0.0])
    rep = counterexample_verify(gi, gj, 4.0, "abadi")
    assert not rep.representable and rep.verdict == "not representable"
    assert any("both cases" in line for line in rep.trace)
    # an independent random search over threshold pairs finds nothing
    gen = np.random.default_rng(0)
    for R1, R2 in gen.uniform(0, 10, size=(20_000, 2)):
        hit = (np.allclose(abadi_outputs(gi, (R1, R2)), flat_abadi(gi, 4.0))
               and np.allclose(abadi_outputs(gj, (R1, R2)), flat_abadi(gj, 4.0)))
        assert not hit


def test_pair_without_the_ordering_is_representable():
    gi, gj = np.array([3.0, 4.0]), np.array([2.0, 0.0])
    rep = counterexample_verify(gi, gj, 4.0, "abadi", grid=[(2.4, 3.2), (1.0, 1.0)])
    assert rep.representable
    assert rep.grid_matches == 1
    assert np.allclose(abadi_outputs(gi, (2.4, 3.2)), flat_abadi(gi, 4.0))
    assert np.allclose(abadi_outputs(gj, (2.4, 3.2)), flat_abadi(gj, 4.0))


def test_random_pairs_are_never_representable():
    gen = np.random.default_rng(1)
    for _ in range(100):
        gi, gj, R = random_separating_pair(gen)
        assert not counterexample_verify(gi, gj, R, "abadi").representable
        assert not counterexample_verify(gi, gj, R, "auto").representable


def test_identical_samples_are_representable_under_auto():
    g = np.array([1.0, 2.0, -0.5, 0.3])
    rep = counterexample_verify(g, g.copy(), 1.0, "auto", grid=[])
    assert rep.representable
    R = [lo for lo, _ in rep.feasible_R]
    rep2 = counterexample_verify(g, g.copy(), 1.0, "auto", grid=[R])
    assert rep2.grid_matches == 1


def test_counterexample_setup_errors():
    with pytest.raises(SetupError):
        counterexample_verify([1.0, 1.0], [1.0, 1.0], 1.0, "abadi")
    with pytest.raises(SetupError):
        counterexample_verify([1.0, 2.0, 3.0], [1.0, 2.0], 1.0, "auto")
    with pytest.raises(SetupError):
        counterexample_verify([1.0, 2.0, 3.0], [1.0, 2.0, 0.0], 1.0, "auto")
    with pytest.raises(ValueError):
        counterexample_verify([3.0, 4.0], [1.0, 0.0], 2.0, "hard")


def test_loglog_slope_of_power_law():
    T = np.array([10.0, 100.0, 1000.0])
    assert fit_loglog_slope(T, 3 * T ** -0.25) == pytest.approx(-0.25, rel=1e-12)


def test_proof_learning_rate():
    lr = proof_learning_rate(2.0, 0.0, 1.0, 1.0, 10, 5, 100)
    assert lr == pytest.approx(math.sqrt(4 / (1 + 10 / 25)) / 10, rel=1e-14)


def test_nondecreasing_within():
    assert nondecreasing_within([1.0, 0.85, 0.9])
    assert not nondecreasing_within([1.0, 0.7])


def test_single_step_records_initial_gradient_norm():
    task = SyntheticTask("quadratic", dim=4, n=32, seed=0)
    X, Y = task.generate()
    res = convergence_experiment(task.arch(), (X, Y), M_values=(1,), T=1, B=8, seeds=[3])
    net = Network.init(task.arch(), RngState(3))
    assert res.runs[0].min_grad_norm == pytest.approx(full_grad_norm(net, X, Y), rel=1e-12)
    assert res.to_dict()["settings"]["lr"] == pytest.approx(0.45)


def test_nondp_rate_small():
    task = SyntheticTask("quadratic", dim=4, n=64, noise=0.5, seed=0)
    res = nondp_rate_experiment(task.arch(), task.generate(), T_values=(10, 100, 1000),
                                seeds=range(2))
    assert res.slope < 0
    assert len(res.min_grad_norms[100]) == 2
