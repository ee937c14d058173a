import math

import numpy as np
import pytest

from tpplab import catalogue as cat
from tpplab import constructive as C
from tpplab.core import EventSequence, HomPoisson, LinearHawkesExp, NonHomPoisson, NonlinearHawkesExp, intensity_at
from tpplab.errors import ConstructionError
from tpplab.experiments import excess_risk
from tpplab.rnn import intensity


def dense_sup(net, target, lo, hi, n=400):
    grids = np.meshgrid(*[np.linspace(a, b, n) for a, b in zip(lo, hi)], indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    return float(np.max(np.abs(np.asarray(net(X)) - target(X))))


# ------------------------------------------------------------- shallow nets

def test_fit_zero_target():
    net = C.fit_shallow_tanh(lambda X: np.zeros(len(X)), [(0.0, 1.0)], 4)
    assert net.certified_sup_error <= 1e-12


def test_fit_representable_target():
    net = C.fit_shallow_tanh(lambda X: np.tanh(3 * X[:, 0] - 1), [(0.0, 1.0)], 1)
    assert net.certified_sup_error <= 1e-10


def test_fit_two_dimensional_target_dense_grid():
    target = lambda X: X[:, 0] * np.exp(-2 * X[:, 1]) + 1
    net = C.fit_shallow_tanh(target, [(-3.0, 6.0), (0.0, 1.0)], 64)
    assert net.certified_sup_error <= 1e-3
    assert dense_sup(net, target, [-3.0, 0.0], [6.0, 1.0]) <= net.certified_sup_error


def test_width_monotonicity():
    target = lambda X: np.sin(3 * X[:, 0]) * np.exp(-X[:, 1])
    errs = [C.fit_shallow_tanh(target, [(-1.0, 1.0), (0.0, 1.0)], w, seed=2).certified_sup_error
            for w in (4, 8, 16, 32)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_fit_budget_failure_raises():
    with pytest.raises(ConstructionError):
        C.fit_shallow_tanh(lambda X: np.sin(20 * X[:, 0]), [(0.0, 1.0)], 2, budget=1e-6)


# ------------------------------------------------------------- identity relay

def test_identity_relay_zero():
    net = C.identity_net(0.37, 2.0)
    assert float(net(np.zeros((1, 1)))[0]) == 0.0


def test_identity_relay_error_small():
    net = C.identity_net(1e-3, 1.0)
    assert net.measured_sup_error <= 6**4 * 1e-6
    assert net.measured_sup_error <= net.certified_sup_error


def test_identity_relay_quadratic_rate():
    hs = np.array([1e-2, 1e-3, 1e-4])
    u = np.linspace(-1, 1, 20001)
    errs = []
    for h in hs:
        approx = (2 / h) * np.tanh(h * u / 2)
        errs.append(np.max(np.abs(approx - u)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, rel=0.1)
    for h, e in zip(hs, errs):
        assert C.identity_error(h, 1.0) == pytest.approx(e, rel=1e-6)


# ------------------------------------------------------------- Poisson

def test_poisson_constant_background_exact():
    m = C.build_poisson_rnn(cat.Constant(1.7), 1.0)
    assert C.certificate(m)["certified_error"] <= 1e-12
    seq = EventSequence([0.3, 0.5], 1.0)
    np.testing.assert_allclose(intensity(m, seq, np.linspace(0.01, 1, 20)), 1.7, atol=1e-12)


def test_poisson_sinusoid_background():
    lam0 = cat.Sinusoid(2.0, 1.0, 1.0)
    m = C.build_poisson_rnn(lam0, 1.0, budget=0.01, max_width=64)
    cert = C.certificate(m)["certified_error"]
    assert cert <= 0.01
    t = np.linspace(0.001, 1.0, 2000)
    a = intensity(m, EventSequence([], 1.0), t)
    b = intensity(m, EventSequence([0.1, 0.2, 0.7], 1.0), t)
    np.testing.assert_array_equal(a, b)
    assert np.max(np.abs(a - lam0(t))) <= cert


def test_poisson_excess_loss_gap_shape():
    lam0 = cat.Sinusoid(2.0, 1.0, 1.0)
    truth = NonHomPoisson(lam0)
    m = C.build_poisson_rnn(lam0, 1.0, budget=0.01, max_width=64)
    err = C.certificate(m)["certified_error"]
    est = excess_risk(m, truth, 1.0, n_test=10_000, seed=5, estimator="paired")
    B1 = lam0.bounds(1.0)[0]
    assert abs(est.gap) <= (1.0 + 2.0 / B1) * est.mean_events_plus_one * err


# ------------------------------------------------------------- exact recursion

def test_exact_recursion_empty_sequence():
    seq = EventSequence([], 2.0)
    assert C.recursion_state(C.exp_map(1.3), seq, 0.7)[0] == 1.0


def test_exact_recursion_one_event():
    alpha, beta = 0.5, 1.3
    seq = EventSequence([0.4], 2.0)
    S = C.recursion_state(C.exp_map(beta), seq, 1.1)[0]
    lam = 1.0 + alpha * (S - 1.0)
    assert lam == pytest.approx(alpha * math.exp(-beta * 0.7) + 1.0, abs=1e-15)


def test_exact_recursion_sum_of_exponentials():
    rng = np.random.default_rng(0)
    beta = 0.8
    for _ in range(20):
        times = np.sort(rng.uniform(0.01, 2.0, rng.integers(0, 9)))
        seq = EventSequence(times, 2.0)
        t = rng.uniform(0.01, 2.0)
        expected = sum(math.exp(-beta * (t - s)) for s in times if s < t) + 1.0
        assert C.recursion_state(C.exp_map(beta), seq, t)[0] == pytest.approx(expected, abs=1e-12)


def test_rotation_recursion_one_event():
    w = 2 * math.pi * 3
    seq = EventSequence([0.25], 1.0)
    S = C.recursion_state(C.rotation_map(w), seq, 0.6, dim=2)
    np.testing.assert_allclose(S, [math.sin(w * 0.35), 1 + math.cos(w * 0.35)], atol=1e-12)


# ------------------------------------------------------------- vanilla Hawkes

def test_vanilla_certificate_and_measurement(vanilla_build):
    model, truth = vanilla_build
    cert = C.certificate(model)
    assert cert["certified_error"] <= 0.05
    measured = C.measure_sup_error(model, truth, 2.0, 8, n=100, seed=101)
    assert measured <= cert["certified_error"]
    assert set(cert) >= {"target_model", "s_0", "budget", "certified_error", "component_errors"}


def test_vanilla_budget_failure_names_component():
    with pytest.raises(ConstructionError) as exc:
        C.build_vanilla_hawkes_rnn(cat.Constant(1.0), 0.5, 1.0, 2.0, 8, budget=1e-9, max_width=8)
    assert exc.value.component


# ------------------------------------------------------------- kernel decomposition

def test_periodic_kernel_needs_no_correction():
    mix, _ = C.decompose_kernel(cat.PeriodicKernel(0.5, 1.0), 1.0)
    assert np.max(np.abs(mix.coefficients)) <= 1e-12


def test_k1_boundary_coefficient():
    mu = cat.ExpMixtureKernel((0.4, 0.3), (1.5, 4.0))
    T = 1.5
    mix, _ = C.decompose_kernel(mu, T, k=1)
    expected = (float(mu(T)) - float(mu(0.0))) / (1 - math.exp(-T))
    assert mix.coefficients[0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("mu", [cat.Exponential(1.0, 1.0), cat.ExpMixtureKernel((0.4, 0.3), (1.5, 4.0))])
def test_k3_boundary_derivatives_match(mu):
    T = 1.0
    mix, rem = C.decompose_kernel(mu, T, k=3)
    h = 1e-3
    # one-sided finite differences of orders 0..2 at each end, from values only
    def derivs(at, sign):
        f = lambda s: float(rem(at + sign * s))
        f0, f1, f2, f3 = f(0), f(h), f(2 * h), f(3 * h)
        d1 = sign * (-11 * f0 + 18 * f1 - 9 * f2 + 2 * f3) / (6 * h)
        d2 = (2 * f0 - 5 * f1 + 4 * f2 - f3) / h**2
        return np.array([f0, d1, d2])
    diff = derivs(0.0, 1) - derivs(T, -1)
    assert np.all(np.abs(diff[:2]) <= [1e-8, 1e-5])
    assert abs(diff[2]) <= 1e-2
    assert mix.boundary_mismatch <= 1e-8
    assert mix.residual <= 1e-10


# ------------------------------------------------------------- Fourier

def test_fourier_cosine():
    f = C.fourier_coefficients(lambda t: np.cos(2 * math.pi * np.asarray(t)), 5, 1.0, k=3, C0=1.0)
    assert f.mu[0] == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.abs(f.mu[1:])) <= 1e-9 and np.max(np.abs(f.nu)) <= 1e-9 and abs(f.mu0) <= 1e-9


def test_fourier_constant():
    f = C.fourier_coefficients(lambda t: np.full_like(np.asarray(t, dtype=float), 0.7), 4, 2.0, k=3, C0=0.7)
    assert f.mu0 == pytest.approx(1.4, abs=1e-12)
    assert np.max(np.abs(f.mu)) <= 1e-9 and np.max(np.abs(f.nu)) <= 1e-9


def _truncation_errors():
    _, rem = C.decompose_kernel(cat.ExpMixtureKernel((0.4, 0.3), (1.5, 4.0)), 1.0)
    fours = [C.fourier_coefficients(rem, N, 1.0) for N in (4, 8, 16)]
    return fours, [f.measured_truncation(rem) for f in fours]


def test_fourier_truncation_within_theoretical_bound():
    fours, errs = _truncation_errors()
    for f, e in zip(fours, errs):
        assert e <= f.truncation_bound()
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.xfail(strict=True, reason="measured decay is faster (slope about -2.8) than the -2 +/- 0.3 bracket")
def test_fourier_truncation_slope_bracket():
    _, errs = _truncation_errors()
    slope = np.polyfit(np.log([4, 8, 16]), np.log(errs), 1)[0]
    assert -2.3 <= slope <= -1.7


# ------------------------------------------------------------- general linear Hawkes

def test_pure_exponential_reduces_to_vanilla(vanilla_build):
    vanilla, _ = vanilla_build
    general = C.build_linear_hawkes_rnn(cat.Constant(1.0), cat.Exponential(0.5, 1.0), 2.0, 8, budget=0.05, k=1)
    dec = C.certificate(general)["decomposition"]
    assert dec["fourier_order"] == 0
    rng = np.random.default_rng(3)
    for _ in range(20):
        seq = EventSequence(np.sort(rng.uniform(0.01, 2.0, rng.integers(0, 9))), 2.0)
        t = np.linspace(0.005, 2.0, 50)
        np.testing.assert_allclose(intensity(general, seq, t), intensity(vanilla, seq, t), atol=1e-9)


def test_general_certificate_records_width_formula():
    m = C.build_linear_hawkes_rnn(cat.Constant(1.0), cat.PeriodicKernel(0.3, 1.0), 1.0, 4, budget=0.1)
    cert = C.certificate(m)
    assert cert["width"]["theory_formula"] == "N + N_mu^5 (log N)^4"
    assert cert["certified_error"] <= 0.1


# ------------------------------------------------------------- nonlinear Hawkes

def test_nonlinear_identity_link_matches_vanilla(vanilla_build):
    vanilla, truth = vanilla_build
    link = cat.ClipLink(0.5, 10.0)
    m = C.build_nonlinear_hawkes_rnn(cat.Constant(1.0), 0.5, 1.0, link, 2.0, 8, budget=0.1)
    tol = C.certificate(m)["certified_error"] + C.certificate(vanilla)["certified_error"]
    for seq in C.filtered_sequences(truth, 2.0, 8, 20, seed=9):
        t = np.linspace(0.005, 2.0, 200)
        assert np.max(np.abs(intensity(m, seq, t) - intensity(vanilla, seq, t))) <= tol


def test_nonlinear_constant_link():
    link = cat.ConstantLink(2.0)
    m = C.build_nonlinear_hawkes_rnn(cat.Constant(1.0), 0.5, 1.0, link, 2.0, 8, budget=0.1)
    err = C.certificate(m)["component_errors"]["link"] + C.certificate(m)["component_errors"]["link_relay"]
    truth = LinearHawkesExp(cat.Constant(1.0), 0.5, 1.0)
    for seq in C.filtered_sequences(truth, 2.0, 8, 10, seed=4):
        assert np.max(np.abs(intensity(m, seq, np.linspace(0.01, 2, 100)) - 2.0)) <= err + 1e-12


def test_nonlinear_sigmoid_measured():
    link = cat.SigmoidLink(0.5, 3.0, shift=2.0)
    truth = NonlinearHawkesExp(cat.Constant(1.0), 0.5, 1.0, link)
    m = C.build_nonlinear_hawkes_rnn(cat.Constant(1.0), 0.5, 1.0, link, 2.0, 8, budget=0.1)
    cert = C.certificate(m)["certified_error"]
    assert cert <= 0.1
    assert C.measure_sup_error(m, truth, 2.0, 8, n=100, seed=21) <= cert
