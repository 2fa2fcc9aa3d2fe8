import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom, norm

from classdesign.core import Design, PriorModelProbabilities, RngStream
from classdesign.likelihood import (
    EpiBayesOracle,
    EpiLikelihood,
    LogisticISOracle,
    death_transition_prob,
    expm,
    gauss_hermite_rule,
    gh_evidence,
    is_evidence_logistic,
    laplace_evidence,
    matrix_exp,
    posterior_mode,
    posterior_model_probs,
    si_generator,
)
from classdesign.likelihood.evidence import EvidenceError, ImpossibleData
from classdesign.likelihood.expm import NotAGenerator, check_generator
from classdesign.models import LogisticModel


def random_generator(n, g):
    G = g.exponential(1.0, size=(n, n))
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


# ---- generators and matrix exponential -----------------------------------

def test_si_generator_hand_values():
    G = si_generator(1.0, 1.0, 2)
    assert G[1].tolist() == [2.0, -2.0, 0.0]
    assert G[2].tolist() == [0.0, 2.0, -2.0]
    assert np.all(si_generator(0.0, 0.0, 5) == 0)


@given(st.floats(0.0, 3.0), st.floats(0.0, 0.2))
def test_si_generator_rows_sum_to_zero(b1, b2):
    G = si_generator(b1, b2, 50)
    assert np.allclose(G.sum(axis=1), 0.0, atol=1e-9)
    check_generator(G)


def test_check_generator_rejects():
    with pytest.raises(NotAGenerator):
        check_generator(np.array([[-1.0, 0.5], [0.0, 0.0]]))
    with pytest.raises(NotAGenerator):
        check_generator(np.array([[1.0, -1.0], [0.0, 0.0]]))


def test_matrix_exp_identity_and_two_state():
    G = si_generator(0.7, 0.01, 10)
    assert np.array_equal(matrix_exp(G, 0.0), np.eye(11))
    a, dt = 1.3, 0.7
    P = matrix_exp(np.array([[-a, a], [0.0, 0.0]]), dt)
    expected = np.array([[np.exp(-a * dt), 1 - np.exp(-a * dt)], [0.0, 1.0]])
    assert np.max(np.abs(P - expected)) <= 1e-12


@given(st.integers(2, 12), st.floats(0.01, 20.0), st.integers(0, 2**32))
def test_expm_agrees_with_scipy(n, scale, seed):
    g = np.random.default_rng(seed)
    A = g.normal(size=(n, n)) * scale / n
    ref = scipy.linalg.expm(A)
    assert np.allclose(expm(A), ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())


@given(st.integers(2, 30), st.floats(0.001, 50.0), st.integers(0, 2**32))
def test_transition_matrix_is_stochastic(n, dt, seed):
    P = matrix_exp(random_generator(n, np.random.default_rng(seed)), dt)
    assert np.all(P >= 0)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-10)


@given(st.floats(0.05, 2.0), st.floats(0.0, 0.1), st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_matrix_exp_semigroup(b1, b2, t1, t2):
    G = si_generator(b1, b2, 50)
    lhs = matrix_exp(G, t1) @ matrix_exp(G, t2)
    assert np.linalg.norm(lhs - matrix_exp(G, t1 + t2)) <= 1e-8


def test_death_transition_prob_basics():
    assert death_transition_prob(7, 7, 0.5, 0.0) == 1.0
    assert death_transition_prob(7, 6, 0.5, 0.0) == 0.0
    assert death_transition_prob(3, 4, 0.5, 1.0) == 0.0
    total = sum(death_transition_prob(50, k, 0.62, 1.0) for k in range(51))
    assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("dt", [0.5, 1.0, 2.0])
def test_death_binomial_matches_matrix_exponential(dt):
    P = matrix_exp(si_generator(0.62, 0.0, 50), dt)
    B = np.array([[death_transition_prob(k, j, 0.62, dt) for j in range(51)] for k in range(51)])
    assert np.max(np.abs(P - B)) <= 1e-10


# ---- likelihoods -----------------------------------------------------------

def test_empty_design_likelihood_is_zero():
    lik = EpiLikelihood(1, Design.of([]))
    assert lik.log_likelihood([0.1], []) == 0.0


def test_single_factor_likelihood():
    lik = EpiLikelihood(1, Design.of([1.5]))
    b1 = 0.8
    assert lik.log_likelihood([np.log(b1)], [30]) == pytest.approx(binom.logpmf(30, 50, np.exp(-b1 * 1.5)))
    assert lik.log_likelihood([np.log(b1)], [51]) == -np.inf


def test_si_nests_death():
    g = np.random.default_rng(0)
    d = Design.of([0.5, 1.5, 4.0])
    death, si = EpiLikelihood(1, d), EpiLikelihood(2, d)
    for _ in range(20):
        S = np.sort(g.integers(0, 51, 3))[::-1]
        th = g.normal(-0.5, 0.3)
        a = death.log_likelihood([th], S)
        b = si.log_likelihood([th, -np.inf], S)
        assert b == pytest.approx(a, abs=1e-8)


def test_multi_group_likelihood_adds():
    d2 = Design.of([1.0, 2.0], [3.0])
    lik = EpiLikelihood(2, d2)
    th = [-1.0, -4.0]
    a = EpiLikelihood(2, Design.of([1.0, 2.0])).log_likelihood(th, [40, 30])
    b = EpiLikelihood(2, Design.of([3.0])).log_likelihood(th, [25])
    assert lik.log_likelihood(th, [40, 30, 25]) == pytest.approx(a + b, abs=1e-10)
    with pytest.raises(ValueError):
        lik.split_data([1, 2])


# ---- posterior modes and evidence -----------------------------------------

def gaussian_log_density(mean, cov):
    inv = np.linalg.inv(cov)
    return lambda x: -0.5 * (x - mean) @ inv @ (x - mean)


def test_mode_of_gaussian():
    mean = np.array([0.3, -1.2])
    cov = np.array([[0.5, 0.1], [0.1, 0.2]])
    s = posterior_mode(gaussian_log_density(mean, cov), [np.zeros(2), np.ones(2)])
    assert s.converged
    assert np.allclose(s.mode, mean, atol=1e-6)
    assert np.allclose(s.cov, cov, atol=1e-6)


def test_mode_without_data_is_prior_mode():
    s = EpiLikelihood(1, Design.of([])).summary([])
    assert s.mode[0] == pytest.approx(-0.48, abs=1e-6)


def test_death_mode_matches_grid_argmax():
    lik = EpiLikelihood(1, Design.of([1.0, 2.0, 4.0]))
    S = [31, 17, 6]
    s = lik.summary(S)
    grid = np.linspace(-2.0, 1.0, 10_000)
    lp = lik.log_posterior(S)
    best = grid[np.argmax([lp(np.array([x])) for x in grid])]
    assert abs(s.mode[0] - best) <= grid[1] - grid[0]


def test_laplace_exact_for_conjugate_normal():
    # y ~ N(theta, 1), theta ~ N(0, 2^2): marginal y ~ N(0, 5)
    y = 1.7
    f = lambda th: norm.logpdf(y, th[0], 1.0) + norm.logpdf(th[0], 0.0, 2.0)  # noqa: E731
    ev = laplace_evidence(posterior_mode(f, [np.zeros(1)]))
    assert ev.log_value == pytest.approx(norm.logpdf(y, 0.0, np.sqrt(5.0)), abs=1e-8)
    flat = lambda th: norm.logpdf(th[0], 0.4, 0.7)  # noqa: E731
    assert laplace_evidence(posterior_mode(flat, [np.zeros(1)])).value == pytest.approx(1.0, abs=1e-8)


def test_gauss_hermite_rule():
    for p in (1, 2):
        z, w = gauss_hermite_rule(p, 2)
        assert w.sum() == pytest.approx(1.0)
        assert np.sum(w * z[:, 0] ** 2) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        gauss_hermite_rule(1, 1)


def test_gauss_hermite_of_its_own_kernel():
    mean = np.array([0.2, 0.5])
    cov = np.array([[0.3, 0.05], [0.05, 0.1]])
    s = posterior_mode(gaussian_log_density(mean, cov), [np.zeros(2)])
    kernel = lambda x: float(np.log(1.0) + (  # noqa: E731
        -0.5 * (x - s.mode) @ np.linalg.inv(2 * s.cov) @ (x - s.mode)
        - 0.5 * np.log(np.linalg.det(2 * np.pi * 2 * s.cov))))
    ev = gh_evidence(s, kernel, Q=10)
    assert abs(ev.value - 1.0) <= 1e-10


def test_death_evidence_against_trapezoid_oracle(frozen):
    ref = frozen["death_evidence"]
    lik = EpiLikelihood(1, Design.of(ref["times"]))
    S, lo = ref["datasets"][0], ref["log_evidence"][0]
    assert abs(np.expm1(lik.laplace(S).log_value - lo)) <= 1e-3
    assert abs(np.expm1(lik.gauss_hermite(S, 30).log_value - lo)) <= 1e-4


def test_unconverged_summary_refused():
    s = posterior_mode(lambda x: -np.inf, [np.zeros(1)])
    with pytest.raises(EvidenceError):
        laplace_evidence(s)


def test_posterior_model_probs():
    assert posterior_model_probs([-3.0]).tolist() == [1.0]
    assert posterior_model_probs([-2.0, -2.0]).tolist() == [0.5, 0.5]
    p = posterior_model_probs([0.0, np.log(3.0)], PriorModelProbabilities((0.5, 0.5)))
    assert p == pytest.approx([0.25, 0.75])
    with pytest.raises(ImpossibleData):
        posterior_model_probs([-np.inf, -np.inf])


def test_toy_laplace_probabilities_against_dense_grid(frozen):
    toy = frozen["toy_n5_t1"]
    oracle = EpiBayesOracle(Design.of([1.0]), "laplace", population=5)
    for s in range(6):
        exact = toy["death"][s] / (toy["death"][s] + toy["si"][s])
        assert abs(oracle.probs_for_counts([s])[0] - exact) <= 0.02


def test_bayes_oracle_memoises_and_maps_infected():
    oracle = EpiBayesOracle(Design.of([1.0]), population=5)
    p = oracle(np.array([[2.0], [2.0], [0.0]]))
    assert p.shape == (3, 2) and np.allclose(p.sum(axis=1), 1.0)
    assert len(oracle._memo) == 2
    assert np.allclose(p[0], oracle.probs_for_counts([3]))


# ---- logistic evidence -----------------------------------------------------

def test_logistic_evidence_without_data():
    r = is_evidence_logistic(LogisticModel.from_index(16), [], Design.of([]), 100, np.random.default_rng(0))
    assert r.value == 1.0


def test_logistic_evidence_against_quadrature(frozen):
    ref = frozen["logistic_one_obs"]
    model = LogisticModel((1, 0, 0, 0))
    r = is_evidence_logistic(model, [ref["y"]], Design.of([ref["x1"], 0.0, 0.0, 0.0]), 100_000,
                             RngStream(1).generator())
    assert abs(r.value - ref["evidence"]) <= 1e-3


def test_logistic_evidence_se_scaling():
    model = LogisticModel.from_index(16)
    d = Design.of([0.5, -1.0, 0.0, 1.0, -0.5, 0.5, 1.0, 0.0])
    se = [is_evidence_logistic(model, [1, 0], d, n, np.random.default_rng(n)).se for n in (1000, 10_000, 100_000)]
    for a, b in zip(se, se[1:]):
        assert 1 / 1.5 <= (a / b) / np.sqrt(10) <= 1.5


def test_logistic_oracle_probabilities():
    d = Design.of([1.0, 1.0, 1.0, 1.0])
    oracle = LogisticISOracle(d, PriorModelProbabilities.uniform(16), 2000, 3)
    p = oracle(np.array([[1.0], [1.0], [0.0]]))
    assert p.shape == (3, 16) and np.allclose(p.sum(axis=1), 1.0)
    assert len(oracle._memo) == 2
    with pytest.raises(ValueError):
        is_evidence_logistic(LogisticModel.from_index(2, "RE"), [1], d, 10, np.random.default_rng(0))
