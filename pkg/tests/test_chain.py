import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leakprop import chain

GRID = [(p, g) for p in (0.1, 0.25, 0.4) for g in (0.5, 0.9, 0.99)]

ps = st.floats(0.02, 0.45)
gammas = st.floats(0.05, 0.995)


def _model(p=0.25, gamma=0.99, alpha=1.0, n=200):
    return chain.ChainModel(p, gamma, alpha, n)


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("p", [0.0, 0.5, 0.6, -0.1])
def test_p_outside_range_rejected(p):
    with pytest.raises(ValueError, match="stationary"):
        chain.ChainModel(p, 0.9)


def test_bad_gamma_and_size():
    with pytest.raises(ValueError):
        chain.ChainModel(0.25, 1.0)
    with pytest.raises(ValueError):
        chain.ChainModel(0.25, 0.9, n_states=2)
    with pytest.raises(ValueError):
        chain.ChainModel(0.25, 0.9, alpha=-1.0)


# ---------------------------------------------------------------- stationary

def test_stationary_quarter():
    mu = chain.stationary_distribution(_model()).mu
    assert np.allclose(mu[:4], [1 / 3, 4 / 9, 4 / 27, 4 / 81], rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(p=ps)
def test_stationary_matches_eigenvector(p):
    m = _model(p, 0.9, n=60)
    st_ = chain.stationary_distribution(m)
    P = chain.transition_matrix(m)
    w, V = np.linalg.eig(P.T)
    pi = np.real(V[:, np.argmin(np.abs(w - 1))])
    pi /= pi.sum()
    # truncation only perturbs states carrying ~tail mass
    assert np.max(np.abs(pi - st_.mu)) < 10 * st_.tail_mass + 1e-12
    assert np.allclose(st_.mu[2:] / st_.mu[1:-1], p / (1 - p), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(p=ps)
def test_detailed_balance(p):
    m = _model(p, 0.9)
    mu = chain.stationary_distribution(m).mu
    P = chain.transition_matrix(m)
    s = np.arange(m.n_states - 1)
    assert np.allclose(mu[s] * P[s, s + 1], mu[s + 1] * P[s + 1, s], rtol=1e-12, atol=1e-300)


def test_tail_mass_small_default():
    for p, g in GRID:
        assert chain.stationary_distribution(_model(p, g)).tail_mass < 1e-12
    st_ = chain.stationary_distribution(_model(0.25, 0.9, n=10))
    assert math.isclose(st_.mu.sum() + st_.tail_mass, 1.0, rel_tol=1e-14)


def test_transition_matrix_stochastic():
    P = chain.transition_matrix(_model(0.3, 0.9, n=15))
    assert np.allclose(P.sum(axis=1), 1.0) and np.all(P >= 0)


# ---------------------------------------------------------------- roots

def test_roots_reference_values():
    r = chain.characteristic_roots(_model(0.25, 0.99))
    assert abs(r.r1 - 0.98036) < 5e-5
    assert abs(r.r2 - 3.0601) < 5e-4
    assert math.isclose(r.r1 * r.r2, 3.0, rel_tol=1e-12)
    assert abs(chain.characteristic_roots(_model(0.25, 0.5)).r1 - 0.39443) < 5e-4


@settings(max_examples=100, deadline=None)
@given(p=ps, g=gammas)
def test_roots_match_numpy_roots(p, g):
    m = _model(p, g)
    r = chain.characteristic_roots(m)
    ref = np.sort(np.roots([1.0, -1.0 / (p * g), (1 - p) / p]).real)
    assert math.isclose(r.r1, ref[0], rel_tol=1e-9) and math.isclose(r.r2, ref[1], rel_tol=1e-9)
    assert 0 < r.r1 < 1 < (1 - p) / p < r.r2
    assert math.isclose(r.r1 * r.r2, (1 - p) / p, rel_tol=1e-12)
    assert abs(chain.char_residual(m, r.r1)) < 1e-10
    assert abs(chain.char_residual(m, r.r2)) < 1e-10 * max(1.0, r.r2 * r.r2)


def test_root_limits():
    assert abs(chain.characteristic_roots(_model(0.25, 1 - 1e-6)).r1 - 1.0) < 1e-3
    g = np.linspace(0.01, 0.999, 200)
    r1 = [chain.characteristic_roots(_model(0.25, x)).r1 for x in g]
    assert np.all(np.diff(r1) > 0)


# ---------------------------------------------------------------- TD fixed point

def test_analytic_values():
    v = chain.analytic_td_solution(_model(alpha=2.5))
    assert v[0] == 2.5
    v = chain.analytic_td_solution(_model())
    assert abs(v[10] - 0.8201) < 5e-4
    v = chain.analytic_td_solution(_model(gamma=1e-9))
    assert np.all(np.abs(v[1:]) < 1e-8)


@pytest.mark.parametrize("p,g", GRID)
def test_fixed_point_matches_linear_solve(p, g):
    m = _model(p, g)
    n = m.n_states
    # v = T v on s > 0 with v0 = alpha: solve (I - gamma P) v = 0 restricted to free states
    P = chain.transition_matrix(m)
    A = np.eye(n) - g * P
    b = -A[1:, 0] * m.alpha
    v = np.empty(n)
    v[0] = m.alpha
    v[1:] = np.linalg.solve(A[1:, 1:], b)
    num = chain.td_fixed_point_numeric(m, tol=1e-12)
    assert np.max(np.abs(num - v)) < 1e-10
    mu = chain.stationary_distribution(m).mu
    assert np.max(np.abs(num - chain.analytic_td_solution(m))[mu > 1e-12]) < 1e-8


def test_fixed_point_degenerate_cases():
    assert np.array_equal(chain.td_fixed_point_numeric(_model(gamma=0.0, alpha=1.5))[1:], np.zeros(199))
    assert np.all(chain.td_fixed_point_numeric(_model(alpha=0.0)) == 0.0)


def test_fixed_point_nonconvergence():
    with pytest.raises(chain.ConvergenceError) as ei:
        chain.td_fixed_point_numeric(_model(0.25, 0.99), tol=1e-14, max_sweeps=5)
    assert ei.value.residual > 0


def test_sweep_examples():
    m = _model(0.25, 0.99, alpha=2.0)
    e = chain.no_leakage_estimate(m)
    out = chain.expected_td_sweep(m, e, 1.0)
    assert math.isclose(out[1], 0.99 * 0.75 * 2.0, rel_tol=1e-15) and out[0] == 2.0
    va = chain.analytic_td_solution(m)
    out = chain.expected_td_sweep(m, va, 0.5)
    assert np.max(np.abs(out - va)[1:150]) < 1e-12
    with pytest.raises(ValueError):
        chain.expected_td_sweep(m, va, 0.0)


@settings(max_examples=50, deadline=None)
@given(p=ps, g=gammas, lr=st.floats(0.01, 1.0), seed=st.integers(0, 2**31))
def test_sweep_preserves_bound(p, g, lr, seed):
    m = _model(p, g, n=30)
    v = np.random.default_rng(seed).uniform(-3, 3, 30)
    B = np.max(np.abs(v))
    assert np.max(np.abs(chain.expected_td_sweep(m, v, lr))) <= B + 1e-12


# ---------------------------------------------------------------- norms and loss

def test_norm_examples():
    m = _model(0.25, 0.99, alpha=1.7)
    e = chain.no_leakage_estimate(m)
    # transitions touching state 0: 0->1 (weight mu0 * 1) and 1->0 (weight mu1 * q)
    by_hand = 0.5 * (1 / 3 * 1.0 + 4 / 9 * 0.75) * 1.7**2
    assert math.isclose(chain.dirichlet_norm_sq(m, e), by_hand, rel_tol=1e-13)
    assert math.isclose(chain.dirichlet_norm_sq(m, e), 1.7**2 / 3, rel_tol=1e-13)
    assert math.isclose(chain.mu_norm_sq(m, e), 1.7**2 / 3, rel_tol=1e-13)
    assert chain.dirichlet_norm_sq(m, np.full(200, 4.2)) < 1e-25
    assert chain.mu_norm_sq(m, np.zeros(200)) == 0.0


def test_mu_norm_of_analytic_solution():
    m = _model(0.25, 0.99, alpha=1.3)
    r1 = chain.characteristic_roots(m).r1
    x = (0.25 / 0.75) * r1 * r1
    # mu(0) + sum_{s>=1} mu(s) r1^2s with normalizer q + 1/(1 - p/q) = 2.25
    series = (0.75 + r1 * r1 / (1 - x)) / 2.25
    assert math.isclose(chain.mu_norm_sq(m, chain.analytic_td_solution(m)), 1.3**2 * series, rel_tol=1e-12)


@settings(max_examples=30, deadline=None)
@given(p=ps, g=gammas, c=st.floats(-5, 5), seed=st.integers(0, 2**31))
def test_dirichlet_homogeneous(p, g, c, seed):
    m = _model(p, g, n=25)
    e = np.random.default_rng(seed).normal(size=25)
    assert math.isclose(chain.dirichlet_norm_sq(m, c * e), c * c * chain.dirichlet_norm_sq(m, e),
                        rel_tol=1e-10, abs_tol=1e-300)


@pytest.mark.parametrize("p,g", GRID)
def test_gradient_vanishes_at_analytic_solution(p, g):
    m = _model(p, g)
    grad = chain.mixed_loss_gradient(m, chain.analytic_td_solution(m))
    assert np.max(np.abs(grad)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(p=ps, g=gammas, seed=st.integers(0, 2**31))
def test_gradient_finite_differences(p, g, seed):
    m = _model(p, g, n=12)
    e = np.random.default_rng(seed).normal(size=12)
    grad = chain.mixed_loss_gradient(m, e, free_only=False)
    h = 1e-5
    fd = np.empty(12)
    for i in range(12):
        d = np.zeros(12)
        d[i] = h
        fd[i] = (chain.mixed_loss(m, e + d) - chain.mixed_loss(m, e - d)) / (2 * h)
    scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
    assert np.max(np.abs(grad - fd) / scale) < 1e-6


@settings(max_examples=30, deadline=None)
@given(p=ps, g=gammas, seed=st.integers(0, 2**31))
def test_gradient_zero_where_recurrence_holds(p, g, seed):
    # gradient at s equals 2 mu(s) times the TD residual at s on a reversible chain
    m = _model(p, g, n=20)
    e = np.random.default_rng(seed).normal(size=20)
    mu = chain.stationary_distribution(m).mu
    grad = chain.mixed_loss_gradient(m, e)
    res = chain.td_residual(m, e)
    assert np.allclose(grad[1:-1], 2 * mu[1:-1] * res[1:-1], rtol=1e-9, atol=1e-14)


def test_dirichlet_and_mu_terms_disagree():
    m = _model(0.25, 0.9, alpha=1.0)
    flat = np.ones(200)
    assert chain.dirichlet_norm_sq(m, flat) == 0.0
    spike = chain.no_leakage_estimate(m)
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = np.sort(rng.uniform(0, 1, 200))[::-1]
        v[0] = 1.0
        assert chain.mu_norm_sq(m, spike) <= chain.mu_norm_sq(m, v)


# ---------------------------------------------------------------- projections and bounds

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3))
def test_projection_idempotent(seed, a):
    spec = chain.ProjectionSpec(0, a)
    v = np.random.default_rng(seed).normal(size=10)
    assert np.array_equal(spec.project(spec.project(v)), spec.project(v))
    assert spec.project0(v)[0] == 0.0


@pytest.mark.parametrize("p,g", GRID)
def test_tsitsiklis_bounds(p, g):
    m = _model(p, g)
    rep = chain.tsitsiklis_check(m, chain.td_fixed_point_numeric(m))
    assert rep.sharp_holds and rep.loose_holds
    assert rep.sharp_bound < rep.loose_bound
    mu0 = chain.stationary_distribution(m).mu[0]
    assert math.isclose(rep.best_error_norm, m.alpha * math.sqrt(mu0), rel_tol=1e-14)


def test_no_leakage_ratio_and_factors():
    m = _model(0.25, 0.99, alpha=1.0)
    rep = chain.tsitsiklis_check(m, chain.no_leakage_estimate(m))
    assert abs(rep.ratio - 1.0) < 1e-12
    assert math.isclose(rep.loose_factor, 100.0, rel_tol=1e-12)
    assert abs(rep.sharp_factor - 7.0888) < 1e-4


def test_report_text():
    txt = chain.analysis_report(_model(0.25, 0.99))
    assert "r1=0.98038" in txt and "holds=True" in txt and "holds=False" not in txt
    rows = chain.analysis_table(_model(0.25, 0.9, n=20))
    assert len(rows) == 20 and rows[0][2] == 1.0
