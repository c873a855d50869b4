from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from ncdiag.model import ErgmModel, GaussianModel, IsingModel, ergm_statistics
from ncdiag.oracle import (
    FIXTURE_DIR,
    compute_fixtures,
    diff_fixtures,
    enumerate_ergm,
    enumerate_ising,
    ergm_state_space,
    exact_posterior,
    gaussian_exact_log_c,
    gaussian_exact_log_c_grad,
    gaussian_exact_log_c_hess,
    grid_posterior,
    ising_grid_posterior,
    load_fixtures,
    log_c_derivatives_mp,
)

# frozen after agreement with a pure-Python brute force over all 512 lattices
ISING_3X3_02 = {"log_c": 6.483044791348627, "mean": 2.4934843597877285, "var": 13.37220686240201}
# frozen after agreement with a pure-Python edge-by-edge shared-partner count over all 1024 graphs
ERGM_N5 = {
    "log_c": 5.451042109675308,
    "mean": [4.888674707525982, 3.5244600068243854],
    "cov": [[3.291345628374689, 4.8963014081851135], [4.8963014081851135, 9.143404141360143]],
}
# adaptive quadrature of the S = 4 posterior on (0, 1)
GRID_S4 = {"mean": 0.3607476477919975, "var": 0.04498338801748605}
S4_LATTICE = np.array([[-1, 1, 1], [1, 1, 1], [1, 1, -1]])


# ---------------------------------------------------------------- Ising enumeration


@pytest.mark.parametrize("dims, c", [((1, 2), 4.0), ((2, 2), 16.0)])
def test_ising_theta_zero(dims, c):
    t = enumerate_ising(dims, 0.0)
    assert t.c == pytest.approx(c, rel=1e-14)
    assert t.mean[0] == pytest.approx(0.0, abs=1e-14)


def test_ising_3x3_regression():
    t = enumerate_ising((3, 3), 0.2)
    assert t.log_c == pytest.approx(ISING_3X3_02["log_c"], rel=1e-13)
    assert t.mean[0] == pytest.approx(ISING_3X3_02["mean"], rel=1e-12)
    assert t.cov[0, 0] == pytest.approx(ISING_3X3_02["var"], rel=1e-12)


@pytest.mark.parametrize("dims", [(1, 2), (2, 3), (3, 3), (4, 4)])
@pytest.mark.parametrize("theta", [-0.7, 0.0, 0.2, 0.9, 3.0])
def test_ising_probabilities_sum_to_one(dims, theta):
    assert enumerate_ising(dims, theta).probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_ising_too_large():
    with pytest.raises(ValueError, match="too large"):
        enumerate_ising((4, 5), 0.2)


@pytest.mark.parametrize("theta", [0.05, 0.2, 0.6, 1.5])
def test_ising_derivative_identities(theta):
    """d log c = E[S] and d^2 log c = Var[S], via an independent high-precision route."""
    t = enumerate_ising((3, 3), theta)
    d1, d2 = log_c_derivatives_mp(t.values[:, 0], t.counts, theta)
    assert t.mean[0] == pytest.approx(d1, rel=1e-12, abs=1e-12)
    assert t.cov[0, 0] == pytest.approx(d2, rel=1e-12)


def test_ising_large_theta_no_overflow():
    t = enumerate_ising((4, 4), 400.0)
    assert np.isfinite(t.log_c)
    assert t.mean[0] == pytest.approx(24.0)


# ---------------------------------------------------------------- ERGM enumeration


def test_ergm_n3_uniform():
    assert enumerate_ergm(3, [0.0, 0.0]).c == pytest.approx(8.0, rel=1e-14)


@pytest.mark.parametrize("theta", [(math.log(1.0), 0.0), (math.log(2.0), 0.0), (0.3, -0.4)])
def test_ergm_n3_direct_weighted_sum(theta):
    total = 0.0
    for bits in itertools.product([0, 1], repeat=3):
        a = np.zeros((3, 3), np.uint8)
        a[np.triu_indices(3, 1)] = bits
        s = ergm_statistics(a | a.T)
        total += math.exp(theta[0] * s[0] + theta[1] * s[1])
    assert enumerate_ergm(3, theta).c == pytest.approx(total, rel=1e-13)


def test_ergm_n5_regression():
    t = enumerate_ergm(5, [-0.5, 0.3], 0.25)
    assert t.log_c == pytest.approx(ERGM_N5["log_c"], rel=1e-13)
    np.testing.assert_allclose(t.mean, ERGM_N5["mean"], rtol=1e-12)
    np.testing.assert_allclose(t.cov, ERGM_N5["cov"], rtol=1e-11)


def test_ergm_state_space_adjacency_round_trip():
    space = ergm_state_space(5, 0.25)
    for idx in (0, 1, 37, 511, 1023):
        np.testing.assert_allclose(ergm_statistics(space.adjacency(idx)), space.stats[idx], rtol=1e-13)


def test_ergm_too_large():
    with pytest.raises(ValueError, match="too large"):
        enumerate_ergm(7, [0.0, 0.0])


# ---------------------------------------------------------------- Gaussian closed forms


def test_gaussian_log_c_zero():
    assert gaussian_exact_log_c([0.0, 1 / (2 * math.pi)], 1) == pytest.approx(0.0, abs=1e-15)


def test_gaussian_log_c_hessian_entry():
    assert gaussian_exact_log_c_hess([0.0, 1.0], 10)[1, 1] == pytest.approx(-5.0)


@given(mu=st.floats(-5, 5), s2=st.floats(0.1, 10), n=st.integers(1, 1000))
def test_gaussian_log_c_gradient_finite_differences(mu, s2, n, fd):
    theta = np.array([mu, s2])
    num = fd(lambda t: np.array([gaussian_exact_log_c(t, n)]), theta, 1e-6 * s2)[0]
    np.testing.assert_allclose(gaussian_exact_log_c_grad(theta, n), num, rtol=1e-8, atol=1e-9 * n / s2)
    hnum = fd(lambda t: gaussian_exact_log_c_grad(t, n), theta, 1e-6 * s2)
    np.testing.assert_allclose(gaussian_exact_log_c_hess(theta, n), hnum, rtol=1e-6, atol=1e-9 * n / s2**2)


@pytest.mark.parametrize("s2", [0.0, -1.0])
def test_gaussian_log_c_rejects_nonpositive(s2):
    with pytest.raises(ValueError):
        gaussian_exact_log_c([0.0, s2], 3)


# ---------------------------------------------------------------- exact posteriors


def test_exact_posterior_gaussian_mode_score_is_zero(gaussian_data):
    post = exact_posterior(GaussianModel(), gaussian_data)
    res = minimize(lambda t: -post.log_posterior(t), x0=[5.0, 4.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
    u, H = post.score_hessian(res.x)
    assert np.abs(u).max() < 1e-3
    assert np.all(np.linalg.eigvalsh(H) < 0)


@pytest.mark.parametrize(
    "model, data, theta",
    [
        (GaussianModel(), np.array([0.3, 1.2, -0.4, 2.2]), np.array([0.5, 1.4])),
        (IsingModel(), S4_LATTICE, np.array([0.35])),
        (ErgmModel(), np.array([[0, 1, 1, 0], [1, 0, 1, 0], [1, 1, 0, 1], [0, 0, 1, 0]], np.uint8), np.array([-0.4, 0.2])),
    ],
)
def test_exact_score_and_hessian_match_finite_differences(model, data, theta, fd):
    post = exact_posterior(model, data)
    u, H = post.score_hessian(theta)
    num_u = fd(lambda t: np.array([post.log_posterior(t)]), theta, 1e-6)[0]
    num_H = fd(lambda t: post.score_hessian(t)[0], theta, 1e-6)
    np.testing.assert_allclose(u, num_u, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(H, num_H, rtol=1e-5, atol=1e-6)


def test_exact_posterior_along_chain_respects_repeats():
    post = exact_posterior(IsingModel(), S4_LATTICE)
    pts = np.array([[0.2], [0.5], [0.2]])
    u, H = post.along_chain(pts)
    np.testing.assert_array_equal(u[0], u[2])
    np.testing.assert_array_equal(H[0], post.score_hessian([0.2])[1])


# ---------------------------------------------------------------- grid posteriors


def test_grid_posterior_flat_likelihood_equals_prior():
    g = grid_posterior(lambda t: 0.0, 0.0, 1.0, 1000)
    np.testing.assert_allclose(g.density, 1.0, rtol=1e-12)
    assert g.mean == pytest.approx(0.5, abs=1e-12)
    assert g.var == pytest.approx(1 / 12, rel=1e-5)


def test_grid_posterior_resolution_convergence():
    a = ising_grid_posterior(S4_LATTICE, 0.0, 1.0, 1000)
    b = ising_grid_posterior(S4_LATTICE, 0.0, 1.0, 2000)
    assert a.mean == pytest.approx(b.mean, abs=1e-6)


def test_grid_posterior_s4_regression():
    g = ising_grid_posterior(S4_LATTICE, 0.0, 1.0, 2000)
    assert g.mean == pytest.approx(GRID_S4["mean"], abs=1e-7)
    assert g.var == pytest.approx(GRID_S4["var"], abs=1e-7)


def test_grid_posterior_needs_100_points():
    with pytest.raises(ValueError):
        grid_posterior(lambda t: 0.0, 0.0, 1.0, 99)


# ---------------------------------------------------------------- pinned fixtures


def test_pinned_fixtures_reproduce():
    assert diff_fixtures(load_fixtures(FIXTURE_DIR), compute_fixtures()) == []


def test_fixture_diff_reports_changes():
    pinned = load_fixtures(FIXTURE_DIR)
    fresh = compute_fixtures()
    fresh["ising_3x3_theta0.2.json"]["log_c"] += 1e-6
    diffs = diff_fixtures(pinned, fresh)
    assert len(diffs) == 1 and "log_c" in diffs[0]
