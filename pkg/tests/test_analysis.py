import math

import numpy as np
import pytest
import scipy.linalg

from odeftc import analysis
from odeftc.analysis import (build_a_star, covariance_mismatch, disagreement_projector, gain_bounds,
                             kappa_battilotti, kappa_sufficient, sigma_disturbance, verify_identities)
from odeftc.centralized import information, steady_state_covariance
from odeftc.graph import GraphTopology


@pytest.mark.parametrize("c, r1, lam, expected, tol", [
    (math.sqrt(3), 0.04, 0.2679, 139.98, 0.01),
    (math.sqrt(3), 0.06, 0.2679, 93.32, 0.01),
    (1.0, 0.5, 1.0, 1.0, 1e-15),
])
def test_kappa_sufficient(c, r1, lam, expected, tol):
    assert kappa_sufficient(c, r1, lam) == pytest.approx(expected, abs=tol)


def test_kappa_sufficient_rejects_nonpositive():
    with pytest.raises(ValueError):
        kappa_sufficient(1.0, 0.0, 1.0)


def test_battilotti_without_dynamics():
    G = np.diag([2.0, 1.0])
    N, lam = 3, 0.5
    value = kappa_battilotti(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.linalg.inv(G), N, lam, np.eye(2))
    assert value == pytest.approx(4 * N * N * 2.0 ** 2 / lam)


def test_battilotti_scalar_substitution():
    # a=1, w=2, g=1 gives Pinf = 1 + sqrt(3); N=2, lambda_G=2
    p = 1 + math.sqrt(3)
    first = 2 / p
    eta = 4 * 4 * (2 / p ** 2 + 1) * 1
    expected = (first + eta) / 2
    Pinf = steady_state_covariance([[1.0]], [[2.0]], [[1.0]], [[1.0]])
    assert Pinf[0, 0] == pytest.approx(p, rel=1e-10)
    assert kappa_battilotti([[1.0]], [[2.0]], [[1.0]], [[1.0]], 2, 2.0, Pinf) == pytest.approx(expected, rel=1e-10)


def test_battilotti_singular_pinf():
    with pytest.raises(np.linalg.LinAlgError):
        kappa_battilotti(np.eye(2), np.eye(2), np.eye(2), np.eye(2), 2, 1.0, np.diag([1.0, 0.0]))


def test_bound_reports(ltv, lti):
    r_ltv = gain_bounds(ltv, lambda_g=0.2679)
    assert r_ltv.kappa0_paper == pytest.approx(139.98, abs=0.05)
    assert r_ltv.kappa_battilotti is None
    assert any("omitted" in line for line in r_ltv.lines())
    r_lti = gain_bounds(lti, lambda_g=0.2679)
    assert r_lti.kappa0_paper == pytest.approx(93.32, abs=0.05)
    assert r_lti.kappa_battilotti / r_lti.kappa0_paper > 100
    for r in (r_ltv, r_lti, gain_bounds(ltv), gain_bounds(lti)):
        assert r.kappa0_strict >= r.kappa0_paper


def test_battilotti_pinf_matches_care(lti):
    C = np.concatenate([s.C(0) for s in lti.sensors])
    R = scipy.linalg.block_diag(*[s.R(0) for s in lti.sensors])
    A, W = lti.plant.A(0), lti.plant.W(0)
    ours = kappa_battilotti(A, W, C, R, 7, 0.2679, steady_state_covariance(A, W, C, R))
    oracle = kappa_battilotti(A, W, C, R, 7, 0.2679, scipy.linalg.solve_continuous_are(A.T, C.T, W, R))
    assert ours == pytest.approx(oracle, rel=1e-6)


def test_a_star_single_node():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    P, C, R = np.diag([1.0, 2.0]), np.array([[1.0, 0.0]]), np.array([[0.5]])
    out = build_a_star([P], [C], [R], A, np.zeros((1, 1)), 100.0, 1)
    assert np.allclose(out, A - P @ C.T @ np.linalg.inv(R) @ C)


def test_a_star_without_coupling_is_block_diagonal():
    A = np.eye(2)
    Ps = [np.eye(2), 2 * np.eye(2)]
    Cs = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
    Rs = [np.eye(1), np.eye(1)]
    out = build_a_star(Ps, Cs, Rs, A, GraphTopology.path(2).laplacian, 0.0, 2)
    assert np.all(out[:2, 2:] == 0) and np.all(out[2:, :2] == 0)


def test_a_star_two_node_scalar_hand_assembly():
    a, kappa = 0.5, 3.0
    p1, p2, c1, c2, r1, r2 = 1.0, 2.0, 1.0, 2.0, 0.5, 4.0
    k1, k2 = 2 * p1 * c1 / r1, 2 * p2 * c2 / r2
    expected = np.array([[a - k1 * c1 - kappa * p1, kappa * p1],
                         [kappa * p2, a - k2 * c2 - kappa * p2]])
    out = build_a_star([[[p1]], [[p2]]], [[[c1]], [[c2]]], [[[r1]], [[r2]]], [[a]],
                       [[1.0, -1.0], [-1.0, 1.0]], kappa, 2)
    assert np.allclose(out, expected)


def test_a_star_dimension_mismatch():
    with pytest.raises(ValueError):
        build_a_star([np.eye(2)], [np.eye(2)], [np.eye(2)], np.eye(2), np.zeros((2, 2)), 1.0, 1)


def test_a_star_decays_above_bound(lti):
    g = lti.graph
    C = np.concatenate([s.C(0) for s in lti.sensors])
    R = scipy.linalg.block_diag(*[s.R(0) for s in lti.sensors])
    A, W = lti.plant.A(0), lti.plant.W(0)
    P = steady_state_covariance(A, W, C, R)
    kappa = 1.5 * gain_bounds(lti).kappa0_paper
    Astar = build_a_star([P] * g.N, [s.C(0) for s in lti.sensors], [s.R(0) for s in lti.sensors],
                         A, g.laplacian, kappa, g.N)
    e0 = np.random.default_rng(0).standard_normal(g.N * 4)
    e10 = scipy.linalg.expm(10.0 * Astar) @ e0
    assert np.linalg.norm(e10) < np.linalg.norm(e0)


def _random_spd(rng, n):
    M = rng.standard_normal((n, n))
    return M @ M.T + np.eye(n)


def test_sigma_single_node_is_zero(rng):
    P = _random_spd(rng, 3)
    G = _random_spd(rng, 3)
    assert np.allclose(sigma_disturbance(P, [G], 1), 0, atol=1e-12)


def test_sigma_identical_sensors(rng):
    N, P, G = 4, _random_spd(rng, 3), _random_spd(rng, 3)
    S = sigma_disturbance(P, [G / N] * N, N)
    # the four terms reduce to N * H kron (P G P), which is not zero
    expected = N * np.kron(disagreement_projector(N), P @ G @ P)
    assert np.allclose(S, expected, rtol=1e-12, atol=1e-10)


def test_sigma_annihilated_by_consensus_direction(rng):
    for N in (2, 3, 5):
        P = _random_spd(rng, 3)
        Gs = [information(rng.standard_normal((1, 3)), [[0.1]]) for _ in range(N)]
        S = sigma_disturbance(P, Gs, N)
        one = np.kron(np.ones((N, 1)), np.eye(3))
        scale = np.linalg.norm(S)
        assert np.linalg.norm(one.T @ S @ one) < 1e-10 * scale
        assert np.linalg.norm(S @ one) < 1e-10 * scale
        assert np.linalg.norm(S - S.T) < 1e-12 * scale


def test_covariance_mismatch_examples(rng):
    N, P = 3, _random_spd(rng, 2)
    X, gap = covariance_mismatch(np.kron(np.ones((N, N)), P), P, N)
    assert np.allclose(X, 0) and gap == 0
    X, _ = covariance_mismatch(np.kron(np.eye(N), P), P, N)
    assert np.allclose(X[0:2, 2:4], -P)
    Pagg = _random_spd(rng, 2)
    X, gap = covariance_mismatch(Pagg, P, 1)
    assert np.allclose(X, Pagg - P)
    assert gap == pytest.approx(np.linalg.norm(Pagg - P))
    with pytest.raises(ValueError):
        covariance_mismatch(np.eye(5), P, 2)


def test_projector_two_nodes():
    H = disagreement_projector(2)
    assert np.array_equal(H, [[0.5, -0.5], [-0.5, 0.5]])
    assert np.array_equal(H @ H, H)


def test_identity_suite_passes():
    report = verify_identities(np.random.default_rng(0), 50)
    assert report.ok, report.lines()
    assert report.trials == 50


def test_identity_suite_records_failures(monkeypatch):
    monkeypatch.setitem(analysis.TOLERANCES, "d/dt P^-1", 1e-30)
    report = verify_identities(1, 3)
    assert not report.ok
    name, trial, err, instance = report.failures[0]
    assert name == "d/dt P^-1" and "P" in instance
    with pytest.raises(ValueError):
        verify_identities(0, 0)
