import cmath
import math
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncphi4.lve import (
    SigmaField,
    budget_exponent,
    budget_threshold,
    coupling,
    crossing_gain,
    gaussian_hermitian,
    gradient_batch,
    hessian_action,
    in_borel_domain,
    inner_tadpole_cancellation,
    integration_by_parts_check,
    lift,
    lift_adjoint,
    logz_lve,
    loop_vertex,
    loop_vertex_batch,
    loop_vertex_derivative,
    loop_vertex_general,
    psd_factor,
    quadratic_trace_mean,
    resolvent,
    resolvent_induction_check,
    sample_sigma_ensemble,
    spanning_trees,
    stopping_budget,
    tree_amplitude,
    weakening_matrix,
    _full_resolvents,
)
from ncphi4.oracle import logz_series
from ncphi4.params import ModelParams
from ncphi4.propagator import covariance


def _herm(rng, N, scale=1.0):
    return scale * gaussian_hermitian(rng, (), N)


def _cov(cutoff=2):
    return covariance(ModelParams(cutoff=cutoff))


def test_lift_acts_on_both_sides():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    phi = rng.normal(size=(3, 3))
    np.testing.assert_allclose(lift(s) @ phi.ravel(), (s @ phi + phi @ s).ravel(), atol=1e-13)


def test_lift_of_hermitian_is_hermitian():
    L = lift(_herm(np.random.default_rng(1), 4))
    np.testing.assert_allclose(L, L.conj().T, atol=1e-14)


def test_lift_adjoint_under_trace():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    Y = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.trace(M @ lift(Y)) == pytest.approx(np.sum(Y * lift_adjoint(M)))


def test_coupling_and_domain():
    assert coupling(0.5) == pytest.approx(1j)
    assert in_borel_domain(0.1) and in_borel_domain(1j * 0.1)
    assert not in_borel_domain(-0.1)


def test_loop_vertex_vanishes_at_zero_and_matches_general_route():
    cov = _cov()
    assert loop_vertex(np.zeros((3, 3)), 0.1, cov) == pytest.approx(2 * 0.1 * float(np.sum(
        np.sum(cov.as_float(), axis=1) ** 2)))
    s = _herm(np.random.default_rng(3), 3)
    assert loop_vertex(s, 0.07, cov) == pytest.approx(loop_vertex_general(s, 0.07, cov), rel=1e-12)


def _fd_gradient(sigma, lam, cov, a, b, h=1e-6):
    E = np.zeros_like(sigma)
    E[a, b] = 1.0
    return (loop_vertex_general(sigma + h * E, lam, cov) - loop_vertex_general(sigma - h * E, lam, cov)) / (2 * h)


@pytest.mark.parametrize("lam", [0.05, 0.3j, 0.2 * cmath.exp(0.5j)])
def test_gradient_matches_finite_differences(lam):
    cov = _cov()
    s = _herm(np.random.default_rng(4), 3, 0.5)
    G = gradient_batch(s[None], lam, cov)[0]
    for a in range(3):
        for b in range(3):
            assert abs(G[a, b] - _fd_gradient(s, lam, cov, a, b)) < 1e-7


def test_hessian_action_matches_finite_differences():
    cov = _cov()
    lam = 0.2
    rng = np.random.default_rng(5)
    s = _herm(rng, 3, 0.5)
    Y = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    h = 1e-5
    fd = (gradient_batch((s + h * Y)[None], lam, cov) - gradient_batch((s - h * Y)[None], lam, cov))[0] / (2 * h)
    H = hessian_action(_full_resolvents(s[None], lam, cov)[0], Y, lam)
    np.testing.assert_allclose(H, fd, atol=1e-8)


def test_derivative_formula_second_and_third_order():
    cov = _cov()
    lam = 0.15
    rng = np.random.default_rng(6)
    s = _herm(rng, 3, 0.4)
    rfull = _full_resolvents(s[None], lam, cov)[0]
    for (a, b), (c, d) in [((0, 1), (1, 0)), ((2, 2), (0, 2)), ((1, 1), (1, 1))]:
        Y = np.zeros((3, 3))
        Y[c, d] = 1
        assert loop_vertex_derivative(s, [(a, b), (c, d)], lam, cov) == pytest.approx(
            hessian_action(rfull, Y, lam)[a, b], abs=1e-12)
    # third derivative against a difference of second derivatives
    h = 1e-5
    pairs = [(0, 1), (1, 2)]
    for c, d in [(2, 0), (1, 1)]:
        E = np.zeros((3, 3), dtype=complex)
        E[c, d] = 1
        plus = SigmaField(s + h * E, lift(s + h * E))
        minus = SigmaField(s - h * E, lift(s - h * E))
        fd = (loop_vertex_derivative(plus, pairs, lam, cov) - loop_vertex_derivative(minus, pairs, lam, cov)) / (2 * h)
        assert abs(loop_vertex_derivative(s, pairs + [(c, d)], lam, cov) - fd) < 1e-8


def test_second_derivative_at_zero_field():
    cov = _cov()
    lam = 0.1
    g = coupling(lam)
    # at sigma = 0, Rfull = C; the p = 2 formula gives -1/2 g^2 (-1) Tr[C E_mn C E_nm]
    for m, n in [(0, 1), (2, 2)]:
        Emn, Enm = np.zeros((3, 3)), np.zeros((3, 3))
        Emn[m, n] = 1
        Enm[n, m] = 1
        C = np.diag(cov.lifted_diag())
        expected = 0.5 * g * g * np.trace(C @ lift(Emn) @ C @ lift(Enm))
        assert loop_vertex_derivative(np.zeros((3, 3)), [(m, n), (n, m)], lam, cov) == pytest.approx(expected)
        h = 1e-4
        fd = sum(s1 * s2 * loop_vertex_general(h * (s1 * Emn + s2 * Enm), lam, cov)
                 for s1 in (1, -1) for s2 in (1, -1)) / (4 * h * h)
        assert abs(fd - expected) < 1e-6


def test_third_derivative_is_cyclic():
    cov = _cov()
    s = _herm(np.random.default_rng(7), 3, 0.3)
    p = [(0, 1), (1, 2), (2, 0)]
    v = loop_vertex_derivative(s, p, 0.2, cov)
    assert loop_vertex_derivative(s, p[1:] + p[:1], 0.2, cov) == pytest.approx(v, abs=1e-13)


def test_derivative_rejects_non_hermitian_sigma():
    with pytest.raises(ValueError):
        loop_vertex_derivative(np.array([[0, 1], [0, 0]]), [(0, 1), (1, 0)], 0.1, _cov(1))


@pytest.mark.parametrize("phase", [0.0, math.pi / 2, -math.pi / 2])
def test_resolvent_norm_bound(phase):
    # Arg sqrt(lam) = phase / 2
    rng = np.random.default_rng(8)
    cov = _cov(4)
    lam = 0.5 * cmath.exp(1j * phase)
    for _ in range(50):
        s = _herm(rng, 5, rng.uniform(0.1, 30))
        R = resolvent(s, lam, cov)
        assert R.norm() <= math.sqrt(2) + 1e-10
        assert np.linalg.norm(R.matrix - np.eye(25), 2) <= 1 + math.sqrt(2) + 1e-10
        if phase == 0:
            assert R.norm() <= 1 + 1e-12


def test_resolvent_warns_outside_domain():
    with pytest.warns(UserWarning):
        resolvent(np.eye(2), -0.1, _cov(1))


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_cayley_count(n):
    trees = spanning_trees(n)
    assert len(trees) == n ** (n - 2)
    assert len({t.edges for t in trees}) == len(trees)
    for t in trees:
        assert nx.is_tree(nx.Graph(list(t.edges)))


def test_tree_limits():
    assert spanning_trees(1)[0].edges == ()
    with pytest.raises(ValueError):
        spanning_trees(7)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.data())
def test_weakening_matrix_psd(n, data):
    trees = spanning_trees(n)
    t = trees[data.draw(st.integers(0, len(trees) - 1))]
    w = data.draw(st.lists(st.floats(0, 1), min_size=n - 1, max_size=n - 1))
    W = weakening_matrix(t.with_weights(w), check=False)
    assert W.min_eigenvalue >= -1e-12
    assert np.all(np.diag(W.W) == 1)


def test_psd_factor_singular():
    W = np.ones((3, 3))
    S = psd_factor(W)
    np.testing.assert_allclose(S @ S.T, W, atol=1e-12)


def test_sigma_ensemble_covariance():
    t = spanning_trees(3)[0].with_weights([0.3, 0.8])
    W = weakening_matrix(t).W
    draws = sample_sigma_ensemble(W, 2, seed=1, size=40000)
    # <sigma^v_01 sigma^u_10> = W_vu
    emp = np.einsum("sv,su->vu", draws[:, :, 0, 1], draws[:, :, 1, 0]).real / len(draws)
    np.testing.assert_allclose(emp, W, atol=0.03)


def test_quadratic_trace_mean_by_sampling():
    cov = _cov()
    rng = np.random.default_rng(9)
    s = gaussian_hermitian(rng, (20000,), 3)
    C = np.diag(cov.lifted_diag())
    vals = np.einsum("ij,sjk,kl,sli->s", C, lift(s), C, lift(s)).real
    assert abs(vals.mean() - quadratic_trace_mean(cov)) < 4 * vals.std() / math.sqrt(len(vals))


def test_control_variate_preserves_mean():
    cov = _cov()
    s = gaussian_hermitian(np.random.default_rng(10), (40000,), 3)
    a = loop_vertex_batch(s, 0.05, cov)
    b = loop_vertex_batch(s, 0.05, cov, control_variate=True)
    d = a - b
    assert abs(d.mean()) < 4 * math.sqrt((d.real.var() + d.imag.var()) / len(d))
    assert np.std(b.real) < np.std(a.real)


def test_integration_by_parts():
    (lhs, lse), (rhs, rse) = integration_by_parts_check(_cov(), 0.1, 0, 1, 20000, seed=3)
    assert abs(lhs - rhs) < 4 * math.hypot(lse, rse)


@pytest.mark.parametrize("j", range(0, 6))
def test_resolvent_induction(j):
    rng = np.random.default_rng(11 + j)
    for cutoff in (2, 6):
        cov = covariance(ModelParams(cutoff=cutoff))
        s = _herm(rng, cutoff + 1)
        res, scale = resolvent_induction_check(s, 0.2, j, cov)
        assert res <= 1e-10 * scale


@pytest.mark.parametrize("j", [None, 0, 1, 2, 3, 4])
def test_inner_tadpole_cancels_exactly(j):
    tad, ct = inner_tadpole_cancellation(Fraction(1, 10), covariance(ModelParams(cutoff=5)), j)
    assert isinstance(tad, Fraction)
    assert tad + ct == 0
    assert tad != 0


def test_inner_tadpole_value():
    cov = covariance(ModelParams(cutoff=3))
    tad, ct = inner_tadpole_cancellation(Fraction(1, 10), cov)
    T2 = sum(t * t for t in np.sum(cov.diag, axis=1))
    assert tad == -2 * Fraction(1, 10) * T2


def test_crossing_gain_bounded():
    cov = covariance(ModelParams(cutoff=20))
    for j in range(0, 5):
        assert 0 < crossing_gain(cov, j) <= 1


def test_budget_threshold_literal():
    lam, a = 0.1, 0.14
    j = budget_threshold(lam, a)
    assert budget_exponent(j, lam, a) < 0 <= budget_exponent(j - 1, lam, a)
    assert all(budget_exponent(k, lam, a) < 0 for k in range(j, j + 2000, 7))
    assert budget_threshold(0.1, 0.1) is None
    rep = stopping_budget(j, lam, a)
    assert rep.log_factor < 0 and rep.factor < 1
    assert stopping_budget(6, lam, a).factor > 1


def test_tree_amplitude_worker_independence():
    cov = _cov()
    t = spanning_trees(3)[1]
    a = tree_amplitude(t, 0.02, cov, 3000, seed=5, workers=1)
    b = tree_amplitude(t, 0.02, cov, 3000, seed=5, workers=3)
    assert a.mean == b.mean and a.stderr == b.stderr
    c = tree_amplitude(t, 0.02, cov, 3000, seed=6)
    assert c.mean != a.mean


def test_lve_at_zero_coupling():
    r = logz_lve(0.0, 2, _cov(3), 2000, seed=1)
    assert r.value == 0


def test_lve_against_series_small_run():
    p = ModelParams(cutoff=3)
    lam = 0.01
    r = logz_lve(lam, 3, covariance(p), 6000, seed=21)
    oracle = float(logz_series(2, p)(Fraction(lam)))
    # residual third-order term is about 7e-4 at this coupling
    assert abs(r.value.real - oracle) < 4 * r.stderr + 1.5e-3
    assert abs(r.value.imag) < 1e-12
    assert set(r.per_order) == {1, 2, 3}
    assert r.fitted_K is not None
