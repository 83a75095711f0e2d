import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from pgtrrb.parametric import (AffineForm, MinThetaInapplicable, ParameterBox, ThetaFunction,
                               ThetaTerm, continuity_bound_k, evaluate_matrix, evaluate_partial,
                               min_theta_coercivity)


def test_box_contains_and_sample(rng):
    box = ParameterBox([0., -1.], [1., 1.])
    assert box.dim == 2
    assert np.allclose(box.center, [0.5, 0.])
    pts = box.sample_uniform(50, rng)
    assert pts.shape == (50, 2)
    assert all(box.contains(p) for p in pts)
    assert not box.contains([1.1, 0.])
    with pytest.raises(ValueError):
        ParameterBox([1.], [0.])


def test_theta_function():
    t = ThetaFunction.projection(1, 3, scale=2.)
    assert t([5., 7., 9.]) == 14.
    assert t.d_mu(1) == 2. and t.d_mu(0) == 0.
    assert ThetaFunction.constant(3., 3)([1., 2., 3.]) == 3.


def _form():
    P = 2
    comps = [sps.identity(3, format='csr'), sps.diags([1., 2., 3.]).tocsr(),
             sps.csr_matrix(np.ones((3, 3)))]
    thetas = [ThetaFunction.constant(1., P), ThetaFunction.projection(0, P),
              ThetaFunction.projection(1, P, 0.5)]
    return AffineForm(thetas, comps)


def test_evaluate_matrix_matches_manual_sum():
    form = _form()
    mu = np.array([2., 4.])
    manual = np.eye(3) + 2. * np.diag([1., 2., 3.]) + 2. * np.ones((3, 3))
    assert np.abs(evaluate_matrix(form, mu).toarray() - manual).max() <= 1e-14


def test_evaluate_partial_matches_finite_difference():
    form = _form()
    mu = np.array([0.3, 0.7])
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1e-3
        fd = (evaluate_matrix(form, mu + e) - evaluate_matrix(form, mu - e)).toarray() / 2e-3
        assert np.abs(evaluate_partial(form, mu, i).toarray() - fd).max() <= 1e-10
    with pytest.raises(IndexError):
        evaluate_partial(form, mu, 2)


def test_theta_term_gradient():
    t = ThetaTerm(0., [1., 2.], [0.5, 0.5], const_offset=1.)
    mu = np.array([1., 0.])
    assert t(mu) == pytest.approx(1. + 0.5 * (0.25 + 2 * 0.25))
    assert np.allclose(t.gradient(mu), [0.5, -1.])
    with pytest.raises(ValueError):
        ThetaTerm(-1., [1.], [0.])


def _dense_min_eig(fom, mu):
    A = evaluate_matrix(fom.a, mu).toarray()
    return sla.eigh(0.5 * (A + A.T), fom.product.toarray(), eigvals_only=True)[0]


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0., 1.), min_size=6, max_size=6))
def test_min_theta_is_lower_bound(small_fom, t):
    box = small_fom.box
    mu = box.mu_a + np.array(t) * (box.mu_b - box.mu_a)
    assert min_theta_coercivity(small_fom, mu) <= _dense_min_eig(small_fom, mu) * (1 + 1e-10)


def test_min_theta_exact_at_reference(small_fom):
    alpha = min_theta_coercivity(small_fom, small_fom.mu_ref)
    assert alpha == pytest.approx(_dense_min_eig(small_fom, small_fom.mu_ref), rel=1e-10)


def test_min_theta_inapplicable(small_fom):
    mu = small_fom.mu_ref.copy()
    mu[0] = -1.
    with pytest.raises(MinThetaInapplicable):
        min_theta_coercivity(small_fom, mu)


def test_continuity_bound_k(small_fom):
    K = evaluate_matrix(small_fom.k, small_fom.mu_ref).toarray()
    w = sla.eigh(K, small_fom.product.toarray(), eigvals_only=True)
    assert continuity_bound_k(small_fom, small_fom.mu_ref) == pytest.approx(np.abs(w).max(),
                                                                             rel=1e-10)
