import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgtrrb.optimizer import OptimizeOptions, TRConstraint, project_box, projected_bfgs
from pgtrrb.parametric import ParameterBox
from pgtrrb.rom import ReducedSystemUnstable


def _quadratic(d, c):
    return (lambda x: 0.5 * float(d @ (x - c) ** 2), lambda x: d * (x - c))


def test_project_box():
    box = ParameterBox([0., 0.], [1., 2.])
    assert np.array_equal(project_box([-1., 3.], box), [0., 2.])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.), min_size=3, max_size=3),
       st.lists(st.floats(-2., 3.), min_size=3, max_size=3),
       st.lists(st.floats(0., 1.), min_size=3, max_size=3))
def test_separable_quadratic_reaches_clipped_minimizer(d, c, x0):
    # the box constrained minimizer of a separable quadratic is the clipped
    # unconstrained one; the minimum value may be O(1), so FOC below ~1e-8
    # is beyond what relative double precision in J can resolve
    box = ParameterBox(np.zeros(3), np.ones(3))
    d, c = np.array(d), np.array(c)
    f, g = _quadratic(d, c)
    res = projected_bfgs(f, g, np.array(x0), box, OptimizeOptions(tau_foc=1e-8, max_iter=500))
    assert res.reason == 'FOC'
    assert np.allclose(res.mu, np.clip(c, 0., 1.), atol=1e-7)


def test_rosenbrock_in_box():
    def f(x):
        return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2

    def g(x):
        return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                         200 * (x[1] - x[0] ** 2)])

    box = ParameterBox([-2., -2.], [2., 0.5])
    res = projected_bfgs(f, g, np.array([-1.5, 0.]), box, OptimizeOptions(tau_foc=1e-6))
    assert res.reason == 'FOC'
    # the constrained minimizer lies on x1 = 0.5 where d/dx0 f vanishes:
    # 400 x^3 - 198 x - 2 = 0
    roots = np.roots([400., 0., -198., -2.])
    x = max(r.real for r in roots if abs(r.imag) < 1e-12)
    assert res.mu[1] == 0.5
    assert res.mu[0] == pytest.approx(x, abs=1e-6)


def test_armijo_condition_on_every_step():
    d, c = np.array([1., 50., 0.2]), np.array([0.3, 2., -1.])
    f, g = _quadratic(d, c)
    box = ParameterBox(-np.ones(3), np.ones(3))
    opts = OptimizeOptions(tau_foc=1e-9)
    res = projected_bfgs(f, g, np.array([0.9, -0.9, 0.5]), box, opts)
    for a, b in zip(res.history, res.history[1:]):
        # with t <= 1: J(new) <= J(old) - alpha/t |step|^2 implies this weaker form
        step2 = float((b['mu'] - a['mu']) @ (b['mu'] - a['mu']))
        assert b['value'] <= a['value'] - opts.armijo_alpha * step2
    assert res.agc_value == res.history[1]['value']


def test_start_at_critical_point():
    f, g = _quadratic(np.ones(2), np.array([0.5, 0.5]))
    box = ParameterBox(np.zeros(2), np.ones(2))
    res = projected_bfgs(f, g, np.array([0.5, 0.5]), box)
    assert res.reason == 'FOC' and res.iterations == 0


def test_trust_region_constraint_respected():
    f, g = _quadratic(np.ones(2), np.array([5., 5.]))
    box = ParameterBox(np.zeros(2), 10 * np.ones(2))
    mu0 = np.zeros(2)
    con = TRConstraint(lambda x: float(np.linalg.norm(x - mu0)), radius=1.)
    res = projected_bfgs(f, g, mu0, box, OptimizeOptions(tr_constraint=con))
    assert res.reason == 'TR-boundary'
    assert all(np.linalg.norm(h['mu'] - mu0) <= 1. for h in res.history)
    assert np.linalg.norm(res.mu - mu0) >= 0.95


def test_failing_evaluations_reject_steps():
    f0, g = _quadratic(np.ones(2), np.array([0.2, 0.2]))

    def f(x):
        if x[0] > 0.8:
            raise ReducedSystemUnstable(x, np.inf)
        return f0(x)

    box = ParameterBox(np.zeros(2), np.ones(2))
    res = projected_bfgs(f, g, np.array([0.7, 0.7]), box, OptimizeOptions(tau_foc=1e-9))
    assert res.reason == 'FOC'
    assert np.allclose(res.mu, [0.2, 0.2], atol=1e-8)


def test_options_validation():
    with pytest.raises(ValueError):
        OptimizeOptions(armijo_kappa=1.5)
    with pytest.raises(ValueError):
        OptimizeOptions(armijo_alpha=0.)
