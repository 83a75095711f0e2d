import numpy as np
import pytest

from pgtrrb.fom import FOMEvaluator, foc_measure
from pgtrrb.rom import ReducedEvaluator
from pgtrrb.trust_region import (MODES, TRConfig, radius_update, sufficient_decrease_check,
                                 tr_rb_optimize)


def _never():
    raise AssertionError('FOM evaluation not expected')


def test_sufficient_decrease_branches():
    assert sufficient_decrease_check(1.0, 0.1, 1.2, _never) == (True, False)
    assert sufficient_decrease_check(1.5, 0.1, 1.2, _never) == (False, False)
    assert sufficient_decrease_check(1.15, 0.1, 1.2, lambda: 1.19) == (True, True)
    assert sufficient_decrease_check(1.15, 0.1, 1.2, lambda: 1.21) == (False, True)


def test_radius_update():
    cfg = TRConfig(shrink_beta1=0.5, eta_rho=0.75)
    # rho = 1 -> enlarge by 1 / beta1
    assert radius_update(2., 1., 2., 1., 0.1, cfg) == pytest.approx(0.2)
    # rho = 0.5 -> keep
    assert radius_update(2., 1.5, 2., 1., 0.1, cfg) == 0.1
    assert radius_update(2., 1.5, 1., 1., 0.1, cfg) == 0.1


def test_config_validation():
    with pytest.raises(ValueError):
        TRConfig(shrink_beta1=1.)
    with pytest.raises(ValueError):
        TRConfig(eta_rho=0.)
    with pytest.raises(ValueError):
        TRConfig(mode='bogus')


def test_start_outside_box(small_fom):
    with pytest.raises(ValueError):
        tr_rb_optimize(small_fom, small_fom.box.mu_b + 1.)


def test_start_at_optimum_terminates(small_fom):
    res = tr_rb_optimize(small_fom.copy(), small_fom.info['mu_d'])
    assert res.reason == 'FOC' and res.iterations == 0


@pytest.mark.parametrize('mode', sorted(MODES))
def test_converges_on_small_problem(small_fom, mode):
    fom = small_fom.copy()
    mu0 = fom.box.sample_uniform(1, np.random.default_rng(7))[0]
    res = tr_rb_optimize(fom, mu0, TRConfig(mode=mode))
    assert res.reason == 'FOC'
    assert res.foc <= 1e-6
    fe = FOMEvaluator(fom)
    assert foc_measure(fom, res.mu, fe.gradient(res.mu)) == pytest.approx(res.foc)
    # accepted iterates decrease the FOM objective monotonically
    J = [r.J_h for r in res.accepted]
    assert all(b <= a + 1e-12 for a, b in zip(J, J[1:]))
    # every enrichment parameter is reproduced by the final reduced model
    rom = res.reductor.reduce(*MODES[mode])
    ev = ReducedEvaluator(rom)
    for mu in res.enrichment_mus:
        assert abs(fe.value(mu) - ev.value(mu)) <= 1e-8
        assert ev.estimates(mu).delta_J <= 1e-8
    n = [r.n_basis for r in res.accepted]
    assert all(b >= a for a, b in zip(n, n[1:]))
