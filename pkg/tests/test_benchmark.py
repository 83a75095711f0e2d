import json

import numpy as np
import pytest

from pgtrrb.benchmark import (ExperimentConfig, GeometryError, GeometrySpec, build_benchmark,
                              make_desired_state)
from pgtrrb.fom import FOMEvaluator, solve_primal
from pgtrrb.optimizer import OptimizeOptions, projected_bfgs


def _geometry_dict(**kw):
    data = json.loads(json.dumps({
        'domain': [0., 2., 0., 1.],
        'domain_of_interest': [0., 0.5, 0.5, 1.],
        'features': [
            {'name': 'w', 'kind': 'wall', 'rect': [0.9, 1.1, 0., 1.], 'parametric': True,
             'param_index': 0, 'bounds': [0.05, 0.1]},
            {'name': 'h', 'kind': 'heater', 'rect': [0.2, 0.4, 0.2, 0.4], 'parametric': True,
             'param_index': 1, 'bounds': [0., 10.]},
        ]}))
    data.update(kw)
    return data


def test_default_geometry_has_twelve_parameters():
    geo = GeometrySpec.load('default')
    assert geo.parameter_dim == 12
    kinds = [f.kind for f in geo.parametric_features]
    assert kinds.count('heater') == 7 and kinds.count('door') == 2 and kinds.count('wall') == 3
    assert all(geo.box.contains(geo.desired_parameter) for _ in [0])


def test_invalid_geometries():
    bad = _geometry_dict()
    bad['features'][1]['param_index'] = 0
    with pytest.raises(GeometryError):
        GeometrySpec.from_dict(bad)
    bad = _geometry_dict()
    bad['features'][0]['rect'] = [1.9, 2.1, 0., 1.]
    with pytest.raises(GeometryError):
        GeometrySpec.from_dict(bad)
    bad = _geometry_dict()
    bad['features'][0]['kind'] = 'chimney'
    with pytest.raises(GeometryError):
        GeometrySpec.from_dict(bad)
    with pytest.raises(GeometryError):
        GeometrySpec.from_dict({'features': []})


def test_geometry_without_parameters_is_solvable():
    data = _geometry_dict()
    for f in data['features']:
        f['parametric'] = False
        f['value'] = 1.
    geo = GeometrySpec.from_dict(data)
    fom = build_benchmark(geo, 8, 4)
    assert fom.parameter_dim == 0
    u = solve_primal(fom, np.zeros(0))
    assert np.all(np.isfinite(u.u))
    assert FOMEvaluator(fom).value(np.zeros(0)) == 1.


def test_maximum_principle_with_heaters_off(coarse_fom):
    mu = coarse_fom.box.center.copy()
    heaters = [f.param_index for f in coarse_fom.info['geometry'].parametric_features
               if f.kind == 'heater']
    mu[heaters] = 0.
    u = solve_primal(coarse_fom, mu).u
    assert u.max() <= 5. + 1e-10
    # no sources and only the outside temperature as data: constant state
    assert np.allclose(u, 5., atol=1e-10)


def test_robin_features_only_on_boundary():
    geo = GeometrySpec.load('floorplan')
    robin = [f.name for f in geo.features if geo.is_robin(f)]
    assert all(f.startswith('window') for f in robin)
    assert not any(geo.is_robin(f) for f in geo.parametric_features)


def test_desired_state_is_exact_fit(small_fom):
    mu_d = small_fom.info['mu_d']
    u_d = make_desired_state(small_fom, mu_d)
    assert np.array_equal(u_d, small_fom.info['u_d'])
    fe = FOMEvaluator(small_fom)
    assert fe.value(mu_d) == 1.
    res = projected_bfgs(fe.value, fe.gradient, mu_d, small_fom.box, OptimizeOptions())
    assert res.iterations == 0 and res.reason == 'FOC'


def test_fom_bfgs_recovers_desired_parameter(small_fom):
    fe = FOMEvaluator(small_fom)
    mu0 = small_fom.box.sample_uniform(1, np.random.default_rng(1))[0]
    res = projected_bfgs(fe.value, fe.gradient, mu0, small_fom.box, OptimizeOptions(tau_foc=1e-6))
    assert res.reason == 'FOC'
    mu_d = small_fom.info['mu_d']
    assert np.linalg.norm(res.mu - mu_d) / np.linalg.norm(mu_d) <= 1e-4


def test_experiment_config():
    cfg = ExperimentConfig.from_dict({'geometry': 'small6', 'domain_of_interest': 'full'})
    assert cfg.geometry_spec().domain_of_interest == cfg.geometry_spec().domain
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({'nx': 10, 'colour': 'red'})
    with pytest.raises(ValueError):
        ExperimentConfig(nx=0)
    with pytest.raises(ValueError):
        build_benchmark(GeometrySpec.load('small6'), 5, 5,
                        ExperimentConfig(geometry='small6', mu_d=[1.] * 6))
