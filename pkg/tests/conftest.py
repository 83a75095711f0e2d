import sys

import numpy as np
import pytest

from pgtrrb.benchmark import ExperimentConfig, GeometrySpec, build_benchmark


@pytest.fixture(scope='session')
def small_fom():
    """6-parameter geometry on a 15x15-cell mesh."""
    return build_benchmark(GeometrySpec.load('small6'), 15, 15)


@pytest.fixture(scope='session')
def coarse_fom():
    """Desk geometry on a coarse 20x10 mesh."""
    return build_benchmark(GeometrySpec.load('floorplan'), 20, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def small_config(**kw):
    data = dict(geometry='small6', nx=15, ny=15, seed=3, starts=2)
    data.update(kw)
    return ExperimentConfig.from_dict(data)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get('test_acceptance')
    if module is None or not module.RESULTS:
        return
    terminalreporter.section('acceptance criteria')
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
