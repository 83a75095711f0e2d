import numpy as np
import pytest
import scipy.sparse.linalg as spsla
from hypothesis import given, settings, strategies as st

from pgtrrb.mesh import (Region, assemble_boundary_robin, assemble_diffusion, assemble_h1_product,
                         assemble_l2, assemble_source, build_structured_mesh)

OMEGA = Region(0., 2., 0., 1.)


def _mesh(nx=8, ny=4):
    return build_structured_mesh(OMEGA, nx, ny)


def test_sizes_and_orientation():
    m = _mesh(8, 4)
    assert m.num_nodes == 9 * 5
    assert len(m.triangles) == 2 * 8 * 4
    assert len(m.boundary_edges) == 2 * (8 + 4)
    assert np.all(m.areas > 0)
    assert abs(m.areas.sum() - 2.) <= 1e-12


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        build_structured_mesh(OMEGA, 0, 3)
    with pytest.raises(ValueError):
        build_structured_mesh(Region(0., 0., 0., 1.), 3, 3)
    with pytest.raises(ValueError):
        Region(1., 0., 0., 1.)


def test_stiffness_identities():
    m = _mesh(10, 5)
    S = assemble_diffusion(m, OMEGA)
    assert abs(S - S.T).max() <= 1e-12
    assert np.abs(S @ np.ones(m.num_nodes)).max() <= 1e-12
    # linear functions have constant gradient: a(x, x) = area
    x = m.nodes[:, 0]
    assert abs(x @ (S @ x) - 2.) <= 1e-12


def test_mass_and_source_integrate_area():
    m = _mesh(10, 5)
    r = Region(0.2, 1.0, 0.4, 1.0)
    M = assemble_l2(m, r)
    one = np.ones(m.num_nodes)
    assert abs(one @ (M @ one) - r.area) <= 1e-12
    assert abs(assemble_source(m, r).sum() - r.area) <= 1e-12
    x = m.nodes[:, 0]
    # exact for the linear function x: int_r x = (x1^2 - x0^2) / 2 * height
    assert abs(one @ (M @ x) - (1.0 ** 2 - 0.2 ** 2) / 2 * 0.6) <= 1e-12


def test_boundary_perimeter():
    m = _mesh(10, 5)
    M, b = assemble_boundary_robin(m, [OMEGA])
    assert abs(b.sum() - 6.) <= 1e-12
    assert np.abs(M @ np.ones(m.num_nodes) - b).max() <= 1e-12
    top = Region(0., 2., 1., 1.)
    _, b_top = assemble_boundary_robin(m, [top])
    assert abs(b_top.sum() - 2.) <= 1e-12


def test_empty_region_selects_nothing():
    m = _mesh()
    assert assemble_diffusion(m, Region.empty()).nnz == 0
    assert not assemble_source(m, Region.empty()).any()
    M, b = assemble_boundary_robin(m, [])
    assert M.nnz == 0 and not b.any()


def test_centroid_membership_is_inclusive():
    m = _mesh(2, 1)
    # cells of width 1: centroids at x = 1/3, 2/3, 4/3, 5/3
    assert m.element_mask(Region(0., 1. / 3., 0., 1.)).sum() == 1
    assert m.element_mask(Region(0., 1., 0., 1.)).sum() == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 9), st.integers(1, 10), st.integers(0, 4), st.integers(1, 5))
def test_split_regions_add_up(i0, w, j0, h):
    m = _mesh(10, 5)
    i1, j1 = min(i0 + w, 10), min(j0 + h, 5)
    r = Region(0.2 * i0, 0.2 * i1, 0.2 * j0, 0.2 * j1)
    inside = m.element_mask(r)
    S_in = assemble_diffusion(m, inside)
    S_out = assemble_diffusion(m, ~inside)
    assert abs(S_in + S_out - assemble_diffusion(m, OMEGA)).max() <= 1e-12
    assert abs(assemble_source(m, r).sum() - r.area) <= 1e-12


def _l2_error(mesh, uh, exact):
    # edge-midpoint rule, exact for quadratics on each triangle
    tri = mesh.triangles
    p = mesh.nodes[tri]
    err = 0.
    for a, b in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (p[:, a] + p[:, b])
        diff = 0.5 * (uh[tri[:, a]] + uh[tri[:, b]]) - exact(mid[:, 0], mid[:, 1])
        err += mesh.areas @ diff ** 2 / 3.
    return np.sqrt(err)


def _manufactured_errors(levels):
    # -lap u + u = f with homogeneous Neumann data, u = cos(pi x) cos(pi y)
    def exact(x, y):
        return np.cos(np.pi * x) * np.cos(np.pi * y)

    errors, hs = [], []
    for n in levels:
        m = build_structured_mesh(OMEGA, 2 * n, n)
        A = assemble_h1_product(m)
        M = assemble_l2(m, OMEGA)
        f = (2 * np.pi ** 2 + 1) * exact(m.nodes[:, 0], m.nodes[:, 1])
        uh = spsla.spsolve(A.tocsc(), M @ f)
        errors.append(_l2_error(m, uh, exact))
        hs.append(m.h)
    return np.array(hs), np.array(errors)


def test_manufactured_solution_rate():
    hs, errors = _manufactured_errors([8, 16, 32, 64])
    rates = np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])
    assert np.all(rates >= 1.8), rates


def test_h1_product_is_spd():
    m = _mesh(6, 3)
    P = assemble_h1_product(m).toarray()
    assert np.linalg.eigvalsh(P).min() > 0
