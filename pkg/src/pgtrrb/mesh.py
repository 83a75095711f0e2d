"""Structured triangulations of rectangles and closed-form P1 assembly.

All element integrals are exact for piecewise constant coefficients, so no
quadrature loops are involved. Region membership of an element is decided by
its centroid, membership of a boundary edge by its midpoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

_TOL = 1e-12

# outward side tags of boundary edges
BOTTOM, RIGHT, TOP, LEFT = 0, 1, 2, 3


@dataclass(frozen=True)
class Region:
    """Closed axis-aligned rectangle ``[x0, x1] x [y0, y1]``.

    Degenerate rectangles (segments) are allowed; they are useful for
    selecting boundary edges. ``Region.empty()`` selects nothing.
    """

    x0: float
    x1: float
    y0: float
    y1: float
    is_empty: bool = False

    def __post_init__(self):
        if not self.is_empty and (self.x1 < self.x0 or self.y1 < self.y0):
            raise ValueError(f'invalid region {self!r}')

    @classmethod
    def empty(cls) -> Region:
        return cls(0., 0., 0., 0., is_empty=True)

    @classmethod
    def from_list(cls, rect) -> Region:
        x0, x1, y0, y1 = (float(v) for v in rect)
        return cls(x0, x1, y0, y1)

    def as_list(self):
        return [self.x0, self.x1, self.y0, self.y1]

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.is_empty:
            return np.zeros(len(points), dtype=bool)
        x, y = points[:, 0], points[:, 1]
        return ((x >= self.x0 - _TOL) & (x <= self.x1 + _TOL)
                & (y >= self.y0 - _TOL) & (y <= self.y1 + _TOL))

    def intersects_boundary_of(self, domain: Region) -> bool:
        if self.is_empty:
            return False
        return (self.x0 <= domain.x0 + _TOL or self.x1 >= domain.x1 - _TOL
                or self.y0 <= domain.y0 + _TOL or self.y1 >= domain.y1 - _TOL)

    @property
    def area(self) -> float:
        return 0. if self.is_empty else (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True, eq=False)
class Mesh:
    domain: Region
    nx: int
    ny: int
    nodes: np.ndarray            # (N, 2)
    triangles: np.ndarray        # (T, 3), counter-clockwise
    boundary_edges: np.ndarray   # (E, 2) node pairs
    boundary_sides: np.ndarray   # (E,) side tags
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def h(self) -> float:
        """Diameter of the triangles."""
        dx = (self.domain.x1 - self.domain.x0) / self.nx
        dy = (self.domain.y1 - self.domain.y0) / self.ny
        return float(np.hypot(dx, dy))

    @property
    def centroids(self) -> np.ndarray:
        if 'centroids' not in self._cache:
            self._cache['centroids'] = self.nodes[self.triangles].mean(axis=1)
        return self._cache['centroids']

    @property
    def edge_midpoints(self) -> np.ndarray:
        if 'midpoints' not in self._cache:
            self._cache['midpoints'] = self.nodes[self.boundary_edges].mean(axis=1)
        return self._cache['midpoints']

    def _geometry(self):
        # per-element signed areas and P1 basis gradients, cached
        if 'geometry' not in self._cache:
            p = self.nodes[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            area = 0.5 * det
            # gradient of barycentric coordinate i is rot(opposite edge) / det
            grads = np.empty((len(p), 3, 2))
            for i in range(3):
                a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
                e = b - a
                grads[:, i, 0] = -e[:, 1] / det
                grads[:, i, 1] = e[:, 0] / det
            self._cache['geometry'] = (area, grads)
        return self._cache['geometry']

    @property
    def areas(self) -> np.ndarray:
        return self._geometry()[0]

    def element_mask(self, region) -> np.ndarray:
        """Boolean mask of the elements whose centroid lies in ``region``.

        ``region`` may also be a precomputed boolean mask.
        """
        if isinstance(region, np.ndarray):
            if region.shape != (len(self.triangles),):
                raise ValueError('element mask has wrong shape')
            return region.astype(bool)
        return region.contains(self.centroids)

    def edge_mask(self, segments) -> np.ndarray:
        """Boundary edges with midpoint in one of ``segments`` (or a mask)."""
        if isinstance(segments, np.ndarray):
            if segments.shape != (len(self.boundary_edges),):
                raise ValueError('edge mask has wrong shape')
            return segments.astype(bool)
        mask = np.zeros(len(self.boundary_edges), dtype=bool)
        for seg in segments:
            mask |= seg.contains(self.edge_midpoints)
        return mask


def build_structured_mesh(domain: Region, nx: int, ny: int) -> Mesh:
    """Uniform ``nx x ny`` grid of squares, each cut along its lower-left to
    upper-right diagonal. Nodes are numbered row by row from the bottom."""
    if nx < 1 or ny < 1:
        raise ValueError('nx and ny must be positive')
    if domain.is_empty or domain.x1 - domain.x0 <= 0 or domain.y1 - domain.y0 <= 0:
        raise ValueError('degenerate domain')
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    ll = (j * (nx + 1) + i).ravel()
    lr, ul = ll + 1, ll + nx + 1
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    bottom = np.arange(nx)
    top = ny * (nx + 1) + np.arange(nx)
    left = np.arange(ny) * (nx + 1)
    right = left + nx
    edges = np.concatenate([
        np.column_stack([bottom, bottom + 1]),
        np.column_stack([right, right + nx + 1]),
        np.column_stack([top + 1, top]),
        np.column_stack([left + nx + 1, left]),
    ])
    sides = np.repeat([BOTTOM, RIGHT, TOP, LEFT], [nx, ny, nx, ny])
    return Mesh(domain, nx, ny, nodes, triangles, edges, sides)


def _scatter(mesh: Mesh, local: np.ndarray, elements: np.ndarray) -> sps.csr_matrix:
    n = mesh.num_nodes
    if len(elements) == 0:
        return sps.csr_matrix((n, n))
    tri = mesh.triangles[elements]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sps.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_diffusion(mesh: Mesh, region) -> sps.csr_matrix:
    """Stiffness matrix ``int grad(phi_j) . grad(phi_i)`` over the elements
    of ``region``."""
    elements = np.flatnonzero(mesh.element_mask(region))
    area, grads = mesh._geometry()
    g = grads[elements]
    local = area[elements, None, None] * np.einsum('eik,ejk->eij', g, g)
    return _scatter(mesh, local, elements)


_P1_MASS = np.array([[2., 1., 1.], [1., 2., 1.], [1., 1., 2.]]) / 12.


def assemble_l2(mesh: Mesh, region) -> sps.csr_matrix:
    """Mass matrix restricted to the elements of ``region``."""
    elements = np.flatnonzero(mesh.element_mask(region))
    local = mesh.areas[elements, None, None] * _P1_MASS
    return _scatter(mesh, local, elements)


def assemble_source(mesh: Mesh, region) -> np.ndarray:
    """Load vector ``int phi_i`` over the elements of ``region``."""
    elements = np.flatnonzero(mesh.element_mask(region))
    f = np.zeros(mesh.num_nodes)
    np.add.at(f, mesh.triangles[elements].ravel(),
              np.repeat(mesh.areas[elements] / 3., 3))
    return f


def assemble_boundary_robin(mesh: Mesh, segments) -> tuple[sps.csr_matrix, np.ndarray]:
    """Edge mass matrix and edge load vector for the boundary edges whose
    midpoint lies in one of ``segments``.

    The load vector still has to be scaled by the outside value.
    """
    n = mesh.num_nodes
    edges = mesh.boundary_edges[mesh.edge_mask(segments)]
    b = np.zeros(n)
    if len(edges) == 0:
        return sps.csr_matrix((n, n)), b
    p = mesh.nodes[edges]
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    local = length[:, None, None] * (np.array([[2., 1.], [1., 2.]]) / 6.)
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    M = sps.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    np.add.at(b, edges.ravel(), np.repeat(length / 2., 2))
    return M, b


def assemble_h1_product(mesh: Mesh) -> sps.csr_matrix:
    full = mesh.domain
    return (assemble_diffusion(mesh, full) + assemble_l2(mesh, full)).tocsr()
