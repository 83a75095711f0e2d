"""Building floor-plan heat benchmark: geometry data, experiment settings and
assembly of the full order optimization model.

The state equation is ``-div(kappa grad u) = f`` with the Robin condition
``kappa grad u . n = t (u_out - u)``, where the transfer coefficient ``t``
comes from the exterior walls and windows. Interior walls, doors and windows
enter ``kappa``, heaters enter ``f``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sps

from .fom import solve_primal
from .mesh import (Region, assemble_boundary_robin, assemble_diffusion, assemble_h1_product,
                   assemble_l2, assemble_source, build_structured_mesh)
from .parametric import AffineForm, FullOrderModel, ParameterBox, ThetaFunction, ThetaTerm

logger = logging.getLogger(__name__)

KINDS = ('wall', 'door', 'window', 'heater')


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    rect: Region
    parametric: bool = False
    param_index: Optional[int] = None
    value: Optional[float] = None
    bounds: Optional[tuple] = None
    desired: Optional[float] = None


@dataclass(frozen=True)
class GeometrySpec:
    domain: Region
    features: tuple
    domain_of_interest: Region
    u_out: float = 5.
    background_diffusion: float = 1.
    boundary_transfer: float = 0.1
    heater_power: float = 1.        # source density per unit heater parameter

    def __post_init__(self):
        idx = sorted(f.param_index for f in self.features if f.parametric)
        if idx != list(range(len(idx))):
            raise GeometryError(f'parameter indices must form 0..P-1 without duplicates, got {idx}')
        for f in self.features:
            if f.kind not in KINDS:
                raise GeometryError(f'feature {f.name!r}: unknown kind {f.kind!r}')
            r, d = f.rect, self.domain
            if r.x0 < d.x0 or r.x1 > d.x1 or r.y0 < d.y0 or r.y1 > d.y1:
                raise GeometryError(f'feature {f.name!r} leaves the domain')
            if f.parametric:
                if f.bounds is None or f.bounds[0] > f.bounds[1]:
                    raise GeometryError(f'feature {f.name!r} needs valid bounds')
                if f.kind != 'heater' and f.bounds[0] <= 0:
                    raise GeometryError(f'feature {f.name!r}: coefficient bounds must be positive')
            elif f.value is None:
                raise GeometryError(f'fixed feature {f.name!r} needs a value')

    @property
    def parametric_features(self):
        return sorted((f for f in self.features if f.parametric), key=lambda f: f.param_index)

    @property
    def parameter_dim(self) -> int:
        return len(self.parametric_features)

    @property
    def box(self) -> ParameterBox:
        feats = self.parametric_features
        return ParameterBox(np.array([f.bounds[0] for f in feats], dtype=float),
                            np.array([f.bounds[1] for f in feats], dtype=float))

    @property
    def desired_parameter(self) -> np.ndarray:
        box = self.box
        return np.array([f.desired if f.desired is not None else c
                         for f, c in zip(self.parametric_features, box.center)], dtype=float)

    def is_robin(self, feature: Feature) -> bool:
        return feature.kind in ('wall', 'window', 'door') and \
            feature.rect.intersects_boundary_of(self.domain)

    @classmethod
    def from_dict(cls, data: dict) -> GeometrySpec:
        try:
            features = tuple(
                Feature(name=f['name'], kind=f['kind'], rect=Region.from_list(f['rect']),
                        parametric=bool(f.get('parametric', False)),
                        param_index=f.get('param_index'), value=f.get('value'),
                        bounds=tuple(f['bounds']) if f.get('bounds') is not None else None,
                        desired=f.get('desired'))
                for f in data['features'])
            return cls(domain=Region.from_list(data.get('domain', [0., 2., 0., 1.])),
                       features=features,
                       domain_of_interest=Region.from_list(data['domain_of_interest']),
                       u_out=float(data.get('u_out', 5.)),
                       background_diffusion=float(data.get('background_diffusion', 1.)),
                       boundary_transfer=float(data.get('boundary_transfer', 0.1)),
                       heater_power=float(data.get('heater_power', 1.)))
        except (KeyError, TypeError) as e:
            raise GeometryError(f'malformed geometry: {e!r}') from e

    @classmethod
    def load(cls, source) -> GeometrySpec:
        """Load from a dict, a JSON path or the name of a shipped geometry
        (``'floorplan'`` or ``'small6'``)."""
        if isinstance(source, dict):
            return cls.from_dict(source)
        source = str(source)
        if source in ('default', 'floorplan', 'small6'):
            name = 'floorplan' if source == 'default' else source
            text = resources.files('pgtrrb').joinpath('data', f'{name}.json').read_text()
            return cls.from_dict(json.loads(text))
        return cls.from_dict(json.loads(Path(source).read_text()))

    def with_domain_of_interest(self, region: Region) -> GeometrySpec:
        return GeometrySpec(self.domain, self.features, region, self.u_out,
                            self.background_diffusion, self.boundary_transfer, self.heater_power)


@dataclass
class ExperimentConfig:
    geometry: object = 'floorplan'
    nx: int = 100
    ny: int = 50
    sigma_d: float = 100.
    sigma: object = 0.001
    mu_d: Optional[list] = None
    domain_of_interest: object = None   # None | 'full' | [x0, x1, y0, y1]
    seed: int = 0
    starts: int = 10
    tau_foc: float = 1e-6
    tr: dict = field(default_factory=dict)
    bfgs: dict = field(default_factory=dict)
    greedy: dict = field(default_factory=dict)
    reference_tau: float = 1e-8
    output_dir: str = 'out'

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError('mesh resolution must be positive')

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f'unknown config keys: {sorted(unknown)}')
        return cls(**data)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def geometry_spec(self) -> GeometrySpec:
        geo = GeometrySpec.load(self.geometry)
        doi = self.domain_of_interest
        if doi == 'full':
            geo = geo.with_domain_of_interest(geo.domain)
        elif doi is not None:
            geo = geo.with_domain_of_interest(Region.from_list(doi))
        return geo


def _ownership(count, regions_masks):
    # index of the last listed region containing each entity, -1 for none
    owner = -np.ones(count, dtype=int)
    for i, mask in regions_masks:
        owner[mask] = i
    return owner


def assemble_state_forms(geometry: GeometrySpec, mesh):
    """Affine forms of the state equation and the parameter box."""
    P = geometry.parameter_dim
    box = geometry.box
    robin = [f for f in geometry.features if geometry.is_robin(f)]
    diffusive = [f for f in geometry.features
                 if f.kind != 'heater' and not geometry.is_robin(f)]
    heaters = [f for f in geometry.features if f.kind == 'heater']

    elem_owner = _ownership(len(mesh.triangles),
                            [(i, mesh.element_mask(f.rect)) for i, f in enumerate(diffusive)])
    edge_owner = _ownership(len(mesh.boundary_edges),
                            [(i, mesh.edge_mask([f.rect])) for i, f in enumerate(robin)])

    const_A = geometry.background_diffusion * assemble_diffusion(mesh, elem_owner == -1)
    M_bg, b_bg = assemble_boundary_robin(mesh, edge_owner == -1)
    const_A = const_A + geometry.boundary_transfer * M_bg
    const_l = geometry.u_out * geometry.boundary_transfer * b_bg

    a_thetas, a_mats = [], []
    l_thetas, l_vecs = [], []
    for i, f in enumerate(diffusive):
        S = assemble_diffusion(mesh, elem_owner == i)
        if S.nnz == 0:
            logger.warning('feature %s is not resolved by the mesh', f.name)
        if f.parametric:
            a_thetas.append(ThetaFunction.projection(f.param_index, P))
            a_mats.append(S)
        else:
            const_A = const_A + f.value * S
    for i, f in enumerate(robin):
        M, b = assemble_boundary_robin(mesh, edge_owner == i)
        if f.parametric:
            a_thetas.append(ThetaFunction.projection(f.param_index, P))
            a_mats.append(M)
            l_thetas.append(ThetaFunction.projection(f.param_index, P))
            l_vecs.append(geometry.u_out * b)
        else:
            const_A = const_A + f.value * M
            const_l = const_l + geometry.u_out * f.value * b
    for f in heaters:
        s = geometry.heater_power * assemble_source(mesh, f.rect)
        if not s.any():
            logger.warning('heater %s is not resolved by the mesh', f.name)
        if f.parametric:
            l_thetas.append(ThetaFunction.projection(f.param_index, P))
            l_vecs.append(s)
        else:
            const_l = const_l + f.value * s

    a = AffineForm([ThetaFunction.constant(1., P)] + a_thetas, [sps.csr_matrix(const_A)] + a_mats)
    l = AffineForm([ThetaFunction.constant(1., P)] + l_thetas, [const_l] + l_vecs)
    return a, l, box


def objective_forms(mass_D, u_d, sigma_d, P):
    """``j``, ``k`` and the constant of the misfit ``sigma_d/2 int_D (u-u_d)^2``."""
    Mu = mass_D @ u_d
    j = AffineForm([ThetaFunction.constant(1., P)], [-sigma_d * Mu])
    k = AffineForm([ThetaFunction.constant(1., P)], [sps.csr_matrix(0.5 * sigma_d * mass_D)])
    return j, k, 0.5 * sigma_d * float(u_d @ Mu)


def _sigma_vector(sigma, P):
    sigma = np.asarray(sigma, dtype=float)
    return np.full(P, float(sigma)) if sigma.ndim == 0 else sigma.ravel()


def make_desired_state(fom: FullOrderModel, mu_d) -> np.ndarray:
    """Reachable target ``u_d = u_h(mu_d)``."""
    return solve_primal(fom, mu_d).u


def build_benchmark(geometry: GeometrySpec, nx: int, ny: int,
                    experiment: ExperimentConfig = None) -> FullOrderModel:
    experiment = experiment or ExperimentConfig(nx=nx, ny=ny)
    mesh = build_structured_mesh(geometry.domain, nx, ny)
    a, l, box = assemble_state_forms(geometry, mesh)
    P = box.dim
    product = assemble_h1_product(mesh)
    mass_D = assemble_l2(mesh, geometry.domain_of_interest)
    sigma = _sigma_vector(experiment.sigma, P)
    mu_d = geometry.desired_parameter if experiment.mu_d is None \
        else np.asarray(experiment.mu_d, dtype=float)
    if not box.contains(mu_d):
        raise ValueError('desired parameter outside the parameter box')

    j0, k, _ = objective_forms(mass_D, np.zeros(mesh.num_nodes), experiment.sigma_d, P)
    fom = FullOrderModel(a, l, j0, k, ThetaTerm(experiment.sigma_d, sigma, mu_d, 1.),
                         product, box, mesh=mesh)
    u_d = make_desired_state(fom, mu_d)
    j, _, const = objective_forms(mass_D, u_d, experiment.sigma_d, P)
    fom = fom.with_theta_term(ThetaTerm(experiment.sigma_d, sigma, mu_d, 1., const), j=j,
                              misfit_center=u_d)
    fom.info.update(geometry=geometry, u_d=u_d, mass_D=mass_D, mu_d=mu_d)
    return fom
