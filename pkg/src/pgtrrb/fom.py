"""Full order primal/dual solves, objective, adjoint gradient and the
first-order criticality measure."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from .parametric import FullOrderModel, evaluate_matrix

_FACTOR_CACHE_SIZE = 2


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrimalSolution:
    mu: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class DualSolution:
    mu: np.ndarray
    p: np.ndarray
    primal: PrimalSolution


def _factorization(fom: FullOrderModel, mu):
    cache = fom._cache.setdefault('factorizations', OrderedDict())
    key = np.asarray(mu, dtype=float).tobytes()
    if key in cache:
        cache.move_to_end(key)
        return cache[key]
    A = sps.csc_matrix(evaluate_matrix(fom.a, mu))
    try:
        # symmetric fill-reducing ordering; A is symmetric positive definite
        lu = spsla.splu(A, permc_spec='MMD_AT_PLUS_A')
    except RuntimeError as e:
        raise SolverError(f'factorization failed at mu={np.asarray(mu)}: {e}') from e
    cache[key] = (A, lu)
    while len(cache) > _FACTOR_CACHE_SIZE:
        cache.popitem(last=False)
    return A, lu


def _count(fom, what):
    counts = fom._cache.setdefault('solve_counts', {'primal': 0, 'dual': 0})
    counts[what] += 1


def solve_counts(fom: FullOrderModel) -> dict:
    return dict(fom._cache.get('solve_counts', {'primal': 0, 'dual': 0}))


def _check_mu(fom, mu):
    mu = np.asarray(mu, dtype=float)
    if not fom.box.contains(mu, tol=1e-12):
        raise ValueError(f'parameter {mu} outside the parameter box')
    return mu


def solve_primal(fom: FullOrderModel, mu) -> PrimalSolution:
    mu = _check_mu(fom, mu)
    A, lu = _factorization(fom, mu)
    rhs = fom.l.combine(fom.l.coefficients(mu))
    u = lu.solve(rhs)
    if not np.all(np.isfinite(u)):
        raise SolverError(f'primal solve produced non-finite values at mu={mu}')
    _count(fom, 'primal')
    return PrimalSolution(mu.copy(), u)


def dual_rhs(fom: FullOrderModel, mu, u) -> np.ndarray:
    """``j(mu) + 2 K(mu) u``, the derivative of the objective w.r.t. the state."""
    return fom.j.combine(fom.j.coefficients(mu)) + 2. * (evaluate_matrix(fom.k, mu) @ u)


def solve_dual(fom: FullOrderModel, mu, primal: PrimalSolution) -> DualSolution:
    mu = _check_mu(fom, mu)
    if not np.array_equal(primal.mu, mu):
        raise ValueError('primal solution belongs to a different parameter')
    A, lu = _factorization(fom, mu)
    p = lu.solve(dual_rhs(fom, mu, primal.u), trans='T')
    if not np.all(np.isfinite(p)):
        raise SolverError(f'dual solve produced non-finite values at mu={mu}')
    _count(fom, 'dual')
    return DualSolution(mu.copy(), p, primal)


def primal_residual(fom: FullOrderModel, mu, u) -> np.ndarray:
    """Residual functional ``l(v) - a(u, v)`` as a vector over the FE basis."""
    return fom.l.combine(fom.l.coefficients(mu)) - evaluate_matrix(fom.a, mu) @ u


def dual_residual(fom: FullOrderModel, mu, u, p) -> np.ndarray:
    """Residual functional ``j(q) + 2 k(q, u) - a(q, p)``."""
    return dual_rhs(fom, mu, u) - evaluate_matrix(fom.a, mu).T @ p


def objective_value(fom: FullOrderModel, mu, u) -> float:
    mu = np.asarray(mu, dtype=float)
    K = evaluate_matrix(fom.k, mu)
    if fom.misfit_center is not None:
        e = u - fom.misfit_center
        return fom.theta_term.shifted(mu) + float(e @ (K @ e))
    j = fom.j.combine(fom.j.coefficients(mu))
    return fom.theta_term(mu) + float(j @ u) + float(u @ (K @ u))


def objective(fom: FullOrderModel, mu, primal: PrimalSolution) -> float:
    return objective_value(fom, mu, primal.u)


def gradient_value(fom: FullOrderModel, mu, u, p) -> np.ndarray:
    """Eq. ``dTheta + dj(u) + dk(u,u) + dl(p) - da(u,p)`` for arbitrary
    state/adjoint pairs."""
    mu = np.asarray(mu, dtype=float)
    grad = fom.theta_term.gradient(mu).copy()
    # contributions per affine component, then contracted with d theta / d mu
    a_terms = np.array([p @ (A @ u) for A in fom.a.components])
    l_terms = np.array([l @ p for l in fom.l.components])
    j_terms = np.array([jq @ u for jq in fom.j.components])
    k_terms = np.array([u @ (K @ u) for K in fom.k.components])
    grad += fom.l.coefficient_derivatives().T @ l_terms
    grad -= fom.a.coefficient_derivatives().T @ a_terms
    grad += fom.j.coefficient_derivatives().T @ j_terms
    grad += fom.k.coefficient_derivatives().T @ k_terms
    return grad


def gradient(fom: FullOrderModel, mu, primal: PrimalSolution, dual: DualSolution) -> np.ndarray:
    if not (np.array_equal(primal.mu, dual.mu) and np.array_equal(primal.mu, np.asarray(mu, float))):
        raise ValueError('solutions belong to different parameters')
    return gradient_value(fom, mu, primal.u, dual.p)


def foc_measure(fom_or_box, mu, grad) -> float:
    """``|| mu - clip(mu - grad) ||_2``."""
    box = getattr(fom_or_box, 'box', fom_or_box)
    mu = np.asarray(mu, dtype=float)
    return float(np.linalg.norm(mu - np.clip(mu - grad, box.mu_a, box.mu_b)))


class FOMEvaluator:
    """Caches the primal and dual solves of the most recent parameters so that
    value and gradient requests at one parameter share them."""

    def __init__(self, fom: FullOrderModel, cache_size: int = 4):
        self.fom = fom
        self.cache_size = cache_size
        self._solutions = OrderedDict()

    def _entry(self, mu):
        key = np.asarray(mu, dtype=float).tobytes()
        if key in self._solutions:
            self._solutions.move_to_end(key)
        else:
            self._solutions[key] = {'primal': solve_primal(self.fom, mu)}
            while len(self._solutions) > self.cache_size:
                self._solutions.popitem(last=False)
        return self._solutions[key]

    def primal(self, mu) -> PrimalSolution:
        return self._entry(mu)['primal']

    def dual(self, mu) -> DualSolution:
        e = self._entry(mu)
        if 'dual' not in e:
            e['dual'] = solve_dual(self.fom, mu, e['primal'])
        return e['dual']

    def value(self, mu) -> float:
        e = self._entry(mu)
        if 'J' not in e:
            e['J'] = objective(self.fom, mu, e['primal'])
        return e['J']

    def gradient(self, mu) -> np.ndarray:
        return gradient(self.fom, mu, self.primal(mu), self.dual(mu))
