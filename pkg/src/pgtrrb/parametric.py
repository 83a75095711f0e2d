"""Affine parameter-separable forms, the full order model container and the
cheap stability/continuity bounds used by the error estimators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

# FE dimension below which generalized eigenproblems are solved densely
DENSE_EIG_LIMIT = 1500


class MinThetaInapplicable(ValueError):
    """Raised when a coefficient of the bilinear form is not positive."""


@dataclass(frozen=True)
class ParameterBox:
    mu_a: np.ndarray
    mu_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.mu_a, dtype=float).ravel()
        b = np.asarray(self.mu_b, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValueError('bounds have different lengths')
        if np.any(a > b):
            raise ValueError('lower bound exceeds upper bound')
        object.__setattr__(self, 'mu_a', a)
        object.__setattr__(self, 'mu_b', b)

    @property
    def dim(self) -> int:
        return len(self.mu_a)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.mu_a + self.mu_b)

    def contains(self, mu, tol=0.) -> bool:
        mu = np.asarray(mu, dtype=float)
        return mu.shape == self.mu_a.shape and bool(
            np.all(mu >= self.mu_a - tol) and np.all(mu <= self.mu_b + tol))

    def sample_uniform(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu_a + rng.random((count, self.dim)) * (self.mu_b - self.mu_a)


@dataclass(frozen=True)
class ThetaFunction:
    """Affine coefficient ``theta(mu) = c0 + c . mu``."""

    c0: float
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'c0', float(self.c0))
        object.__setattr__(self, 'c', np.asarray(self.c, dtype=float).ravel())

    @classmethod
    def constant(cls, value: float, dim: int) -> ThetaFunction:
        return cls(value, np.zeros(dim))

    @classmethod
    def projection(cls, index: int, dim: int, scale: float = 1.) -> ThetaFunction:
        c = np.zeros(dim)
        c[index] = scale
        return cls(0., c)

    def __call__(self, mu) -> float:
        return self.c0 + float(self.c @ np.asarray(mu, dtype=float))

    def d_mu(self, i: int) -> float:
        return float(self.c[i])


class AffineForm:
    """Sum of ``theta_q(mu) * X_q`` with sparse matrices or dense vectors
    ``X_q`` sharing one shape."""

    def __init__(self, thetas, components):
        thetas, components = list(thetas), list(components)
        if not components or len(thetas) != len(components):
            raise ValueError('need a non-empty list of (theta, component) pairs')
        self.is_matrix = sps.issparse(components[0])
        if self.is_matrix:
            components = [sps.csr_matrix(c) for c in components]
        else:
            components = [np.asarray(c, dtype=float) for c in components]
        shape = components[0].shape
        if any(c.shape != shape for c in components):
            raise ValueError('components have different dimensions')
        dims = {len(t.c) for t in thetas}
        if len(dims) != 1:
            raise ValueError('thetas disagree on the parameter dimension')
        self.thetas = tuple(thetas)
        self.components = tuple(components)
        self.shape = shape
        self.parameter_dim = dims.pop()
        self._c0 = np.array([t.c0 for t in thetas])
        self._C = np.array([t.c for t in thetas]).reshape(len(thetas), self.parameter_dim)

    def __len__(self):
        return len(self.components)

    def coefficients(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.parameter_dim,):
            raise ValueError(f'expected a parameter of length {self.parameter_dim}')
        return self._c0 + self._C @ mu

    def coefficient_derivatives(self) -> np.ndarray:
        """Matrix ``D`` with ``D[q, i] = d theta_q / d mu_i`` (constant)."""
        return self._C

    def combine(self, weights):
        weights = np.asarray(weights, dtype=float)
        if self.is_matrix:
            out = sps.csr_matrix(self.shape)
            for w, X in zip(weights, self.components):
                if w != 0.:
                    out = out + w * X
            return out.tocsr()
        return np.tensordot(weights, np.array(self.components), axes=1)


def evaluate_matrix(form: AffineForm, mu):
    """``sum_q theta_q(mu) X_q``; a sparse matrix or a vector."""
    return form.combine(form.coefficients(mu))


def evaluate_partial(form: AffineForm, mu, i: int):
    """Partial derivative of :func:`evaluate_matrix` with respect to ``mu_i``."""
    if not 0 <= i < form.parameter_dim:
        raise IndexError(f'parameter index {i} out of range')
    form.coefficients(mu)  # shape check
    return form.combine(form.coefficient_derivatives()[:, i])


@dataclass(frozen=True)
class ThetaTerm:
    """Parameter functional
    ``1/2 sum sigma_i (mu_i - mu_d_i)^2 + const_offset + self_term``.

    ``const_offset`` is the constant one, ``self_term`` the desired-state
    term ``sigma_d/2 int_D u_d^2``. They are kept apart so that the misfit can
    be evaluated in the shifted form ``(u - u_d)^T K (u - u_d)`` without
    cancellation.
    """

    sigma_d: float
    sigma: np.ndarray
    mu_d: np.ndarray
    const_offset: float = 1.
    self_term: float = 0.

    def __post_init__(self):
        object.__setattr__(self, 'sigma', np.asarray(self.sigma, dtype=float).ravel())
        object.__setattr__(self, 'mu_d', np.asarray(self.mu_d, dtype=float).ravel())
        if self.sigma_d < 0 or np.any(self.sigma < 0):
            raise ValueError('weights must be nonnegative')
        if self.sigma.shape != self.mu_d.shape:
            raise ValueError('sigma and mu_d have different lengths')

    def __call__(self, mu) -> float:
        return self.shifted(mu) + self.self_term

    def shifted(self, mu) -> float:
        """Value without the self term."""
        d = np.asarray(mu, dtype=float) - self.mu_d
        return 0.5 * float(self.sigma @ (d * d)) + self.const_offset

    def gradient(self, mu) -> np.ndarray:
        return self.sigma * (np.asarray(mu, dtype=float) - self.mu_d)


def generalized_extreme_eigenvalue(A, M, which: str) -> float:
    """Smallest (``which='min'``) or largest-magnitude (``'max'``) eigenvalue
    of the symmetric pencil ``(A, M)``."""
    n = A.shape[0]
    if n <= DENSE_EIG_LIMIT:
        A_d = A.toarray() if sps.issparse(A) else np.asarray(A)
        M_d = M.toarray() if sps.issparse(M) else np.asarray(M)
        w = sla.eigh(0.5 * (A_d + A_d.T), M_d, eigvals_only=True)
        return float(w[0]) if which == 'min' else float(np.max(np.abs(w)))
    A = sps.csc_matrix(A)
    M = sps.csc_matrix(M)
    if which == 'min':
        # shift-invert around zero: A is SPD where this is used
        w = spsla.eigsh(A, k=1, M=M, sigma=0., which='LM', return_eigenvectors=False)
        return float(w[0])
    if A.nnz == 0:
        return 0.
    w = spsla.eigsh(A, k=1, M=M, which='LM', return_eigenvectors=False)
    return float(abs(w[0]))


@dataclass(eq=False)
class FullOrderModel:
    """Assembled affine data of the optimization problem.

    ``a`` and ``k`` are matrix forms, ``l`` and ``j`` vector forms. The state
    equation reads ``A(mu) u = l(mu)``, the objective
    ``Theta(mu) + j(mu) . u + u^T K(mu) u``.

    If ``misfit_center`` ``c`` is given, ``j`` and ``k`` must be parameter
    independent with ``j = -2 K c`` and ``c^T K c`` equal to the self term of
    ``theta_term``; the objective is then evaluated as
    ``Theta_shifted(mu) + (u - c)^T K (u - c)``.
    """

    a: AffineForm
    l: AffineForm
    j: AffineForm
    k: AffineForm
    theta_term: ThetaTerm
    product: sps.csr_matrix
    box: ParameterBox
    mu_ref: np.ndarray = None
    alpha_ref: float = None
    gamma_k_components: np.ndarray = None
    mesh: object = None
    misfit_center: np.ndarray = None
    info: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.product.shape[0]
        if self.a.shape != (n, n) or self.k.shape != (n, n):
            raise ValueError('matrix forms do not match the product dimension')
        if self.l.shape != (n,) or self.j.shape != (n,):
            raise ValueError('vector forms do not match the product dimension')
        P = self.box.dim
        for form in (self.a, self.l, self.j, self.k):
            if form.parameter_dim != P:
                raise ValueError('form parameter dimension differs from the box')
        if self.theta_term.sigma.shape != (P,):
            raise ValueError('Tikhonov weights do not match the box')
        self.mu_ref = self.box.center if self.mu_ref is None else np.asarray(self.mu_ref, float)
        if self.alpha_ref is None:
            A_ref = evaluate_matrix(self.a, self.mu_ref)
            self.alpha_ref = generalized_extreme_eigenvalue(A_ref, self.product, 'min')
        if not self.alpha_ref > 0:
            raise ValueError('coercivity constant at the reference parameter is not positive')
        if self.gamma_k_components is None:
            self.gamma_k_components = np.array([
                generalized_extreme_eigenvalue(K, self.product, 'max') for K in self.k.components])
        if self.misfit_center is not None:
            self._check_misfit_center()
        self._theta_a_ref = self.a.coefficients(self.mu_ref)
        if np.any(self._theta_a_ref <= 0):
            raise MinThetaInapplicable('min-theta inapplicable: non-positive theta at mu_ref')

    def _check_misfit_center(self):
        c = self.misfit_center = np.asarray(self.misfit_center, dtype=float)
        if len(self.j) != 1 or len(self.k) != 1 or self.j.coefficient_derivatives().any() \
                or self.k.coefficient_derivatives().any():
            raise ValueError('a misfit center needs parameter independent j and k')
        j = self.j.combine(self.j.coefficients(self.mu_ref))
        Kc = evaluate_matrix(self.k, self.mu_ref) @ c
        scale = max(np.abs(j).max(), 1e-300)
        if np.abs(j + 2. * Kc).max() > 1e-10 * scale:
            raise ValueError('misfit center is inconsistent with j and k')
        if not np.isclose(float(c @ Kc), self.theta_term.self_term, rtol=1e-10, atol=1e-300):
            raise ValueError('self term of theta_term does not match the misfit center')

    @property
    def dim(self) -> int:
        return self.product.shape[0]

    @property
    def parameter_dim(self) -> int:
        return self.box.dim

    def product_solver(self):
        if 'product_lu' not in self._cache:
            self._cache['product_lu'] = spsla.splu(sps.csc_matrix(self.product),
                                                        permc_spec='MMD_AT_PLUS_A')
        return self._cache['product_lu']

    def riesz(self, functional: np.ndarray) -> np.ndarray:
        """Riesz representative(s) of ``functional`` w.r.t. the product."""
        return self.product_solver().solve(np.asarray(functional, dtype=float))

    def dual_norm(self, functional: np.ndarray) -> float:
        functional = np.asarray(functional, dtype=float)
        return float(np.sqrt(max(functional @ self.riesz(functional), 0.)))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.product @ u), 0.)))

    def with_theta_term(self, theta_term: ThetaTerm, j: AffineForm = None,
                        misfit_center=None) -> FullOrderModel:
        """Copy sharing all assembled data but with new objective data.

        The misfit center is dropped unless given again, since it is tied to
        the old ``j`` and ``theta_term``.
        """
        return FullOrderModel(self.a, self.l, self.j if j is None else j, self.k, theta_term,
                              self.product, self.box, self.mu_ref, self.alpha_ref,
                              self.gamma_k_components, self.mesh, misfit_center, dict(self.info),
                              {'product_lu': self._cache['product_lu']}
                              if 'product_lu' in self._cache else {})

    def copy(self) -> FullOrderModel:
        """Shallow copy with its own solver caches and solve counters."""
        return FullOrderModel(self.a, self.l, self.j, self.k, self.theta_term, self.product,
                              self.box, self.mu_ref, self.alpha_ref, self.gamma_k_components,
                              self.mesh, self.misfit_center, dict(self.info))


def min_theta_coercivity(fom: FullOrderModel, mu) -> float:
    """Lower bound ``alpha_ref * min_q theta_q(mu) / theta_q(mu_ref)``."""
    theta = fom.a.coefficients(mu)
    if np.any(theta <= 0):
        raise MinThetaInapplicable(f'min-theta inapplicable at mu={np.asarray(mu)}')
    return float(fom.alpha_ref * np.min(theta / fom._theta_a_ref))


def continuity_bound_k(fom: FullOrderModel, mu) -> float:
    return float(np.abs(fom.k.coefficients(mu)) @ fom.gamma_k_components)
