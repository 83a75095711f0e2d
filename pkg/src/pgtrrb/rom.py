"""Reduced basis models: Galerkin and Petrov-Galerkin projection of the
primal/dual system, reduced objective and gradient, and residual based
error estimation with an offline/online split of the residual norms.

Conventions: ``a(u, v) = v^T A u`` (``u`` ansatz, ``v`` test), so a reduced
matrix with test basis ``T`` and ansatz basis ``S`` is ``T^T A S``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .parametric import FullOrderModel, MinThetaInapplicable

ACCEPT_RELATIVE_NORM = 1e-10
DEFAULT_CONDITION_LIMIT = 1e14


class ProjectionMode(str, enum.Enum):
    GALERKIN = 'galerkin'
    PETROV_GALERKIN = 'petrov_galerkin'


class FunctionalMode(str, enum.Enum):
    PLAIN = 'plain'
    NCD = 'ncd'


class ReducedSystemUnstable(RuntimeError):
    """The reduced system is singular or too badly conditioned."""

    def __init__(self, mu, condition, which='primal'):
        self.mu = np.asarray(mu, dtype=float).copy()
        self.condition = condition
        self.which = which
        super().__init__(f'reduced system unstable ({which}) at mu={self.mu}, '
                         f'condition estimate {condition:.3e}')


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Product-orthonormal basis stored column-wise in ``vectors`` (N x n)."""

    vectors: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> ReducedBasis:
        return cls(np.zeros((dim, 0)))

    def __len__(self):
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def gram(self, product) -> np.ndarray:
        return self.vectors.T @ (product @ self.vectors)

    def prefix(self, n: int) -> ReducedBasis:
        return ReducedBasis(self.vectors[:, :n])


def extend_basis(basis: ReducedBasis, snapshot, product) -> tuple[ReducedBasis, bool]:
    """Append ``snapshot`` after orthogonalizing it twice against the basis.

    Returns the (possibly unchanged) basis and whether the snapshot was
    accepted. Snapshots whose remainder is below ``1e-10`` of their norm are
    rejected.
    """
    v = np.array(snapshot, dtype=float).ravel()
    V = basis.vectors
    if v.shape[0] != V.shape[0]:
        raise ValueError('snapshot dimension does not match the basis')
    norm0 = np.sqrt(max(v @ (product @ v), 0.))
    if norm0 == 0. or not np.isfinite(norm0):
        return basis, False
    for _ in range(2):
        if V.shape[1]:
            v -= V @ (V.T @ (product @ v))
    norm = np.sqrt(max(v @ (product @ v), 0.))
    if norm <= ACCEPT_RELATIVE_NORM * norm0:
        return basis, False
    return ReducedBasis(np.column_stack([V, v / norm])), True


class _RieszBlock:
    """Product-orthonormalized span of Riesz representatives.

    Every representative ``r_i`` is stored through its coefficients ``C[:, i]``
    with respect to an orthonormal set, so that the dual norm of
    ``sum_i c_i r_i`` is the Euclidean norm of ``C c``. This avoids the
    cancellation of evaluating ``c^T G c`` with the Gram matrix ``G``.
    """

    def __init__(self, product):
        self.product = product
        n = product.shape[0]
        self._Q = np.zeros((n, 16))   # orthonormal vectors, first r columns used
        self._PQ = np.zeros((n, 16))  # product @ Q
        self.r = 0
        self.columns = []  # coefficient vectors of varying length

    def __len__(self):
        return len(self.columns)

    def _push(self, q, Pq):
        if self.r == self._Q.shape[1]:
            self._Q = np.concatenate([self._Q, np.zeros_like(self._Q)], axis=1)
            self._PQ = np.concatenate([self._PQ, np.zeros_like(self._PQ)], axis=1)
        self._Q[:, self.r] = q
        self._PQ[:, self.r] = Pq
        self.r += 1

    def append(self, R: np.ndarray) -> np.ndarray:
        """Append representatives (columns of ``R``); returns their indices."""
        start = len(self.columns)
        R = np.asarray(R, dtype=float).reshape(self.product.shape[0], -1)
        for v in R.T:
            v = v.copy()
            norm0 = np.sqrt(max(v @ (self.product @ v), 0.))
            Q, PQ = self._Q[:, :self.r], self._PQ[:, :self.r]
            h = np.zeros(self.r)
            if self.r:
                for _ in range(2):
                    hh = PQ.T @ v
                    v -= Q @ hh
                    h += hh
            Pv = self.product @ v
            norm = np.sqrt(max(v @ Pv, 0.))
            if norm0 > 0 and norm > 1e-13 * norm0:
                self._push(v / norm, Pv / norm)
                self.columns.append(np.append(h, norm))
            else:
                self.columns.append(h)
        return np.arange(start, len(self.columns))

    def coefficient_matrix(self) -> np.ndarray:
        r = self.r
        C = np.zeros((r, len(self.columns)))
        for i, col in enumerate(self.columns):
            C[:len(col), i] = col
        return C


@dataclass(frozen=True)
class ErrorEstimates:
    delta_pr: float
    delta_du: float
    delta_J: float
    residual_pr: float = 0.
    residual_du: float = 0.


@dataclass(frozen=True, eq=False)
class _Theta:
    c0: np.ndarray
    C: np.ndarray

    @classmethod
    def of(cls, form):
        return cls(np.array([t.c0 for t in form.thetas]), form.coefficient_derivatives().copy())

    def __call__(self, mu):
        return self.c0 + self.C @ mu


@dataclass(frozen=True, eq=False)
class ReducedModel:
    """One generation of the reduced optimization model.

    Everything needed online is stored as small dense arrays; the bases are
    kept only for reconstruction.
    """

    mode: ProjectionMode
    functional_mode: FunctionalMode
    V_pr: ReducedBasis
    V_du: ReducedBasis
    theta_a: _Theta
    theta_l: _Theta
    theta_j: _Theta
    theta_k: _Theta
    theta_term: object
    A_pp: np.ndarray  # Phi^T A_q Phi
    A_dp: np.ndarray  # Psi^T A_q Phi
    A_dd: np.ndarray  # Psi^T A_q Psi
    l_p: np.ndarray
    l_d: np.ndarray
    j_p: np.ndarray
    j_d: np.ndarray
    K_pp: np.ndarray
    K_dp: np.ndarray
    riesz_pr: np.ndarray  # coefficient matrices of the orthonormalized
    riesz_du: np.ndarray  # Riesz representatives
    pr_l_idx: np.ndarray
    pr_a_idx: np.ndarray  # (n_pr, Qa)
    du_j_idx: np.ndarray
    du_k_idx: np.ndarray  # (n_pr, Qk)
    du_a_idx: np.ndarray  # (n_du, Qa)
    alpha_ref: float
    theta_a_ref: np.ndarray
    gamma_k_components: np.ndarray
    box: object
    condition_limit: float = DEFAULT_CONDITION_LIMIT
    misfit_center: np.ndarray = None  # reduced misfit center, see _reduced_center
    misfit_rest: float = 0.
    info: dict = field(default_factory=dict)

    @property
    def n_pr(self) -> int:
        return self.A_pp.shape[1]

    @property
    def n_du(self) -> int:
        return self.A_dd.shape[1]

    @property
    def riesz_gram(self):
        """Product inner products among all primal (first) and dual (second)
        residual Riesz representatives."""
        return self.riesz_pr.T @ self.riesz_pr, self.riesz_du.T @ self.riesz_du

    def reconstruct_primal(self, u_r):
        return self.V_pr.vectors @ u_r

    def reconstruct_dual(self, p_r):
        return self.V_du.vectors @ p_r

    # online helpers -------------------------------------------------------

    def _primal_system(self, mu):
        ta = self.theta_a(mu)
        tl = self.theta_l(mu)
        if self.mode is ProjectionMode.PETROV_GALERKIN:
            return np.tensordot(ta, self.A_dp, 1), tl @ self.l_d
        return np.tensordot(ta, self.A_pp, 1), tl @ self.l_p

    def _dual_system(self, mu, u_r):
        ta = self.theta_a(mu)
        tj = self.theta_j(mu)
        tk = self.theta_k(mu)
        if self.mode is ProjectionMode.PETROV_GALERKIN:
            M = np.tensordot(ta, self.A_dp, 1).T
            rhs = tj @ self.j_p + 2. * (np.tensordot(tk, self.K_pp, 1) @ u_r)
        else:
            M = np.tensordot(ta, self.A_dd, 1).T
            rhs = tj @ self.j_d + 2. * (np.tensordot(tk, self.K_dp, 1) @ u_r)
        return M, rhs

    def _solve(self, M, rhs, mu, which):
        if M.shape[0] == 0:
            raise ReducedSystemUnstable(mu, np.inf, which + ' (empty basis)')
        if M.shape[0] != M.shape[1]:
            raise ValueError('Petrov-Galerkin projection needs equal basis dimensions')
        s = np.linalg.svd(M, compute_uv=False)
        cond = np.inf if s[-1] == 0. else s[0] / s[-1]
        if not cond <= self.condition_limit:
            raise ReducedSystemUnstable(mu, cond, which)
        return np.linalg.solve(M, rhs), cond

    def residual_norm_primal(self, mu, u_r) -> float:
        c = np.zeros(self.riesz_pr.shape[1])
        c[self.pr_l_idx] = self.theta_l(mu)
        c[self.pr_a_idx] = -np.outer(u_r, self.theta_a(mu))
        return float(np.linalg.norm(self.riesz_pr @ c))

    def residual_norm_dual(self, mu, u_r, p_r) -> float:
        c = np.zeros(self.riesz_du.shape[1])
        c[self.du_j_idx] = self.theta_j(mu)
        c[self.du_k_idx] = 2. * np.outer(u_r, self.theta_k(mu))
        c[self.du_a_idx] = -np.outer(p_r, self.theta_a(mu))
        return float(np.linalg.norm(self.riesz_du @ c))

    def coercivity_bound(self, mu) -> float:
        theta = self.theta_a(mu)
        if np.any(theta <= 0):
            raise MinThetaInapplicable(f'min-theta inapplicable at mu={mu}')
        return float(self.alpha_ref * np.min(theta / self.theta_a_ref))

    def continuity_k(self, mu) -> float:
        return float(np.abs(self.theta_k(mu)) @ self.gamma_k_components)


def _reduced_center(fom, Phi, K_pp):
    """Coefficients ``c_r`` of the ``K``-orthogonal projection of the FOM
    misfit center onto ``span(Phi)`` and the rest ``e^T K e``, ``e = c - Phi c_r``.

    With these ``u_r^T K_r u_r + j_r . u_r + c^T K c
    = (u_r - c_r)^T K_r (u_r - c_r) + e^T K e``, a sum of nonnegative terms.
    """
    c = fom.misfit_center
    K = fom.k.combine(fom.k.coefficients(fom.mu_ref))
    if Phi.shape[1] == 0:
        return np.zeros(0), float(c @ (K @ c))
    c_r = np.linalg.lstsq(K_pp, Phi.T @ (K @ c), rcond=1e-14)[0]
    e = c - Phi @ c_r
    return c_r, float(e @ (K @ e))


def _stack_project(test, ops, ansatz):
    if test.shape[1] == 0 or ansatz.shape[1] == 0:
        return np.zeros((len(ops), test.shape[1], ansatz.shape[1]))
    return np.array([test.T @ (A @ ansatz) for A in ops])


class Reductor:
    """Builds reduced models from growing primal/dual bases, reusing the
    Riesz representatives of earlier basis vectors."""

    def __init__(self, fom: FullOrderModel, V_pr: ReducedBasis = None, V_du: ReducedBasis = None,
                 condition_limit=DEFAULT_CONDITION_LIMIT):
        self.fom = fom
        self.condition_limit = condition_limit
        self.V_pr = ReducedBasis.empty(fom.dim)
        self.V_du = ReducedBasis.empty(fom.dim)
        self._pr = _RieszBlock(fom.product)
        self._du = _RieszBlock(fom.product)
        self._pr_l_idx = self._pr.append(fom.riesz(np.array(fom.l.components).T))
        self._du_j_idx = self._du.append(fom.riesz(np.array(fom.j.components).T))
        self._pr_a_idx = []
        self._du_k_idx = []
        self._du_a_idx = []
        if V_pr is not None:
            self._add_primal_vectors(V_pr.vectors)
        if V_du is not None:
            self._add_dual_vectors(V_du.vectors)

    def _add_primal_vectors(self, vectors):
        fom = self.fom
        for phi in np.atleast_2d(vectors.T):
            self._pr_a_idx.append(self._pr.append(fom.riesz(np.column_stack(
                [A @ phi for A in fom.a.components]))))
            self._du_k_idx.append(self._du.append(fom.riesz(np.column_stack(
                [K @ phi for K in fom.k.components]))))
        self.V_pr = ReducedBasis(np.column_stack([self.V_pr.vectors, vectors]))

    def _add_dual_vectors(self, vectors):
        fom = self.fom
        for psi in np.atleast_2d(vectors.T):
            self._du_a_idx.append(self._du.append(fom.riesz(np.column_stack(
                [A.T @ psi for A in fom.a.components]))))
        self.V_du = ReducedBasis(np.column_stack([self.V_du.vectors, vectors]))

    def add_vectors(self, V_pr_new, V_du_new):
        """Append columns that are already product-orthonormal to the
        current bases (e.g. further columns of bases built earlier)."""
        if V_pr_new.shape[1]:
            self._add_primal_vectors(V_pr_new)
        if V_du_new.shape[1]:
            self._add_dual_vectors(V_du_new)

    def extend_primal(self, snapshot) -> bool:
        new, accepted = extend_basis(self.V_pr, snapshot, self.fom.product)
        if accepted:
            self._add_primal_vectors(new.vectors[:, -1:])
        return accepted

    def extend_dual(self, snapshot) -> bool:
        new, accepted = extend_basis(self.V_du, snapshot, self.fom.product)
        if accepted:
            self._add_dual_vectors(new.vectors[:, -1:])
        return accepted

    def extend(self, u, p, paired=True) -> tuple[bool, bool]:
        """Lagrangian enrichment with a primal and a dual snapshot.

        With ``paired=True`` both snapshots are added or neither, which keeps
        the dimensions of the two spaces equal.
        """
        if not paired:
            return self.extend_primal(u), self.extend_dual(p)
        product = self.fom.product
        new_pr, ok_pr = extend_basis(self.V_pr, u, product)
        new_du, ok_du = extend_basis(self.V_du, p, product)
        if ok_pr and ok_du:
            self._add_primal_vectors(new_pr.vectors[:, -1:])
            self._add_dual_vectors(new_du.vectors[:, -1:])
        return ok_pr and ok_du, ok_pr and ok_du

    def reduce(self, mode=ProjectionMode.PETROV_GALERKIN,
               functional_mode=FunctionalMode.PLAIN) -> ReducedModel:
        mode = ProjectionMode(mode)
        functional_mode = FunctionalMode(functional_mode)
        if mode is ProjectionMode.PETROV_GALERKIN and self.V_pr.dim != self.V_du.dim:
            raise ValueError('Petrov-Galerkin projection needs dim V_pr == dim V_du')
        fom = self.fom
        Phi, Psi = self.V_pr.vectors, self.V_du.vectors
        a_ops, k_ops = fom.a.components, fom.k.components
        Qa, Qk = len(a_ops), len(k_ops)

        def idx(lst, q):
            return np.array(lst, dtype=int).reshape(len(lst), q)

        K_pp = _stack_project(Phi, k_ops, Phi)
        center, rest = (None, 0.) if fom.misfit_center is None \
            else _reduced_center(fom, Phi, np.tensordot(fom.k.coefficients(fom.mu_ref), K_pp, 1))

        return ReducedModel(
            mode=mode, functional_mode=functional_mode,
            V_pr=self.V_pr, V_du=self.V_du,
            theta_a=_Theta.of(fom.a), theta_l=_Theta.of(fom.l),
            theta_j=_Theta.of(fom.j), theta_k=_Theta.of(fom.k),
            theta_term=fom.theta_term,
            A_pp=_stack_project(Phi, a_ops, Phi),
            A_dp=_stack_project(Psi, a_ops, Phi),
            A_dd=_stack_project(Psi, a_ops, Psi),
            l_p=np.array([Phi.T @ l for l in fom.l.components]),
            l_d=np.array([Psi.T @ l for l in fom.l.components]),
            j_p=np.array([Phi.T @ j for j in fom.j.components]),
            j_d=np.array([Psi.T @ j for j in fom.j.components]),
            K_pp=K_pp,
            K_dp=_stack_project(Psi, k_ops, Phi),
            riesz_pr=self._pr.coefficient_matrix(),
            riesz_du=self._du.coefficient_matrix(),
            pr_l_idx=np.array(self._pr_l_idx), pr_a_idx=idx(self._pr_a_idx, Qa),
            du_j_idx=np.array(self._du_j_idx), du_k_idx=idx(self._du_k_idx, Qk),
            du_a_idx=idx(self._du_a_idx, Qa),
            alpha_ref=fom.alpha_ref, theta_a_ref=fom.a.coefficients(fom.mu_ref),
            gamma_k_components=np.asarray(fom.gamma_k_components, dtype=float),
            box=fom.box, condition_limit=self.condition_limit,
            misfit_center=center, misfit_rest=rest,
        )


def project_model(fom: FullOrderModel, V_pr: ReducedBasis, V_du: ReducedBasis,
                  mode=ProjectionMode.PETROV_GALERKIN,
                  functional_mode=FunctionalMode.PLAIN) -> ReducedModel:
    mode = ProjectionMode(mode)
    if mode is ProjectionMode.PETROV_GALERKIN and V_pr.dim != V_du.dim:
        raise ValueError('Petrov-Galerkin projection needs dim V_pr == dim V_du')
    return Reductor(fom, V_pr, V_du).reduce(mode, functional_mode)


def solve_reduced_primal(rom: ReducedModel, mu, return_condition=False):
    mu = np.asarray(mu, dtype=float)
    M, rhs = rom._primal_system(mu)
    u_r, cond = rom._solve(M, rhs, mu, 'primal')
    return (u_r, cond) if return_condition else u_r


def solve_reduced_dual(rom: ReducedModel, mu, u_r, return_condition=False):
    mu = np.asarray(mu, dtype=float)
    M, rhs = rom._dual_system(mu, u_r)
    p_r, cond = rom._solve(M, rhs, mu, 'dual')
    return (p_r, cond) if return_condition else p_r


def ncd_correction(rom: ReducedModel, mu, u_r, p_r) -> float:
    """``l(p_r) - a(u_r, p_r)``; vanishes identically in PG mode."""
    mu = np.asarray(mu, dtype=float)
    ta, tl = rom.theta_a(mu), rom.theta_l(mu)
    return float(tl @ (rom.l_d @ p_r) - p_r @ (np.tensordot(ta, rom.A_dp, 1) @ u_r))


def reduced_objective(rom: ReducedModel, mu, u_r, p_r=None, functional_mode=None) -> float:
    mu = np.asarray(mu, dtype=float)
    functional_mode = FunctionalMode(functional_mode or rom.functional_mode)
    K_r = np.tensordot(rom.theta_k(mu), rom.K_pp, 1)
    if rom.misfit_center is not None:
        e = u_r - rom.misfit_center
        value = rom.theta_term.shifted(mu) + rom.misfit_rest + float(e @ (K_r @ e))
    else:
        value = (rom.theta_term(mu) + float(rom.theta_j(mu) @ (rom.j_p @ u_r))
                 + float(u_r @ (K_r @ u_r)))
    if functional_mode is FunctionalMode.NCD:
        if p_r is None:
            raise ValueError('the corrected functional needs the dual solution')
        value += ncd_correction(rom, mu, u_r, p_r)
    return value


def reduced_gradient(rom: ReducedModel, mu, u_r, p_r) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    grad = rom.theta_term.gradient(mu).copy()
    grad += rom.theta_j.C.T @ (rom.j_p @ u_r)
    grad += rom.theta_k.C.T @ np.einsum('i,qij,j->q', u_r, rom.K_pp, u_r)
    grad += rom.theta_l.C.T @ (rom.l_d @ p_r)
    grad -= rom.theta_a.C.T @ np.einsum('i,qij,j->q', p_r, rom.A_dp, u_r)
    return grad


def estimate(rom: ReducedModel, mu, u_r, p_r) -> ErrorEstimates:
    mu = np.asarray(mu, dtype=float)
    alpha = rom.coercivity_bound(mu)
    gamma = rom.continuity_k(mu)
    r_pr = rom.residual_norm_primal(mu, u_r)
    r_du = rom.residual_norm_dual(mu, u_r, p_r)
    d_pr = r_pr / alpha
    d_du = (2. * gamma * d_pr + r_du) / alpha
    d_J = d_pr * r_du + d_pr ** 2 * gamma
    return ErrorEstimates(d_pr, d_du, d_J, r_pr, r_du)


class ReducedEvaluator:
    """Memoizing access to reduced solutions, objective, gradient and the
    objective estimator at the parameters visited by an optimizer."""

    def __init__(self, rom: ReducedModel, cache_size: int = 64):
        self.rom = rom
        self.cache_size = cache_size
        self._cache = {}
        self.solves = 0

    def _entry(self, mu):
        mu = np.asarray(mu, dtype=float)
        key = mu.tobytes()
        e = self._cache.get(key)
        if e is None:
            while self._cache and len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            e = {}
            try:
                u_r = solve_reduced_primal(self.rom, mu)
                p_r = solve_reduced_dual(self.rom, mu, u_r)
                e['u'], e['p'] = u_r, p_r
            except ReducedSystemUnstable as err:
                e['error'] = err
            self.solves += 1
            if self.cache_size > 0:
                self._cache[key] = e
        if 'error' in e:
            raise e['error']
        return mu, e

    def solutions(self, mu):
        _, e = self._entry(mu)
        return e['u'], e['p']

    def value(self, mu) -> float:
        mu, e = self._entry(mu)
        if 'J' not in e:
            e['J'] = reduced_objective(self.rom, mu, e['u'], e['p'])
        return e['J']

    def gradient(self, mu) -> np.ndarray:
        mu, e = self._entry(mu)
        if 'grad' not in e:
            e['grad'] = reduced_gradient(self.rom, mu, e['u'], e['p'])
        return e['grad']

    def estimates(self, mu) -> ErrorEstimates:
        mu, e = self._entry(mu)
        if 'est' not in e:
            e['est'] = estimate(self.rom, mu, e['u'], e['p'])
        return e['est']

    def relative_estimate(self, mu) -> float:
        """``Delta_J(mu) / J_r(mu)``, the trust-region constraint function."""
        J = self.value(mu)
        return self.estimates(mu).delta_J / abs(J)
