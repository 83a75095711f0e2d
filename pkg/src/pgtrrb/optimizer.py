"""Projected BFGS with an Armijo-type backtracking rule for box constrained
problems, optionally restricted to an error-aware trust region."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fom import SolverError
from .rom import ReducedSystemUnstable

logger = logging.getLogger(__name__)

# evaluation failures that reject a trial step instead of aborting
STEP_FAILURES = (ReducedSystemUnstable, SolverError, FloatingPointError, np.linalg.LinAlgError)


def project_box(mu, box) -> np.ndarray:
    return np.clip(np.asarray(mu, dtype=float), box.mu_a, box.mu_b)


@dataclass
class TRConstraint:
    """Accept only iterates with ``ratio(mu) <= radius``; stop once
    ``ratio(mu) >= boundary_beta * radius``."""

    ratio: Callable
    radius: float
    boundary_beta: float = 0.95


@dataclass
class OptimizeOptions:
    tau_foc: float = 1e-6
    max_iter: int = 1000
    armijo_alpha: float = 1e-4
    armijo_kappa: float = 0.5
    initial_step: float = 1.
    max_backtracks: int = 40
    safety_tol: float = 1e-16
    active_eps: float = 1e-8        # distance to a bound below which a component is active
    tr_constraint: Optional[TRConstraint] = None

    def __post_init__(self):
        if not 0 < self.armijo_kappa < 1:
            raise ValueError('armijo_kappa must lie in (0, 1)')
        if not self.armijo_alpha > 0:
            raise ValueError('armijo_alpha must be positive')


@dataclass
class OptimizeResult:
    mu: np.ndarray
    value: float
    foc: float
    iterations: int
    reason: str
    agc_mu: np.ndarray
    agc_value: float
    history: list = field(default_factory=list)
    n_value: int = 0
    n_grad: int = 0


def _foc(mu, g, box):
    return float(np.linalg.norm(mu - project_box(mu - g, box)))


def _direction(H, g, mu, box, eps):
    # reduced BFGS direction: identity on the epsilon-active set
    active = (mu - box.mu_a <= eps) | (box.mu_b - mu <= eps)
    if active.all():
        return -g
    inactive = ~active
    eta = -g
    d = np.where(active, eta, 0.)
    d[inactive] = (H @ np.where(inactive, eta, 0.))[inactive]
    if d @ g >= -1e-14:
        return -g
    return d


def projected_bfgs(value_fn, gradient_fn, mu0, box, options: OptimizeOptions = None) -> OptimizeResult:
    """Minimize ``value_fn`` over ``box`` starting from ``mu0``.

    The Armijo rule accepts ``mu(t) = P(mu + t d)`` when
    ``value(mu(t)) <= value(mu) - armijo_alpha / t * |mu(t) - mu|^2``, with
    ``t = initial_step * armijo_kappa^j``. Trial points whose evaluation
    fails (e.g. an unstable reduced system) are treated as rejected.
    """
    opts = options or OptimizeOptions()
    tr = opts.tr_constraint
    counts = {'value': 0, 'grad': 0}

    def value(mu):
        counts['value'] += 1
        return value_fn(mu)

    def grad(mu):
        counts['grad'] += 1
        return np.asarray(gradient_fn(mu), dtype=float)

    mu = project_box(mu0, box)
    J = value(mu)
    g = grad(mu)
    foc = _foc(mu, g, box)
    history = [{'mu': mu.copy(), 'value': J, 'foc': foc}]
    agc = None
    H = np.eye(len(mu))
    reason = 'max_iter'
    iterations = 0

    def line_search(d):
        for j in range(opts.max_backtracks + 1):
            t = opts.initial_step * opts.armijo_kappa ** j
            cand = project_box(mu + t * d, box)
            step2 = float((cand - mu) @ (cand - mu))
            if step2 == 0.:
                return None
            try:
                Jc = value(cand)
                if not np.isfinite(Jc) or Jc > J - opts.armijo_alpha / t * step2:
                    continue
                if tr is not None:
                    ratio = tr.ratio(cand)
                    if not ratio <= tr.radius:
                        continue
            except STEP_FAILURES as e:
                logger.debug('trial point rejected: %s', e)
                continue
            return cand, Jc
        return None

    if foc <= opts.tau_foc:
        reason = 'FOC'
    else:
        for _ in range(opts.max_iter):
            d = -g if iterations == 0 else _direction(H, g, mu, box, opts.active_eps)
            step = line_search(d)
            if step is None and not np.array_equal(d, -g):
                # reset the curvature memory once before giving up
                H = np.eye(len(mu))
                step = line_search(-g)
            if step is None:
                reason = 'stall'
                break
            mu_new, J_new = step
            if agc is None:
                agc = (mu_new.copy(), J_new)
            g_new = grad(mu_new)
            s, y = mu_new - mu, g_new - g
            sy = float(s @ y)
            if sy > 1e-14:
                Hy = H @ y
                H = (H + (sy + y @ Hy) / sy ** 2 * np.outer(s, s)
                     - (np.outer(Hy, s) + np.outer(s, Hy)) / sy)
            else:
                H = np.eye(len(mu))
            mu_diff = np.linalg.norm(s) / max(np.linalg.norm(mu), 1e-300)
            J_diff = abs(J - J_new) / max(abs(J), 1e-300)
            mu, J, g = mu_new, J_new, g_new
            foc = _foc(mu, g, box)
            iterations += 1
            history.append({'mu': mu.copy(), 'value': J, 'foc': foc})
            if foc <= opts.tau_foc:
                reason = 'FOC'
                break
            if tr is not None and tr.ratio(mu) >= tr.boundary_beta * tr.radius:
                reason = 'TR-boundary'
                break
            if mu_diff < opts.safety_tol or J_diff < opts.safety_tol:
                reason = 'stagnation'
                break
    if agc is None:
        agc = (mu.copy(), J)
    return OptimizeResult(mu=mu, value=J, foc=foc, iterations=iterations, reason=reason,
                          agc_mu=agc[0], agc_value=agc[1], history=history,
                          n_value=counts['value'], n_grad=counts['grad'])
