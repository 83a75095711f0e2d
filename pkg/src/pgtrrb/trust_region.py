"""Adaptive trust-region reduced basis optimization with Lagrangian
enrichment of the primal and dual reduced spaces."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .fom import FOMEvaluator, foc_measure, solve_counts
from .optimizer import OptimizeOptions, TRConstraint, projected_bfgs
from .rom import (DEFAULT_CONDITION_LIMIT, FunctionalMode, ProjectionMode, ReducedEvaluator,
                  ReducedSystemUnstable, Reductor)

logger = logging.getLogger(__name__)

MODES = {
    'petrov_galerkin': (ProjectionMode.PETROV_GALERKIN, FunctionalMode.PLAIN),
    'galerkin_ncd': (ProjectionMode.GALERKIN, FunctionalMode.NCD),
}


@dataclass
class TRConfig:
    radius0: float = 0.1
    shrink_beta1: float = 0.5
    eta_rho: float = 0.75
    tau_foc: float = 1e-6
    max_outer: int = 40
    mode: str = 'petrov_galerkin'
    sub_tau: float = 1e-8
    sub_max_iter: int = 400
    boundary_beta: float = 0.95
    armijo_alpha: float = 1e-4
    armijo_kappa: float = 0.5
    max_backtracks: int = 40
    condition_limit: float = DEFAULT_CONDITION_LIMIT
    min_radius: float = 2.22e-16

    def __post_init__(self):
        if not 0 < self.shrink_beta1 < 1:
            raise ValueError('shrink_beta1 must lie in (0, 1)')
        if not 0 < self.eta_rho < 1:
            raise ValueError('eta_rho must lie in (0, 1)')
        if self.mode not in MODES:
            raise ValueError(f'unknown mode {self.mode!r}, expected one of {sorted(MODES)}')


@dataclass
class TRRecord:
    k: int
    mu: np.ndarray
    J_h: float
    foc: float
    radius: float
    accepted: bool
    n_basis: int
    t_cumulative_s: float
    fom_solves: int
    ratio: float = np.nan          # estimator ratio of the candidate
    used_fom: bool = False


@dataclass
class TRResult:
    mu: np.ndarray
    reason: str
    iterations: int
    history: list = field(default_factory=list)
    enrichment_mus: list = field(default_factory=list)
    reductor: Reductor = None
    fom_solves: int = 0
    runtime_s: float = 0.

    @property
    def accepted(self):
        return [r for r in self.history if r.accepted]

    @property
    def foc(self):
        return self.accepted[-1].foc


def sufficient_decrease_check(J_r_next, delta_J_next, J_r_agc, fom_value_fn):
    """Return ``(accept, used_fom)``.

    The cheap sufficient condition ``J_r + Delta_J <= J_r(AGC)`` accepts, the
    necessary condition ``J_r - Delta_J <= J_r(AGC)`` rejects when violated,
    otherwise the true value decides.
    """
    if J_r_next + delta_J_next <= J_r_agc:
        return True, False
    if J_r_next - delta_J_next > J_r_agc:
        return False, False
    return bool(fom_value_fn() <= J_r_agc), True


def radius_update(J_h_prev, J_h_next, J_r_prev, J_r_next, radius, config: TRConfig) -> float:
    predicted = J_r_prev - J_r_next
    if predicted == 0:
        return radius
    rho = (J_h_prev - J_h_next) / predicted
    if rho >= config.eta_rho:
        return radius / config.shrink_beta1
    return radius


def tr_rb_optimize(fom, mu0, config: TRConfig = None) -> TRResult:
    cfg = config or TRConfig()
    mode, functional_mode = MODES[cfg.mode]
    tic = time.perf_counter()
    solves0 = sum(solve_counts(fom).values())

    def fom_solves():
        return sum(solve_counts(fom).values()) - solves0

    fe = FOMEvaluator(fom)
    mu_k = np.array(mu0, dtype=float)
    if not fom.box.contains(mu_k):
        raise ValueError('starting parameter outside the parameter box')

    reductor = Reductor(fom, condition_limit=cfg.condition_limit)
    ok, _ = reductor.extend(fe.primal(mu_k).u, fe.dual(mu_k).p)
    if not ok:
        logger.warning('seed snapshots rejected (zero primal or dual solution)')
    J_h_k = fe.value(mu_k)
    foc = foc_measure(fom, mu_k, fe.gradient(mu_k))
    radius = cfg.radius0
    history = [TRRecord(0, mu_k.copy(), J_h_k, foc, radius, True, reductor.V_pr.dim,
                        time.perf_counter() - tic, fom_solves())]
    result = TRResult(mu_k, 'FOC', 0, history, [mu_k.copy()], reductor)

    def finish(reason):
        result.mu = mu_k.copy()
        result.reason = reason
        result.iterations = k
        result.fom_solves = fom_solves()
        result.runtime_s = time.perf_counter() - tic
        logger.info('TR-RB (%s) finished: %s after %d iterations, FOC %.3e',
                    cfg.mode, reason, k, history[-1].foc)
        return result

    k = 0
    if foc <= cfg.tau_foc:
        return finish('FOC')

    rom = reductor.reduce(mode, functional_mode)
    retried_unstable = False
    passes = 0
    while k < cfg.max_outer and passes < 4 * cfg.max_outer:
        passes += 1
        ev = ReducedEvaluator(rom)
        constraint = TRConstraint(ev.relative_estimate, radius, cfg.boundary_beta)
        options = OptimizeOptions(tau_foc=cfg.sub_tau, max_iter=cfg.sub_max_iter,
                                  armijo_alpha=cfg.armijo_alpha, armijo_kappa=cfg.armijo_kappa,
                                  max_backtracks=cfg.max_backtracks, tr_constraint=constraint)
        try:
            J_r_k = ev.value(mu_k)
            sub = projected_bfgs(ev.value, ev.gradient, mu_k, fom.box, options)
        except ReducedSystemUnstable as e:
            if retried_unstable:
                logger.error('persistent reduced instability: %s', e)
                return finish('unstable')
            retried_unstable = True
            logger.warning('reduced model unstable at the current iterate, enriching: %s', e)
            reductor.extend(fe.primal(mu_k).u, fe.dual(mu_k).p)
            rom = reductor.reduce(mode, functional_mode)
            continue
        mu_next = sub.mu
        if np.array_equal(mu_next, mu_k):
            radius *= cfg.shrink_beta1
            history.append(TRRecord(k + 1, mu_next.copy(), np.nan, np.nan, radius, False,
                                    reductor.V_pr.dim, time.perf_counter() - tic, fom_solves()))
            if radius < cfg.min_radius:
                return finish('radius')
            continue
        J_r_next = ev.value(mu_next)
        est = ev.estimates(mu_next)
        accept, used_fom = sufficient_decrease_check(
            J_r_next, est.delta_J, sub.agc_value, lambda: fe.value(mu_next))
        if not accept:
            radius *= cfg.shrink_beta1
            history.append(TRRecord(k + 1, mu_next.copy(),
                                    fe.value(mu_next) if used_fom else np.nan, np.nan, radius,
                                    False, reductor.V_pr.dim, time.perf_counter() - tic,
                                    fom_solves(), est.delta_J / abs(J_r_next), used_fom))
            logger.debug('candidate rejected, radius shrunk to %.3e', radius)
            if radius < cfg.min_radius:
                return finish('radius')
            continue

        # accepted: enrich, check FOM criticality, possibly enlarge the radius
        retried_unstable = False
        u_h, p_h = fe.primal(mu_next), fe.dual(mu_next)
        enriched, _ = reductor.extend(u_h.u, p_h.p)
        J_h_next = fe.value(mu_next)
        foc = foc_measure(fom, mu_next, fe.gradient(mu_next))
        radius = radius_update(J_h_k, J_h_next, J_r_k, J_r_next, radius, cfg)
        mu_k, J_h_k = mu_next.copy(), J_h_next
        k += 1
        if enriched:
            result.enrichment_mus.append(mu_k.copy())
        history.append(TRRecord(k, mu_k.copy(), J_h_k, foc, radius, True, reductor.V_pr.dim,
                                time.perf_counter() - tic, fom_solves(),
                                est.delta_J / abs(J_r_next), used_fom))
        logger.info('TR-RB k=%d J_h=%.10g FOC=%.3e radius=%.3e n=%d (%s)', k, J_h_k, foc,
                    radius, reductor.V_pr.dim, sub.reason)
        if foc <= cfg.tau_foc:
            return finish('FOC')
        if not enriched:
            return finish('stagnation')
        rom = reductor.reduce(mode, functional_mode)
    return finish('max_iter')
