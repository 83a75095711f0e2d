"""Goal-oriented greedy basis generation and the error-decay study of the
three reduced functionals (plain Galerkin, NCD-corrected Galerkin, PG)."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .fom import FOMEvaluator
from .parametric import MinThetaInapplicable
from .rom import (FunctionalMode, ProjectionMode, ReducedBasis, ReducedEvaluator,
                  ReducedSystemUnstable, Reductor)

logger = logging.getLogger(__name__)

VARIANTS = {
    'plain': (ProjectionMode.GALERKIN, FunctionalMode.PLAIN),
    'ncd': (ProjectionMode.GALERKIN, FunctionalMode.NCD),
    'pg': (ProjectionMode.PETROV_GALERKIN, FunctionalMode.PLAIN),
}
METRICS = ('J', 'gradient', 'u', 'p')
STUDY_SIZES = tuple(range(4, 61, 4))

_FAILURES = (ReducedSystemUnstable, MinThetaInapplicable, np.linalg.LinAlgError)


@dataclass
class GreedyRecord:
    step: int
    mu: np.ndarray
    n_pr: int
    n_du: int
    max_estimate: float    # max relative estimator over the training set before this extension
    wall_time_s: float
    accepted: bool = True


@dataclass
class GreedyHistory:
    records: list = field(default_factory=list)
    final_max_estimate: float = np.inf
    reason: str = ''

    @property
    def basis_sizes(self):
        return [r.n_pr + r.n_du for r in self.records]


def _relative_estimates(rom, training_set):
    ev = ReducedEvaluator(rom, cache_size=1)
    est = np.empty(len(training_set))
    for i, mu in enumerate(training_set):
        try:
            est[i] = ev.relative_estimate(mu)
        except _FAILURES as e:
            logger.debug('training point %d unstable: %s', i, e)
            est[i] = np.inf
        if np.isnan(est[i]):
            est[i] = np.inf
    return est


def goal_oriented_greedy(fom, training_set, tol, max_extensions, mode=ProjectionMode.GALERKIN,
                         functional_mode=None):
    """Greedy search driven by ``Delta_J(mu) / |J_r(mu)|``.

    The bases are seeded with the primal and dual solution at the first
    training parameter; the seed counts as the first of ``max_extensions``
    extensions. Returns ``(V_pr, V_du, history)``.
    """
    training_set = np.atleast_2d(np.asarray(training_set, dtype=float))
    if len(training_set) == 0:
        raise ValueError('empty training set')
    for mu in training_set:
        if not fom.box.contains(mu):
            raise ValueError(f'training parameter {mu} outside the box')
    if max_extensions < 1:
        raise ValueError('max_extensions must be at least 1')
    mode = ProjectionMode(mode)
    if functional_mode is None:
        functional_mode = FunctionalMode.NCD if mode is ProjectionMode.GALERKIN \
            else FunctionalMode.PLAIN
    tic = time.perf_counter()
    fe = FOMEvaluator(fom)
    reductor = Reductor(fom)
    history = GreedyHistory()

    def enrich(i, max_est):
        mu = training_set[i]
        ok, _ = reductor.extend(fe.primal(mu).u, fe.dual(mu).p)
        history.records.append(GreedyRecord(len(history.records), mu.copy(), reductor.V_pr.dim,
                                            reductor.V_du.dim, max_est,
                                            time.perf_counter() - tic, ok))
        return ok

    enrich(0, np.inf)
    while True:
        est = _relative_estimates(reductor.reduce(mode, functional_mode), training_set)
        i = int(np.argmax(est))   # first maximizer, i.e. lowest index on ties
        history.final_max_estimate = float(est[i])
        logger.info('greedy: n=%d max rel. estimate %.3e at %d', reductor.V_pr.dim, est[i], i)
        if est[i] <= tol:
            history.reason = 'tol'
            break
        if len(history.records) >= max_extensions:
            history.reason = 'max_extensions'
            break
        if not enrich(i, float(est[i])):
            history.reason = 'snapshot_rejected'
            break
    return reductor.V_pr, reductor.V_du, history


@dataclass
class ErrorStudyTable:
    """Maximum errors over the validation set, keyed by
    ``(basis_size, variant, metric)``, plus per size and variant the number
    of unstable reduced solves excluded from the maximum."""

    values: dict = field(default_factory=dict)
    unstable: dict = field(default_factory=dict)
    sizes: tuple = ()

    def get(self, size, variant, metric):
        return self.values[(size, variant, metric)]

    def rows(self):
        for (n, variant, metric), value in self.values.items():
            yield n, variant, metric, value, self.unstable[(n, variant)]

    def write_csv(self, path):
        with open(path, 'w', newline='') as f:
            w = csv.writer(f, lineterminator='\n')
            w.writerow(['basis_size', 'variant', 'metric', 'value', 'unstable_count'])
            for n, variant, metric, value, count in self.rows():
                w.writerow([n, variant, metric, f'{value:.17g}', count])


def error_study(fom, V_pr: ReducedBasis, V_du: ReducedBasis, validation_set,
                sizes=STUDY_SIZES, variants=tuple(VARIANTS)):
    """True reduction errors of all variants on nested prefixes of the bases.

    ``sizes`` are dimensions per space; sizes beyond the available bases are
    skipped. Failed reduced solves are excluded from the maxima and counted.
    """
    validation_set = np.atleast_2d(np.asarray(validation_set, dtype=float))
    truth = []
    for mu in validation_set:
        fe = FOMEvaluator(fom)
        truth.append((fe.value(mu), fe.gradient(mu), fe.primal(mu).u, fe.dual(mu).p))
    n_max = min(V_pr.dim, V_du.dim)
    sizes = tuple(n for n in sizes if n <= n_max)
    table = ErrorStudyTable(sizes=sizes)
    reductor = Reductor(fom)
    have = 0
    for n in sizes:
        # bases are nested, so one incremental reductor serves all sizes
        reductor.add_vectors(V_pr.vectors[:, have:n], V_du.vectors[:, have:n])
        have = n
        for variant in variants:
            rom = reductor.reduce(*VARIANTS[variant])
            ev = ReducedEvaluator(rom, cache_size=1)
            errs = {m: [] for m in METRICS}
            failed = 0
            for mu, (J_h, g_h, u_h, p_h) in zip(validation_set, truth):
                try:
                    u_r, p_r = ev.solutions(mu)
                    J_r, g_r = ev.value(mu), ev.gradient(mu)
                except _FAILURES:
                    failed += 1
                    continue
                errs['J'].append(abs(J_h - J_r))
                errs['gradient'].append(float(np.linalg.norm(g_h - g_r)))
                errs['u'].append(fom.norm(u_h - rom.reconstruct_primal(u_r)))
                errs['p'].append(fom.norm(p_h - rom.reconstruct_dual(p_r)))
            for m in METRICS:
                table.values[(n, variant, m)] = max(errs[m]) if errs[m] else np.nan
            table.unstable[(n, variant)] = failed
            if failed:
                logger.warning('%s at n=%d: %d unstable validation solves', variant, n, failed)
    return table
