"""Drivers for the optimization comparison: FOM projected BFGS against the
two TR-RB variants from common random starts, and the aggregate table."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fom import FOMEvaluator, foc_measure, solve_counts
from .optimizer import OptimizeOptions, projected_bfgs
from .trust_region import TRConfig, tr_rb_optimize

logger = logging.getLogger(__name__)

METHODS = ('fom-bfgs', 'tr-ncd', 'tr-pg')
TR_MODES = {'tr-ncd': 'galerkin_ncd', 'tr-pg': 'petrov_galerkin'}
HISTORY_FIELDS = ('k', 'J_h', 'foc', 'radius', 'accepted', 'n_basis', 't_cumulative_s',
                  'fom_solves')


@dataclass
class RunRecord:
    method: str
    start: int
    mu0: np.ndarray
    mu: np.ndarray
    iterations: int
    runtime_s: float
    foc: float
    reason: str
    fom_solves: int
    history: list = field(default_factory=list)   # dicts with HISTORY_FIELDS and 'mu'


def fom_bfgs(fom, mu0, tau_foc=1e-6, options: dict = None) -> RunRecord:
    fom = fom.copy()
    fe = FOMEvaluator(fom)
    tic = time.perf_counter()
    opts = OptimizeOptions(tau_foc=tau_foc, **(options or {}))
    rows = []

    def value(mu):
        return fe.value(mu)

    res = projected_bfgs(value, fe.gradient, mu0, fom.box, opts)
    runtime = time.perf_counter() - tic
    for k, h in enumerate(res.history):
        rows.append({'k': k, 'mu': h['mu'], 'J_h': h['value'], 'foc': h['foc'], 'radius': np.nan,
                     'accepted': True, 'n_basis': 0, 't_cumulative_s': np.nan,
                     'fom_solves': np.nan})
    rows[-1]['t_cumulative_s'] = runtime
    rows[-1]['fom_solves'] = sum(solve_counts(fom).values())
    return RunRecord('fom-bfgs', -1, np.array(mu0, float), res.mu, res.iterations, runtime,
                     res.foc, res.reason, sum(solve_counts(fom).values()), rows)


def tr_rb(fom, mu0, method, tau_foc=1e-6, options: dict = None) -> RunRecord:
    fom = fom.copy()
    cfg = TRConfig(mode=TR_MODES[method], tau_foc=tau_foc, **(options or {}))
    res = tr_rb_optimize(fom, mu0, cfg)
    rows = [{'k': r.k, 'mu': r.mu, 'J_h': r.J_h, 'foc': r.foc, 'radius': r.radius,
             'accepted': r.accepted, 'n_basis': r.n_basis, 't_cumulative_s': r.t_cumulative_s,
             'fom_solves': r.fom_solves} for r in res.history]
    return RunRecord(method, -1, np.array(mu0, float), res.mu, res.iterations, res.runtime_s,
                     res.foc, res.reason, res.fom_solves, rows)


def run_method(fom, method, mu0, tau_foc=1e-6, tr_options=None, bfgs_options=None):
    if method == 'fom-bfgs':
        return fom_bfgs(fom, mu0, tau_foc, bfgs_options)
    if method in TR_MODES:
        return tr_rb(fom, mu0, method, tau_foc, tr_options)
    raise ValueError(f'unknown method {method!r}, expected one of {METHODS}')


def starting_parameters(box, count, seed) -> np.ndarray:
    return box.sample_uniform(count, np.random.default_rng(seed))


def reference_optimum(fom, tau=1e-8, options=None):
    """FOM projected BFGS from the box center with a tight tolerance."""
    return fom_bfgs(fom, fom.box.center, tau, options)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get('PGTRRB_THREADS', '1')))
    except ValueError:
        return 1


def run_comparison(fom, methods, starts, tau_foc=1e-6, tr_options=None, bfgs_options=None,
                   threads=None):
    """Run every method from every start. Starts are independent and may run
    in parallel threads; each works on its own copy of the model."""
    jobs = [(m, i, mu0) for i, mu0 in enumerate(starts) for m in methods]

    def job(args):
        m, i, mu0 = args
        rec = run_method(fom, m, mu0, tau_foc, tr_options, bfgs_options)
        rec.start = i
        logger.info('%s start %d: %s after %d iterations, %.2f s', m, i, rec.reason,
                    rec.iterations, rec.runtime_s)
        return rec

    threads = threads or thread_count()
    if threads == 1:
        return [job(j) for j in jobs]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(job, jobs))


SUMMARY_FIELDS = ('method', 'starts', 'runtime_avg_s', 'runtime_min_s', 'runtime_max_s',
                  'speedup', 'iterations_avg', 'iterations_min', 'iterations_max',
                  'rel_error_avg', 'rel_error_max', 'foc_avg', 'foc_max')


def summarize(records, reference_mu):
    """Aggregate rows per method, speed-up relative to ``fom-bfgs`` if present."""
    ref_norm = np.linalg.norm(reference_mu)
    by_method = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    rows = []
    for method in sorted(by_method, key=lambda m: METHODS.index(m) if m in METHODS else 99):
        recs = sorted(by_method[method], key=lambda r: r.start)
        t = np.array([r.runtime_s for r in recs])
        it = np.array([r.iterations for r in recs])
        err = np.array([np.linalg.norm(r.mu - reference_mu) for r in recs]) / \
            (ref_norm if ref_norm > 0 else 1.)
        foc = np.array([r.foc for r in recs])
        rows.append({'method': method, 'starts': len(recs), 'runtime_avg_s': t.mean(),
                     'runtime_min_s': t.min(), 'runtime_max_s': t.max(), 'speedup': np.nan,
                     'iterations_avg': it.mean(), 'iterations_min': int(it.min()),
                     'iterations_max': int(it.max()), 'rel_error_avg': err.mean(),
                     'rel_error_max': err.max(), 'foc_avg': foc.mean(), 'foc_max': foc.max()})
    base = [r for r in rows if r['method'] == 'fom-bfgs']
    if base:
        for r in rows:
            r['speedup'] = base[0]['runtime_avg_s'] / r['runtime_avg_s'] \
                if r['runtime_avg_s'] > 0 else np.nan
    return rows


def final_foc(fom, mu):
    fe = FOMEvaluator(fom.copy())
    return foc_measure(fom, mu, fe.gradient(mu))
