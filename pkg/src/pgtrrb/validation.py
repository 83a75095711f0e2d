"""Invariant checks on a coarse version of a benchmark: estimator validity,
Petrov-Galerkin orthogonality and gradient consistency."""
from __future__ import annotations

import numpy as np

from .benchmark import ExperimentConfig, build_benchmark
from .fom import FOMEvaluator, primal_residual
from .rom import (FunctionalMode, ProjectionMode, ReducedEvaluator, Reductor)


def snapshot_reductor(fom, mus):
    red = Reductor(fom)
    fe = FOMEvaluator(fom)
    for mu in mus:
        red.extend(fe.primal(mu).u, fe.dual(mu).p)
        fe = FOMEvaluator(fom)
    return red


def true_errors(fom, rom, ev, mu):
    fe = FOMEvaluator(fom)
    u_r, p_r = ev.solutions(mu)
    e_u = fom.norm(fe.primal(mu).u - rom.reconstruct_primal(u_r))
    e_p = fom.norm(fe.dual(mu).p - rom.reconstruct_dual(p_r))
    e_J = abs(fe.value(mu) - ev.value(mu))
    return e_u, e_p, e_J


def pg_orthogonality(fom, rom, ev, mu):
    """``|r_pr(u_r)[p_r]|`` at FOM level, relative to ``|l(p_r)|``."""
    u_r, p_r = ev.solutions(mu)
    u, p = rom.reconstruct_primal(u_r), rom.reconstruct_dual(p_r)
    r = primal_residual(fom, mu, u)
    scale = abs(fom.l.combine(fom.l.coefficients(mu)) @ p)
    return abs(r @ p) / max(scale, 1e-300)


def central_difference(fn, mu, h):
    """Central differences with step ``h`` (scalar or one per component)."""
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(mu),))
    g = np.empty(len(mu))
    for i in range(len(mu)):
        e = np.zeros(len(mu))
        e[i] = h[i]
        g[i] = (fn(mu + e) - fn(mu - e)) / (2 * h[i])
    return g


def interior_sample(box, count, rng, margin=1e-3):
    width = box.mu_b - box.mu_a
    return box.mu_a + margin * width + rng.random((count, box.dim)) * (1 - 2 * margin) * width


def run_validation(config: ExperimentConfig, nx=20, ny=10, samples=20):
    geometry = config.geometry_spec()
    fom = build_benchmark(geometry, nx, ny, config)
    rng = np.random.default_rng(config.seed)
    box = fom.box
    results = []

    fe = FOMEvaluator(fom)
    mu_d = fom.info['mu_d']
    fit = abs(fe.value(mu_d) - 1.) <= 1e-10 and np.abs(fe.gradient(mu_d)).max() <= 1e-8
    results.append(('desired state fit', bool(fit), f'J(mu_d) - 1 = {fe.value(mu_d) - 1.:.2e}'))

    snapshots = box.sample_uniform(8, rng)
    red = snapshot_reductor(fom, snapshots)
    n_full = red.V_pr.dim
    violations, worst = 0, 0.
    for mu in box.sample_uniform(samples, rng):
        n = int(rng.integers(1, n_full + 1))
        sub = Reductor(fom, red.V_pr.prefix(n), red.V_du.prefix(n))
        for mode in (ProjectionMode.PETROV_GALERKIN, ProjectionMode.GALERKIN):
            rom = sub.reduce(mode, FunctionalMode.PLAIN if mode is ProjectionMode.PETROV_GALERKIN
                             else FunctionalMode.NCD)
            ev = ReducedEvaluator(rom)
            est = ev.estimates(mu)
            errs = true_errors(fom, rom, ev, mu)
            bounds = (est.delta_pr, est.delta_du, est.delta_J)
            for e, b in zip(errs, bounds):
                if e > b * (1 + 1e-10) + 1e-14:
                    violations += 1
                worst = max(worst, e / b if b > 0 else (0. if e == 0 else np.inf))
    results.append(('estimator validity', violations == 0,
                    f'{violations} violations, max error/estimate {worst:.3f}'))

    rom = red.reduce(ProjectionMode.PETROV_GALERKIN)
    ev = ReducedEvaluator(rom)
    orth = max(pg_orthogonality(fom, rom, ev, mu) for mu in box.sample_uniform(samples, rng))
    results.append(('PG orthogonality', orth <= 1e-9, f'max relative residual {orth:.2e}'))

    worst_pg, worst_fom = 0., 0.
    for mu in interior_sample(box, 5, rng):
        h = 1e-7 * max(1., float(np.abs(mu).max()))
        fd = central_difference(lambda m: ReducedEvaluator(rom).value(m), mu, h)
        g = ev.gradient(mu)
        worst_pg = max(worst_pg, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
        fd = central_difference(lambda m: FOMEvaluator(fom).value(m), mu, h)
        g = FOMEvaluator(fom).gradient(mu)
        worst_fom = max(worst_fom, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
    results.append(('PG gradient vs finite differences', worst_pg <= 1e-4,
                    f'max relative deviation {worst_pg:.2e}'))
    results.append(('FOM gradient vs finite differences', worst_fom <= 1e-5,
                    f'max relative deviation {worst_fom:.2e}'))
    return results


__all__ = ['run_validation', 'snapshot_reductor', 'true_errors', 'pg_orthogonality',
           'central_difference', 'interior_sample']
