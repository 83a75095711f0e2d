"""Command line harness: ``pgtrrb {fom-solve,greedy,optimize,validate}``.

All CSV floats are written with 17 significant digits. Runs are
deterministic given the seed of the experiment config, except for the
wall-clock columns; ``--no-timings`` writes those as zero.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import ExperimentConfig, GeometryError, build_benchmark
from .experiments import (HISTORY_FIELDS, METHODS, SUMMARY_FIELDS, reference_optimum,
                          run_comparison, starting_parameters, summarize)
from .fom import foc_measure, gradient, objective, solve_dual, solve_primal
from .greedy import STUDY_SIZES, error_study, goal_oriented_greedy
from .rom import ReducedSystemUnstable

logger = logging.getLogger('pgtrrb')


class CLIError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f'{float(x):.17g}'


def write_csv(path: Path, header, rows):
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.load(path)
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as e:
        raise CLIError(f'cannot read config {path}: {e}') from e


def build(config: ExperimentConfig, **overrides):
    try:
        geometry = config.geometry_spec()
        if 'domain_of_interest' in overrides:
            geometry = geometry.with_domain_of_interest(overrides['domain_of_interest'])
        return build_benchmark(geometry, overrides.get('nx', config.nx),
                               overrides.get('ny', config.ny), config)
    except (GeometryError, OSError, ValueError) as e:
        raise CLIError(f'cannot build the benchmark: {e}') from e


def parse_mu(text, P):
    try:
        mu = np.array([float(v) for v in text.split(',')] if text.strip() else [], dtype=float)
    except ValueError as e:
        raise CLIError(f'cannot parse parameter {text!r}') from e
    if mu.shape != (P,):
        raise CLIError(f'parameter has {len(mu)} entries, expected {P}')
    return mu


def cmd_fom_solve(args):
    config = load_config(args.config)
    fom = build(config)
    mu = parse_mu(args.mu, fom.parameter_dim)
    if not fom.box.contains(mu):
        raise CLIError(f'parameter {args.mu} is infeasible (outside the box)')
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    u = solve_primal(fom, mu)
    p = solve_dual(fom, mu, u)
    J = objective(fom, mu, u)
    g = gradient(fom, mu, u, p)
    foc = foc_measure(fom, mu, g)
    write_csv(out / 'objective.csv', ['J', 'foc'], [[J, foc]])
    write_csv(out / 'gradient.csv', ['index', 'mu', 'gradient'],
              [[i, mu[i], g[i]] for i in range(len(mu))])
    nodes = fom.mesh.nodes
    write_csv(out / 'states.csv', ['node', 'x', 'y', 'u', 'p'],
              [[i, nodes[i, 0], nodes[i, 1], u.u[i], p.p[i]] for i in range(fom.dim)])
    print(f'J = {fmt(J)}, FOC = {fmt(foc)}')


def cmd_greedy(args):
    config = load_config(args.config)
    g = dict(config.greedy)
    # the error study uses the whole domain as domain of interest
    fom = build(config, domain_of_interest=config.geometry_spec().domain)
    seed = config.seed
    training = fom.box.sample_uniform(int(g.get('training_size', 100)),
                                      np.random.default_rng(seed))
    validation = fom.box.sample_uniform(int(g.get('validation_size', 100)),
                                        np.random.default_rng(seed + 1))
    V_pr, V_du, history = goal_oriented_greedy(fom, training, args.tol, args.max,
                                               g.get('mode', 'galerkin'))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    P = fom.parameter_dim
    rows = []
    for r in history.records:
        rows.append([r.step, *r.mu, r.n_pr, r.n_du, r.max_estimate,
                     0. if args.no_timings else r.wall_time_s, r.accepted])
    write_csv(out / 'greedy_history.csv',
              ['step', *[f'mu_{i}' for i in range(P)], 'n_pr', 'n_du', 'max_rel_estimate',
               'wall_time_s', 'accepted'], rows)
    sizes = tuple(g.get('sizes', STUDY_SIZES))
    table = error_study(fom, V_pr, V_du, validation, sizes)
    table.write_csv(out / 'error_study.csv')
    print(f'greedy: {len(history.records)} extensions ({history.reason}), '
          f'final max relative estimate {history.final_max_estimate:.3e}, seed {seed}')


def _history_rows(rec, P, no_timings):
    for h in rec.history:
        row = [h[k] for k in HISTORY_FIELDS]
        if no_timings:
            row[HISTORY_FIELDS.index('t_cumulative_s')] = 0.
        yield [row[0], *h['mu'], *row[1:]]


def cmd_optimize(args):
    config = load_config(args.config)
    fom = build(config)
    methods = args.method or list(METHODS)
    n_starts = args.starts if args.starts is not None else config.starts
    starts = starting_parameters(fom.box, n_starts, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    P = fom.parameter_dim
    try:
        records = run_comparison(fom, methods, starts, config.tau_foc, config.tr, config.bfgs)
    except ReducedSystemUnstable as e:
        raise CLIError(f'optimization aborted: {e}') from e
    header = ['k', *[f'mu_{i}' for i in range(P)], *HISTORY_FIELDS[1:]]
    for rec in records:
        write_csv(out / f'history_{rec.method}_{rec.start:02d}.csv', header,
                  _history_rows(rec, P, args.no_timings))
    ref = reference_optimum(fom, config.reference_tau, config.bfgs)
    write_csv(out / 'reference.csv', [*[f'mu_{i}' for i in range(P)], 'J_h', 'foc', 'seed'],
              [[*ref.mu, ref.history[-1]['J_h'], ref.foc, config.seed]])
    write_csv(out / 'starts.csv',
              ['method', 'start', *[f'mu0_{i}' for i in range(P)], *[f'mu_{i}' for i in range(P)],
               'iterations', 'runtime_s', 'foc', 'fom_solves', 'reason'],
              [[r.method, r.start, *r.mu0, *r.mu, r.iterations,
                0. if args.no_timings else r.runtime_s, r.foc, r.fom_solves, r.reason]
               for r in sorted(records, key=lambda r: (r.method, r.start))])
    summary = summarize(records, ref.mu)
    if args.no_timings:
        for row in summary:
            for key in ('runtime_avg_s', 'runtime_min_s', 'runtime_max_s', 'speedup'):
                row[key] = 0.
    write_csv(out / 'summary.csv', SUMMARY_FIELDS,
              [[row[k] for k in SUMMARY_FIELDS] for row in summary])
    for row in summary:
        print(f"{row['method']:>9}: runtime {row['runtime_avg_s']:.3f} s, "
              f"iterations {row['iterations_avg']:.2f}, rel. error {row['rel_error_avg']:.2e}, "
              f"FOC {row['foc_avg']:.2e}")


def cmd_validate(args):
    from .validation import run_validation
    config = load_config(args.config)
    results = run_validation(config, nx=args.nx, ny=args.ny)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    if not ok:
        raise CLIError('validation failed')


def make_parser():
    parser = argparse.ArgumentParser(prog='pgtrrb', description=__doc__.splitlines()[0])
    parser.add_argument('-v', '--verbose', action='count', default=0)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('fom-solve', help='primal/dual solve with objective and gradient')
    p.add_argument('--config', required=True)
    p.add_argument('--mu', required=True, help='comma separated parameter')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_fom_solve)

    p = sub.add_parser('greedy', help='greedy basis generation and error study')
    p.add_argument('--config', required=True)
    p.add_argument('--tol', type=float, required=True)
    p.add_argument('--max', type=int, required=True, help='maximum number of extensions')
    p.add_argument('--out', required=True)
    p.add_argument('--no-timings', action='store_true')
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser('optimize', help='compare FOM BFGS and TR-RB from random starts')
    p.add_argument('--config', required=True)
    p.add_argument('--method', action='append', choices=METHODS,
                   help='may be repeated; default: all methods')
    p.add_argument('--starts', type=int)
    p.add_argument('--out', required=True)
    p.add_argument('--no-timings', action='store_true')
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser('validate', help='invariant checks on a coarse mesh')
    p.add_argument('--config', required=True)
    p.add_argument('--nx', type=int, default=20)
    p.add_argument('--ny', type=int, default=10)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        args.func(args)
    except CLIError as e:
        print(f'error: {e}', file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
