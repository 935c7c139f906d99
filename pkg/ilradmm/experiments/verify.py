"""
Verification suite
====================================
Runs the prox oracles, the operator adjoint and spectrum checks, the convergence diagnostics on a
seeded dense instance, the convex-case agreement of the three algorithms and a desk-scale deblurring
run. Every check produces a :class:`~ilradmm.diagnostics.DiagnosticReport`; the suite passes when no
report failed.

..
    Copyright 2022, The ilradmm developers.

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
import time
from typing import Callable, List, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import svdvals

from ilradmm.base import IterateRecorderCallback, SolverConfig
from ilradmm.baselines import ALGORITHMS, BaselineConfig, make_solver
from ilradmm.diagnostics import (FAIL, PASS, DiagnosticReport, Violation,
                                 check_criticality, check_descent,
                                 check_dual_bound, check_relative_error,
                                 check_x_residual, constants_for,
                                 grid_prox_oracle)
from ilradmm.logging.logging import get_run_logger
from ilradmm.operators import (RANK_CUTOFF, Convolution2D, DenseOperator,
                               Difference1D, Difference2D, LinearOperator,
                               ScaledIdentity, operator_norm,
                               smallest_positive_singular_value)
from ilradmm.penalties import (AbsInner, PowerOuter, prox_weighted_inner,
                               scalar_prox_composite)
from ilradmm.experiments.deblur import ExperimentConfig, run_deblur
from ilradmm.experiments.instances import make_dense_instance

PROX_SAMPLES = 1000
PROX_SAMPLES_QUICK = 100
PROX_TOL = 1e-3
ORACLE_STEP = 1e-3
ADJOINT_PAIRS = 100
ADJOINT_TOL = 1e-10
SPECTRUM_RTOL = 1e-6
DENSE_RUN_ITERS = 2000
DENSE_RUN_ALPHA = 4.0
COLLAPSE_ITERS = 50
COLLAPSE_TOL = 1e-8
DEBLUR_MIN_GAIN = 2.0


def _prox_agrees(objective: Callable, t: float, t_oracle: float) -> bool:
    """
    Agreement within ``PROX_TOL``, or a candidate at least as good as the oracle's when the minimum is
    nearly tied between two far apart points.
    """
    if abs(t - t_oracle) <= PROX_TOL:
        return True
    value, oracle_value = float(objective(t)), float(objective(t_oracle))
    return value <= oracle_value + 1e-10 * (1.0 + abs(oracle_value))


def check_prox_weighted_inner(n_samples: int = PROX_SAMPLES, seed: int = 0) -> DiagnosticReport:
    rng = np.random.default_rng(seed)
    violations = []
    for i in range(n_samples):
        v, w, r = rng.uniform(-3.0, 3.0), rng.uniform(0.0, 2.0), rng.uniform(0.5, 5.0)

        def objective(t, v=v, w=w, r=r):
            return w * np.abs(t) + 0.5 * r * (t - v) ** 2

        t = prox_weighted_inner(AbsInner(), w, r, v)
        t_oracle = grid_prox_oracle(objective, (-abs(v) - 0.5, abs(v) + 0.5), ORACLE_STEP)
        if not _prox_agrees(objective, t, t_oracle):
            violations.append(Violation(i, 0, ['prox'], {'v': v, 'w': w, 'r': r, 't': t, 't_oracle': t_oracle}))
    return DiagnosticReport('prox_weighted_inner', PASS if not violations else FAIL, violations,
                            {'n_samples': n_samples})


def check_prox_composite(n_samples: int = PROX_SAMPLES, seed: int = 0) -> DiagnosticReport:
    rng = np.random.default_rng(seed + 1)
    violations = []
    for i in range(n_samples):
        sigma, q, alpha, z = rng.uniform(0.01, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.5, 5.0), rng.uniform(-3.0, 3.0)
        epsilon = 0.0 if i % 10 == 0 else 10.0 ** rng.uniform(-7.0, -1.0)
        g = PowerOuter(q, epsilon, scale=sigma)

        def objective(t, g=g, alpha=alpha, z=z):
            return g.value(np.abs(t)) + 0.5 * alpha * (t - z) ** 2

        t = scalar_prox_composite(g, AbsInner(), alpha, z)
        t_oracle = grid_prox_oracle(objective, (-abs(z) - 0.5, abs(z) + 0.5), ORACLE_STEP)
        if not _prox_agrees(objective, t, t_oracle):
            violations.append(Violation(i, 0, ['prox'], {
                'sigma': sigma, 'q': q, 'epsilon': epsilon, 'alpha': alpha, 'z': z, 't': t, 't_oracle': t_oracle}))
    return DiagnosticReport('prox_composite', PASS if not violations else FAIL, violations, {'n_samples': n_samples})


def shipped_operators(seed: int = 0) -> List[LinearOperator]:
    """
    One small instance of every operator kind.
    """
    rng = np.random.default_rng(seed)
    kernel = rng.uniform(0.0, 1.0, size=(3, 3))
    return [
        DenseOperator(rng.normal(size=(12, 17))),
        Difference1D(31),
        Difference2D(9, 11),
        Convolution2D(kernel / kernel.sum(), 9, 11),
        ScaledIdentity(13, -1.0),
    ]


def check_adjoints(n_pairs: int = ADJOINT_PAIRS, seed: int = 0) -> DiagnosticReport:
    """
    ``<A x, y> = <x, A^T y>`` within ``1e-10 (1 + ||A x|| ||y||)`` on random pairs.
    """
    rng = np.random.default_rng(seed)
    violations = []
    for index, op in enumerate(shipped_operators(seed)):
        for _ in range(n_pairs):
            x, y = rng.normal(size=op.in_dim), rng.normal(size=op.out_dim)
            ax = op.apply(x)
            gap = abs(float(ax @ y) - float(x @ op.adjoint_apply(y)))
            if gap > ADJOINT_TOL * (1.0 + np.linalg.norm(ax) * np.linalg.norm(y)):
                violations.append(Violation(index, 0, ['adjoint'], {'gap': gap}))
                break
    return DiagnosticReport('adjoint', PASS if not violations else FAIL, violations, {'n_pairs': n_pairs})


def check_spectra(seed: int = 0) -> DiagnosticReport:
    """
    ``operator_norm`` and ``theta`` against the SVD of the materialized matrix.
    """
    violations = []
    for index, op in enumerate(shipped_operators(seed)):
        sv = svdvals(op.to_dense())
        positive = sv[sv > RANK_CUTOFF * sv[0]]
        norm, theta = operator_norm(op), smallest_positive_singular_value(op)
        conditions = []
        if abs(norm - sv[0]) > SPECTRUM_RTOL * sv[0]:
            conditions.append('operator_norm')
        if abs(theta - positive[-1]) > SPECTRUM_RTOL * positive[-1]:
            conditions.append('theta')
        if conditions:
            violations.append(Violation(index, 0, conditions, {
                'norm': norm, 'svd_norm': float(sv[0]), 'theta': theta, 'svd_theta': float(positive[-1])}))
    return DiagnosticReport('spectra', PASS if not violations else FAIL, violations)


def check_dense_run(seed: int = 0, max_iter: int = DENSE_RUN_ITERS) -> List[DiagnosticReport]:
    """
    ILR-ADMM with ``alpha`` held at its cap on a seeded 20 x 20 instance started at the loss minimizer.
    """
    instance = make_dense_instance(seed=seed)
    config = SolverConfig(alpha0=DENSE_RUN_ALPHA, alpha_max=DENSE_RUN_ALPHA, max_iter=max_iter,
                          primal_tol=1e-6, step_tol=1e-8, x_residual_every=1, seed=seed)
    solver = make_solver('ilr', instance.problem, config)
    _, trace = solver.run(instance.initial_state(solver))
    constants = constants_for(instance.problem, config, p0=instance.p0)

    parameters = DiagnosticReport('parameters', PASS if constants.parameters_admissible else FAIL, details={
        'theta': constants.theta, 'eta': constants.eta, 'delta': constants.delta, 'nu': constants.nu,
        'alpha': constants.alpha, 'r': constants.r,
    })
    return [
        parameters,
        check_descent(trace, constants),
        check_dual_bound(trace, constants),
        check_criticality(trace, primal_tol=1e-6, kkt_tol=1e-5, step_tol=1e-8),
        check_relative_error(trace),
        check_x_residual(trace),
    ]


def check_convex_collapse(seed: int = 0, n_iter: int = COLLAPSE_ITERS) -> DiagnosticReport:
    """
    With ``q = 1`` the three algorithms produce the same iterates.
    """
    instance = make_dense_instance(seed=seed, q=1.0)
    config = BaselineConfig(r_margin=1e-12, max_iter=n_iter, primal_tol=0.0, step_tol=0.0, inner_iters=3)
    sequences = {}
    for algo in ALGORITHMS:
        recorder = IterateRecorderCallback()
        solver = make_solver(algo, instance.problem, config, callbacks=[recorder])
        solver.run(instance.initial_state(solver))
        sequences[algo] = recorder.iterates

    reference = sequences['ilr']
    violations = []
    for algo, iterates in sequences.items():
        if len(iterates) != len(reference):
            violations.append(Violation(0, 0, ['length'], {'n': float(len(iterates))}))
            continue
        for k, (left, right) in enumerate(zip(reference, iterates)):
            gap = max(float(np.max(np.abs(a - b))) for a, b in zip(left, right))
            if gap > COLLAPSE_TOL:
                violations.append(Violation(k, k + 1, [algo], {'gap': gap}))
                break
    return DiagnosticReport('convex_collapse', PASS if not violations else FAIL, violations, {'n_iter': n_iter})


def check_deblur(seed: int = 0, check_determinism: bool = True) -> DiagnosticReport:
    config = ExperimentConfig(solver=BaselineConfig(seed=seed, x_residual_every=10))
    start = time.perf_counter()
    result = run_deblur(config)
    elapsed = time.perf_counter() - start
    conditions = []
    if not result.snr_gain >= DEBLUR_MIN_GAIN:
        conditions.append('snr_gain')
    x_report = check_x_residual(result.trace)
    if x_report.failed:
        conditions.append('x_residual')
    if check_determinism:
        again = run_deblur(config)
        if not (again.trace.to_dataframe().equals(result.trace.to_dataframe())
                and np.array_equal(again.restored.pixels, result.restored.pixels)):
            conditions.append('determinism')
    violations = [Violation(0, len(result.trace), conditions, {
        'snr_degraded': result.snr_degraded, 'snr_restored': result.snr_restored})] if conditions else []
    return DiagnosticReport('deblur', PASS if not violations else FAIL, violations, {
        'snr_degraded': result.snr_degraded, 'snr_restored': result.snr_restored, 'elapsed': elapsed})


def run_verify(quick: bool = False, seed: int = 0, n_jobs: int = 1) -> List[DiagnosticReport]:
    """
    Run every check. ``quick`` shrinks the oracle sample counts and skips the deblurring rerun.
    """
    logger = get_run_logger('experiments.verify')
    n_samples = PROX_SAMPLES_QUICK if quick else PROX_SAMPLES
    checks = [
        lambda: [check_prox_weighted_inner(n_samples, seed)],
        lambda: [check_prox_composite(n_samples, seed)],
        lambda: [check_adjoints(seed=seed)],
        lambda: [check_spectra(seed)],
        lambda: check_dense_run(seed),
        lambda: [check_convex_collapse(seed)],
        lambda: [check_deblur(seed, check_determinism=not quick)],
    ]
    if n_jobs != 1:
        nested = Parallel(backend='threading', n_jobs=n_jobs)(delayed(check)() for check in checks)
    else:
        nested = [check() for check in checks]
    reports = [report for reports in nested for report in reports]
    for report in reports:
        logger.info(f"{report.name}: {report.status}")
        if report.failed:
            logger.warning(report.to_text())
    return reports


def all_passed(reports: Sequence[DiagnosticReport]) -> bool:
    """
    True when no report failed. Unchecked reports do not fail the suite.
    """
    return not any(report.failed for report in reports)


def reports_to_dataframe(reports: Sequence[DiagnosticReport]) -> pd.DataFrame:
    return pd.DataFrame([
        {'check': r.name, 'status': r.status, 'violations': len(r.violations)} for r in reports
    ])
