import os

import numpy as np
import pandas as pd
import pytest

from ilradmm.baselines import BaselineConfig
from ilradmm.config import ConfigError, parse_config_text
from ilradmm.diagnostics import check_x_residual
from ilradmm.experiments.deblur import (DEFAULT_QS, ExperimentConfig,
                                        build_deblur_problem, compare_algorithms,
                                        degrade, emit_csv, initial_estimate,
                                        load_original, mean_snr_trace,
                                        parse_qs, read_trace_csv, run_deblur,
                                        run_deblur_repeats, solve_deblur,
                                        suffixed_path, sweep_q)
from ilradmm.experiments.images import load_pgm, phantom_image, save_pgm
from ilradmm.subproblems import ConjugateGradientSolver, subproblem_residual
from ilradmm.trace import CSV_COLUMNS, IterateTrace


def _small_config(**kwargs) -> ExperimentConfig:
    solver = kwargs.pop('solver', BaselineConfig(max_iter=15, x_residual_every=5, inner_iters=2))
    return ExperimentConfig(phantom=kwargs.pop('phantom', '24x20'), solver=solver, **kwargs)


@pytest.mark.timeout(120)
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_deblurring_the_default_phantom_gains_snr(seed):
    config = ExperimentConfig(solver=BaselineConfig(seed=seed, x_residual_every=10))

    result = run_deblur(config)

    assert len(result.trace) == 200
    assert result.snr_restored >= result.snr_degraded + 2.0
    assert result.trace.last().snr == pytest.approx(result.snr_restored)
    assert check_x_residual(result.trace).passed


def test_noiseless_identity_blur_without_penalty_restores_the_input():
    config = _small_config(kernel_size=1, noise_std=0.0, sigma_reg=0.0, tikhonov_start=0.0)
    original = load_original(config)

    result = run_deblur(config)

    assert np.max(np.abs(result.restored.pixels - original.pixels)) <= 1e-6


def test_initial_estimate_is_the_smoothed_least_squares_image():
    # Given
    config = _small_config()
    blur, degraded = degrade(load_original(config), config)
    problem = build_deblur_problem(degraded, blur, config.q, config.epsilon, config.sigma_reg)
    zeros_y, zeros_p = np.zeros(problem.B.in_dim), np.zeros(problem.A.out_dim)

    # When
    x0 = initial_estimate(problem, ConjugateGradientSolver(tol=1e-12), 3e-3)
    unchanged = initial_estimate(problem, ConjugateGradientSolver(), 0.0)

    # Then
    assert subproblem_residual(problem, x0, zeros_y, zeros_p, 3e-3) <= 1e-9 * (1 + np.linalg.norm(x0))
    assert np.array_equal(unchanged, degraded.flat)
    assert unchanged is not problem.loss.data


def test_deblurring_is_deterministic(tmpdir):
    first = _small_config(trace=os.path.join(tmpdir, 'a.csv'))
    second = _small_config(trace=os.path.join(tmpdir, 'b.csv'))

    left, right = run_deblur(first), run_deblur(second)

    assert np.array_equal(left.restored.pixels, right.restored.pixels)
    with open(first.trace, 'rb') as a, open(second.trace, 'rb') as b:
        assert a.read() == b.read()


def test_degradation_depends_on_the_seed_only_through_the_noise():
    config = _small_config()
    original = load_original(config)

    _, degraded = degrade(original, config)
    _, same = degrade(original, config)
    _, other = degrade(original, config.with_seed(1))

    assert np.array_equal(degraded.pixels, same.pixels)
    assert not np.array_equal(degraded.pixels, other.pixels)
    assert np.array_equal(load_original(config.with_seed(1)).pixels, original.pixels)


def test_restored_image_and_input_image_files(tmpdir):
    source = os.path.join(tmpdir, 'in.pgm')
    save_pgm(phantom_image(20, 16, seed=2), source)
    config = ExperimentConfig(input=source, out=os.path.join(tmpdir, 'out.pgm'),
                              solver=BaselineConfig(max_iter=5))

    result = run_deblur(config)

    restored = load_pgm(config.out)
    assert restored.shape == (16, 20)
    assert np.max(np.abs(restored.pixels - result.restored.clamped().pixels)) <= 1.0 / 255.0


def test_emit_csv_of_empty_trace_writes_the_header(tmpdir):
    path = os.path.join(tmpdir, 'empty.csv')

    emit_csv(IterateTrace(), path)

    with open(path, 'rb') as f:
        assert f.read() == (",".join(CSV_COLUMNS) + "\n").encode()


def test_emit_csv_format(tmpdir):
    # Given
    path = os.path.join(tmpdir, 'trace.csv')
    result = run_deblur(_small_config(trace=path))

    # When
    with open(path, 'rb') as f:
        content = f.read()

    # Then
    assert b"\r" not in content
    lines = content.decode().split("\n")
    assert lines[-1] == ""
    assert lines[0] == "iter,alpha,r,lagrangian,primal_residual,step_x,step_y,dual_step,kkt,weight_min,weight_max,snr"
    assert len(lines) - 2 == len(result.trace)
    assert all(len(line.split(",")) == 12 for line in lines[:-1])


def test_emitted_trace_rereads_within_tolerance(tmpdir):
    path = os.path.join(tmpdir, 'trace.csv')
    result = run_deblur(_small_config(trace=path))

    reread = read_trace_csv(path)

    assert len(reread) == len(result.trace)
    for column in CSV_COLUMNS:
        expected, actual = result.trace.column(column), reread.column(column)
        assert np.allclose(actual, expected, rtol=1e-10, atol=0, equal_nan=True), column


def test_read_trace_csv_needs_every_column(tmpdir):
    path = os.path.join(tmpdir, 'bad.csv')
    pd.DataFrame({'iter': [1], 'alpha': [1.0]}).to_csv(path, index=False)

    with pytest.raises(ValueError):
        read_trace_csv(path)


def test_repeats_write_per_seed_traces_and_the_mean(tmpdir):
    # Given
    trace = os.path.join(tmpdir, 'run.csv')
    config = _small_config(repeats=3, n_jobs=2, trace=trace, solver=BaselineConfig(seed=5, max_iter=6))

    # When
    results = run_deblur_repeats(config)

    # Then
    assert [r.seed for r in results] == [5, 6, 7]
    for seed in (5, 6, 7):
        assert os.path.exists(os.path.join(tmpdir, f'run_seed{seed}.csv'))
    mean = pd.read_csv(os.path.join(tmpdir, 'run_snr_mean.csv'))
    assert list(mean.columns) == ['iter', 'snr_mean', 'n_runs']
    assert list(mean['iter']) == list(range(1, 7))
    assert list(mean['n_runs']) == [3] * 6
    expected = np.mean([r.trace.column('snr') for r in results], axis=0)
    assert np.allclose(mean['snr_mean'], expected, rtol=1e-10)


def test_threaded_repeats_match_sequential_repeats():
    sequential = run_deblur_repeats(_small_config(repeats=2, n_jobs=1))
    threaded = run_deblur_repeats(_small_config(repeats=2, n_jobs=2))

    for left, right in zip(sequential, threaded):
        assert np.array_equal(left.restored.pixels, right.restored.pixels)


def test_mean_snr_trace_of_no_runs_is_empty():
    assert mean_snr_trace([]).empty


def test_compare_writes_a_report_and_three_traces(tmpdir):
    config = _small_config(trace=os.path.join(tmpdir, 't.csv'), report=os.path.join(tmpdir, 'report.csv'))

    report = compare_algorithms(config)

    assert list(report['algorithm']) == ['ilr', 'direct', 'inloop']
    assert set(report.columns) >= {'snr_degraded', 'snr_restored', 'snr_gain', 'iterations', 'elapsed'}
    assert len(set(report['snr_degraded'])) == 1
    assert pd.read_csv(config.report).shape == report.shape
    for algo in ('ilr', 'direct', 'inloop'):
        assert os.path.exists(os.path.join(tmpdir, f't_{algo}.csv'))


def test_convex_penalty_gives_the_same_snr_for_all_algorithms():
    # Given q = 1 and r = alpha up to a negligible margin
    config = _small_config(q=1.0, solver=BaselineConfig(max_iter=10, r_margin=1e-12, inner_iters=3))

    # When
    snr_traces = {}
    original = load_original(config)
    blur, degraded = degrade(original, config)
    for algo in ('ilr', 'direct', 'inloop'):
        snr_traces[algo] = solve_deblur(config, original, degraded, blur, algo=algo).trace.column('snr')

    # Then
    for algo in ('direct', 'inloop'):
        assert np.max(np.abs(snr_traces[algo] - snr_traces['ilr'])) <= 1e-6


def test_sweep_over_q(tmpdir):
    config = _small_config(qs=(0.5, 1.0), trace=os.path.join(tmpdir, 's.csv'),
                           report=os.path.join(tmpdir, 'sweep.csv'))

    sweep = sweep_q(config)

    assert list(sweep.columns) == ['q', 'iter', 'snr']
    assert sorted(set(sweep['q'])) == [0.5, 1.0]
    assert len(sweep) == 2 * 15
    assert os.path.exists(os.path.join(tmpdir, 's_q0.5.csv'))
    assert os.path.exists(os.path.join(tmpdir, 's_q1.csv'))
    assert pd.read_csv(config.report).shape == sweep.shape


def test_suffixed_path():
    assert suffixed_path('out/trace.csv', 'seed3') == 'out/trace_seed3.csv'
    assert suffixed_path('trace', 'ilr') == 'trace_ilr'
    assert suffixed_path(None, 'ilr') is None


@pytest.mark.parametrize("kwargs", [
    dict(input='a.pgm', phantom='32x32'),
    dict(q=0.0),
    dict(q=1.5),
    dict(epsilon=-1.0),
    dict(sigma_reg=-1.0),
    dict(tikhonov_start=-1e-3),
    dict(noise_std=-0.1),
    dict(kernel_size=4),
    dict(kernel_width=0.0),
    dict(algo='fista'),
    dict(epsilon=0.0, q=0.5),
    dict(repeats=0),
    dict(qs='0.5,abc'),
    dict(qs=(0.5, 2.0)),
    dict(phantom='32by32'),
])
def test_experiment_config_rejects_conflicts(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_experiment_config_allows_zero_epsilon_for_direct_admm():
    config = ExperimentConfig(epsilon=0.0, q=0.5, algo='direct')

    assert config.epsilon == 0.0


def test_experiment_config_defaults():
    config = ExperimentConfig()

    assert config.phantom_size() == (64, 64)
    assert config.qs == DEFAULT_QS
    assert config.solver.max_iter == 200
    assert config.solver.alpha_max == 1e3
    assert config.solver.inner_iters == 10
    assert config.seed == 0


@pytest.mark.parametrize("qs,expected", [
    ("0.2, 0.4,0.6", (0.2, 0.4, 0.6)),
    (0.5, (0.5,)),
    ((1, 0.5), (1.0, 0.5)),
])
def test_experiment_config_accepts_several_qs_forms(qs, expected):
    assert ExperimentConfig(qs=qs).qs == expected


def test_parse_qs_ignores_empty_items():
    assert parse_qs("0.3,,0.7,") == (0.3, 0.7)


def test_experiment_config_from_config_text():
    config = parse_config_text("\n".join([
        "phantom = 32x16",
        "q = 0.7",
        "epsilon = 1e-5",
        "noise_std = 0.02",
        "seed = 4",
        "max_iter = 50",
        "inner_iters = 3",
        "qs = 0.5,1.0",
        "tikhonov_start = 0",
    ]))

    experiment = ExperimentConfig.from_config(config, algo='inloop')

    assert experiment.phantom_size() == (32, 16)
    assert experiment.q == 0.7
    assert experiment.epsilon == 1e-5
    assert experiment.noise_std == 0.02
    assert experiment.seed == 4
    assert experiment.algo == 'inloop'
    assert experiment.qs == (0.5, 1.0)
    assert experiment.tikhonov_start == 0
    assert experiment.solver.max_iter == 50
    assert experiment.solver.inner_iters == 3
    assert experiment.solver.x_residual_every == 10
    assert experiment.to_flat_dict()['inner_iters'] == 3


def test_experiment_config_keeps_an_explicit_x_residual_period():
    config = parse_config_text("x_residual_every = 1")

    assert ExperimentConfig.from_config(config).solver.x_residual_every == 1
