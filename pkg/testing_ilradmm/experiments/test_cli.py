import os

import pandas as pd
import pytest

from ilradmm.diagnostics import FAIL, PASS, DiagnosticReport
from ilradmm.experiments import cli
from ilradmm.experiments.cli import (EXIT_FAILED, EXIT_OK, EXIT_USAGE,
                                     build_parser, config_from_args, main)
from ilradmm.penalties import PenaltyDomainError


def _write(tmpdir, name, text):
    path = os.path.join(tmpdir, name)
    with open(path, 'w') as f:
        f.write(text)
    return path


def test_solve_from_config_file(tmpdir, capsys):
    config = _write(tmpdir, 'solve.cfg', "m = 6\nn = 8\nseed = 2\nmax_iter = 40\n")
    trace = os.path.join(tmpdir, 'trace.csv')

    code = main(['solve', '--config', config, '--trace', trace])

    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "algorithm: ilr" in out
    assert "descent: " in out
    assert len(pd.read_csv(trace)) <= 40


def test_flags_override_the_config_file(tmpdir):
    config = _write(tmpdir, 'solve.cfg', "m = 4\nn = 4\nmax_iter = 40\ntol = 0\nstep_tol = 0\n")
    trace = os.path.join(tmpdir, 'trace.csv')

    code = main(['solve', '--config', config, '--max-iter', '3', '--algo', 'inloop', '--inner-iters', '2',
                 '--trace', trace])

    assert code == EXIT_OK
    assert len(pd.read_csv(trace)) == 3


def test_config_from_args_routes_flags():
    args = build_parser().parse_args(['deblur', '--phantom', '32x32', '--alpha-max', '50', '--tol', '1e-4',
                                      '--q', '0.3', '--inner-iters', '4'])

    config = config_from_args(args)

    assert config['experiment__phantom'] == '32x32'
    assert config['solver__alpha_max'] == 50.0
    assert config['solver__primal_tol'] == 1e-4
    assert config['problem__q'] == 0.3
    assert config['baseline__inner_iters'] == 4
    assert 'experiment__input' not in config


def test_deblur_writes_image_and_trace(tmpdir, capsys):
    out, trace = os.path.join(tmpdir, 'out.pgm'), os.path.join(tmpdir, 'trace.csv')

    code = main(['deblur', '--phantom', '20x16', '--max-iter', '5', '--out', out, '--trace', trace])

    assert code == EXIT_OK
    assert os.path.exists(out)
    assert len(pd.read_csv(trace)) == 5
    assert "seed 0: SNR degraded" in capsys.readouterr().out


def test_deblur_repeats_print_the_mean(tmpdir, capsys):
    trace = os.path.join(tmpdir, 'trace.csv')

    code = main(['deblur', '--phantom', '16x16', '--max-iter', '3', '--repeats', '2', '--seed', '4',
                 '--trace', trace])

    assert code == EXIT_OK
    assert "mean restored SNR over 2 repeats" in capsys.readouterr().out
    assert os.path.exists(os.path.join(tmpdir, 'trace_seed4.csv'))
    assert os.path.exists(os.path.join(tmpdir, 'trace_seed5.csv'))
    assert os.path.exists(os.path.join(tmpdir, 'trace_snr_mean.csv'))


def test_compare_writes_the_report(tmpdir):
    report = os.path.join(tmpdir, 'report.csv')

    code = main(['compare', '--phantom', '16x16', '--max-iter', '3', '--report', report])

    assert code == EXIT_OK
    assert list(pd.read_csv(report)['algorithm']) == ['ilr', 'direct', 'inloop']


def test_sweep_prints_the_last_snr_per_q(tmpdir, capsys):
    report = os.path.join(tmpdir, 'sweep.csv')

    code = main(['sweep', '--phantom', '16x16', '--max-iter', '4', '--qs', '0.5,1', '--report', report])

    assert code == EXIT_OK
    sweep = pd.read_csv(report)
    assert sorted(set(sweep['q'])) == [0.5, 1.0]
    assert "snr" in capsys.readouterr().out


@pytest.mark.parametrize("text", ["max_iter 10\n", "colour = red\n", "q = 2\nphantom = 16x16\n"])
def test_bad_config_files_are_usage_errors(tmpdir, text):
    config = _write(tmpdir, 'bad.cfg', text)

    assert main(['deblur', '--config', config]) == EXIT_USAGE


def test_missing_input_image_is_a_usage_error(tmpdir):
    assert main(['deblur', '--input', os.path.join(tmpdir, 'missing.pgm')]) == EXIT_USAGE


def test_input_and_phantom_are_mutually_exclusive():
    with pytest.raises(SystemExit):
        main(['deblur', '--input', 'a.pgm', '--phantom', '16x16'])


@pytest.mark.parametrize("reports,expected_code,expected_line", [
    ([DiagnosticReport('a', PASS)], EXIT_OK, "verify: pass"),
    ([DiagnosticReport('a', PASS), DiagnosticReport('b', FAIL)], EXIT_FAILED, "verify: fail"),
])
def test_verify_exit_code(monkeypatch, capsys, reports, expected_code, expected_line):
    calls = []

    def fake_run_verify(quick, seed, n_jobs):
        calls.append((quick, seed, n_jobs))
        return reports

    monkeypatch.setattr(cli, 'run_verify', fake_run_verify)

    code = main(['verify', '--quick', '--seed', '3'])

    assert code == expected_code
    assert calls == [(True, 3, 1)]
    assert capsys.readouterr().out.strip().splitlines()[-1] == expected_line


@pytest.mark.parametrize("argv", [
    ['solve', '--alpha0', '-1'],
    ['solve', '--inner-iters', '0'],
    ['solve', '--config', None],
])
def test_invalid_parameters_are_usage_errors(tmpdir, argv):
    argv = [a if a is not None else _write(tmpdir, 'bad.cfg', "m = 9\nn = 4\n") for a in argv]

    assert main(argv) == EXIT_USAGE


def test_malformed_input_image_is_a_usage_error(tmpdir):
    image = _write(tmpdir, 'bad.pgm', "P7\n4 4\n255\n")

    assert main(['deblur', '--input', image]) == EXIT_USAGE


@pytest.mark.parametrize("error", [ValueError("boom"), PenaltyDomainError("boom")])
def test_errors_raised_while_solving_are_not_usage_errors(monkeypatch, error):
    def failing_run(config):
        raise error

    monkeypatch.setattr(cli, 'run_deblur_repeats', failing_run)

    with pytest.raises(type(error)):
        main(['deblur', '--phantom', '16x16'])
