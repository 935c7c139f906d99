import pytest

from ilradmm.diagnostics import FAIL, PASS, UNCHECKED, DiagnosticReport
from ilradmm.experiments.verify import (all_passed, check_adjoints,
                                        check_convex_collapse,
                                        check_dense_run,
                                        check_prox_composite,
                                        check_prox_weighted_inner,
                                        check_spectra, reports_to_dataframe,
                                        run_verify, shipped_operators)


def test_prox_checks_pass_on_a_sample():
    assert check_prox_weighted_inner(n_samples=40, seed=1).passed
    assert check_prox_composite(n_samples=40, seed=1).passed


def test_operator_checks_pass():
    assert len(shipped_operators()) == 5
    assert check_adjoints(n_pairs=10).passed
    assert check_spectra().passed


def test_convex_collapse_check_passes():
    assert check_convex_collapse(n_iter=10).passed


@pytest.mark.timeout(120)
def test_dense_run_checks_pass():
    reports = check_dense_run()

    assert [r.name for r in reports] == [
        'parameters', 'descent', 'dual_bound', 'criticality', 'relative_error', 'x_residual']
    for report in reports:
        assert report.passed, report.to_text()


def test_unchecked_reports_do_not_fail_the_suite():
    assert all_passed([DiagnosticReport('a', PASS), DiagnosticReport('b', UNCHECKED)])
    assert not all_passed([DiagnosticReport('a', PASS), DiagnosticReport('b', FAIL)])
    assert all_passed([])


def test_reports_to_dataframe():
    df = reports_to_dataframe([DiagnosticReport('a', PASS), DiagnosticReport('b', FAIL)])

    assert list(df.columns) == ['check', 'status', 'violations']
    assert list(df['status']) == [PASS, FAIL]


@pytest.mark.timeout(300)
def test_quick_verify_passes():
    reports = run_verify(quick=True, n_jobs=2)

    assert all_passed(reports), "\n\n".join(r.to_text() for r in reports if r.failed)
    assert {r.name for r in reports} >= {'prox_weighted_inner', 'prox_composite', 'adjoint', 'spectra',
                                         'descent', 'dual_bound', 'convex_collapse', 'deblur'}
