"""
Tests for the finite-difference gradient checker
"""

import numpy as np
import pytest

from iterdeconv.gradcheck import GradCheckReport, central_difference, relative_error, run_gradcheck


def test_relative_error_basics():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)


def test_central_difference_of_a_quadratic(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(central_difference(lambda v: float(np.sum(v ** 2)), x), 2 * x, atol=1e-8)


def test_report_pass_fail():
    report = GradCheckReport(tolerance=1e-3)
    report.record("a", 1e-6)
    assert report.passed
    report.record("b", 1e-2)
    assert not report.passed
    assert report.max_error == 1e-2
    assert report.lines()[1].startswith("b\t")


def test_full_gradcheck_passes():
    report = run_gradcheck(6, 1)
    names = [name for name, _ in report.errors]
    assert "deconv.gamma" in names
    assert "deconv.adjoint" in names
    assert any(name.startswith("fcnn.") for name in names)
    assert any(name.startswith("pipeline.intensity.") for name in names)
    assert report.passed, report.lines()
