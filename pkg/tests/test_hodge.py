"""
Tests for harmonicity, the grid Hodge decomposition and the Bochner check
"""

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from aubry.fields import ConformalMetric, FlatMetric, build_field, build_form
from aubry.hodge import bochner_check, harmonic_representative, is_harmonic, sample_form, stokes_sum
from aubry.weakkam import Grid


def conformal_metric():
    return ConformalMetric(2, build_field({"name": "cosine", "params": {"amplitude": 0.1}}, 2))


class HarmonicityTest(SimpleTestCase):
    """Test cases for the harmonicity test div ω♯ = 0"""

    def test_constant_form_on_flat_torus_is_harmonic(self):
        report = is_harmonic(FlatMetric(2), build_form({"constants": [0.3, 0.4]}, 2))
        self.assertTrue(report)
        self.assertLess(report.sup_divergence, 1e-12)

    def test_exact_part_breaks_harmonicity(self):
        form = build_form({"constants": [0.3, 0.4], "phi": {"name": "cosine", "params": {"amplitude": 0.1}}}, 2)
        report = is_harmonic(FlatMetric(2), form)
        self.assertFalse(report)
        self.assertGreater(report.sup_divergence, 1.0)

    def test_constant_form_on_conformal_2_torus_is_harmonic(self):
        """Test that e^{2λ}δ leaves constant forms coclosed in two dimensions"""
        self.assertTrue(is_harmonic(conformal_metric(), build_form({"constants": [0.3, 0.4]}, 2)))


class HodgeDecompositionTest(SimpleTestCase):
    """Test cases for the harmonic representative"""

    def test_flat_exact_form_loses_its_exact_part(self):
        """Test ψ = φ − mean φ and harmonic part = the constants"""
        form = build_form({"constants": [0.3, 0.4], "phi": {"name": "cosine", "params": {"amplitude": 0.1}}}, 2)
        hodge = harmonic_representative(FlatMetric(2), form, N=32)
        self.assertTrue(hodge.converged)
        assert_allclose(hodge.cohomology_class, [0.3, 0.4], atol=1e-10)
        assert_allclose(hodge.harmonic_part, np.broadcast_to([0.3, 0.4], hodge.harmonic_part.shape), atol=1e-8)
        points = hodge.grid.points().reshape(hodge.psi.shape + (2,))
        phi = 0.1 * np.cos(2.0 * np.pi * points[..., 0])
        assert_allclose(hodge.psi, phi - phi.mean(), atol=1e-8)
        self.assertLess(hodge.divergence_sup, 1e-6)

    def test_conformal_decomposition_keeps_the_class(self):
        form = build_form({"constants": [0.2, -0.1], "phi": {"name": "sine", "params": {"amplitude": 0.05}}}, 2)
        hodge = harmonic_representative(conformal_metric(), form, N=32)
        self.assertTrue(hodge.converged)
        assert_allclose(hodge.cohomology_class, [0.2, -0.1], atol=1e-8)
        self.assertLess(hodge.divergence_sup, 1e-6)
        self.assertEqual(hodge.csv_header(), ["i1", "i2", "omega_1", "omega_2", "harm_1", "harm_2", "psi"])

    def test_iteration_cap_reports_non_convergence(self):
        form = build_form({"constants": [0.0, 0.0], "phi": {"name": "sine", "params": {"amplitude": 0.2}}}, 2)
        with self.assertLogs("aubry.hodge", level="WARNING"):
            hodge = harmonic_representative(conformal_metric(), form, N=32, max_iter=1)
        self.assertFalse(hodge.converged)
        self.assertEqual(hodge.summary()["converged"], False)

    def test_sampled_form_integrates_to_zero_divergence_sum(self):
        metric = conformal_metric()
        grid = Grid(2, 24)
        omega = sample_form(build_form({"constants": [0.1, 0.2], "phi": {"name": "cosine"}}, 2), grid)
        self.assertLess(abs(stokes_sum(metric, grid, omega)), 1e-10)


class BochnerTest(SimpleTestCase):
    """Test cases for the Bochner rigidity check"""

    def test_flat_harmonic_form_has_constant_norm(self):
        report = bochner_check(FlatMetric(2), build_form({"constants": [0.3, 0.4]}, 2))
        self.assertTrue(report.passed)
        self.assertLess(report.spread, 1e-12)

    def test_non_harmonic_form_is_not_applicable(self):
        form = build_form({"constants": [0.3, 0.4], "phi": {"name": "cosine", "params": {"amplitude": 0.1}}}, 2)
        report = bochner_check(FlatMetric(2), form)
        self.assertEqual(report.status, "not-applicable")
        self.assertTrue(report.diagnostics)
