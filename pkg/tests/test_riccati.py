"""
Tests for the scalar Riccati comparison and trace quantities along frames
"""

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from aubry.dynamics import LagrangianSpec, PhaseState, integrate_flow
from aubry.exceptions import DomainError
from aubry.fields import ConformalMetric, FlatMetric, build_field
from aubry.riccati import (
    comparison_function,
    matrix_riccati_residual,
    riccati_bound,
    theta_along,
    trace_inequality_gap,
    verify_comparison,
)
from aubry.variation import SyntheticJacobiModel, propagate_jacobi_frame, propagate_synthetic_frame


class ComparisonFunctionTest(SimpleTestCase):
    """Test cases for S_{n,k} and its logarithmic derivative"""

    def test_flat_case(self):
        s = np.array([0.5, 1.0, 2.0])
        assert_allclose(comparison_function(2, 0.0, s), s)
        assert_allclose(riccati_bound(2, 0.0, s), 2.0 / s)

    def test_negative_curvature_tends_to_sqrt_minus_nk(self):
        """Test n·Ṡ/S → √(−nk) as s grows"""
        self.assertAlmostEqual(float(riccati_bound(2, -2.0, 40.0)), 2.0, places=10)

    def test_positive_curvature(self):
        n, k, s = 2, 1.0, 1.0
        a = np.sqrt(k / n)
        self.assertAlmostEqual(float(comparison_function(n, k, s)), np.sin(a * s) / a, places=12)
        self.assertAlmostEqual(float(riccati_bound(n, k, s)), np.sqrt(n * k) / np.tan(a * s), places=12)

    def test_domain_errors(self):
        with self.assertRaises(DomainError):
            riccati_bound(2, 0.0, 0.0)
        with self.assertRaises(DomainError):
            comparison_function(2, 1.0, np.pi * np.sqrt(2.0))


class ComparisonLemmaTest(SimpleTestCase):
    """Test cases for the integrated comparison"""

    def test_equality_without_slack(self):
        """Test α = n/s exactly when k = 0 and there is no slack"""
        report = verify_comparison(2, 0.0, samples=400)
        self.assertTrue(report.passed)
        self.assertLess(report.equality_error, 1e-8)

    def test_slack_keeps_alpha_below_the_bound(self):
        for k in (-2.0, -1.0, 0.0):
            with self.subTest(k=k):
                report = verify_comparison(3, k, slack=0.5, samples=400)
                self.assertTrue(report.passed)
                self.assertLess(report.max_excess, 1e-6)

    def test_positive_curvature_stops_before_the_zero(self):
        report = verify_comparison(2, 1.0, horizon=0.99 * np.pi * np.sqrt(2.0), samples=400)
        self.assertTrue(report.passed)

    def test_large_slack_blows_down(self):
        report = verify_comparison(2, 0.0, alpha0=0.0, s0=1.0, horizon=50.0, slack=5.0, samples=200)
        self.assertIsNotNone(report.blow_down)
        self.assertFalse(report.passed)


class TraceAlongFrameTest(SimpleTestCase):
    """Test cases for Θ = tr(A⁻¹Ȧ) along Jacobi frames"""

    def test_flat_theta_is_n_over_s(self):
        spec = LagrangianSpec.build(FlatMetric(2))
        traj = integrate_flow(spec, PhaseState([0.0, 0.0], [0.3, 0.4]), 2.0, 1e-2)
        trace = theta_along(spec, propagate_jacobi_frame(spec, traj), k=0.0)
        assert_allclose(trace.theta, 2.0 / trace.s, rtol=1e-8)
        assert_allclose(trace.theta, trace.bound, rtol=1e-8)
        self.assertIsNone(trace.truncated_at)

    def test_trace_is_truncated_at_a_conjugate_point(self):
        frame = propagate_synthetic_frame(SyntheticJacobiModel.constant_curvature(2, 1.0), 4.0, dt=1e-2)
        trace = theta_along(None, frame)
        self.assertIsNotNone(trace.truncated_at)
        self.assertLess(trace.truncated_at, np.pi + 0.02)
        self.assertTrue(trace.diagnostics)

    def test_scalar_riccati_residual_vanishes_for_isotropic_frames(self):
        """Test Θ̇ + Θ²/n + Ric = 0 when Λ is a multiple of the identity"""
        frame = propagate_synthetic_frame(SyntheticJacobiModel.constant_curvature(2, 0.5), 2.0, dt=1e-3)
        trace = theta_along(None, frame)
        usable = (trace.s >= 0.25) & (trace.s <= trace.s[-3])
        self.assertLess(float(np.max(np.abs(trace.residual[usable]))), 1e-6)

    def test_matrix_riccati_residual(self):
        metric = ConformalMetric(2, build_field({"name": "cosine", "params": {"amplitude": 0.1}}, 2))
        spec = LagrangianSpec.build(metric, build_field({"name": "sine", "params": {"amplitude": 0.05, "axis": 1}}, 2))
        traj = integrate_flow(spec, PhaseState([0.1, 0.3], [0.4, 0.1]), 1.0, 1e-3)
        frame = propagate_jacobi_frame(spec, traj)
        self.assertLess(matrix_riccati_residual(frame), 1e-6)
        self.assertGreaterEqual(trace_inequality_gap(frame), -1e-12)
