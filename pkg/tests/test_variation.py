"""
Tests for Jacobi frames, conjugate points, the index form and cut points
"""

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from scipy.integrate import dblquad, solve_ivp

from aubry.dynamics import LagrangianSpec, PhaseState, action, integrate_flow
from aubry.exceptions import ArgumentError, ConfigurationError
from aubry.fields import ConformalMetric, FlatMetric, build_field, build_form, gauss_curvature_conformal
from aubry.geometry import displacement
from aubry.variation import (
    CUT_CONJUGATE,
    CUT_MULTIPLE_MINIMIZER,
    NOT_CUT,
    UNDETERMINED,
    PiecewiseField,
    SyntheticJacobiModel,
    VariationFamily,
    conjugate_points,
    flow_derivative_check,
    holonomy_angle,
    index_form,
    index_form_frame,
    is_cut_point,
    local_smoothness_check,
    orthonormal_basis,
    parallel_transport,
    propagate_jacobi_frame,
    propagate_synthetic_frame,
    reverse_conjugacy_check,
    scan_conjugate_points,
    second_variation_check,
)
from aubry.weakkam import Grid, GridActionOracle, build_kernel

E1 = np.array([1.0, 0.0])


def conformal_spec():
    metric = ConformalMetric(2, build_field({"name": "cosine", "params": {"amplitude": 0.1}}, 2))
    potential = build_field({"name": "cosine", "params": {"amplitude": 0.05, "axis": 1}}, 2)
    form = build_form({"constants": [0.2, 0.0]}, 2)
    return LagrangianSpec.build(metric, potential, form)


def mechanical_spec(epsilon):
    return LagrangianSpec.build(FlatMetric(2), build_field({"name": "cosine", "params": {"amplitude": epsilon}}, 2))


def hill_zeros(epsilon, x0, v0, horizon):
    """Zeros s > 0 of J with J(0) = 0, J'(0) = 1 along the x₁ motion under f = ε cos 2πx₁."""

    def rhs(t, y):
        x, v, J, Jdot = y
        angle = 2.0 * np.pi * x
        return [v, 2.0 * np.pi * epsilon * np.sin(angle), Jdot, 4.0 * np.pi**2 * epsilon * np.cos(angle) * J]

    def crossing(t, y):
        return y[2]

    crossing.direction = -1.0
    solution = solve_ivp(rhs, (0.0, horizon), [x0, v0, 0.0, 1.0], events=crossing, rtol=1e-10, atol=1e-12)
    return [float(t) for t in solution.t_events[0] if t > 1e-6]


class FlatActionOracle:
    """Exact A_τ(x, y) = |x − y|²/(2τ) on the flat torus."""

    def action(self, x, y, tau):
        return float(np.sum(displacement(x, y) ** 2) / (2.0 * tau)), 0.0


class BeatenAfterOracle:
    """The extremal's own action up to ``t`` and 0.1 less beyond it."""

    def __init__(self, spec, v, t):
        self.spec = spec
        self.v = v
        self.t = t

    def action(self, x, y, tau):
        own = action(self.spec, integrate_flow(self.spec, PhaseState(x, self.v), tau, 1e-2))
        return (own if tau <= self.t else own - 0.1), 0.0


class FrameTest(SimpleTestCase):
    """Test cases for parallel and Jacobi frames"""

    def test_orthonormal_basis(self):
        metric = conformal_spec().metric
        x = np.array([0.3, 0.6])
        E = orthonormal_basis(metric, x)
        assert_allclose(E @ metric.tensor(x) @ E.T, np.eye(2), atol=1e-12)

    def test_parallel_transport_keeps_frame_orthonormal(self):
        spec = conformal_spec()
        traj = integrate_flow(spec, PhaseState([0.1, 0.3], [0.4, 0.2]), 2.0, 1e-2)
        frame = parallel_transport(spec.metric, traj)
        assert_allclose(frame.gram()[-1], np.eye(2), atol=1e-8)

    def test_flat_holonomy_vanishes(self):
        corners = [[0.0, 0.0], [0.3, 0.0], [0.3, 0.3], [0.0, 0.3]]
        self.assertAlmostEqual(holonomy_angle(FlatMetric(2), corners), 0.0, places=12)

    def test_holonomy_is_the_enclosed_curvature(self):
        """Test that a counterclockwise loop turns the frame by ∫K dA over the square it bounds"""
        metric = conformal_spec().metric
        factor = metric.conformal_factor

        def density(y, x):
            point = np.array([x, y])
            return float(gauss_curvature_conformal(factor, point) * np.exp(2.0 * factor.value(point)))

        enclosed, _ = dblquad(density, 0.1, 0.3, 0.1, 0.3, epsabs=1e-12)
        self.assertGreater(abs(enclosed), 1e-2)
        corners = [[0.1, 0.1], [0.3, 0.1], [0.3, 0.3], [0.1, 0.3]]
        self.assertAlmostEqual(holonomy_angle(metric, corners), enclosed, places=6)
        self.assertAlmostEqual(holonomy_angle(metric, corners[::-1]), -enclosed, places=6)

    def test_holonomy_needs_a_surface(self):
        with self.assertRaises(ConfigurationError):
            holonomy_angle(FlatMetric(3), [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.1, 0.1, 0.0]])

    def test_flat_jacobi_frame_grows_linearly(self):
        """Test A(s) = s·I along a flat geodesic"""
        spec = LagrangianSpec.build(FlatMetric(2))
        traj = integrate_flow(spec, PhaseState([0.0, 0.0], [0.3, 0.4]), 3.0, 1e-2)
        frame = propagate_jacobi_frame(spec, traj)
        assert_allclose(frame.A[-1], 3.0 * np.eye(2), atol=1e-10)
        assert_allclose(frame.det[-1], 9.0, atol=1e-9)

    def test_jacobi_fields_match_flow_derivative(self):
        """Test J_j(s) against central differences of the flow in v"""
        spec = conformal_spec()
        traj = integrate_flow(spec, PhaseState([0.1, 0.3], [0.4, 0.1]), 2.0, 1e-2)
        frame = propagate_jacobi_frame(spec, traj)
        self.assertLess(flow_derivative_check(spec, traj, frame, [50, 100, 200]), 1e-4)

    def test_synthetic_frame_csv(self):
        frame = propagate_synthetic_frame(SyntheticJacobiModel.constant_curvature(2, 1.0), 1.0, dt=1e-2)
        self.assertEqual(frame.csv_header()[:3], ["s", "detA", "A11"])
        self.assertEqual(frame.csv_rows().shape, (len(frame.s), 2 + 8))


class ConjugatePointTest(SimpleTestCase):
    """Test cases for the conjugate-point scan"""

    def test_unit_curvature_first_conjugate_point_is_pi(self):
        """Test the tangential zero of det A = sin²s at s = π"""
        frame = propagate_synthetic_frame(SyntheticJacobiModel.constant_curvature(2, 1.0), 4.0)
        points = conjugate_points(frame)
        self.assertTrue(points)
        self.assertAlmostEqual(points[0], np.pi, delta=1e-4)

    def test_sign_change_is_found_by_brentq(self):
        """Test a single-direction zero where det A changes sign"""
        model = SyntheticJacobiModel(2, lambda s: np.diag([4.0, 0.0]))
        scan = scan_conjugate_points(propagate_synthetic_frame(model, 2.0))
        self.assertEqual(len(scan.crossings), 1)
        self.assertAlmostEqual(scan.crossings[0], np.pi / 2, delta=1e-6)

    def test_flat_extremal_is_conjugate_free(self):
        spec = LagrangianSpec.build(FlatMetric(2))
        traj = integrate_flow(spec, PhaseState([0.0, 0.0], [0.3, 0.3]), 100.0, 1e-2)
        self.assertEqual(conjugate_points(propagate_jacobi_frame(spec, traj)), [])

    def test_mechanical_conjugate_time_solves_hill_equation(self):
        """Test the first conjugate time in the well of f = ε cos 2πx₁ against J'' + f''(x₁(t))J = 0"""
        epsilon = 0.05
        spec = mechanical_spec(epsilon)
        traj = integrate_flow(spec, PhaseState([0.45, 0.2], [0.1, 0.0]), 4.0, 1e-2)
        points = conjugate_points(propagate_jacobi_frame(spec, traj))
        hill = hill_zeros(epsilon, 0.45, 0.1, 4.0)
        self.assertEqual(len(hill), 1)
        self.assertTrue(points)
        self.assertAlmostEqual(points[0], hill[0], delta=1e-3)
        self.assertAlmostEqual(hill[0], 1.0 / (2.0 * np.sqrt(epsilon)), delta=0.15)

    def test_no_conjugate_time_near_the_unstable_equilibrium(self):
        """Test that the hyperbolic Hill equation at the maximum of f has no zero, and neither has det A"""
        epsilon = 0.05
        spec = mechanical_spec(epsilon)
        traj = integrate_flow(spec, PhaseState([0.02, 0.0], [0.0, 0.1]), 1.0, 1e-2)
        self.assertEqual(hill_zeros(epsilon, 0.02, 0.0, 1.0), [])
        self.assertEqual(conjugate_points(propagate_jacobi_frame(spec, traj)), [])

    def test_reverse_conjugacy_synthetic(self):
        report = reverse_conjugacy_check(SyntheticJacobiModel.constant_curvature(2, 1.0), 4.0)
        self.assertTrue(report["passed"])
        self.assertAlmostEqual(report["forward"][0], np.pi, delta=1e-4)


class IndexFormTest(SimpleTestCase):
    """Test cases for the index form and second variation"""

    def test_flat_sine_field(self):
        """Test I(η, η) = π²/2 for η = sin(πt)e₁ on [0, 1]"""
        spec = LagrangianSpec.build(FlatMetric(2))
        traj = integrate_flow(spec, PhaseState([0.0, 0.0], [0.3, 0.0]), 1.0, 1e-2)
        eta = PiecewiseField.smooth(
            0.0, 1.0, lambda t: (np.sin(np.pi * t)[:, None] * E1, (np.pi * np.cos(np.pi * t))[:, None] * E1)
        )
        self.assertAlmostEqual(index_form(spec, traj, eta, eta).value, np.pi**2 / 2, delta=1e-6)

    def test_jacobi_field_has_zero_index(self):
        """Test I(J, J) = 0 for J = sin(s)e₁ under unit curvature on [0, π]"""
        frame = propagate_synthetic_frame(SyntheticJacobiModel.constant_curvature(2, 1.0), np.pi)
        field = PiecewiseField.smooth(
            0.0, frame.s[-1], lambda t: (np.sin(t)[:, None] * E1, np.cos(t)[:, None] * E1)
        )
        self.assertAlmostEqual(index_form_frame(frame, field, field).value, 0.0, delta=1e-5)

    def test_broken_field_is_accepted(self):
        """Test a continuous tent field with a kink at t = ½"""
        spec = LagrangianSpec.build(FlatMetric(2))
        traj = integrate_flow(spec, PhaseState([0.0, 0.0], [0.3, 0.0]), 1.0, 1e-2)
        tent = PiecewiseField(
            [0.0, 0.5, 1.0],
            [
                lambda t: (t[:, None] * E1, np.ones((len(t), 1)) * E1),
                lambda t: ((1.0 - t)[:, None] * E1, -np.ones((len(t), 1)) * E1),
            ],
        )
        self.assertAlmostEqual(index_form(spec, traj, tent, tent).value, 1.0, delta=1e-10)

    def test_piecewise_field_needs_increasing_breakpoints(self):
        with self.assertRaises(ArgumentError):
            PiecewiseField([0.0, 0.0], [lambda t: (t, t)])

    def test_second_variation_matches_index_form(self):
        spec = conformal_spec()
        traj = integrate_flow(spec, PhaseState([0.1, 0.3], [0.4, 0.1]), 1.0, 1e-2)
        bump = PiecewiseField.smooth(
            0.0,
            1.0,
            lambda t: (0.1 * np.sin(np.pi * t)[:, None] * E1, 0.1 * np.pi * np.cos(np.pi * t)[:, None] * E1),
        )
        report = second_variation_check(spec, traj, VariationFamily(bump))
        self.assertTrue(report["passed"], report)


class CutPointTest(SimpleTestCase):
    """Test cases for cut-point classification"""

    def setUp(self):
        self.spec = LagrangianSpec.build(FlatMetric(2))
        self.oracle = FlatActionOracle()

    def test_short_extremal_is_not_cut(self):
        verdict = is_cut_point(self.spec, [0.0, 0.0], [0.6, 0.0], 0.5, self.oracle)
        self.assertEqual(verdict.classification, NOT_CUT)

    def test_antipodal_point_has_two_minimizers(self):
        """Test the point half a period away is reached by two minimizers"""
        verdict = is_cut_point(self.spec, [0.0, 0.0], [0.6, 0.0], 0.5 / 0.6, self.oracle)
        self.assertEqual(verdict.classification, CUT_MULTIPLE_MINIMIZER)

    def test_past_the_cut_locus_is_undetermined(self):
        verdict = is_cut_point(self.spec, [0.0, 0.0], [0.6, 0.0], 1.2, self.oracle)
        self.assertEqual(verdict.classification, UNDETERMINED)
        self.assertGreater(verdict.gap, 0.0)

    def test_synthetic_unit_curvature_is_cut_at_pi(self):
        model = SyntheticJacobiModel.constant_curvature(2, 1.0)
        self.assertEqual(is_cut_point(model, None, None, np.pi).classification, CUT_CONJUGATE)
        self.assertEqual(is_cut_point(model, None, None, 2.0).classification, UNDETERMINED)

    def test_conjugate_endpoint_of_a_beaten_extremal_is_cut_conjugate(self):
        """Test an extremal oscillating in the well of f, beaten just after its first conjugate time"""
        spec = mechanical_spec(0.05)
        x, v = np.array([0.5, 0.2]), np.array([0.05, 0.0])
        t = conjugate_points(propagate_jacobi_frame(spec, integrate_flow(spec, PhaseState(x, v), 4.0, 1e-2)))[0]
        verdict = is_cut_point(spec, x, v, t, BeatenAfterOracle(spec, v, t))
        self.assertEqual(verdict.classification, CUT_CONJUGATE)
        self.assertAlmostEqual(verdict.extremal_action, verdict.oracle_action, places=12)
        self.assertAlmostEqual(verdict.gap, 0.1, places=12)

    def test_grid_oracle_keeps_a_free_extremal_minimal(self):
        """Test the DP action as the oracle: a lattice-exact free extremal is not cut"""
        kernel = build_kernel(self.spec, Grid(2, 40), 0.25, 3)
        oracle = GridActionOracle(kernel)
        verdict = is_cut_point(self.spec, [0.0, 0.0], [0.1, 0.1], 1.0, oracle, delta=0.25)
        self.assertEqual(verdict.classification, NOT_CUT)
        self.assertAlmostEqual(verdict.oracle_action, 0.01, places=12)
        self.assertAlmostEqual(verdict.gap, 0.0, delta=1e-9)

    def test_grid_oracle_off_the_lattice_is_undetermined(self):
        oracle = GridActionOracle(build_kernel(self.spec, Grid(2, 40), 0.25, 3))
        verdict = is_cut_point(self.spec, [0.01, 0.0], [0.1, 0.1], 1.0, oracle, delta=0.25)
        self.assertEqual(verdict.classification, UNDETERMINED)
        self.assertIn("oracle resolution", verdict.diagnostics[0])

    def test_smooth_action_near_regular_endpoint(self):
        report = local_smoothness_check(self.spec, [0.0, 0.0], [0.3, 0.2], 1.0)
        self.assertTrue(report["passed"], report)
        assert_allclose(report["hessian"], np.eye(2), atol=1e-3)
