"""
Tests for the Peierls barrier, Aubry set, Mather quotient and support-function probes
"""

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from aubry.barrier import (
    LAPLACIAN_SOURCE,
    aubry_set,
    barrier_laplacian_estimate,
    barrier_riccati_crosscheck,
    coordinate_laplacian,
    energy_surface_state,
    horizon_steps,
    hypothesis_check_energy_surface,
    mather_quotient,
    mechanical_delta_oracle,
    peierls_barrier,
    quadratic_fit,
    shot_action_fit,
    subsample_nodes,
    support_function_probe,
)
from aubry.dynamics import LagrangianSpec, energy
from aubry.exceptions import CheckFailure, ConfigurationError
from aubry.fields import FlatMetric, build_field, build_form
from aubry.parallel import make_rng
from aubry.weakkam import Grid, build_kernel, estimate_critical_value

HORIZONS = (5.0, 10.0)


def kernel_for(potential=None, constants=(0.0, 0.0), radius=3):
    form = build_form({"constants": list(constants)}, 2)
    spec = LagrangianSpec.build(FlatMetric(2), build_field(potential, 2) if potential else None, form)
    return build_kernel(spec, Grid(2, 40), 0.25, radius)


def mechanical_kernel(amplitude=0.1):
    return kernel_for({"name": "cosine", "params": {"amplitude": amplitude}})


class BarrierTest(SimpleTestCase):
    """Test cases for barrier slices"""

    def test_horizon_must_be_a_multiple_of_dt(self):
        kernel = kernel_for()
        self.assertEqual(horizon_steps(kernel, 5.0), 20)
        with self.assertRaises(ConfigurationError):
            horizon_steps(kernel, 0.3)

    def test_barrier_dominates_the_weak_kam_solution(self):
        """Test u(y) − u(x) ≤ h(x, y) from a node on the maximum stripe"""
        for amplitude in (0.1, 0.05):
            with self.subTest(amplitude=amplitude):
                kernel = mechanical_kernel(amplitude)
                estimate, u = estimate_critical_value(kernel)
                barrier = peierls_barrier(kernel, estimate.c, 0, HORIZONS)
                self.assertAlmostEqual(barrier[0], 0.0, delta=1e-5)
                self.assertLessEqual(barrier.domination_gap(u), 1e-5)
                self.assertTrue(barrier.stable)

    def test_harmonic_barrier_returns_after_one_period(self):
        """Test h(x, x) = 0 when the drift (3, 4) closes up after 40 steps"""
        kernel = kernel_for(constants=(0.3, 0.4), radius=6)
        barrier = peierls_barrier(kernel, 0.125, 0, HORIZONS)
        self.assertAlmostEqual(barrier[0], 0.0, delta=1e-12)
        self.assertEqual(barrier.csv_header(), ["ix", "iy", "h"])


class AubrySetTest(SimpleTestCase):
    """Test cases for the projected Aubry set"""

    def test_subsample_nodes(self):
        nodes = subsample_nodes(Grid(2, 40), 4)
        self.assertEqual(len(nodes), 100)
        self.assertTrue(np.all(Grid(2, 40).multi_index(nodes) % 4 == 0))

    def test_mechanical_aubry_set_is_the_maximum_stripe(self):
        """Test that only nodes on x₁ = 0, where f attains its maximum, are static"""
        for amplitude in (0.1, 0.05):
            with self.subTest(amplitude=amplitude):
                kernel = mechanical_kernel(amplitude)
                estimate, _ = estimate_critical_value(kernel)
                aubry = aubry_set(kernel, estimate.c, horizons=HORIZONS, stride=4)
                self.assertEqual(len(aubry), 10)
                self.assertTrue(np.all(kernel.grid.multi_index(aubry.nodes)[:, 0] == 0))
                self.assertIn(0, aubry)

    def test_harmonic_aubry_set_is_everything(self):
        kernel = kernel_for(constants=(0.3, 0.4), radius=6)
        aubry = aubry_set(kernel, 0.125, horizons=HORIZONS, stride=8)
        self.assertEqual(len(aubry), len(aubry.candidates))

    def test_empty_aubry_set_fails(self):
        kernel = kernel_for(constants=(0.3, 0.4), radius=6)
        with self.assertRaises(CheckFailure):
            aubry_set(kernel, 0.125, tol_A=-1.0, horizons=HORIZONS, stride=20)


class MatherQuotientTest(SimpleTestCase):
    """Test cases for the Mather quotient"""

    def test_two_wells_give_two_components(self):
        kernel = kernel_for({"name": "two_well", "params": {"amplitude": 0.05}}, radius=5)
        estimate, _ = estimate_critical_value(kernel)
        aubry = aubry_set(kernel, estimate.c, horizons=HORIZONS, stride=2)
        x1 = kernel.grid.points(aubry.nodes)[:, 0]
        self.assertTrue(np.all(np.minimum(np.abs(x1 - 0.5), np.minimum(x1, 1.0 - x1)) <= 0.05 + 1e-12))

        report = mather_quotient(kernel, estimate.c, aubry, tol_Q=1e-2, horizons=HORIZONS)
        self.assertEqual(report.component_count, 2)
        self.assertEqual(report.component_count_double, 2)
        self.assertGreaterEqual(report.min_delta, -1e-9)
        self.assertLessEqual(report.triangle_violation, 1e-9)
        summary = report.summary(kernel.grid)
        self.assertEqual(len(summary["representatives"]), 2)

    def test_cross_well_delta_matches_the_mechanical_integral(self):
        """Test δ between the wells against 2·min ∫√(2(max f − f)) = 4√A/π for A = 0.05"""
        kernel = kernel_for({"name": "two_well", "params": {"amplitude": 0.05}}, radius=5)
        expected = 4.0 * np.sqrt(0.05) / np.pi
        oracle = mechanical_delta_oracle(kernel.spec, [0.0, 0.3], [0.5, 0.7])
        self.assertAlmostEqual(oracle, expected, places=8)

        estimate, _ = estimate_critical_value(kernel)
        aubry = aubry_set(kernel, estimate.c, horizons=HORIZONS, stride=2)
        report = mather_quotient(kernel, estimate.c, aubry, tol_Q=1e-2, horizons=HORIZONS)
        x, y, cross = report.closest_cross_pair()
        self.assertGreater(cross, report.tol_Q)
        reference = mechanical_delta_oracle(kernel.spec, kernel.grid.points(x), kernel.grid.points(y))
        assert_allclose(cross, reference, rtol=0.1)

    def test_delta_oracle_needs_a_one_axis_potential(self):
        self.assertIsNone(mechanical_delta_oracle(kernel_for(constants=(0.3, 0.4)).spec, [0.0, 0.0], [0.5, 0.0]))
        diagonal = {"name": "fourier", "params": {"terms": [{"amplitude": 0.1, "wavevector": [1, 1]}]}}
        self.assertIsNone(mechanical_delta_oracle(kernel_for(diagonal).spec, [0.0, 0.0], [0.5, 0.0]))

    def test_harmonic_quotient_is_a_single_point(self):
        kernel = kernel_for(constants=(0.3, 0.4), radius=6)
        aubry = aubry_set(kernel, 0.125, horizons=HORIZONS, stride=8)
        report = mather_quotient(kernel, 0.125, aubry, tol_Q=3e-2, horizons=HORIZONS)
        self.assertEqual(report.component_count, 1)
        self.assertLessEqual(report.max_self_delta, 1e-9)
        self.assertIsNone(report.closest_cross_pair())


class QuadraticFitTest(SimpleTestCase):
    """Test cases for the stencil quadratic fit"""

    def test_exact_quadratic_is_recovered(self):
        grid = Grid(2, 40)
        center = int(grid.flat_index([20, 20]))
        y = grid.points() - grid.points(center)
        values = 1.0 + 2.0 * y[:, 0] - y[:, 1] + 1.5 * y[:, 0] ** 2 + 0.5 * y[:, 0] * y[:, 1] + 2.0 * y[:, 1] ** 2
        fit = quadratic_fit(grid, values, center, 2)
        self.assertAlmostEqual(fit.value, 1.0, places=10)
        assert_allclose(fit.gradient, [2.0, -1.0], atol=1e-8)
        assert_allclose(fit.hessian, [[3.0, 0.5], [0.5, 4.0]], atol=1e-6)
        self.assertLess(fit.residual, 1e-10)
        self.assertAlmostEqual(coordinate_laplacian(FlatMetric(2), grid.points(center), fit), 7.0, places=5)


class SupportFunctionTest(SimpleTestCase):
    """Test cases for support functions touching u from above"""

    def setUp(self):
        self.kernel = mechanical_kernel()
        self.estimate, self.u = estimate_critical_value(self.kernel)
        self.x = int(self.kernel.grid.flat_index([10, 0]))

    def test_probe_touches_from_above(self):
        probe = support_function_probe(self.kernel, self.u, self.estimate.c, self.x, 1.0, m=3)
        self.assertTrue(probe.resolved, probe.diagnostics)
        self.assertLess(probe.touching_defect, 1e-6)
        self.assertLessEqual(probe.from_above_defect, 3e-6)
        self.assertEqual(len(probe.stencil), 49)

    def test_summary_names_the_gating_laplacian(self):
        """Test that the summary says the shot-extremal Laplacian gates, and keeps the grid fit beside it"""
        support = support_function_probe(self.kernel, self.u, self.estimate.c, self.x, 1.0, m=3)
        summary = support.summary()
        self.assertEqual(summary["laplacian_source"], LAPLACIAN_SOURCE)
        self.assertEqual(summary["laplacian_source"], "shot extremals")
        self.assertEqual(summary["laplacian_at_x"], support.laplacian_at_x)
        self.assertEqual(summary["grid_laplacian"], support.grid_laplacian)

    def test_laplacian_estimate_is_the_smallest_probe(self):
        probes = [support_function_probe(self.kernel, self.u, self.estimate.c, self.x, t) for t in (1.0, 2.0)]
        estimate = barrier_laplacian_estimate(self.kernel, self.u, self.estimate.c, self.x, (1.0, 2.0))
        self.assertEqual(estimate, min(p.laplacian_at_x for p in probes))

    def test_flat_harmonic_probe_sees_n_over_t(self):
        """Test Δφ_t = n/t along the straight calibrated lines of the flat harmonic case"""
        kernel = kernel_for(constants=(0.3, 0.4), radius=6)
        estimate, u = estimate_critical_value(kernel)
        probe = support_function_probe(kernel, u, estimate.c, 0, 2.0)
        self.assertAlmostEqual(probe.laplacian_at_x, 1.0, delta=0.1)
        self.assertTrue(np.isfinite(probe.grid_laplacian))
        self.assertAlmostEqual(barrier_laplacian_estimate(kernel, u, estimate.c, 0, (1.0, 2.0, 4.0, 8.0)), 0.25, delta=0.05)

    def test_shot_action_of_a_free_particle(self):
        """Test A_t(o, y) = |y − o|²/2t for L = ½|v|²"""
        spec = LagrangianSpec.build(FlatMetric(2))
        fit = shot_action_fit(spec, np.array([-0.3, 0.1]), np.array([0.2, 0.4]), 2.0, 0.025)
        assert_allclose(fit.hessian, 0.5 * np.eye(2), atol=1e-5)
        assert_allclose(fit.gradient, np.array([0.5, 0.3]) / 2.0, atol=1e-6)


class EnergySurfaceTest(SimpleTestCase):
    """Test cases for sampling the energy surface"""

    def setUp(self):
        self.spec = LagrangianSpec.build(FlatMetric(2), build_field({"name": "cosine", "params": {"amplitude": 0.1}}, 2))

    def test_state_lies_on_the_energy_surface(self):
        state = energy_surface_state(self.spec, 0.1, np.array([0.25, 0.4]), np.array([1.0, 1.0]))
        self.assertAlmostEqual(float(energy(self.spec, state)), 0.1, places=12)

    def test_empty_fiber(self):
        """Test that f(x) > c leaves no velocity with energy c"""
        self.assertIsNone(energy_surface_state(self.spec, 0.0, np.array([0.0, 0.4]), np.array([1.0, 0.0])))

    def test_flat_harmonic_hypothesis_is_zero(self):
        spec = LagrangianSpec.build(FlatMetric(2), None, build_form({"constants": [0.3, 0.4]}, 2))
        for mane in (False, True):
            with self.subTest(mane=mane):
                report = hypothesis_check_energy_surface(spec, 0.125, samples=4, T=2.0, mane=mane, rng=make_rng(offset=1))
                self.assertEqual(report.failed, 0)
                self.assertAlmostEqual(report.min_value, 0.0, places=9)

    def test_mechanical_hypothesis_is_bounded_by_min_laplacian(self):
        report = hypothesis_check_energy_surface(self.spec, 0.1, samples=4, T=2.0, rng=make_rng(offset=2))
        self.assertGreaterEqual(report.min_value, -0.4 * np.pi**2 - 1e-9)
        self.assertLess(report.min_value, 0.4 * np.pi**2)
        self.assertIn("min_ric_plus_laplacian", report.summary())


class BarrierRiccatiTest(SimpleTestCase):
    """Test cases for the finite-difference Θ cross-check"""

    def test_free_particle_laplacian_is_n_over_s(self):
        kernel = build_kernel(LagrangianSpec.build(FlatMetric(2)), Grid(2, 32), 0.25, 3)
        check = barrier_riccati_crosscheck(kernel, 0, np.zeros(2))
        self.assertTrue(check["passed"], check)
        self.assertEqual(check["tolerance"], 0.25)
        for row in check["rows"]:
            self.assertAlmostEqual(row["theta_minus_div"], 2.0 / row["s"], places=6)
        self.assertIsNone(check["truncated_at"])

    def test_flat_harmonic_extremal_keeps_its_lift(self):
        """Test the cross-check along ρ̇ = ω♯, which travels more than one period by s = 4"""
        kernel = kernel_for(constants=(0.3, 0.4), radius=6)
        check = barrier_riccati_crosscheck(kernel, 0, np.array([0.3, 0.4]))
        self.assertTrue(check["passed"], check)
        for row in check["rows"]:
            self.assertAlmostEqual(row["fd_laplacian"], 2.0 / row["s"], delta=0.05)
