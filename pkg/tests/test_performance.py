"""
Performance tests for the kamtoolkit acceptance runs
"""

import json
import os
import time

from django.test import SimpleTestCase, override_settings

from aubry.artifacts import ArtifactWriter
from aubry.barrier import aubry_set
from aubry.experiments import build_kernel, build_spec, run_experiment, solve
from aubry.parallel import fork_join, worker_count
from aubry.serializers import parse_config

from . import CONFIG_DIR

SINGLE_THREAD = {
    "THREADS": 1,
    "SEED": 20240611,
    "OUTPUT_DIR": "kam-output-tests",
    "LOG_LEVEL": "ERROR",
}


def load_config(name):
    with open(os.path.join(CONFIG_DIR, name)) as handle:
        return parse_config(json.load(handle))


class PerformanceTestCase(SimpleTestCase):
    """Base class for performance tests"""

    def time_operation(self, operation, *args, **kwargs):
        """Time a toolkit operation"""
        start_time = time.perf_counter()
        result = operation(*args, **kwargs)
        end_time = time.perf_counter()
        return result, end_time - start_time


@override_settings(TOOLKIT=SINGLE_THREAD)
class SolverPerformanceTest(PerformanceTestCase):
    """Test value-iteration run time"""

    def test_fine_harmonic_solve(self):
        """Test the N = 64, dt = 0.05 harmonic solve stays within a minute on one thread"""
        config = load_config("harmonic_fine.json")
        spec = build_spec(config)
        kernel = build_kernel(config, spec)
        (estimate, u), duration = self.time_operation(solve, config, kernel)

        self.assertEqual(worker_count(), 1)
        self.assertLess(duration, 60.0)
        self.assertAlmostEqual(estimate.c, 0.125, delta=5e-3)
        self.assertLessEqual(u.spread, 5e-2)

    def test_mechanical_solve(self):
        config = load_config("mechanical.json")
        spec = build_spec(config)
        (estimate, _), duration = self.time_operation(solve, config, build_kernel(config, spec))
        self.assertLess(duration, 60.0)
        self.assertAlmostEqual(estimate.c, 0.05, delta=5e-3)


class VerifyPerformanceTest(PerformanceTestCase):
    """Test acceptance runs of the verify subcommand"""

    def setUp(self):
        self.output = os.path.join(os.path.dirname(__file__), "..", "kam-output-tests")

    def run_verify(self, config_name, theorem):
        config = load_config(config_name)
        writer = ArtifactWriter(os.path.join(self.output, f"{config['experiment']}-{theorem}"))
        return self.time_operation(run_experiment, "verify", config, writer, theorem)

    def test_laplacian_bound_on_mechanical_torus(self):
        summary, duration = self.run_verify("mechanical.json", "1.5")
        self.assertEqual(summary["exit_code"], 0, summary["criteria"])
        self.assertAlmostEqual(summary["outputs"]["bound"], 2.0 * 3.141592653589793 * 0.1**0.5, places=6)
        self.assertEqual(summary["outputs"]["laplacian_source"], "shot extremals")
        self.assertGreater(summary["outputs"]["theta_frames"], 0)
        self.assertLess(duration, 120.0)

    def test_full_aubry_set_on_flat_harmonic_torus(self):
        summary, duration = self.run_verify("flat_harmonic.json", "1.8")
        self.assertEqual(summary["exit_code"], 0, summary["criteria"])
        self.assertEqual(summary["outputs"]["component_count"], 1)
        self.assertLess(duration, 120.0)

    def test_exact_form_rigidity(self):
        summary, duration = self.run_verify("exact_form.json", "1.7")
        self.assertEqual(summary["exit_code"], 0, summary["criteria"])
        self.assertFalse(summary["outputs"]["harmonic"])
        self.assertLess(duration, 120.0)

    def test_index_form_and_conjugate_points(self):
        summary, duration = self.run_verify("index.json", "index")
        self.assertEqual(summary["exit_code"], 0, summary["criteria"])
        self.assertLess(duration, 120.0)

    def test_riccati_identities(self):
        summary, duration = self.run_verify("riccati.json", "riccati")
        self.assertEqual(summary["exit_code"], 0, summary["criteria"])
        self.assertLess(duration, 120.0)


class ParallelDeterminismTest(PerformanceTestCase):
    """Test that forked work is independent of the worker count"""

    def test_fork_join_keeps_input_order(self):
        items = list(range(50))
        self.assertEqual(fork_join(lambda i: i * i, items, workers=4), [i * i for i in items])

    def test_barrier_is_worker_independent(self):
        config = load_config("two_well.json")
        kernel = build_kernel(config, build_spec(config))
        estimate, _ = solve(config, kernel)
        with override_settings(TOOLKIT=SINGLE_THREAD):
            serial = aubry_set(kernel, estimate.c, horizons=(5.0, 10.0), stride=4)
        parallel = aubry_set(kernel, estimate.c, horizons=(5.0, 10.0), stride=4)
        self.assertEqual(serial.nodes.tolist(), parallel.nodes.tolist())
        self.assertEqual(serial.diagonal.tolist(), parallel.diagonal.tolist())
