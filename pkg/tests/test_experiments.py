"""
Tests for the criteria built by the experiment runners
"""

import numpy as np
from django.test import SimpleTestCase

from aubry.dynamics import LagrangianSpec
from aubry.experiments import Criterion, theta_comparison
from aubry.fields import FlatMetric, build_field


def cosine_spec(amplitude=0.1):
    return LagrangianSpec.build(FlatMetric(2), build_field({"name": "cosine", "params": {"amplitude": amplitude}}, 2))


class CriterionTest(SimpleTestCase):
    """Test cases for Criterion"""

    def test_nan_fails_and_serializes_as_null(self):
        criterion = Criterion.at_most("residual", np.nan, 1e-6)
        self.assertFalse(criterion.passed)
        self.assertIsNone(criterion.as_dict()["value"])

    def test_at_least(self):
        self.assertTrue(Criterion.at_least("delta_nonnegative", 0.0, -1e-2).passed)
        self.assertFalse(Criterion.at_least("delta_nonnegative", -0.5, -1e-2).passed)


class ThetaComparisonTest(SimpleTestCase):
    """Test cases for the Θ comparison on the energy surface"""

    def test_no_frame_on_the_energy_surface_fails(self):
        """Test that a level below every fiber gives a failed criterion, not a vacuous pass"""
        criterion, traces = theta_comparison(cosine_spec(), -1.0, 0.0, 1.0, 4)
        self.assertEqual(traces, [])
        self.assertFalse(criterion.passed)
        self.assertTrue(np.isnan(criterion.value))
        self.assertIsNone(criterion.as_dict()["value"])
        self.assertEqual(criterion.detail, "no frame compared")

    def test_every_sample_is_compared_above_max_f(self):
        """Test that each sample yields a frame and a finite worst gap when c > max f"""
        criterion, traces = theta_comparison(cosine_spec(), 0.5, 0.0, 1.0, 3)
        self.assertEqual(len(traces), 3)
        self.assertTrue(all(len(trace.s) for _, trace in traces))
        self.assertTrue(np.isfinite(criterion.value))
        self.assertEqual(criterion.detail, "3 of 3 frames")
