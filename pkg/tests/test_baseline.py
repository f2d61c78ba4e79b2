#!/usr/bin/env python3
"""Tests for the NMI/B-spline baseline"""
import unittest

import numpy as np

from reggan.baseline import BsplineTransform, baseline_register, fit_control_points, to_field
from reggan.constants import DeformationKind, DimensionMismatchError
from reggan.deformation import DeformationSpec, err_def
from reggan.imaging import warp
from reggan.metrics import dice
from reggan.synthdata import make_case, make_phantom, to_modality_b

from tests.helpers import bspline_oracle


class TransformTestCase(unittest.TestCase):
    """Test cases for control grids"""

    def setUp(self):
        self.rng = np.random.default_rng(71)

    def test_zero(self):
        """Zero control points give the identity"""
        np.testing.assert_array_equal(
            to_field(BsplineTransform.zeros(4, 3), 10, 8), np.zeros((2, 8, 10))
        )

    def test_constant(self):
        """Constant control points give a constant field"""
        control = np.stack((np.full((3, 3), 2.0), np.zeros((3, 3))))
        field = to_field(BsplineTransform(control), 9, 9)

        np.testing.assert_allclose(field[0], 2.0, atol=1e-12)
        np.testing.assert_allclose(field[1], 0.0, atol=1e-12)

    def test_matches_recursive_bspline(self):
        """Dense field equals an independent recursive evaluation"""
        control = self.rng.uniform(-3, 3, size=(2, 3, 3))
        np.testing.assert_allclose(
            to_field(BsplineTransform(control), 11, 7),
            bspline_oracle(control, 11, 7),
            atol=1e-10,
        )

    def test_fit(self):
        """Fitting a B-spline field recovers its control points"""
        control = self.rng.uniform(-3, 3, size=(2, 5, 6))
        field = to_field(BsplineTransform(control), 24, 20)

        fitted = fit_control_points(field, nx=6, ny=5)
        np.testing.assert_allclose(fitted.control, control, atol=1e-8)

    def test_spacing(self):
        """Control spacing spans the image"""
        transform = BsplineTransform.zeros(5, 3)
        self.assertEqual((transform.nx, transform.ny), (5, 3))
        self.assertEqual(transform.spacing(17, 9), (4.0, 4.0))

    def test_invalid(self):
        """Bad control grids are rejected"""
        with self.assertRaises(DimensionMismatchError):
            BsplineTransform(np.zeros((3, 4, 4)))

        with self.assertRaises(ValueError):
            BsplineTransform(np.zeros((2, 1, 4)))


class BaselineTestCase(unittest.TestCase):
    """Test cases for gradient-ascent registration"""

    def test_zero_iterations(self):
        """No iterations, no deformation"""
        img, _ = make_phantom(0, width=32, height=32)
        field, trace = baseline_register(img, img, iters=0)

        np.testing.assert_array_equal(field, np.zeros((2, 32, 32)))
        self.assertEqual(trace.nmi, [])

    def test_monotone(self):
        """Accepted NMI values never decrease"""
        ref, mask = make_phantom(3, width=32, height=32)
        case = make_case("p000_d0000", ref, ref, mask, DeformationSpec(max_displacement=3.0, seed=3))
        _, trace = baseline_register(case.ref, case.flt, grid=(6, 6), iters=30)

        self.assertGreater(len(trace.nmi), 1)
        for before, after in zip(trace.nmi, trace.nmi[1:]):
            self.assertGreaterEqual(after, before - 1e-9)

        self.assertEqual(trace.grids[0], (2, 2))
        self.assertEqual(len(trace.nmi), len(trace.grids))

    def test_translation(self):
        """Recovers most of a known translation"""
        ref, mask = make_phantom(5, width=48, height=48)
        spec = DeformationSpec(kind=DeformationKind.RIGID, translation=(3.0, 0.0))
        case = make_case("p000_d0000", ref, ref, mask, spec)

        before = err_def(case.target_field, np.zeros_like(case.target_field))
        field, _ = baseline_register(case.ref, case.flt, grid=(4, 4), iters=200)

        self.assertAlmostEqual(before, 3.0, places=6)
        self.assertLess(err_def(case.target_field, field), 1.0)

    def test_identical_images(self):
        """Registering an image to itself barely moves it"""
        img, _ = make_phantom(2, width=32, height=32)
        field, _ = baseline_register(img, img, grid=(4, 4), iters=50)

        self.assertLess(float(np.mean(np.hypot(field[0], field[1]))), 0.5)

    def test_multimodal_translation(self):
        """Vessel overlap improves across modalities"""
        ref, mask = make_phantom(5, width=48, height=48)
        aligned = to_modality_b(ref, 0, gamma=1.0, noise_sigma=0.0)
        spec = DeformationSpec(kind=DeformationKind.RIGID, translation=(3.0, 0.0))
        case = make_case("p000_d0000", ref, aligned, mask, spec)

        def overlap(field: np.ndarray) -> float:
            moved = warp(case.mask_flt_deformed.astype(np.float64), field) >= 0.5
            return dice(case.mask_ref, moved)

        field, _ = baseline_register(case.ref, case.flt, grid=(4, 4), iters=200)

        self.assertGreater(overlap(field), overlap(np.zeros_like(field)))
        self.assertLess(err_def(case.target_field, field), 1.0)

    def test_errors(self):
        """Shapes, grids, and steps are checked"""
        with self.assertRaises(DimensionMismatchError):
            baseline_register(np.zeros((8, 8)), np.zeros((8, 9)))

        with self.assertRaises(ValueError):
            baseline_register(np.zeros((8, 8)), np.zeros((8, 8)), grid=(1, 4))

        with self.assertRaises(ValueError):
            baseline_register(np.zeros((8, 8)), np.zeros((8, 8)), step=0.0)


# -----------------------------------------------------------------------------

if __name__ == "__main__":
    unittest.main()
