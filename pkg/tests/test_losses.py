#!/usr/bin/env python3
"""Tests for differentiable training objectives"""
import math
import unittest
from unittest import mock

import numpy as np

from reggan.constants import DimensionMismatchError, DivergenceError
from reggan.deformation import DeformationSpec, simulate
from reggan.imaging import warp
from reggan.losses import (
    FeatureNet,
    LossWeights,
    adv_loss_d,
    adv_loss_d_grad,
    adv_loss_g,
    adv_loss_g_grad,
    content_loss,
    cycle_loss,
    feature_loss,
    get_feature_net,
    soft_nmi,
    ssim_loss,
    total_objective,
)
from reggan.metrics import nmi, ssim
from reggan.synthdata import make_phantom

from tests.helpers import (
    directional_derivative,
    numeric_gradient,
    random_image,
    relative_error,
    smooth_image,
)

# Small step for functions with ReLU kinks
KINK_STEP = 1e-6


class SoftNmiTestCase(unittest.TestCase):
    """Test cases for Parzen-window NMI"""

    def setUp(self):
        self.rng = np.random.default_rng(31)

    def test_self_similarity(self):
        """An image is more similar to itself than to noise"""
        a = smooth_image(self.rng, 16, 16)
        b = self.rng.uniform(size=(16, 16))

        self.assertGreater(soft_nmi(a, a)[0], soft_nmi(a, b)[0])

    def test_finite_differences(self):
        """Gradients w.r.t. both images agree with central differences"""
        a = random_image(self.rng, 6, 6)
        b = random_image(self.rng, 6, 6)
        _, grad_a, grad_b = soft_nmi(a, b, bins=8)

        numeric_a = numeric_gradient(lambda x: soft_nmi(x, b, bins=8)[0], a)
        numeric_b = numeric_gradient(lambda x: soft_nmi(a, x, bins=8)[0], b)

        self.assertLess(relative_error(grad_a, numeric_a), 1e-3)
        self.assertLess(relative_error(grad_b, numeric_b), 1e-3)

    def test_narrow_bandwidth(self):
        """Narrow kernels reproduce histogram NMI on bin-centered intensities"""
        centers = (np.arange(8) + 0.5) / 8
        a = centers[self.rng.integers(0, 8, size=(10, 10))]
        b = centers[self.rng.integers(0, 8, size=(10, 10))]

        value, _, _ = soft_nmi(a, b, bins=8, bandwidth=0.001)
        self.assertAlmostEqual(value, nmi(a, b, bins=8), delta=1e-6)

    def test_batch_average(self):
        """Batches average per-image values"""
        a = np.stack([random_image(self.rng, 6, 6) for _ in range(2)])
        b = np.stack([random_image(self.rng, 6, 6) for _ in range(2)])

        value, grad_a, _ = soft_nmi(a, b, bins=8)
        first, first_grad, _ = soft_nmi(a[0], b[0], bins=8)
        second, _, _ = soft_nmi(a[1], b[1], bins=8)

        self.assertAlmostEqual(value, (first + second) / 2)
        np.testing.assert_allclose(grad_a[0], first_grad / 2)

    def test_errors(self):
        """Bandwidth and shapes are checked"""
        with self.assertRaises(ValueError):
            soft_nmi(np.zeros((4, 4)), np.zeros((4, 4)), bandwidth=0.0)

        with self.assertRaises(DimensionMismatchError):
            soft_nmi(np.zeros((4, 4)), np.zeros((4, 5)))


class SsimLossTestCase(unittest.TestCase):
    """Test cases for the SSIM loss"""

    def setUp(self):
        self.rng = np.random.default_rng(37)

    def test_identical(self):
        """Zero loss and zero gradient for identical images"""
        a = random_image(self.rng, 8, 8)
        value, grad_a, grad_b = ssim_loss(a, a, window=3)

        self.assertEqual(value, 0.0)
        np.testing.assert_allclose(grad_a, 0.0, atol=1e-12)
        np.testing.assert_allclose(grad_b, 0.0, atol=1e-12)

    def test_matches_metric(self):
        """Loss is one minus the evaluation metric"""
        a = random_image(self.rng, 9, 9)
        b = random_image(self.rng, 9, 9)

        self.assertEqual(ssim_loss(a, b, window=5)[0], 1.0 - ssim(a, b, window=5))

    def test_finite_differences(self):
        """Gradients w.r.t. both images agree with central differences"""
        a = random_image(self.rng, 8, 8)
        b = random_image(self.rng, 8, 8)
        _, grad_a, grad_b = ssim_loss(a, b, window=3)

        numeric_a = numeric_gradient(lambda x: ssim_loss(x, b, window=3)[0], a)
        numeric_b = numeric_gradient(lambda x: ssim_loss(a, x, window=3)[0], b)

        self.assertLess(relative_error(grad_a, numeric_a), 1e-3)
        self.assertLess(relative_error(grad_b, numeric_b), 1e-3)


class FeatureLossTestCase(unittest.TestCase):
    """Test cases for the perceptual feature loss"""

    def setUp(self):
        self.rng = np.random.default_rng(41)
        self.net = FeatureNet(seed=0, widths=(4, 8))

    def test_identical(self):
        """Identical images have identical features"""
        a = random_image(self.rng, 8, 8)
        self.assertEqual(feature_loss(self.net, a, a)[0], 0.0)

    def test_finite_differences(self):
        """Directional derivative agrees with the analytic gradient"""
        a = random_image(self.rng, 8, 8)
        b = random_image(self.rng, 8, 8)
        _, grad_a, _ = feature_loss(self.net, a, b)

        direction = self.rng.standard_normal((8, 8))
        numeric = directional_derivative(
            lambda x: feature_loss(self.net, x, b)[0], a, direction, step=KINK_STEP
        )
        analytic = float(np.sum(grad_a * direction))

        self.assertAlmostEqual(analytic, numeric, delta=1e-4 * max(abs(numeric), 1e-2))

    def test_fixed_parameters(self):
        """Computing the loss does not touch the network"""
        before = [p.copy() for p in self.net.parameters()]
        feature_loss(self.net, random_image(self.rng, 8, 8), random_image(self.rng, 8, 8))

        for old, new in zip(before, self.net.parameters()):
            np.testing.assert_array_equal(old, new)

    def test_too_small(self):
        """Images must survive every stride"""
        net = FeatureNet(seed=0)
        self.assertEqual(net.min_size, 8)

        with self.assertRaises(DimensionMismatchError):
            net.feature_loss(np.zeros((4, 4)), np.zeros((4, 4)))

    def test_shared(self):
        """Feature networks are cached per seed"""
        self.assertIs(get_feature_net(3, (4, 8)), get_feature_net(3, (4, 8)))
        self.assertIsNot(get_feature_net(3, (4, 8)), get_feature_net(4, (4, 8)))


class ContentLossTestCase(unittest.TestCase):
    """Test cases for the combined content loss"""

    def setUp(self):
        self.rng = np.random.default_rng(43)
        self.weights = LossWeights(bins=8, ssim_window=3)
        self.net = FeatureNet(seed=0, widths=(4, 8))

    def test_identical(self):
        """Perfect alignment costs nothing"""
        ref = random_image(self.rng, 8, 8)
        value, _ = content_loss(self.weights, self.net, ref, ref)
        self.assertEqual(value, 0.0)

    def test_finite_differences(self):
        """Directional derivative agrees with the analytic gradient"""
        ref = smooth_image(self.rng, 8, 8)
        trans = np.clip(ref + self.rng.normal(0.0, 0.1, size=(8, 8)), 0.0, 1.0)
        _, grad = content_loss(self.weights, self.net, trans, ref)

        direction = self.rng.standard_normal((8, 8))
        numeric = directional_derivative(
            lambda x: content_loss(self.weights, self.net, x, ref)[0],
            trans,
            direction,
            step=KINK_STEP,
        )
        analytic = float(np.sum(grad * direction))

        self.assertAlmostEqual(analytic, numeric, delta=1e-3 * max(abs(numeric), 1e-2))

    def test_prefers_alignment(self):
        """Small misalignments cost less than large ones"""
        net = get_feature_net(0)
        weights = LossWeights()
        wins = 0
        for seed in range(20):
            ref, _ = make_phantom(seed, width=32, height=32)
            small = simulate(DeformationSpec(max_displacement=1.0, seed=seed), 32, 32)
            large = simulate(DeformationSpec(max_displacement=8.0, seed=seed), 32, 32)

            small_loss, _ = content_loss(weights, net, warp(ref, small), ref)
            large_loss, _ = content_loss(weights, net, warp(ref, large), ref)
            wins += int(small_loss < large_loss)

        self.assertGreaterEqual(wins, 18)

    def test_weights(self):
        """Zero weights switch terms off"""
        ref = random_image(self.rng, 8, 8)
        trans = random_image(self.rng, 8, 8)
        nothing = LossWeights(w_nmi=0.0, w_ssim=0.0, w_feat=0.0, bins=8, ssim_window=3)

        value, grad = content_loss(nothing, self.net, trans, ref)
        self.assertEqual(value, 0.0)
        self.assertFalse(np.any(grad))

        with self.assertRaises(ValueError):
            LossWeights(w_ssim=-1.0)

    def test_nmi_hinge(self):
        """NMI ratios of one or more add no value and no gradient"""
        only_nmi = LossWeights(w_ssim=0.0, w_feat=0.0, bins=8)
        ref = random_image(self.rng, 8, 8)
        trans = random_image(self.rng, 8, 8)

        value, grad = content_loss(only_nmi, self.net, trans, ref)
        self.assertGreater(value, 0.0)
        self.assertTrue(np.any(grad))

        def above_self(a, b, bins):
            return (0.6 if a is b else 0.7), np.ones_like(a), np.ones_like(b)

        with mock.patch("reggan.losses.soft_nmi", side_effect=above_self):
            value, grad = content_loss(only_nmi, self.net, trans, ref)

        self.assertEqual(value, 0.0)
        self.assertFalse(np.any(grad))


class AdversarialLossTestCase(unittest.TestCase):
    """Test cases for adversarial losses"""

    def test_discriminator_values(self):
        """Known discriminator losses"""
        self.assertAlmostEqual(adv_loss_d(np.array([0.5]), np.array([0.5])), 2 * math.log(2))
        self.assertAlmostEqual(adv_loss_d(np.array([1.0]), np.array([0.0])), 0.0, places=6)

        expected = -(
            (math.log(0.8) + math.log(0.6)) / 2 + (math.log(1 - 0.1) + math.log(1 - 0.3)) / 2
        )
        self.assertAlmostEqual(
            adv_loss_d(np.array([0.8, 0.6]), np.array([0.1, 0.3])), expected
        )

    def test_generator_values(self):
        """Known generator losses"""
        self.assertAlmostEqual(adv_loss_g(np.array([1.0])), 0.0, places=6)
        self.assertAlmostEqual(adv_loss_g(np.array([0.5])), math.log(2))
        self.assertAlmostEqual(
            adv_loss_g(np.array([0.2, 0.4, 0.8])),
            -(math.log(0.2) + math.log(0.4) + math.log(0.8)) / 3,
        )

    def test_clamped(self):
        """Saturated probabilities stay finite"""
        self.assertTrue(math.isfinite(adv_loss_d(np.array([0.0]), np.array([1.0]))))
        self.assertTrue(math.isfinite(adv_loss_g(np.array([0.0]))))

    def test_gradients(self):
        """Gradients agree with central differences"""
        real = np.array([0.3, 0.6])
        fake = np.array([0.2, 0.7])

        grad_real, grad_fake = adv_loss_d_grad(real, fake)
        np.testing.assert_allclose(
            grad_real, numeric_gradient(lambda r: adv_loss_d(r, fake), real), rtol=1e-5
        )
        np.testing.assert_allclose(
            grad_fake, numeric_gradient(lambda f: adv_loss_d(real, f), fake), rtol=1e-5
        )
        np.testing.assert_allclose(
            adv_loss_g_grad(fake), numeric_gradient(adv_loss_g, fake), rtol=1e-5
        )


class CycleLossTestCase(unittest.TestCase):
    """Test cases for cycle consistency"""

    def setUp(self):
        self.rng = np.random.default_rng(47)

    def test_values(self):
        """Perfect round trips cost nothing, offsets cost their size"""
        x = random_image(self.rng, 6, 6)
        y = random_image(self.rng, 6, 6)

        self.assertEqual(cycle_loss(x, x, y, y)[0], 0.0)
        self.assertAlmostEqual(cycle_loss(x, x + 0.1, y, y)[0], 0.1)

    def test_brute_force(self):
        """Matches explicit sums and is symmetric in the two cycles"""
        x, x_rt, y, y_rt = (random_image(self.rng, 5, 4) for _ in range(4))

        expected = sum(abs(a - b) for a, b in zip(x.reshape(-1), x_rt.reshape(-1))) / 20 + sum(
            abs(a - b) for a, b in zip(y.reshape(-1), y_rt.reshape(-1))
        ) / 20

        self.assertAlmostEqual(cycle_loss(x, x_rt, y, y_rt)[0], expected)
        self.assertEqual(cycle_loss(x, x_rt, y, y_rt)[0], cycle_loss(y, y_rt, x, x_rt)[0])

    def test_gradient(self):
        """Gradient w.r.t. the round trip agrees with central differences"""
        x, x_rt, y, y_rt = (random_image(self.rng, 4, 4) for _ in range(4))
        _, grad_x, grad_y = cycle_loss(x, x_rt, y, y_rt)

        np.testing.assert_allclose(
            grad_x, numeric_gradient(lambda v: cycle_loss(x, v, y, y_rt)[0], x_rt), atol=1e-8
        )
        np.testing.assert_allclose(
            grad_y, numeric_gradient(lambda v: cycle_loss(x, x_rt, y, v)[0], y_rt), atol=1e-8
        )


class TotalObjectiveTestCase(unittest.TestCase):
    """Test cases for the combined objective"""

    def test_values(self):
        """Adversarial terms plus weighted cycle term"""
        parts = {"adv_G": 1.0, "adv_F": 1.0, "cyc": 0.5}

        self.assertEqual(total_objective(LossWeights(lambda_cyc=10.0), parts), 7.0)
        self.assertEqual(total_objective(LossWeights(lambda_cyc=0.0), parts), 2.0)
        self.assertEqual(
            total_objective(LossWeights(), {"adv_G": 0.0, "adv_F": 0.0, "cyc": 0.0}), 0.0
        )

    def test_non_finite(self):
        """Non-finite terms signal divergence"""
        with self.assertRaises(DivergenceError):
            total_objective(LossWeights(), {"adv_G": float("nan"), "adv_F": 0.0, "cyc": 0.0})

        with self.assertRaises(DivergenceError):
            total_objective(LossWeights(), {"adv_G": 0.0, "adv_F": 0.0, "cyc": float("inf")})


# -----------------------------------------------------------------------------

if __name__ == "__main__":
    unittest.main()
