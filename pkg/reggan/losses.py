#!/usr/bin/env python3
"""Differentiable training objectives.

Image losses accept a single image (H, W) or a batch (N, H, W) and average over
the batch. Each returns the loss value together with its analytic gradient(s).
"""
import logging
import threading
import typing
from dataclasses import dataclass

import numpy as np

from reggan.constants import PROB_EPSILON, DimensionMismatchError, DivergenceError
from reggan.layers import Conv2d, Layer, ReLU, Sequential
from reggan.metrics import (
    DEFAULT_BINS,
    DEFAULT_C1,
    DEFAULT_C2,
    DEFAULT_WINDOW,
    check_same_shape,
    ssim_map,
    window_stats,
)

_LOGGER = logging.getLogger("reggan")

# Guards log(0) in soft entropies
_ENTROPY_EPS = 1e-12

DEFAULT_FEATURE_WIDTHS = (16, 32, 64, 128)

# -----------------------------------------------------------------------------


@dataclass
class LossWeights:
    """Weights of the training objective terms"""

    lambda_cyc: float = 10.0
    w_nmi: float = 1.0
    w_ssim: float = 1.0
    w_feat: float = 1.0
    bins: int = DEFAULT_BINS
    ssim_window: int = DEFAULT_WINDOW

    def __post_init__(self):
        for name in ("lambda_cyc", "w_nmi", "w_ssim", "w_feat"):
            if getattr(self, name) < 0:
                raise ValueError(f"Loss weight {name} must be nonnegative")


def _as_batch(x: np.ndarray) -> typing.Tuple[np.ndarray, bool]:
    """View a single image as a batch of one"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True

    return x, False


def _unbatch(grad: np.ndarray, single: bool) -> np.ndarray:
    return grad[0] if single else grad


# -----------------------------------------------------------------------------
# Normalized mutual information (Parzen window)
# -----------------------------------------------------------------------------


def _parzen_weights(
    x: np.ndarray, centers: np.ndarray, bandwidth: float
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Normalized Gaussian bin memberships and their derivatives w.r.t. x"""
    offset = x[:, None] - centers[None, :]
    logits = -(offset * offset) / (2.0 * bandwidth * bandwidth)
    logits -= logits.max(axis=1, keepdims=True)

    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)

    slope = -offset / (bandwidth * bandwidth)
    d_weights = weights * (slope - np.sum(weights * slope, axis=1, keepdims=True))

    return weights, d_weights


def _soft_entropy(probs: np.ndarray) -> typing.Tuple[float, np.ndarray]:
    """Entropy and its derivative w.r.t. each probability"""
    log_term = np.log(probs + _ENTROPY_EPS)
    value = float(-np.sum(probs * log_term))
    derivative = -(log_term + probs / (probs + _ENTROPY_EPS))

    return value, derivative


def _soft_nmi_single(
    a: np.ndarray, b: np.ndarray, bins: int, bandwidth: float
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    flat_a, flat_b = a.reshape(-1), b.reshape(-1)
    num = flat_a.size
    centers = (np.arange(bins) + 0.5) / bins

    w_a, dw_a = _parzen_weights(flat_a, centers, bandwidth)
    w_b, dw_b = _parzen_weights(flat_b, centers, bandwidth)

    joint = (w_a.T @ w_b) / num
    h_ab, dh_ab = _soft_entropy(joint)
    h_a, dh_a = _soft_entropy(joint.sum(axis=1))
    h_b, dh_b = _soft_entropy(joint.sum(axis=0))

    total = h_a + h_b
    if total < _ENTROPY_EPS:
        return 1.0, np.zeros_like(a), np.zeros_like(b)

    value = 2.0 * (total - h_ab) / total

    # d value / d joint
    d_joint = (
        -2.0
        * (dh_ab * total - h_ab * (dh_a[:, None] + dh_b[None, :]))
        / (total * total)
    )

    grad_a = np.sum(dw_a * (w_b @ d_joint.T), axis=1) / num
    grad_b = np.sum(dw_b * (w_a @ d_joint), axis=1) / num

    return value, grad_a.reshape(a.shape), grad_b.reshape(b.shape)


def soft_nmi(
    a: np.ndarray,
    b: np.ndarray,
    bins: int = DEFAULT_BINS,
    bandwidth: typing.Optional[float] = None,
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    """Parzen-window NMI and its gradients w.r.t. a and b"""
    check_same_shape(a, b)
    if bandwidth is None:
        bandwidth = 2.0 / bins

    if bandwidth <= 0:
        raise ValueError(f"Bandwidth must be positive, got {bandwidth}")

    batch_a, single = _as_batch(a)
    batch_b, _ = _as_batch(b)
    num = len(batch_a)

    value = 0.0
    grad_a = np.zeros_like(batch_a)
    grad_b = np.zeros_like(batch_b)
    for i in range(num):
        item_value, item_grad_a, item_grad_b = _soft_nmi_single(
            batch_a[i], batch_b[i], bins, bandwidth
        )
        value += item_value / num
        grad_a[i] = item_grad_a / num
        grad_b[i] = item_grad_b / num

    return value, _unbatch(grad_a, single), _unbatch(grad_b, single)


# -----------------------------------------------------------------------------
# SSIM
# -----------------------------------------------------------------------------


def _window_adjoint(values: np.ndarray, window: int, shape: typing.Tuple[int, int]):
    """Sum per-window values back onto every pixel the window covers"""
    out = np.zeros(shape)
    rows, cols = values.shape
    for dy in range(window):
        for dx in range(window):
            out[dy : dy + rows, dx : dx + cols] += values

    return out


def _ssim_single(
    a: np.ndarray, b: np.ndarray, window: int, c1: float, c2: float
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    stats = window_stats(a, b, window)
    s_map = ssim_map(stats, c1, c2)
    value = float(np.mean(s_map))

    mu_a, mu_b = stats.mu_a, stats.mu_b
    a1 = 2 * mu_a * mu_b + c1
    a2 = 2 * stats.cov_ab + c2
    b1 = mu_a ** 2 + mu_b ** 2 + c1
    b2 = stats.var_a + stats.var_b + c2

    # d S / d x_j = (alpha + beta * other_j + gamma * x_j) / n per covering window
    beta = 2 * s_map / a2
    gamma = -2 * s_map / b2
    alpha_a = s_map * (2 * mu_b / a1 - 2 * mu_a / b1 - 2 * mu_b / a2 + 2 * mu_a / b2)
    alpha_b = s_map * (2 * mu_a / a1 - 2 * mu_b / b1 - 2 * mu_a / a2 + 2 * mu_b / b2)

    scale = 1.0 / (s_map.size * window * window)
    shape = a.shape
    adj_beta = _window_adjoint(beta, window, shape)
    adj_gamma = _window_adjoint(gamma, window, shape)

    grad_a = scale * (_window_adjoint(alpha_a, window, shape) + b * adj_beta + a * adj_gamma)
    grad_b = scale * (_window_adjoint(alpha_b, window, shape) + a * adj_beta + b * adj_gamma)

    return value, grad_a, grad_b


def ssim_loss(
    a: np.ndarray,
    b: np.ndarray,
    window: int = DEFAULT_WINDOW,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    """1 - SSIM and its gradients w.r.t. a and b"""
    check_same_shape(a, b)
    batch_a, single = _as_batch(a)
    batch_b, _ = _as_batch(b)
    num = len(batch_a)

    value = 0.0
    grad_a = np.zeros_like(batch_a)
    grad_b = np.zeros_like(batch_b)
    for i in range(num):
        item_value, item_grad_a, item_grad_b = _ssim_single(
            batch_a[i], batch_b[i], window, c1, c2
        )
        value += (1.0 - item_value) / num
        grad_a[i] = -item_grad_a / num
        grad_b[i] = -item_grad_b / num

    return value, _unbatch(grad_a, single), _unbatch(grad_b, single)


# -----------------------------------------------------------------------------
# Perceptual features
# -----------------------------------------------------------------------------


class FeatureNet:
    """Fixed, seeded strided convolution stack used as a perceptual metric"""

    def __init__(
        self, seed: int = 0, widths: typing.Sequence[int] = DEFAULT_FEATURE_WIDTHS
    ):
        self.seed = seed
        self.widths = tuple(widths)

        rng = np.random.default_rng(seed)
        layers: typing.List[Layer] = []
        in_channels = 1
        for width in self.widths:
            layers.append(Conv2d(in_channels, width, rng, stride=2))
            layers.append(ReLU())
            in_channels = width

        self._net = Sequential(layers)
        self._net.zero_grad()

        # Layers record state during forward/backward
        self._lock = threading.Lock()

    @property
    def min_size(self) -> int:
        """Smallest accepted image side"""
        return 2 ** (len(self.widths) - 1)

    def parameters(self) -> typing.List[np.ndarray]:
        """Fixed parameters (never updated)"""
        return [value for _, value in self._net.named_params()]

    def feature_loss(
        self, a: np.ndarray, b: np.ndarray
    ) -> typing.Tuple[float, np.ndarray, np.ndarray]:
        """Mean squared feature difference and gradients w.r.t. a and b"""
        check_same_shape(a, b)
        batch_a, single = _as_batch(a)
        batch_b, _ = _as_batch(b)

        if min(batch_a.shape[-2:]) < self.min_size:
            raise DimensionMismatchError(
                f"Feature network needs images of at least {self.min_size}x{self.min_size}"
            )

        num = len(batch_a)
        stacked = np.concatenate((batch_a, batch_b))[:, None]

        with self._lock:
            features = self._net.forward(stacked)
            diff = features[:num] - features[num:]
            value = float(np.mean(diff * diff))

            grad_diff = 2.0 * diff / diff.size
            grad_input = self._net.backward(np.concatenate((grad_diff, -grad_diff)))

            # Parameters stay fixed
            self._net.zero_grad()

        grad_a = grad_input[:num, 0]
        grad_b = grad_input[num:, 0]

        return value, _unbatch(grad_a, single), _unbatch(grad_b, single)


_FEATURE_NETS: typing.Dict[typing.Tuple[int, typing.Tuple[int, ...]], FeatureNet] = {}
_FEATURE_NETS_LOCK = threading.Lock()


def get_feature_net(
    seed: int = 0, widths: typing.Sequence[int] = DEFAULT_FEATURE_WIDTHS
) -> FeatureNet:
    """Shared feature network for a seed"""
    key = (seed, tuple(widths))
    with _FEATURE_NETS_LOCK:
        net = _FEATURE_NETS.get(key)
        if net is None:
            net = FeatureNet(seed=seed, widths=widths)
            _FEATURE_NETS[key] = net

    return net


def feature_loss(
    net: FeatureNet, a: np.ndarray, b: np.ndarray
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    """Mean squared difference of feature activations"""
    return net.feature_loss(a, b)


# -----------------------------------------------------------------------------
# Composite objectives
# -----------------------------------------------------------------------------


def content_loss(
    weights: LossWeights, feat: FeatureNet, trans: np.ndarray, ref: np.ndarray
) -> typing.Tuple[float, np.ndarray]:
    """w_nmi (1 - NMI ratio) + w_ssim (1 - SSIM) + w_feat features, with d/d trans.

    The NMI term compares NMI(trans, ref) against NMI(ref, ref), so the loss is
    exactly zero for trans == ref. It is a hinge: a ratio of 1 or more (soft
    binning can push NMI(trans, ref) slightly above the self value) adds
    neither value nor gradient.
    """
    check_same_shape(trans, ref)
    trans = np.asarray(trans, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)

    value = 0.0
    grad = np.zeros_like(trans)

    if weights.w_nmi > 0:
        cross, grad_cross, _ = soft_nmi(trans, ref, bins=weights.bins)
        self_nmi, _, _ = soft_nmi(ref, ref, bins=weights.bins)

        # Constant references carry no mutual information
        ratio = (cross / self_nmi) if self_nmi > 0 else 1.0
        if ratio < 1.0:
            value += weights.w_nmi * (1.0 - ratio)
            grad -= weights.w_nmi * grad_cross / self_nmi

    if weights.w_ssim > 0:
        ssim_value, grad_ssim, _ = ssim_loss(trans, ref, window=weights.ssim_window)
        value += weights.w_ssim * ssim_value
        grad += weights.w_ssim * grad_ssim

    if weights.w_feat > 0:
        feat_value, grad_feat, _ = feat.feature_loss(trans, ref)
        value += weights.w_feat * feat_value
        grad += weights.w_feat * grad_feat

    return value, grad


def adv_loss_d(d_real: np.ndarray, d_fake: np.ndarray) -> float:
    """Discriminator loss -(mean log D(real) + mean log(1 - D(fake)))"""
    real = np.clip(np.asarray(d_real, dtype=np.float64), PROB_EPSILON, 1 - PROB_EPSILON)
    fake = np.clip(np.asarray(d_fake, dtype=np.float64), PROB_EPSILON, 1 - PROB_EPSILON)

    return float(-(np.mean(np.log(real)) + np.mean(np.log(1.0 - fake))))


def adv_loss_d_grad(
    d_real: np.ndarray, d_fake: np.ndarray
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Gradients of adv_loss_d w.r.t. the real and fake probabilities"""
    real = np.clip(np.asarray(d_real, dtype=np.float64), PROB_EPSILON, 1 - PROB_EPSILON)
    fake = np.clip(np.asarray(d_fake, dtype=np.float64), PROB_EPSILON, 1 - PROB_EPSILON)

    return -1.0 / (real.size * real), 1.0 / (fake.size * (1.0 - fake))


def adv_loss_g(d_fake: np.ndarray) -> float:
    """Non-saturating generator loss -mean log D(fake)"""
    fake = np.clip(np.asarray(d_fake, dtype=np.float64), PROB_EPSILON, 1 - PROB_EPSILON)
    return float(-np.mean(np.log(fake)))


def adv_loss_g_grad(d_fake: np.ndarray) -> np.ndarray:
    """Gradient of adv_loss_g w.r.t. the fake probabilities"""
    fake = np.clip(np.asarray(d_fake, dtype=np.float64), PROB_EPSILON, 1 - PROB_EPSILON)
    return -1.0 / (fake.size * fake)


def cycle_loss(
    x: np.ndarray, x_roundtrip: np.ndarray, y: np.ndarray, y_roundtrip: np.ndarray
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    """mean |F(G(x)) - x| + mean |G(F(y)) - y|, with d/d x_roundtrip and d/d y_roundtrip"""
    check_same_shape(x, x_roundtrip)
    check_same_shape(y, y_roundtrip)

    diff_x = np.asarray(x_roundtrip, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    diff_y = np.asarray(y_roundtrip, dtype=np.float64) - np.asarray(y, dtype=np.float64)

    value = float(np.mean(np.abs(diff_x)) + np.mean(np.abs(diff_y)))

    return value, np.sign(diff_x) / diff_x.size, np.sign(diff_y) / diff_y.size


def total_objective(weights: LossWeights, parts: typing.Mapping[str, float]) -> float:
    """L_adv(G) + L_adv(F) + lambda * L_cyc"""
    values = {key: float(parts.get(key, 0.0)) for key in ("adv_G", "adv_F", "cyc")}
    for key, value in values.items():
        if not np.isfinite(value):
            raise DivergenceError(f"Non-finite objective term {key}: {value}")

    return values["adv_G"] + values["adv_F"] + weights.lambda_cyc * values["cyc"]
