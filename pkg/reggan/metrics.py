#!/usr/bin/env python3
"""Evaluation metrics on images (NMI, SSIM, MSE) and masks (Dice, HD95, MAD)"""
import math
import typing

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from reggan.constants import DimensionMismatchError

DEFAULT_BINS = 32
DEFAULT_WINDOW = 7
DEFAULT_C1 = 0.01 ** 2
DEFAULT_C2 = 0.03 ** 2

# Fraction used for the robust Hausdorff distance
HD_PERCENTILE = 0.95

# -----------------------------------------------------------------------------


def check_same_shape(a: np.ndarray, b: np.ndarray):
    """Raise if two grids differ in shape"""
    if np.shape(a) != np.shape(b):
        raise DimensionMismatchError(
            f"Shapes do not match: {np.shape(a)} vs {np.shape(b)}"
        )


def bin_indices(img: np.ndarray, bins: int) -> np.ndarray:
    """Uniform bin index on [0, 1] for every intensity"""
    return np.clip(np.floor(np.asarray(img) * bins), 0, bins - 1).astype(np.int64)


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy (nats) of a discrete distribution"""
    nonzero = probs[probs > 0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def nmi(a: np.ndarray, b: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Normalized mutual information 2 I(A;B) / (H(A) + H(B)) in [0, 1]"""
    check_same_shape(a, b)
    if bins < 2:
        raise ValueError(f"Need at least 2 bins, got {bins}")

    idx_a = bin_indices(a, bins).reshape(-1)
    idx_b = bin_indices(b, bins).reshape(-1)

    joint = np.bincount(idx_a * bins + idx_b, minlength=bins * bins).astype(
        np.float64
    )
    joint = joint.reshape(bins, bins) / idx_a.size

    h_a = entropy(joint.sum(axis=1))
    h_b = entropy(joint.sum(axis=0))
    h_ab = entropy(joint)

    if (h_a + h_b) == 0:
        # Both images constant
        return 1.0

    return 2.0 * (h_a + h_b - h_ab) / (h_a + h_b)


# -----------------------------------------------------------------------------


class WindowStats(typing.NamedTuple):
    """Local statistics over every fully-contained square window"""

    mu_a: np.ndarray
    mu_b: np.ndarray
    var_a: np.ndarray
    var_b: np.ndarray
    cov_ab: np.ndarray


def window_stats(a: np.ndarray, b: np.ndarray, window: int) -> WindowStats:
    """Means, (population) variances, and covariance per window"""
    check_same_shape(a, b)
    if (window < 3) or (window % 2 == 0):
        raise ValueError(f"Window must be odd and at least 3, got {window}")

    if window > min(np.shape(a)):
        raise DimensionMismatchError(
            f"Window {window} larger than image {np.shape(a)}"
        )

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    def local_mean(x):
        return sliding_window_view(x, (window, window)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(a), local_mean(b)
    return WindowStats(
        mu_a=mu_a,
        mu_b=mu_b,
        var_a=local_mean(a * a) - mu_a * mu_a,
        var_b=local_mean(b * b) - mu_b * mu_b,
        cov_ab=local_mean(a * b) - mu_a * mu_b,
    )


def ssim_map(
    stats: WindowStats, c1: float = DEFAULT_C1, c2: float = DEFAULT_C2
) -> np.ndarray:
    """Per-window structural similarity"""
    numerator = (2 * stats.mu_a * stats.mu_b + c1) * (2 * stats.cov_ab + c2)
    denominator = (stats.mu_a ** 2 + stats.mu_b ** 2 + c1) * (
        stats.var_a + stats.var_b + c2
    )
    return numerator / denominator


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = DEFAULT_WINDOW,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
) -> float:
    """Mean structural similarity over pixel-centered windows"""
    if (c1 <= 0) or (c2 <= 0):
        raise ValueError(f"Stabilizers must be positive: c1={c1}, c2={c2}")

    return float(np.mean(ssim_map(window_stats(a, b, window), c1, c2)))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared intensity difference"""
    check_same_shape(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff * diff))


# -----------------------------------------------------------------------------
# Masks
# -----------------------------------------------------------------------------


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap 2|A & B| / (|A| + |B|); 1 when both masks are empty"""
    check_same_shape(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)

    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0

    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbor outside (image border is outside)"""
    from scipy import ndimage

    mask = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(2, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)

    return mask & ~eroded


def surface_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sorted symmetric nearest-boundary distances between two masks"""
    import sklearn.metrics

    check_same_shape(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)

    if (not a.any()) or (not b.any()):
        raise ValueError("Surface distances need nonempty masks")

    points_a = np.argwhere(boundary(a)).astype(np.float64)
    points_b = np.argwhere(boundary(b)).astype(np.float64)

    dist = sklearn.metrics.pairwise_distances(points_a, points_b, metric="euclidean")

    return np.sort(np.concatenate((dist.min(axis=1), dist.min(axis=0))))


def nearest_rank(sorted_values: np.ndarray, fraction: float) -> float:
    """Nearest-rank percentile of already sorted values"""
    if len(sorted_values) == 0:
        raise ValueError("Percentile of empty list")

    rank = max(1, int(math.ceil(fraction * len(sorted_values))))
    return float(sorted_values[rank - 1])


def hd95(a: np.ndarray, b: np.ndarray) -> float:
    """95th percentile (nearest rank) Hausdorff distance"""
    return nearest_rank(surface_distances(a, b), HD_PERCENTILE)


def mad(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute surface distance"""
    return float(np.mean(surface_distances(a, b)))
