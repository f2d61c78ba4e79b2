#!/usr/bin/env python3
"""Shared numeric helpers for tests"""
import typing

import numpy as np

FD_STEP = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the larger of the two gradients"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(
    fn: typing.Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP
) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every entry of x"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + step
        upper = fn(x)
        flat_x[i] = original - step
        lower = fn(x)
        flat_x[i] = original
        flat_grad[i] = (upper - lower) / (2 * step)

    return grad


def directional_derivative(
    fn: typing.Callable[[np.ndarray], float],
    x: np.ndarray,
    direction: np.ndarray,
    step: float = FD_STEP,
) -> float:
    """Central finite difference along one direction"""
    x = np.asarray(x, dtype=np.float64)
    return (fn(x + step * direction) - fn(x - step * direction)) / (2 * step)


def random_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Random intensities away from the [0, 1] ends"""
    return rng.uniform(0.1, 0.9, size=(height, width))


def smooth_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smooth random image in [0.1, 0.9]"""
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=2.0)
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return 0.1 + 0.8 * img


def kink_free_field(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Field whose sample points sit strictly inside pixel cells of the image"""
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    target_x = rng.integers(0, width - 1, size=(height, width)) + rng.uniform(
        0.05, 0.95, size=(height, width)
    )
    target_y = rng.integers(0, height - 1, size=(height, width)) + rng.uniform(
        0.05, 0.95, size=(height, width)
    )
    return np.stack((target_x - xs, target_y - ys))


# -----------------------------------------------------------------------------
# B-spline oracle
# -----------------------------------------------------------------------------


def _basis_value(i: int, degree: int, knots: typing.Sequence[float], t: float) -> float:
    if degree == 0:
        if knots[i] <= t < knots[i + 1]:
            return 1.0

        # Right end of the parameter range belongs to the last nonempty span
        if (t == knots[-1]) and (knots[i] < knots[i + 1] == knots[-1]):
            return 1.0

        return 0.0

    value = 0.0
    left_den = knots[i + degree] - knots[i]
    if left_den > 0:
        value += (t - knots[i]) / left_den * _basis_value(i, degree - 1, knots, t)

    right_den = knots[i + degree + 1] - knots[i + 1]
    if right_den > 0:
        value += (
            (knots[i + degree + 1] - t) / right_den * _basis_value(i + 1, degree - 1, knots, t)
        )

    return value


def bspline_oracle(control: np.ndarray, width: int, height: int) -> np.ndarray:
    """Per-pixel recursive B-spline evaluation of a (2, ny, nx) control grid"""
    _, ny, nx = control.shape

    def knots_for(n: int) -> typing.Tuple[int, typing.List[float]]:
        degree = min(3, n - 1)
        interior = [k / (n - degree) for k in range(1, n - degree)]
        return degree, [0.0] * (degree + 1) + interior + [1.0] * (degree + 1)

    degree_x, knots_x = knots_for(nx)
    degree_y, knots_y = knots_for(ny)

    field = np.zeros((2, height, width))
    for row in range(height):
        t_y = row / (height - 1)
        weights_y = [_basis_value(j, degree_y, knots_y, t_y) for j in range(ny)]
        for col in range(width):
            t_x = col / (width - 1)
            weights_x = [_basis_value(i, degree_x, knots_x, t_x) for i in range(nx)]
            for plane in range(2):
                field[plane, row, col] = sum(
                    weights_y[j] * weights_x[i] * control[plane, j, i]
                    for j in range(ny)
                    for i in range(nx)
                )

    return field
