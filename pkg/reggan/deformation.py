#!/usr/bin/env python3
"""Simulated ground-truth deformations, field composition, and Err_Def"""
import dataclasses
import logging
import typing
from dataclasses import dataclass

import numpy as np

from reggan.constants import BorderPolicy, DeformationKind, DimensionMismatchError
from reggan.imaging import DeformationField, as_field, warp

_LOGGER = logging.getLogger("reggan")

# Default cap on per-pixel displacement magnitude (pixels)
DEFAULT_MAX_DISPLACEMENT = 10.0

# -----------------------------------------------------------------------------


@dataclass
class DeformationSpec:
    """Parameters of one simulated deformation"""

    kind: DeformationKind = DeformationKind.ELASTIC
    rotation: float = 0.0
    translation: typing.Tuple[float, float] = (0.0, 0.0)
    affine_matrix: typing.Tuple[
        typing.Tuple[float, float], typing.Tuple[float, float]
    ] = ((1.0, 0.0), (0.0, 1.0))
    control_grid: typing.Tuple[int, int] = (4, 4)
    max_displacement: float = DEFAULT_MAX_DISPLACEMENT
    seed: int = 0

    def __post_init__(self):
        self.kind = DeformationKind(self.kind)
        self.translation = (float(self.translation[0]), float(self.translation[1]))
        self.affine_matrix = (
            (float(self.affine_matrix[0][0]), float(self.affine_matrix[0][1])),
            (float(self.affine_matrix[1][0]), float(self.affine_matrix[1][1])),
        )
        self.control_grid = (int(self.control_grid[0]), int(self.control_grid[1]))

        if self.max_displacement < 0:
            raise ValueError(f"Negative max displacement: {self.max_displacement}")

        if min(self.control_grid) < 2:
            raise ValueError(f"Control grid must be at least 2x2: {self.control_grid}")

        if self.kind == DeformationKind.AFFINE:
            if np.linalg.det(np.array(self.affine_matrix)) == 0:
                raise ValueError(f"Degenerate affine matrix: {self.affine_matrix}")

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        """JSON-compatible representation"""
        spec_dict = dataclasses.asdict(self)
        spec_dict["kind"] = self.kind.value
        return spec_dict


def sample_spec(template: DeformationSpec, seed: int) -> DeformationSpec:
    """Draw a concrete spec from a template.

    Elastic templates only receive the new seed. Rigid and affine templates
    act as ranges: every parameter is scaled by an independent factor in [-1, 1]
    (affine parameters relative to the identity).
    """
    if template.kind == DeformationKind.ELASTIC:
        return dataclasses.replace(template, seed=seed)

    rng = np.random.default_rng(seed)
    u_rot, u_tx, u_ty, u_aff = rng.uniform(-1.0, 1.0, size=4)

    translation = (template.translation[0] * u_tx, template.translation[1] * u_ty)
    if template.kind == DeformationKind.RIGID:
        return dataclasses.replace(
            template, rotation=template.rotation * u_rot, translation=translation, seed=seed
        )

    identity = np.eye(2)
    matrix = identity + (np.array(template.affine_matrix) - identity) * u_aff
    if np.linalg.det(matrix) == 0:
        matrix = identity

    return dataclasses.replace(
        template,
        affine_matrix=tuple(map(tuple, matrix.tolist())),
        translation=translation,
        seed=seed,
    )


# -----------------------------------------------------------------------------
# B-splines
# -----------------------------------------------------------------------------


def bspline_degree(num_ctrl: int) -> int:
    """Cubic where possible, lower degree for tiny grids"""
    return min(3, num_ctrl - 1)


def bspline_knots(num_ctrl: int) -> np.ndarray:
    """Clamped uniform knot vector spanning [0, 1]"""
    if num_ctrl < 2:
        raise ValueError(f"Need at least 2 control points, got {num_ctrl}")

    degree = bspline_degree(num_ctrl)
    interior = np.linspace(0.0, 1.0, num_ctrl - degree + 1)[1:-1]

    return np.concatenate((np.zeros(degree + 1), interior, np.ones(degree + 1)))


def bspline_basis(num_ctrl: int, length: int) -> np.ndarray:
    """Basis matrix (length x num_ctrl) evaluating control values at each pixel.

    Pixel i sits at parameter i / (length - 1). Rows sum to 1.
    """
    degree = bspline_degree(num_ctrl)
    knots = bspline_knots(num_ctrl)

    if length > 1:
        t = np.linspace(0.0, 1.0, length)[:, None]
    else:
        t = np.zeros((1, 1))

    # Degree 0 (half-open intervals, right end closed on the last span)
    basis = ((t >= knots[:-1]) & (t < knots[1:])).astype(np.float64)
    last_span = np.nonzero(knots[:-1] < knots[1:])[0][-1]
    basis[t[:, 0] >= 1.0, last_span] = 1.0

    # Cox-de Boor recursion
    for p in range(1, degree + 1):
        num_basis = len(knots) - 1 - p
        lo = knots[:num_basis]
        hi = knots[p + 1 : p + 1 + num_basis]
        left_den = knots[p : p + num_basis] - lo
        right_den = hi - knots[1 : 1 + num_basis]

        left = np.divide(
            t - lo, left_den, out=np.zeros((len(t), num_basis)), where=left_den > 0
        )
        right = np.divide(
            hi - t, right_den, out=np.zeros((len(t), num_basis)), where=right_den > 0
        )
        basis = left * basis[:, :num_basis] + right * basis[:, 1 : num_basis + 1]

    return basis


def control_to_field(ctrl: np.ndarray, width: int, height: int) -> np.ndarray:
    """Interpolate control displacements (2, ny, nx) to a dense (2, H, W) field"""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    if (ctrl.ndim != 3) or (ctrl.shape[0] != 2):
        raise DimensionMismatchError(f"Control grid must be (2, ny, nx): {ctrl.shape}")

    _, ny, nx = ctrl.shape
    basis_y = bspline_basis(ny, height)
    basis_x = bspline_basis(nx, width)

    return np.einsum("hj,cji,wi->chw", basis_y, ctrl, basis_x)


# -----------------------------------------------------------------------------
# Simulation
# -----------------------------------------------------------------------------


def _linear_field(
    matrix: np.ndarray, translation: typing.Sequence[float], width: int, height: int
) -> np.ndarray:
    """Displacement form of p -> A (p - c) + c + t about the image center"""
    center_x, center_y = (width - 1) / 2.0, (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    rel_x, rel_y = xs - center_x, ys - center_y

    new_x = matrix[0, 0] * rel_x + matrix[0, 1] * rel_y + center_x + translation[0]
    new_y = matrix[1, 0] * rel_x + matrix[1, 1] * rel_y + center_y + translation[1]

    return np.stack((new_x - xs, new_y - ys))


def simulate(spec: DeformationSpec, width: int, height: int) -> DeformationField:
    """Realize a deformation spec as a dense displacement field"""
    if (width < 2) or (height < 2):
        raise ValueError(f"Image must be at least 2x2, got {width}x{height}")

    kind = DeformationKind(spec.kind)
    if kind == DeformationKind.RIGID:
        cos_r, sin_r = np.cos(spec.rotation), np.sin(spec.rotation)
        matrix = np.array([[cos_r, -sin_r], [sin_r, cos_r]])
        field = _linear_field(matrix, spec.translation, width, height)
    elif kind == DeformationKind.AFFINE:
        matrix = np.array(spec.affine_matrix, dtype=np.float64)
        if np.linalg.det(matrix) == 0:
            raise ValueError(f"Degenerate affine matrix: {spec.affine_matrix}")

        field = _linear_field(matrix, spec.translation, width, height)
    else:
        nx, ny = spec.control_grid
        rng = np.random.default_rng(spec.seed)
        ctrl = rng.uniform(
            -spec.max_displacement, spec.max_displacement, size=(2, ny, nx)
        )
        field = control_to_field(ctrl, width, height)

    # Enforce the displacement cap by uniform rescaling
    peak = float(np.max(np.hypot(field[0], field[1])))
    if peak > spec.max_displacement:
        _LOGGER.debug(
            "Rescaling %s field (peak %.3f > %.3f)",
            kind.value,
            peak,
            spec.max_displacement,
        )
        field = field * (spec.max_displacement / peak)

    return as_field(field)


# -----------------------------------------------------------------------------
# Field algebra
# -----------------------------------------------------------------------------


def _check_fields(a: np.ndarray, b: np.ndarray):
    if np.shape(a) != np.shape(b):
        raise DimensionMismatchError(
            f"Field shapes do not match: {np.shape(a)} vs {np.shape(b)}"
        )


def sample_field(
    field: np.ndarray,
    at: np.ndarray,
    border: BorderPolicy = BorderPolicy.CLAMP,
) -> np.ndarray:
    """Sample both planes of field at p + at(p)"""
    _check_fields(field, at)
    return warp(field, np.stack((at, at)), border=border)


def compose(outer: np.ndarray, inner: np.ndarray) -> DeformationField:
    """Field equivalent to warping by inner, then by outer.

    result(p) = inner(p + outer(p)) + outer(p)
    """
    outer = np.asarray(outer, dtype=np.float64)
    inner = np.asarray(inner, dtype=np.float64)
    _check_fields(outer, inner)

    return as_field(sample_field(inner, outer) + outer)


def invert(field: np.ndarray, iterations: int = 20) -> DeformationField:
    """Approximate inverse by fixed-point iteration psi(p) = -field(p + psi(p))"""
    field = np.asarray(field, dtype=np.float64)
    inverse = -field
    for _ in range(iterations):
        inverse = -sample_field(field, inverse)

    return as_field(inverse)


def err_def(applied: np.ndarray, recovered: np.ndarray) -> float:
    """Mean Euclidean endpoint error between two fields (pixels)"""
    applied = np.asarray(applied, dtype=np.float64)
    recovered = np.asarray(recovered, dtype=np.float64)
    _check_fields(applied, recovered)

    diff = applied - recovered
    return float(np.mean(np.hypot(diff[0], diff[1])))


def max_magnitude(field: np.ndarray) -> float:
    """Largest per-pixel displacement magnitude"""
    return float(np.max(np.hypot(field[0], field[1])))
