#!/usr/bin/env python3
"""Iterative NMI/B-spline registration baseline"""
import logging
import typing
from dataclasses import dataclass, field

import numpy as np

from reggan.constants import BorderPolicy, DimensionMismatchError, DivergenceError
from reggan.deformation import bspline_basis, control_to_field
from reggan.imaging import DeformationField, as_field, warp, warp_gradient
from reggan.losses import soft_nmi
from reggan.metrics import DEFAULT_BINS

_LOGGER = logging.getLogger("reggan")

# Coarse-to-fine control grids before the requested one
COARSE_LEVELS = ((2, 2), (4, 4))

# Stop a level once the step shrinks below this (pixels)
MIN_STEP = 1e-3

# -----------------------------------------------------------------------------


@dataclass
class BsplineTransform:
    """Control-point displacements (2, ny, nx) in pixels"""

    control: np.ndarray

    def __post_init__(self):
        self.control = np.asarray(self.control, dtype=np.float64)
        if (self.control.ndim != 3) or (self.control.shape[0] != 2):
            raise DimensionMismatchError(
                f"Control grid must be (2, ny, nx), got {self.control.shape}"
            )

        if (self.nx < 2) or (self.ny < 2):
            raise ValueError(f"Control grid must be at least 2x2, got {self.nx}x{self.ny}")

    @property
    def nx(self) -> int:
        """Control points along x"""
        return self.control.shape[2]

    @property
    def ny(self) -> int:
        """Control points along y"""
        return self.control.shape[1]

    def spacing(self, width: int, height: int) -> typing.Tuple[float, float]:
        """Distance between control points (pixels)"""
        return (width - 1) / (self.nx - 1), (height - 1) / (self.ny - 1)

    @staticmethod
    def zeros(nx: int, ny: int) -> "BsplineTransform":
        """Identity transform"""
        return BsplineTransform(np.zeros((2, ny, nx)))


@dataclass
class MetricsTrace:
    """NMI after every accepted optimization step"""

    nmi: typing.List[float] = field(default_factory=list)
    grids: typing.List[typing.Tuple[int, int]] = field(default_factory=list)
    rejected: int = 0

    def add(self, value: float, grid: typing.Tuple[int, int]):
        """Record an accepted objective value"""
        self.nmi.append(value)
        self.grids.append(grid)


def to_field(transform: BsplineTransform, width: int, height: int) -> DeformationField:
    """Dense field interpolating the control displacements"""
    return as_field(control_to_field(transform.control, width, height))


def fit_control_points(field: np.ndarray, nx: int, ny: int) -> BsplineTransform:
    """Least-squares control grid whose B-spline field best matches a dense field"""
    field = np.asarray(field, dtype=np.float64)
    _, height, width = field.shape
    basis_y = bspline_basis(ny, height)
    basis_x = bspline_basis(nx, width)

    control = np.zeros((2, ny, nx))
    for plane in range(2):
        # basis_y @ C @ basis_x.T ~ field[plane]
        rows, *_ = np.linalg.lstsq(basis_y, field[plane], rcond=None)
        cols, *_ = np.linalg.lstsq(basis_x, rows.T, rcond=None)
        control[plane] = cols.T

    return BsplineTransform(control)


def _grid_schedule(grid: typing.Tuple[int, int]) -> typing.List[typing.Tuple[int, int]]:
    nx, ny = grid
    schedule: typing.List[typing.Tuple[int, int]] = []
    for coarse_x, coarse_y in COARSE_LEVELS:
        level = (min(coarse_x, nx), min(coarse_y, ny))
        if level not in schedule:
            schedule.append(level)

    if (nx, ny) not in schedule:
        schedule.append((nx, ny))

    return schedule


class _Objective:
    """Soft NMI of the warped floating image and its control-point gradient"""

    def __init__(
        self,
        ref: np.ndarray,
        flt: np.ndarray,
        grid: typing.Tuple[int, int],
        bins: int,
        border: BorderPolicy,
    ):
        self.ref = ref
        self.flt = flt
        self.bins = bins
        self.border = border

        height, width = ref.shape
        nx, ny = grid
        self.basis_y = bspline_basis(ny, height)
        self.basis_x = bspline_basis(nx, width)

    def field(self, control: np.ndarray) -> np.ndarray:
        return np.einsum("hj,cji,wi->chw", self.basis_y, control, self.basis_x)

    def value(self, control: np.ndarray) -> float:
        trans = warp(self.flt, self.field(control), border=self.border)
        value, _, _ = soft_nmi(trans, self.ref, bins=self.bins)
        return value

    def gradient(self, control: np.ndarray) -> typing.Tuple[float, np.ndarray]:
        field = self.field(control)
        trans = warp(self.flt, field, border=self.border)
        value, grad_trans, _ = soft_nmi(trans, self.ref, bins=self.bins)
        _, grad_field = warp_gradient(self.flt, field, grad_trans, border=self.border)

        return value, np.einsum("hj,chw,wi->cji", self.basis_y, grad_field, self.basis_x)


def baseline_register(
    ref: np.ndarray,
    flt: np.ndarray,
    grid: typing.Tuple[int, int] = (8, 8),
    iters: int = 200,
    step: float = 1.0,
    bins: int = DEFAULT_BINS,
    border: BorderPolicy = BorderPolicy.CLAMP,
) -> typing.Tuple[DeformationField, MetricsTrace]:
    """Gradient ascent on soft NMI over B-spline control displacements.

    Runs coarse-to-fine (2x2, 4x4, then the requested grid), splitting the
    iteration budget evenly. A step that lowers NMI is rejected and the step
    size halved, so accepted NMI values never decrease.
    """
    ref = np.asarray(ref, dtype=np.float64)
    flt = np.asarray(flt, dtype=np.float64)
    if ref.shape != flt.shape:
        raise DimensionMismatchError(
            f"Reference {ref.shape} and floating {flt.shape} shapes differ"
        )

    if min(grid) < 2:
        raise ValueError(f"Control grid must be at least 2x2, got {grid}")

    if step <= 0:
        raise ValueError(f"Step must be positive, got {step}")

    height, width = ref.shape
    trace = MetricsTrace()
    current = np.zeros((2, height, width))
    if iters <= 0:
        return as_field(current), trace

    schedule = _grid_schedule(grid)
    budgets = [
        iters // len(schedule) + (1 if level < iters % len(schedule) else 0)
        for level in range(len(schedule))
    ]

    for level_grid, budget in zip(schedule, budgets):
        objective = _Objective(ref, flt, level_grid, bins, border)
        control = fit_control_points(current, *level_grid).control
        value, gradient = objective.gradient(control)
        trace.add(value, level_grid)

        step_size = step
        for _ in range(budget):
            if step_size < MIN_STEP:
                break

            scale = float(np.max(np.abs(gradient)))
            if scale == 0:
                break

            candidate = control + (step_size / scale) * gradient
            candidate_value = objective.value(candidate)
            if not np.isfinite(candidate_value):
                raise DivergenceError("Non-finite NMI in baseline registration")

            if candidate_value >= value:
                control = candidate
                value, gradient = objective.gradient(control)
                trace.add(value, level_grid)
            else:
                trace.rejected += 1
                step_size *= 0.5

        current = objective.field(control)
        _LOGGER.debug("Baseline level %s: NMI %.5f", level_grid, value)

    return as_field(current), trace
