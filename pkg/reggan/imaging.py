#!/usr/bin/env python3
"""Images, deformation fields, file containers, and differentiable warping.

Images are float64 arrays of shape (height, width) with intensities in [0, 1].
Deformation fields are float64 arrays of shape (2, height, width): the dx plane
followed by the dy plane, in pixels. A field maps output coordinates to source
coordinates (backward warping).

Warping accepts leading batch axes: images (..., H, W) with fields (..., 2, H, W).
"""
import logging
import struct
import typing
from pathlib import Path

import numpy as np

from reggan.constants import (
    FIELD_MAGIC,
    IMAGE_MAGIC,
    PGM_MAX_VALUE,
    BorderPolicy,
    DimensionMismatchError,
    ImageFormatError,
)

_LOGGER = logging.getLogger("reggan")

Image = np.ndarray
DeformationField = np.ndarray
Mask = np.ndarray

_HEADER = struct.Struct("<4sII")
_FLOAT_LE = np.dtype("<f4")

# -----------------------------------------------------------------------------


def as_image(data: typing.Any) -> Image:
    """Validate and freeze an intensity grid"""
    img = np.array(data, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionMismatchError(f"Image must be 2-D, got shape {img.shape}")

    height, width = img.shape
    if (width < 2) or (height < 2):
        raise DimensionMismatchError(f"Image must be at least 2x2, got {width}x{height}")

    if not np.all(np.isfinite(img)):
        raise ValueError("Image contains non-finite intensities")

    if (img.min() < 0.0) or (img.max() > 1.0):
        raise ValueError(
            f"Image intensities must lie in [0, 1], got [{img.min()}, {img.max()}]"
        )

    img.setflags(write=False)
    return img


def as_field(data: typing.Any) -> DeformationField:
    """Validate and freeze a displacement field"""
    field = np.array(data, dtype=np.float64)
    if (field.ndim != 3) or (field.shape[0] != 2):
        raise DimensionMismatchError(
            f"Field must have shape (2, height, width), got {field.shape}"
        )

    if not np.all(np.isfinite(field)):
        raise ValueError("Field contains non-finite displacements")

    field.setflags(write=False)
    return field


def zero_field(width: int, height: int) -> DeformationField:
    """Identity deformation"""
    return as_field(np.zeros((2, height, width)))


def check_pair(img: np.ndarray, field: np.ndarray):
    """Ensure a (batch of) image(s) and field(s) can be warped together"""
    if field.ndim < 3 or field.shape[-3] != 2:
        raise DimensionMismatchError(f"Bad field shape: {field.shape}")

    if img.shape[-2:] != field.shape[-2:]:
        raise DimensionMismatchError(
            f"Image shape {img.shape[-2:]} does not match field shape {field.shape[-2:]}"
        )

    if img.shape[:-2] != field.shape[:-3]:
        raise DimensionMismatchError(
            f"Batch shape {img.shape[:-2]} does not match field batch {field.shape[:-3]}"
        )


# -----------------------------------------------------------------------------
# Warping
# -----------------------------------------------------------------------------


class _Sampling:
    """Bilinear sampling positions shared by warp and warp_gradient"""

    def __init__(self, field: np.ndarray, border: BorderPolicy):
        height, width = field.shape[-2:]
        self.height = height
        self.width = width
        self.border = BorderPolicy(border)

        xs = np.arange(width, dtype=np.float64) + field[..., 0, :, :]
        ys = np.arange(height, dtype=np.float64)[:, None] + field[..., 1, :, :]

        if self.border == BorderPolicy.CLAMP:
            # Derivative of clip passes through inside the image only
            self.dx_scale = ((xs >= 0) & (xs <= width - 1)).astype(np.float64)
            self.dy_scale = ((ys >= 0) & (ys <= height - 1)).astype(np.float64)
            xs = np.clip(xs, 0, width - 1)
            ys = np.clip(ys, 0, height - 1)
            self.x0 = np.clip(np.floor(xs), 0, max(width - 2, 0)).astype(np.int64)
            self.y0 = np.clip(np.floor(ys), 0, max(height - 2, 0)).astype(np.int64)
        else:
            self.dx_scale = np.ones_like(xs)
            self.dy_scale = np.ones_like(ys)
            self.x0 = np.floor(xs).astype(np.int64)
            self.y0 = np.floor(ys).astype(np.int64)

        self.fx = xs - self.x0
        self.fy = ys - self.y0
        self.x1 = self.x0 + 1
        self.y1 = self.y0 + 1

        if self.border == BorderPolicy.CLAMP:
            # Single-pixel axes collapse onto one neighbor
            self.x1 = np.minimum(self.x1, width - 1)
            self.y1 = np.minimum(self.y1, height - 1)

        # Flat offset of each batch element
        batch_shape = field.shape[:-3]
        num_batch = int(np.prod(batch_shape, dtype=np.int64))
        self.batch_offset = (
            np.arange(num_batch, dtype=np.int64).reshape(batch_shape + (1, 1))
            * height
            * width
        )
        self.size = num_batch * height * width

    def corners(self):
        """Yield (flat index, validity, y corner, x corner) for the 4 neighbors"""
        for y_idx, y_corner in ((self.y0, 0), (self.y1, 1)):
            for x_idx, x_corner in ((self.x0, 0), (self.x1, 1)):
                valid = (
                    (x_idx >= 0)
                    & (x_idx < self.width)
                    & (y_idx >= 0)
                    & (y_idx < self.height)
                )
                flat = (
                    self.batch_offset
                    + np.clip(y_idx, 0, self.height - 1) * self.width
                    + np.clip(x_idx, 0, self.width - 1)
                )
                yield flat, valid, y_corner, x_corner

    def weight(self, y_corner: int, x_corner: int) -> np.ndarray:
        """Bilinear weight of a corner"""
        wy = self.fy if y_corner else (1.0 - self.fy)
        wx = self.fx if x_corner else (1.0 - self.fx)
        return wy * wx

    def values(self, img: np.ndarray) -> typing.Dict[typing.Tuple[int, int], np.ndarray]:
        """Neighbor intensities keyed by (y corner, x corner)"""
        flat_img = img.reshape(-1)
        return {
            (y_corner, x_corner): np.where(valid, flat_img[flat], 0.0)
            for flat, valid, y_corner, x_corner in self.corners()
        }


def warp(
    img: np.ndarray, field: np.ndarray, border: BorderPolicy = BorderPolicy.CLAMP
) -> np.ndarray:
    """Backward-warp img: output(x, y) = img(x + dx(x, y), y + dy(x, y)), bilinear"""
    img = np.asarray(img, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    check_pair(img, field)

    sampling = _Sampling(field, border)
    values = sampling.values(img)

    result = np.zeros(img.shape, dtype=np.float64)
    for (y_corner, x_corner), corner_values in values.items():
        result += sampling.weight(y_corner, x_corner) * corner_values

    return result


def warp_gradient(
    img: np.ndarray,
    field: np.ndarray,
    upstream: np.ndarray,
    border: BorderPolicy = BorderPolicy.CLAMP,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * warp(img, field)) w.r.t. img and field"""
    img = np.asarray(img, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    check_pair(img, field)

    if upstream.shape != img.shape:
        raise DimensionMismatchError(
            f"Upstream gradient shape {upstream.shape} does not match image {img.shape}"
        )

    sampling = _Sampling(field, border)
    values = sampling.values(img)

    # Scatter upstream into source pixels
    grad_img = np.zeros(sampling.size, dtype=np.float64)
    for flat, valid, y_corner, x_corner in sampling.corners():
        contrib = upstream * sampling.weight(y_corner, x_corner) * valid
        grad_img += np.bincount(
            flat.reshape(-1), weights=contrib.reshape(-1), minlength=sampling.size
        )

    fx, fy = sampling.fx, sampling.fy
    d_value_dx = (1.0 - fy) * (values[(0, 1)] - values[(0, 0)]) + fy * (
        values[(1, 1)] - values[(1, 0)]
    )
    d_value_dy = (1.0 - fx) * (values[(1, 0)] - values[(0, 0)]) + fx * (
        values[(1, 1)] - values[(0, 1)]
    )

    grad_field = np.stack(
        (
            upstream * d_value_dx * sampling.dx_scale,
            upstream * d_value_dy * sampling.dy_scale,
        ),
        axis=-3,
    )

    return grad_img.reshape(img.shape), grad_field


# -----------------------------------------------------------------------------
# File containers
# -----------------------------------------------------------------------------


def _read_bytes(path: typing.Union[str, Path]) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ImageFormatError(f"Unable to read {path}: {e}") from e


def _parse_pgm(data: bytes, path: typing.Union[str, Path]) -> Image:
    """Parse a binary (P5) portable graymap"""
    tokens: typing.List[bytes] = []
    pos = 0

    # Header: magic, width, height, max value (comments start with #)
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1

        if pos >= len(data):
            raise ImageFormatError(f"Truncated graymap header: {path}")

        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue

        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1

        tokens.append(data[start:pos])

    # Single whitespace before raster
    pos += 1

    if tokens[0] != b"P5":
        raise ImageFormatError(f"Unsupported graymap type {tokens[0]!r}: {path}")

    try:
        width, height, max_value = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise ImageFormatError(f"Bad graymap header: {path}") from e

    if (width <= 0) or (height <= 0):
        raise ImageFormatError(f"Zero-sized image: {path}")

    if not 0 < max_value < 65536:
        raise ImageFormatError(f"Bad graymap max value {max_value}: {path}")

    dtype = np.dtype("u1") if max_value < 256 else np.dtype(">u2")
    num_bytes = width * height * dtype.itemsize
    raster = data[pos : pos + num_bytes]
    if len(raster) != num_bytes:
        raise ImageFormatError(f"Truncated graymap raster: {path}")

    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)

    return pixels.astype(np.float64) / max_value


def _parse_container(
    data: bytes, magic: bytes, planes: int, path: typing.Union[str, Path]
) -> np.ndarray:
    """Parse an RIMG/RFLD float container"""
    if len(data) < _HEADER.size:
        raise ImageFormatError(f"Truncated header: {path}")

    file_magic, width, height = _HEADER.unpack_from(data)
    if file_magic != magic:
        raise ImageFormatError(f"Expected magic {magic!r}, got {file_magic!r}: {path}")

    if (width == 0) or (height == 0):
        raise ImageFormatError(f"Zero-sized container: {path}")

    num_bytes = planes * width * height * _FLOAT_LE.itemsize
    payload = data[_HEADER.size : _HEADER.size + num_bytes]
    if len(payload) != num_bytes:
        raise ImageFormatError(f"Truncated payload: {path}")

    values = np.frombuffer(payload, dtype=_FLOAT_LE).astype(np.float64)

    return values.reshape(planes, height, width)


def load_image(path: typing.Union[str, Path]) -> Image:
    """Load a graymap (.pgm) or raw-float (.rimg) image rescaled to [0, 1]"""
    path = Path(path)
    data = _read_bytes(path)

    if data.startswith(IMAGE_MAGIC):
        img = _parse_container(data, IMAGE_MAGIC, 1, path)[0]
    elif data.startswith(b"P5"):
        img = _parse_pgm(data, path)
    else:
        raise ImageFormatError(f"Unsupported image format: {path}")

    _LOGGER.debug("Loaded %sx%s image from %s", img.shape[1], img.shape[0], path)

    return as_image(np.clip(img, 0.0, 1.0))


def save_image(img: np.ndarray, path: typing.Union[str, Path]):
    """Save an image as a graymap (.pgm) or raw-float container (.rimg).

    Graymaps quantize to 8 bits. Raw-float containers store little-endian
    float32, so values round to single precision and load_image() returns
    them widened back to float64.
    """
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape

    suffix = path.suffix.lower()
    if suffix == ".pgm":
        pixels = np.round(np.clip(img, 0.0, 1.0) * PGM_MAX_VALUE).astype(np.uint8)
        header = f"P5\n{width} {height}\n{PGM_MAX_VALUE}\n".encode("ascii")
        payload = header + pixels.tobytes()
    elif suffix == ".rimg":
        payload = _HEADER.pack(IMAGE_MAGIC, width, height) + img.astype(
            _FLOAT_LE
        ).tobytes(order="C")
    else:
        raise ImageFormatError(f"Unsupported image extension: {path}")

    path.write_bytes(payload)


def load_field(path: typing.Union[str, Path]) -> DeformationField:
    """Load a deformation field from an RFLD container"""
    data = _read_bytes(path)
    return as_field(_parse_container(data, FIELD_MAGIC, 2, path))


def save_field(field: np.ndarray, path: typing.Union[str, Path]):
    """Save a deformation field to an RFLD container (dx plane, then dy).

    Displacements are stored as little-endian float32 and round to single
    precision.
    """
    field = np.asarray(field, dtype=np.float64)
    _, height, width = field.shape
    payload = _HEADER.pack(FIELD_MAGIC, width, height) + field.astype(
        _FLOAT_LE
    ).tobytes(order="C")
    Path(path).write_bytes(payload)


def load_mask(path: typing.Union[str, Path]) -> Mask:
    """Load a binary mask stored as a graymap"""
    return load_image(path) >= 0.5


def save_mask(mask: np.ndarray, path: typing.Union[str, Path]):
    """Save a binary mask as a graymap (0/255)"""
    save_image(np.asarray(mask, dtype=np.float64), path)
