#!/usr/bin/env python3
"""Enums, records, and exceptions for reggan"""
import typing
from enum import Enum
from pathlib import Path

_DIR = Path(__file__).parent

# Magic bytes for binary containers
IMAGE_MAGIC = b"RIMG"
FIELD_MAGIC = b"RFLD"
CHECKPOINT_MAGIC = b"RGPT"
CHECKPOINT_VERSION = 1

# Maximum value of portable graymaps written by reggan
PGM_MAX_VALUE = 255

# Probability clamp for adversarial losses
PROB_EPSILON = 1e-7

ENV_SEED = "REGGAN_SEED"


class BorderPolicy(str, Enum):
    """How samples outside the image are resolved"""

    CLAMP = "clamp"
    ZEROS = "zeros"


class DeformationKind(str, Enum):
    """Kind of simulated deformation"""

    RIGID = "rigid"
    AFFINE = "affine"
    ELASTIC = "elastic"


class Method(str, Enum):
    """Registration method in an evaluation run"""

    BEFORE = "before"
    GAN_REG = "gan_reg"
    GAN_REG_NCYC = "gan_reg_ncyc"
    BASELINE_NMI = "baseline_nmi"


# Fixed row order of aggregate tables
METHOD_ORDER: typing.Sequence[Method] = (
    Method.BEFORE,
    Method.GAN_REG,
    Method.GAN_REG_NCYC,
    Method.BASELINE_NMI,
)


class ReportFormat(str, Enum):
    """Serialization of an aggregate table"""

    CSV = "csv"
    JSON = "json-text"
    TEXT = "aligned-text"


class Preset(str, Enum):
    """Named run configurations"""

    DESK = "desk"
    PAPER = "paper"
    NCYC = "ncyc"


# -----------------------------------------------------------------------------


class ImageFormatError(ValueError):
    """Unreadable, truncated, or unsupported image/field file"""


class DimensionMismatchError(ValueError):
    """Shapes of images, fields, masks, or networks do not agree"""


class ConfigError(ValueError):
    """Invalid run configuration"""


class MissingCheckpointError(FileNotFoundError):
    """Checkpoint needed by a method is not available"""


class DivergenceError(RuntimeError):
    """Non-finite loss, gradient, or parameter during optimization"""

    def __init__(self, message: str, last_good: typing.Optional[typing.Any] = None):
        super().__init__(message)

        # Last parameter snapshot with finite values (if any)
        self.last_good = last_good
