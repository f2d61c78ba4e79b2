#!/usr/bin/env python3
"""Utility methods"""
import os
import typing

import numpy as np

from reggan.constants import ENV_SEED, ConfigError


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed derived from a sequence of integers"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def default_seed(environ: typing.Optional[typing.Mapping[str, str]] = None) -> int:
    """Seed from REGGAN_SEED, or 0 when unset"""
    if environ is None:
        environ = os.environ

    value = environ.get(ENV_SEED, "").strip()
    if not value:
        return 0

    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"{ENV_SEED} must be an integer, got {value!r}") from e


def case_phantom(case_id: str) -> str:
    """Phantom part of a case id (p003_d0017 -> p003)"""
    return case_id.split("_", maxsplit=1)[0]
