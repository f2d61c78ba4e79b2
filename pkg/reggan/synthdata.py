#!/usr/bin/env python3
"""Procedural multimodal registration data.

Phantoms are branching vessel-like curves on a smooth background. The second
modality is an inverted, gamma-shifted, noisy copy of the first, so structures
align while intensity distributions differ.
"""
import json
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reggan.constants import DimensionMismatchError
from reggan.deformation import DeformationSpec, invert, sample_spec, simulate
from reggan.imaging import (
    DeformationField,
    Image,
    Mask,
    as_image,
    load_field,
    load_image,
    load_mask,
    save_field,
    save_image,
    save_mask,
    warp,
)
from reggan.utils import case_phantom, derive_seed

_LOGGER = logging.getLogger("reggan")

MIN_PHANTOM_SIZE = 32

# Fraction of pixels covered by vessels before branching stops
DEFAULT_COVERAGE = 0.08
MAX_BRANCHES = 64

MODALITY_B_NOISE = 0.02
MODALITY_B_GAMMA = (0.7, 1.4)

MANIFEST_NAME = "manifest.json"
CASES_DIR = "cases"

Seed = typing.Union[int, typing.Sequence[int]]

# -----------------------------------------------------------------------------


@dataclass
class RegistrationCase:
    """One experiment unit: reference, deformed floating image, and ground truth"""

    id: str
    ref: Image
    flt: Image
    applied_field: DeformationField
    mask_ref: Mask
    mask_flt_deformed: Mask

    # Modality B before deformation
    flt_aligned: Image

    # Field a perfect registrar recovers (inverse of applied_field)
    target_field: DeformationField

    spec: DeformationSpec = field(default_factory=DeformationSpec)

    @property
    def phantom(self) -> str:
        """Id of the phantom this case was derived from"""
        return case_phantom(self.id)

    @property
    def ref_in_flt_frame(self) -> Image:
        """Modality A image moved by the same deformation as flt"""
        return warp(self.ref, self.applied_field)


def case_id(phantom_idx: int, deformation_idx: int) -> str:
    """Deterministic case identifier"""
    return f"p{phantom_idx:03d}_d{deformation_idx:04d}"


# -----------------------------------------------------------------------------
# Phantoms
# -----------------------------------------------------------------------------


def _random_walk(
    rng: np.random.Generator,
    start: typing.Tuple[float, float],
    width: int,
    height: int,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Centerline points and radii of one vessel branch"""
    size = min(width, height)
    length = int(rng.integers(size // 2, size + 1))
    heading = rng.uniform(0.0, 2.0 * np.pi)
    radius_start = rng.uniform(1.2, 2.5) * (size / 64.0)

    points = []
    y, x = start
    for _ in range(length):
        if not ((0 <= x < width) and (0 <= y < height)):
            break

        points.append((y, x))
        heading += rng.normal(0.0, 0.15)
        x += np.cos(heading)
        y += np.sin(heading)

    if not points:
        return np.zeros((0, 2)), np.zeros(0)

    # Vessels narrow along their length
    radii = radius_start * np.linspace(1.0, 0.6, len(points))

    return np.array(points), radii


def make_phantom(
    seed: Seed,
    width: int = 64,
    height: int = 64,
    coverage: float = DEFAULT_COVERAGE,
) -> typing.Tuple[Image, Mask]:
    """Deterministic vessel phantom and its vessel mask"""
    from scipy import ndimage

    if (width < MIN_PHANTOM_SIZE) or (height < MIN_PHANTOM_SIZE):
        raise ValueError(
            f"Phantom must be at least {MIN_PHANTOM_SIZE}x{MIN_PHANTOM_SIZE}, "
            f"got {width}x{height}"
        )

    if not 0 < coverage < 1:
        raise ValueError(f"Coverage must be in (0, 1), got {coverage}")

    rng = np.random.default_rng(seed)

    background = ndimage.gaussian_filter(
        rng.standard_normal((height, width)), sigma=min(width, height) / 8.0, mode="reflect"
    )
    background -= background.min()
    if background.max() > 0:
        background /= background.max()

    background = 0.15 + 0.3 * background

    centerline = np.zeros((height, width), dtype=bool)
    radius_at = np.zeros((height, width))
    mask = np.zeros((height, width), dtype=bool)
    distance = np.full((height, width), np.inf)
    radius_map = np.ones((height, width))

    for branch_idx in range(MAX_BRANCHES):
        if branch_idx == 0:
            start = (
                rng.uniform(0.3, 0.7) * (height - 1),
                rng.uniform(0.3, 0.7) * (width - 1),
            )
        else:
            # Branch off an existing vessel
            ys, xs = np.nonzero(centerline)
            pick = int(rng.integers(len(ys)))
            start = (float(ys[pick]), float(xs[pick]))

        points, radii = _random_walk(rng, start, width, height)
        if len(points) == 0:
            continue

        rows = np.clip(np.round(points[:, 0]).astype(np.int64), 0, height - 1)
        cols = np.clip(np.round(points[:, 1]).astype(np.int64), 0, width - 1)
        radius_at[rows, cols] = np.maximum(radius_at[rows, cols], radii)
        centerline[rows, cols] = True

        distance, (near_rows, near_cols) = ndimage.distance_transform_edt(
            ~centerline, return_indices=True
        )
        radius_map = radius_at[near_rows, near_cols]
        mask = distance <= radius_map

        if mask.mean() >= coverage:
            break

    strength = np.exp(-(distance ** 2) / (2.0 * radius_map ** 2))
    img = np.clip(background + 0.5 * strength, 0.0, 1.0)

    _LOGGER.debug("Phantom covers %.1f%% of pixels", 100 * mask.mean())

    return as_image(img), mask


def to_modality_b(
    img: np.ndarray,
    seed: Seed,
    gamma: typing.Optional[float] = None,
    noise_sigma: float = MODALITY_B_NOISE,
) -> Image:
    """Inverted, gamma-mapped, noisy second modality of an image"""
    rng = np.random.default_rng(seed)
    if gamma is None:
        gamma = float(rng.uniform(*MODALITY_B_GAMMA))

    if gamma <= 0:
        raise ValueError(f"Gamma must be positive, got {gamma}")

    out = np.clip(1.0 - np.asarray(img, dtype=np.float64), 0.0, 1.0) ** gamma
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)

    return as_image(np.clip(out, 0.0, 1.0))


# -----------------------------------------------------------------------------
# Datasets
# -----------------------------------------------------------------------------


def make_case(
    ident: str,
    ref: Image,
    aligned: Image,
    mask: Mask,
    spec: DeformationSpec,
) -> RegistrationCase:
    """Deform the aligned second-modality image and its mask by a simulated field"""
    if ref.shape != aligned.shape:
        raise DimensionMismatchError(
            f"Reference {ref.shape} and aligned image {aligned.shape} differ"
        )

    height, width = ref.shape
    applied = simulate(spec, width, height)
    flt = as_image(np.clip(warp(aligned, applied), 0.0, 1.0))
    mask_flt = warp(np.asarray(mask, dtype=np.float64), applied) >= 0.5

    return RegistrationCase(
        id=ident,
        ref=ref,
        flt=flt,
        applied_field=applied,
        mask_ref=np.asarray(mask, dtype=bool),
        mask_flt_deformed=mask_flt,
        flt_aligned=aligned,
        target_field=invert(applied),
        spec=spec,
    )


def build_dataset(
    n_phantoms: int,
    deformations_per_pair: int,
    template: DeformationSpec,
    seed: int = 0,
    width: int = 64,
    height: int = 64,
    multimodal: bool = True,
) -> typing.List[RegistrationCase]:
    """Cases for every (phantom, deformation) combination, in id order"""
    if n_phantoms < 1:
        raise ValueError(f"Need at least one phantom, got {n_phantoms}")

    if deformations_per_pair < 1:
        raise ValueError(
            f"Need at least one deformation per pair, got {deformations_per_pair}"
        )

    if not isinstance(template, DeformationSpec):
        raise ValueError(f"Invalid deformation template: {template!r}")

    cases: typing.List[RegistrationCase] = []
    for phantom_idx in range(n_phantoms):
        ref, mask = make_phantom([seed, phantom_idx], width=width, height=height)
        if multimodal:
            aligned = to_modality_b(ref, [seed, phantom_idx, 1])
        else:
            aligned = ref

        for deformation_idx in range(deformations_per_pair):
            spec = sample_spec(template, derive_seed(seed, phantom_idx, deformation_idx))
            cases.append(
                make_case(case_id(phantom_idx, deformation_idx), ref, aligned, mask, spec)
            )

        _LOGGER.debug("Built %s case(s) for phantom %s", deformations_per_pair, phantom_idx)

    return cases


def write_dataset(
    cases: typing.Sequence[RegistrationCase],
    directory: typing.Union[str, Path],
    config: typing.Optional[typing.Mapping[str, typing.Any]] = None,
):
    """Write cases/<id>/... files and a manifest"""
    directory = Path(directory)
    cases_dir = directory / CASES_DIR

    manifest_cases = []
    for case in cases:
        case_dir = cases_dir / case.id
        case_dir.mkdir(parents=True, exist_ok=True)

        save_image(case.ref, case_dir / "ref.rimg")
        save_image(case.flt, case_dir / "flt.rimg")
        save_image(case.flt_aligned, case_dir / "flt_aligned.rimg")
        save_field(case.applied_field, case_dir / "field.rfld")
        save_field(case.target_field, case_dir / "target.rfld")
        save_mask(case.mask_ref, case_dir / "mask_ref.pgm")
        save_mask(case.mask_flt_deformed, case_dir / "mask_flt.pgm")

        manifest_cases.append(
            {"id": case.id, "seed": case.spec.seed, "spec": case.spec.to_dict()}
        )

    manifest = {"cases": manifest_cases, "config": dict(config or {})}
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as manifest_file:
        json.dump(manifest, manifest_file, indent=4, sort_keys=True)

    _LOGGER.info("Wrote %s case(s) to %s", len(cases), directory)


def read_manifest(directory: typing.Union[str, Path]) -> typing.Dict[str, typing.Any]:
    """Load a dataset manifest"""
    manifest_path = Path(directory) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"Missing dataset manifest: {manifest_path}")

    with open(manifest_path, "r", encoding="utf-8") as manifest_file:
        manifest = json.load(manifest_file)

    if not isinstance(manifest.get("cases"), list):
        raise ValueError(f"Manifest has no case list: {manifest_path}")

    return manifest


def read_dataset(directory: typing.Union[str, Path]) -> typing.List[RegistrationCase]:
    """Load every case listed in a dataset manifest"""
    directory = Path(directory)
    manifest = read_manifest(directory)

    cases: typing.List[RegistrationCase] = []
    for entry in manifest["cases"]:
        case_dir = directory / CASES_DIR / entry["id"]
        spec_dict = dict(entry.get("spec", {}))
        cases.append(
            RegistrationCase(
                id=entry["id"],
                ref=load_image(case_dir / "ref.rimg"),
                flt=load_image(case_dir / "flt.rimg"),
                applied_field=load_field(case_dir / "field.rfld"),
                mask_ref=load_mask(case_dir / "mask_ref.pgm"),
                mask_flt_deformed=load_mask(case_dir / "mask_flt.pgm"),
                flt_aligned=load_image(case_dir / "flt_aligned.rimg"),
                target_field=load_field(case_dir / "target.rfld"),
                spec=DeformationSpec(**spec_dict),
            )
        )

    _LOGGER.debug("Loaded %s case(s) from %s", len(cases), directory)

    return cases
