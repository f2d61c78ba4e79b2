#!/usr/bin/env python3
"""Run configuration, presets, and JSON loading"""
import dataclasses
import json
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

from reggan.constants import ConfigError, DeformationKind, Preset
from reggan.deformation import DeformationSpec
from reggan.training import TrainConfig
from reggan.utils import default_seed

_LOGGER = logging.getLogger("reggan")

# -----------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything needed to simulate, train, and evaluate one experiment"""

    preset: Preset = Preset.DESK
    seed: int = 0
    width: int = 64
    height: int = 64
    n_phantoms: int = 10
    deformations_per_pair: int = 20
    multimodal: bool = True
    train_fraction: float = 0.8
    pixel_size_mm: float = 1.0
    deformation: DeformationSpec = field(default_factory=DeformationSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    generator_channels: int = 16
    generator_blocks: int = 2
    discriminator_channels: int = 8
    discriminator_dense_units: int = 128
    baseline_grid: typing.Tuple[int, int] = (8, 8)
    baseline_iters: int = 200
    baseline_step: float = 1.0
    jobs: int = 1
    dataset_dir: typing.Optional[str] = None
    output_dir: typing.Optional[str] = None

    def __post_init__(self):
        self.preset = Preset(self.preset)
        self.baseline_grid = (int(self.baseline_grid[0]), int(self.baseline_grid[1]))

        for name in ("dataset_dir", "output_dir"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, str(Path(value).expanduser().resolve()))

    @property
    def total_cases(self) -> int:
        """Cases the dataset will contain"""
        return self.n_phantoms * self.deformations_per_pair

    def validate(self):
        """Raise ConfigError on out-of-range values"""
        if (self.width < 32) or (self.height < 32):
            raise ConfigError(f"Images must be at least 32x32, got {self.width}x{self.height}")

        if (self.n_phantoms < 1) or (self.deformations_per_pair < 1):
            raise ConfigError("Phantom and deformation counts must be positive")

        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")

        if self.pixel_size_mm <= 0:
            raise ConfigError(f"pixel_size_mm must be positive, got {self.pixel_size_mm}")

        if self.jobs < 1:
            raise ConfigError(f"jobs must be positive, got {self.jobs}")

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        """JSON-compatible representation"""
        config_dict = dataclasses.asdict(self)
        config_dict["preset"] = self.preset.value
        config_dict["deformation"] = self.deformation.to_dict()
        config_dict["train"] = self.train.to_dict()
        config_dict["baseline_grid"] = list(self.baseline_grid)
        return config_dict


def preset_config(preset: typing.Union[str, Preset], seed: typing.Optional[int] = None) -> RunConfig:
    """Expand a named preset into a run configuration"""
    try:
        preset = Preset(preset)
    except ValueError as e:
        raise ConfigError(f"Unknown preset: {preset}") from e

    if seed is None:
        seed = default_seed()

    config = RunConfig(
        preset=preset,
        seed=seed,
        deformation=DeformationSpec(kind=DeformationKind.ELASTIC, max_displacement=10.0),
        train=TrainConfig(seed=seed),
    )

    if preset == Preset.PAPER:
        config.n_phantoms = 26
        config.deformations_per_pair = 1500
        config.generator_channels = 64
        config.generator_blocks = 4
        config.discriminator_channels = 64
        config.train = dataclasses.replace(
            config.train, pretrain_iters=100000, gan_iters=100000
        )
    elif preset == Preset.NCYC:
        config.train = dataclasses.replace(config.train, lambda_cyc=0.0)

    return config


def _apply_section(target: typing.Any, values: typing.Mapping[str, typing.Any], section: str):
    """Replace dataclass fields from a mapping, rejecting unknown keys"""
    known = {f.name for f in dataclasses.fields(target)}
    for key in values:
        if key not in known:
            raise ConfigError(f"Unknown config key: {section}{key}")

    try:
        return dataclasses.replace(target, **values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {section or 'config'} values: {e}") from e


def config_from_dict(
    values: typing.Mapping[str, typing.Any], preset: typing.Optional[str] = None
) -> RunConfig:
    """Preset (from argument, file, or desk) overlaid with file values"""
    values = dict(values)
    preset_name = preset or values.pop("preset", None) or Preset.DESK.value
    values.pop("preset", None)

    seed = values.get("seed")
    config = preset_config(preset_name, seed=seed)

    deformation_values = values.pop("deformation", None)
    train_values = values.pop("train", None)

    config = _apply_section(config, values, "")
    if deformation_values is not None:
        config.deformation = _apply_section(
            config.deformation, deformation_values, "deformation."
        )

    if train_values is not None:
        config.train = _apply_section(config.train, train_values, "train.")

    if (seed is not None) and (train_values is None or "seed" not in train_values):
        config.train = dataclasses.replace(config.train, seed=config.seed)

    config.validate()

    return config


def load_config(
    path: typing.Optional[typing.Union[str, Path]] = None,
    preset: typing.Optional[str] = None,
) -> RunConfig:
    """Load a JSON run configuration (or just a preset when path is None)"""
    if path is None:
        return config_from_dict({}, preset=preset)

    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            values = json.load(config_file)
    except OSError as e:
        raise ConfigError(f"Unable to read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config is not valid JSON: {path}: {e}") from e

    if not isinstance(values, dict):
        raise ConfigError(f"Config must be a JSON object: {path}")

    _LOGGER.debug("Loaded config from %s", path)

    return config_from_dict(values, preset=preset)
