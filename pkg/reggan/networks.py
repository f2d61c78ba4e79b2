#!/usr/bin/env python3
"""Generator (residual CNN emitting a deformation field) and discriminator"""
import dataclasses
import json
import logging
import struct
import threading
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from reggan.constants import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    BorderPolicy,
    DimensionMismatchError,
    DivergenceError,
    MissingCheckpointError,
)
from reggan.imaging import warp
from reggan.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    LeakyReLU,
    ReLU,
    Residual,
    Sequential,
    Sigmoid,
    Tanh,
)

_LOGGER = logging.getLogger("reggan")

_FLOAT_LE = np.dtype("<f8")

# -----------------------------------------------------------------------------


@dataclass
class GeneratorConfig:
    """Architecture of the registration generator"""

    channels: int = 32
    blocks: int = 4
    max_displacement: float = 10.0
    seed: int = 0


@dataclass
class DiscriminatorConfig:
    """Architecture of a discriminator"""

    channels: int = 8
    height: int = 64
    width: int = 64
    dense_units: int = 128
    seed: int = 0


@dataclass
class NetworkParams:
    """Snapshot of the complete learnable state of a network"""

    architecture: typing.Dict[str, typing.Any]
    params: typing.List[np.ndarray]
    buffers: typing.List[np.ndarray]

    def is_finite(self) -> bool:
        """True if every parameter and statistic is finite"""
        return all(np.all(np.isfinite(p)) for p in self.params + self.buffers)


@dataclass
class GeneratorOutput:
    """Registration produced by a single generator pass"""

    field: np.ndarray
    trans: np.ndarray
    time_s: typing.Optional[float] = None


# -----------------------------------------------------------------------------


class Network:
    """Layer stack with an architecture descriptor and finiteness checks"""

    kind = "network"

    def __init__(self, body: Layer, config: typing.Any):
        self.body = body
        self.config = config

        # Layers record activations, so passes must not interleave
        self.lock = threading.RLock()

    @property
    def architecture(self) -> typing.Dict[str, typing.Any]:
        """JSON-compatible descriptor used to rebuild the network"""
        return {"kind": self.kind, **dataclasses.asdict(self.config)}

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass; raises on non-finite activations"""
        out = self.body.forward(x)
        if not np.all(np.isfinite(out)):
            raise DivergenceError(f"Non-finite {self.kind} output")

        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backward pass; returns gradient w.r.t. the network input"""
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"Non-finite upstream gradient into {self.kind}")

        return self.body.backward(grad)

    def zero_grad(self):
        """Reset accumulated parameter gradients"""
        self.body.zero_grad()

    def train(self):
        """Batch statistics mode"""
        self.body.train()

    def eval(self):
        """Frozen running statistics mode"""
        self.body.eval()

    def parameters(self) -> typing.List[np.ndarray]:
        """Parameter arrays (updated in place by optimizers)"""
        return [value for _, value in self.body.named_params()]

    def gradients(self) -> typing.List[np.ndarray]:
        """Gradient arrays aligned with parameters()"""
        return [value for _, value in self.body.named_grads()]

    def num_parameters(self) -> int:
        """Count of learnable scalars"""
        return sum(p.size for p in self.parameters())

    def snapshot(self) -> NetworkParams:
        """Deep copy of parameters and running statistics"""
        return NetworkParams(
            architecture=self.architecture,
            params=[p.copy() for p in self.parameters()],
            buffers=[b.copy() for _, b in self.body.named_buffers()],
        )

    def restore(self, snapshot: NetworkParams):
        """Load parameters and running statistics from a snapshot"""
        params = self.parameters()
        buffers = [b for _, b in self.body.named_buffers()]
        if (len(params) != len(snapshot.params)) or (
            len(buffers) != len(snapshot.buffers)
        ):
            raise DimensionMismatchError("Snapshot does not match architecture")

        for target, source in zip(params + buffers, snapshot.params + snapshot.buffers):
            if target.shape != source.shape:
                raise DimensionMismatchError(
                    f"Parameter shape {source.shape} does not match {target.shape}"
                )

            target[...] = source


class Generator(Network):
    """Residual CNN mapping (floating, reference) to a bounded deformation field"""

    kind = "generator"

    def __init__(self, config: GeneratorConfig):
        if config.channels < 8:
            raise ValueError(f"Generator needs at least 8 channels, got {config.channels}")

        if config.blocks < 1:
            raise ValueError(f"Generator needs at least 1 residual block, got {config.blocks}")

        rng = np.random.default_rng(config.seed)
        channels = config.channels

        blocks: typing.List[Layer] = []
        for _ in range(config.blocks):
            blocks.append(
                Residual(
                    Sequential(
                        [
                            Conv2d(channels, channels, rng),
                            BatchNorm2d(channels),
                            ReLU(),
                            Conv2d(channels, channels, rng),
                            BatchNorm2d(channels),
                        ]
                    )
                )
            )

        trunk = Residual(
            Sequential(blocks + [Conv2d(channels, channels, rng), BatchNorm2d(channels)])
        )

        # Zero output layer: an untrained generator emits the identity field
        self.output_conv = Conv2d(channels, 2, rng, zero_init=True)
        self.output_scale = Tanh(scale=config.max_displacement)
        body = Sequential(
            [
                Conv2d(2, channels, rng),
                ReLU(),
                trunk,
                self.output_conv,
                self.output_scale,
            ]
        )

        super().__init__(body, config)

    def reset_to_identity(self):
        """Zero the output layer so every pair maps to a zero field"""
        with self.lock:
            for value in self.output_conv.params.values():
                value[...] = 0.0

    def forward_pair(
        self,
        flt: np.ndarray,
        ref: np.ndarray,
        max_disp: typing.Optional[float] = None,
        border: BorderPolicy = BorderPolicy.CLAMP,
    ) -> typing.Tuple[np.ndarray, np.ndarray]:
        """Batched registration: (N, H, W) inputs -> fields (N, 2, H, W), trans (N, H, W)"""
        if flt.shape != ref.shape:
            raise DimensionMismatchError(
                f"Floating {flt.shape} and reference {ref.shape} shapes differ"
            )

        with self.lock:
            self.output_scale.scale = (
                self.config.max_displacement if max_disp is None else max_disp
            )
            fields = self.forward(np.stack((flt, ref), axis=1))

        trans = warp(flt, fields, border=border)

        return fields, trans


class Discriminator(Network):
    """Strided CNN scoring (candidate, reference) pairs with a probability"""

    kind = "discriminator"

    def __init__(self, config: DiscriminatorConfig):
        if config.channels < 1:
            raise ValueError(f"Bad discriminator width: {config.channels}")

        rng = np.random.default_rng(config.seed)
        widths = conv_widths(config.channels)

        layers: typing.List[Layer] = []
        in_channels = 2
        height, width = config.height, config.width
        for layer_idx, out_channels in enumerate(widths):
            conv = Conv2d(in_channels, out_channels, rng, stride=1 + (layer_idx % 2))
            layers.append(conv)
            if layer_idx > 0:
                layers.append(BatchNorm2d(out_channels))

            layers.append(LeakyReLU(0.2))

            height, width = conv.output_size(height), conv.output_size(width)
            in_channels = out_channels

        features = in_channels * height * width
        layers.extend(
            [
                Flatten(),
                Dense(features, config.dense_units, rng),
                LeakyReLU(0.2),
                Dense(config.dense_units, 1, rng),
                Sigmoid(),
            ]
        )

        super().__init__(Sequential(layers), config)

    def forward_pair(self, img: np.ndarray, ref: np.ndarray) -> np.ndarray:
        """Batched probabilities for (N, H, W) candidates and references"""
        if img.shape != ref.shape:
            raise DimensionMismatchError(
                f"Candidate {img.shape} and reference {ref.shape} shapes differ"
            )

        if img.shape[-2:] != (self.config.height, self.config.width):
            raise DimensionMismatchError(
                f"Discriminator built for {self.config.height}x{self.config.width}, "
                f"got {img.shape[-2]}x{img.shape[-1]}"
            )

        return self.forward(np.stack((img, ref), axis=1))[:, 0]

    def backward_pair(self, grad: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
        """Gradient w.r.t. (candidate, reference) given d loss / d probability"""
        grad_input = self.backward(grad[:, None])
        return grad_input[:, 0], grad_input[:, 1]


def conv_widths(channels: int) -> typing.List[int]:
    """Doubling schedule c, c, 2c, 2c, 4c, 4c, 8c, 8c"""
    return [channels * (2 ** (i // 2)) for i in range(8)]


# -----------------------------------------------------------------------------


def build_generator(
    channels: int = 32, blocks: int = 4, seed: int = 0, max_displacement: float = 10.0
) -> Generator:
    """Seeded generator with fan-in scaled initialization"""
    return Generator(
        GeneratorConfig(
            channels=channels,
            blocks=blocks,
            max_displacement=max_displacement,
            seed=seed,
        )
    )


def build_discriminator(
    channels: int = 8,
    height: int = 64,
    width: int = 64,
    dense_units: int = 128,
    seed: int = 0,
) -> Discriminator:
    """Seeded discriminator for a fixed image size"""
    return Discriminator(
        DiscriminatorConfig(
            channels=channels,
            height=height,
            width=width,
            dense_units=dense_units,
            seed=seed,
        )
    )


def generator_forward(
    gen: Generator,
    ref: np.ndarray,
    flt: np.ndarray,
    max_disp: typing.Optional[float] = None,
) -> GeneratorOutput:
    """Register a single floating image to a reference"""
    fields, trans = gen.forward_pair(flt[None], ref[None], max_disp=max_disp)
    return GeneratorOutput(field=fields[0], trans=trans[0])


def discriminator_forward(disc: Discriminator, img: np.ndarray, ref: np.ndarray) -> float:
    """Probability that (img, ref) is a real aligned pair"""
    return float(disc.forward_pair(img[None], ref[None])[0])


# -----------------------------------------------------------------------------
# Checkpoints
# -----------------------------------------------------------------------------

_BUILDERS: typing.Dict[str, typing.Callable[[typing.Dict[str, typing.Any]], Network]] = {
    Generator.kind: lambda arch: Generator(GeneratorConfig(**arch)),
    Discriminator.kind: lambda arch: Discriminator(DiscriminatorConfig(**arch)),
}


def network_from_architecture(architecture: typing.Mapping[str, typing.Any]) -> Network:
    """Rebuild an (untrained) network from its descriptor"""
    arch = dict(architecture)
    kind = arch.pop("kind", None)
    builder = _BUILDERS.get(str(kind))
    if builder is None:
        raise ValueError(f"Unknown network kind: {kind}")

    return builder(arch)


def save_checkpoint(net: Network, path: typing.Union[str, Path]):
    """Write an RGPT checkpoint (descriptor, then parameter and statistic blocks)"""
    descriptor = json.dumps(net.architecture, sort_keys=True).encode("utf-8")

    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<B", CHECKPOINT_VERSION),
        struct.pack("<I", len(descriptor)),
        descriptor,
    ]

    snapshot = net.snapshot()
    for block in snapshot.params + snapshot.buffers:
        chunks.append(block.astype(_FLOAT_LE).tobytes(order="C"))

    Path(path).write_bytes(b"".join(chunks))
    _LOGGER.debug("Wrote %s checkpoint to %s", net.kind, path)


def load_checkpoint(path: typing.Union[str, Path]) -> Network:
    """Read an RGPT checkpoint into a fresh network"""
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpointError(f"Missing checkpoint: {path}")

    data = path.read_bytes()
    header_size = len(CHECKPOINT_MAGIC) + 1 + 4
    if (len(data) < header_size) or (not data.startswith(CHECKPOINT_MAGIC)):
        raise ValueError(f"Not a checkpoint: {path}")

    pos = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<B", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {version}: {path}")

    (descriptor_len,) = struct.unpack_from("<I", data, pos + 1)
    pos = header_size
    architecture = json.loads(data[pos : pos + descriptor_len].decode("utf-8"))
    pos += descriptor_len

    net = network_from_architecture(architecture)
    template = net.snapshot()

    blocks: typing.List[np.ndarray] = []
    for block in template.params + template.buffers:
        num_bytes = block.size * _FLOAT_LE.itemsize
        raw = data[pos : pos + num_bytes]
        if len(raw) != num_bytes:
            raise ValueError(f"Truncated checkpoint: {path}")

        blocks.append(np.frombuffer(raw, dtype=_FLOAT_LE).reshape(block.shape))
        pos += num_bytes

    num_params = len(template.params)
    net.restore(
        NetworkParams(
            architecture=architecture,
            params=blocks[:num_params],
            buffers=blocks[num_params:],
        )
    )

    _LOGGER.debug("Loaded %s checkpoint from %s", net.kind, path)

    return net
