#!/usr/bin/env python3
"""Optimization recipe: MSE pretraining, then adversarial cycle training"""
import csv
import dataclasses
import io
import logging
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reggan.constants import BorderPolicy, DimensionMismatchError, DivergenceError
from reggan.deformation import err_def
from reggan.imaging import warp, warp_gradient
from reggan.losses import (
    FeatureNet,
    LossWeights,
    adv_loss_d,
    adv_loss_d_grad,
    adv_loss_g,
    adv_loss_g_grad,
    content_loss,
    cycle_loss,
    get_feature_net,
    total_objective,
)
from reggan.metrics import dice
from reggan.networks import (
    Discriminator,
    Generator,
    GeneratorOutput,
    Network,
    NetworkParams,
    generator_forward,
    save_checkpoint,
)
from reggan.synthdata import RegistrationCase

_LOGGER = logging.getLogger("reggan")

# Cases per forward pass when scoring a whole dataset
_EVAL_CHUNK = 16

# -----------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Hyperparameters of pretraining and adversarial training"""

    lr_pretrain: float = 1e-3
    lr_gan: float = 1e-3
    beta1: float = 0.93
    beta2: float = 0.999
    eps: float = 1e-8
    pretrain_iters: int = 2000
    gan_iters: int = 3000
    batch_size: int = 4
    lambda_cyc: float = 10.0
    w_nmi: float = 1.0
    w_ssim: float = 1.0
    w_feat: float = 1.0
    validate_every: int = 200
    checkpoint_every: int = 0
    max_displacement: float = 10.0
    border: BorderPolicy = BorderPolicy.CLAMP
    seed: int = 0

    def __post_init__(self):
        self.border = BorderPolicy(self.border)

        if (self.lr_pretrain <= 0) or (self.lr_gan <= 0):
            raise ValueError(
                f"Learning rates must be positive: {self.lr_pretrain}, {self.lr_gan}"
            )

        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1), got {getattr(self, name)}")

        if (self.pretrain_iters < 0) or (self.gan_iters < 0):
            raise ValueError("Iteration counts must be nonnegative")

        if self.batch_size < 1:
            raise ValueError(f"Batch size must be positive, got {self.batch_size}")

        if self.validate_every < 1:
            raise ValueError(f"Validation interval must be positive: {self.validate_every}")

    def loss_weights(self) -> LossWeights:
        """Loss weights of the generator objective"""
        return LossWeights(
            lambda_cyc=self.lambda_cyc,
            w_nmi=self.w_nmi,
            w_ssim=self.w_ssim,
            w_feat=self.w_feat,
        )

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        """JSON-compatible representation"""
        config_dict = dataclasses.asdict(self)
        config_dict["border"] = self.border.value
        return config_dict


@dataclass
class TrainRecord:
    """Losses and validation results at one logged iteration"""

    iteration: int
    losses: typing.Dict[str, float]
    val_err_def: typing.Optional[float] = None
    val_dice: typing.Optional[float] = None
    wall_s: float = 0.0


@dataclass
class TrainLog:
    """Per-interval training records"""

    phase: str = "train"
    records: typing.List[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord):
        """Add a record (iterations must strictly increase)"""
        if self.records and (record.iteration <= self.records[-1].iteration):
            raise ValueError(
                f"Iteration {record.iteration} does not follow {self.records[-1].iteration}"
            )

        self.records.append(record)

    @property
    def loss_names(self) -> typing.List[str]:
        """Every loss term that appears in a record, in first-seen order"""
        names: typing.List[str] = []
        for record in self.records:
            for name in record.losses:
                if name not in names:
                    names.append(name)

        return names

    def to_csv(self, path: typing.Optional[typing.Union[str, Path]] = None) -> str:
        """CSV text with one row per record (written to path if given)"""
        loss_names = self.loss_names
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["phase", "iteration"] + loss_names + ["val_err_def", "val_dice", "wall_s"]
        )

        for record in self.records:
            row = [self.phase, str(record.iteration)]
            row.extend(_format_value(record.losses.get(name)) for name in loss_names)
            row.append(_format_value(record.val_err_def))
            row.append(_format_value(record.val_dice))
            row.append(f"{record.wall_s:.3f}")
            writer.writerow(row)

        text = out.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")

        return text


def _format_value(value: typing.Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


# -----------------------------------------------------------------------------
# Adam
# -----------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates and step count"""

    step: int = 0
    m: typing.List[np.ndarray] = field(default_factory=list)
    v: typing.List[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: typing.Sequence[np.ndarray]) -> "AdamState":
        """Zero moments matching a parameter list"""
        return AdamState(
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    state: AdamState,
    params: typing.Sequence[np.ndarray],
    grads: typing.Sequence[np.ndarray],
    lr: float,
    beta1: float = 0.93,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> typing.Tuple[AdamState, typing.Sequence[np.ndarray]]:
    """Bias-corrected Adam update, applied to params in place"""
    if len(params) != len(grads):
        raise DimensionMismatchError(
            f"{len(params)} parameter(s) but {len(grads)} gradient(s)"
        )

    if not state.m:
        state = AdamState.for_params(params)

    for grad in grads:
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("Non-finite gradient in optimizer step")

    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step

    for param, grad, m, v in zip(params, grads, state.m, state.v):
        if param.shape != grad.shape:
            raise DimensionMismatchError(
                f"Gradient shape {grad.shape} does not match parameter {param.shape}"
            )

        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad

        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)

    state.step = step

    return state, params


def _optimize(net: Network, state: AdamState, lr: float, config: TrainConfig) -> AdamState:
    state, params = adam_step(
        state,
        net.parameters(),
        net.gradients(),
        lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )

    if not all(np.all(np.isfinite(p)) for p in params):
        raise DivergenceError(f"Non-finite {net.kind} parameter after update")

    return state


# -----------------------------------------------------------------------------
# Data helpers
# -----------------------------------------------------------------------------


class _Stacked:
    """Dataset arrays stacked along a leading case axis"""

    def __init__(self, cases: typing.Sequence[RegistrationCase]):
        if not cases:
            raise ValueError("Dataset is empty")

        shapes = {case.ref.shape for case in cases}
        if len(shapes) != 1:
            raise DimensionMismatchError(f"Cases have different sizes: {sorted(shapes)}")

        self.cases = list(cases)
        self.ref = np.stack([c.ref for c in cases])
        self.flt = np.stack([c.flt for c in cases])
        self.flt_aligned = np.stack([c.flt_aligned for c in cases])
        self.ref_in_flt = np.stack([c.ref_in_flt_frame for c in cases])

    def __len__(self) -> int:
        return len(self.cases)


def _chunks(num: int, size: int) -> typing.Iterable[slice]:
    for start in range(0, num, size):
        yield slice(start, min(num, start + size))


def split_cases(
    cases: typing.Sequence[RegistrationCase], train_fraction: float = 0.8
) -> typing.Tuple[typing.List[RegistrationCase], typing.List[RegistrationCase]]:
    """Train/evaluation split by phantom (no phantom appears in both)"""
    if not 0 < train_fraction <= 1:
        raise ValueError(f"Train fraction must be in (0, 1], got {train_fraction}")

    phantoms = sorted({case.phantom for case in cases})
    if len(phantoms) < 2:
        return list(cases), []

    num_train = int(round(train_fraction * len(phantoms)))
    num_train = min(len(phantoms) - 1, max(1, num_train))
    train_phantoms = set(phantoms[:num_train])

    train = [case for case in cases if case.phantom in train_phantoms]
    held_out = [case for case in cases if case.phantom not in train_phantoms]

    return train, held_out


# -----------------------------------------------------------------------------
# Pretraining
# -----------------------------------------------------------------------------


def dataset_mse(
    gen: Generator, cases: typing.Sequence[RegistrationCase], config: TrainConfig
) -> float:
    """Mean squared error between registered floating images and their aligned originals"""
    data = _Stacked(cases)
    gen.eval()

    total = 0.0
    with gen.lock:
        for chunk in _chunks(len(data), max(config.batch_size, _EVAL_CHUNK)):
            _, trans = gen.forward_pair(
                data.flt[chunk],
                data.ref[chunk],
                max_disp=config.max_displacement,
                border=config.border,
            )
            total += float(np.sum((trans - data.flt_aligned[chunk]) ** 2))

    return total / data.flt_aligned.size


def pretrain_generator(
    config: TrainConfig,
    dataset: typing.Sequence[RegistrationCase],
    gen: Generator,
) -> typing.Tuple[Generator, TrainLog]:
    """Initialize a generator by minimizing MSE(warp(flt, G(flt, ref)), flt_aligned).

    The target is the floating image in the reference pose, so the loss never
    compares intensities across modalities. For unimodal data flt_aligned
    equals ref. The snapshot with the lowest full-dataset MSE is kept, so the
    returned generator is never worse than the one passed in.
    """
    data = _Stacked(dataset)
    rng = np.random.default_rng(config.seed)
    log = TrainLog(phase="pretrain")
    start_time = time.perf_counter()

    best = gen.snapshot()
    best_mse = dataset_mse(gen, dataset, config)
    _LOGGER.info(
        "Pretraining generator for %s iteration(s) (initial MSE %.6f)",
        config.pretrain_iters,
        best_mse,
    )
    log.append(TrainRecord(iteration=0, losses={"mse": best_mse}))

    state = AdamState()
    try:
        for iteration in range(1, config.pretrain_iters + 1):
            idx = rng.integers(0, len(data), size=config.batch_size)
            flt, ref, target = data.flt[idx], data.ref[idx], data.flt_aligned[idx]

            gen.train()
            gen.zero_grad()
            with gen.lock:
                fields, trans = gen.forward_pair(
                    flt, ref, max_disp=config.max_displacement, border=config.border
                )
                diff = trans - target
                loss = float(np.mean(diff * diff))
                if not np.isfinite(loss):
                    raise DivergenceError(f"Non-finite pretraining loss at {iteration}")

                _, grad_fields = warp_gradient(
                    flt, fields, 2.0 * diff / diff.size, border=config.border
                )
                gen.backward(grad_fields)

            state = _optimize(gen, state, config.lr_pretrain, config)

            if (iteration % config.validate_every == 0) or (
                iteration == config.pretrain_iters
            ):
                current = dataset_mse(gen, dataset, config)
                _LOGGER.debug(
                    "Pretrain %s: batch %.6f, dataset %.6f", iteration, loss, current
                )
                if current < best_mse:
                    best, best_mse = gen.snapshot(), current

                log.append(
                    TrainRecord(
                        iteration=iteration,
                        losses={"mse": current},
                        wall_s=time.perf_counter() - start_time,
                    )
                )
    except DivergenceError as e:
        raise DivergenceError(str(e), last_good=best) from e

    gen.restore(best)
    gen.eval()
    _LOGGER.info("Pretraining finished (best MSE %.6f)", best_mse)

    return gen, log


# -----------------------------------------------------------------------------
# Adversarial cycle training
# -----------------------------------------------------------------------------


@dataclass
class CycleGanModels:
    """Both registrars and both discriminators"""

    # flt -> ref registrar
    gen_g: Generator

    # ref -> flt registrar
    gen_f: Generator

    # Judges (candidate, ref) pairs
    disc_ref: Discriminator

    # Judges (candidate, flt) pairs
    disc_flt: Discriminator

    def networks(self) -> typing.Dict[str, Network]:
        """Networks by checkpoint name"""
        return {
            "gen_g": self.gen_g,
            "gen_f": self.gen_f,
            "disc_ref": self.disc_ref,
            "disc_flt": self.disc_flt,
        }

    def snapshot(self) -> typing.Dict[str, NetworkParams]:
        """Snapshots of all four networks"""
        return {name: net.snapshot() for name, net in self.networks().items()}

    def restore(self, snapshot: typing.Mapping[str, NetworkParams]):
        """Restore all four networks"""
        for name, net in self.networks().items():
            net.restore(snapshot[name])

    def train(self):
        """Batch statistics mode"""
        for net in self.networks().values():
            net.train()

    def eval(self):
        """Frozen statistics mode"""
        for net in self.networks().values():
            net.eval()


@dataclass
class CycleGradients:
    """Cycle loss value and its gradients w.r.t. warped images and fields"""

    value: float
    trans_g: np.ndarray
    trans_f: np.ndarray
    fields_g: np.ndarray
    fields_f: np.ndarray


def cycle_gradients(
    flt: np.ndarray,
    ref: np.ndarray,
    trans_g: np.ndarray,
    trans_f: np.ndarray,
    fields_g: np.ndarray,
    fields_f: np.ndarray,
    lambda_cyc: float,
    border: BorderPolicy = BorderPolicy.CLAMP,
) -> CycleGradients:
    """lambda * cycle loss of warp(trans_g, F) ~ flt and warp(trans_f, G) ~ ref"""
    flt_roundtrip = warp(trans_g, fields_f, border=border)
    ref_roundtrip = warp(trans_f, fields_g, border=border)

    value, grad_flt_rt, grad_ref_rt = cycle_loss(flt, flt_roundtrip, ref, ref_roundtrip)

    grad_trans_g, grad_fields_f = warp_gradient(
        trans_g, fields_f, lambda_cyc * grad_flt_rt, border=border
    )
    grad_trans_f, grad_fields_g = warp_gradient(
        trans_f, fields_g, lambda_cyc * grad_ref_rt, border=border
    )

    return CycleGradients(
        value=value,
        trans_g=grad_trans_g,
        trans_f=grad_trans_f,
        fields_g=grad_fields_g,
        fields_f=grad_fields_f,
    )


def _content_batch(
    weights: LossWeights, feat: FeatureNet, trans: np.ndarray, target: np.ndarray
) -> typing.Tuple[float, np.ndarray]:
    """Mean content loss over a batch and its gradient"""
    if (weights.w_nmi == 0) and (weights.w_ssim == 0) and (weights.w_feat == 0):
        return 0.0, np.zeros_like(trans)

    value = 0.0
    grad = np.zeros_like(trans)
    for i in range(len(trans)):
        item_value, item_grad = content_loss(weights, feat, trans[i], target[i])
        value += item_value / len(trans)
        grad[i] = item_grad / len(trans)

    return value, grad


def _discriminator_step(
    disc: Discriminator,
    real: np.ndarray,
    fake: np.ndarray,
    condition: np.ndarray,
) -> float:
    """Accumulate discriminator gradients for a real and a fake batch"""
    num = len(real)
    disc.train()
    disc.zero_grad()
    with disc.lock:
        # Real and fake share one pass (and one set of batch statistics)
        probs = disc.forward_pair(
            np.concatenate((real, fake)), np.concatenate((condition, condition))
        )
        p_real, p_fake = probs[:num], probs[num:]
        grad_real, grad_fake = adv_loss_d_grad(p_real, p_fake)
        disc.backward_pair(np.concatenate((grad_real, grad_fake)))

    return adv_loss_d(p_real, p_fake)


def _adversarial_grad(
    disc: Discriminator, fake: np.ndarray, condition: np.ndarray
) -> typing.Tuple[float, np.ndarray]:
    """Non-saturating generator loss and its gradient w.r.t. the fake images"""
    with disc.lock:
        p_fake = disc.forward_pair(fake, condition)
        grad_fake, _ = disc.backward_pair(adv_loss_g_grad(p_fake))

    return adv_loss_g(p_fake), grad_fake


def validate(
    gen: Generator,
    cases: typing.Sequence[RegistrationCase],
    config: TrainConfig,
) -> typing.Tuple[float, float]:
    """Mean Err_Def and mean Dice of a registrar on held-out cases"""
    gen.eval()
    errors: typing.List[float] = []
    overlaps: typing.List[float] = []
    for case in cases:
        output = register(gen, case.ref, case.flt, max_disp=config.max_displacement)
        errors.append(err_def(case.target_field, output.field))
        warped_mask = (
            warp(case.mask_flt_deformed.astype(np.float64), output.field, border=config.border)
            >= 0.5
        )
        overlaps.append(dice(case.mask_ref, warped_mask))

    return float(np.mean(errors)), float(np.mean(overlaps))


def train_cyclegan(
    config: TrainConfig,
    dataset: typing.Sequence[RegistrationCase],
    gen_g: Generator,
    gen_f: Generator,
    disc_ref: Discriminator,
    disc_flt: Discriminator,
    validation: typing.Optional[typing.Sequence[RegistrationCase]] = None,
    feature_net: typing.Optional[FeatureNet] = None,
    checkpoint_dir: typing.Optional[typing.Union[str, Path]] = None,
) -> typing.Tuple[CycleGanModels, TrainLog]:
    """Alternate one discriminator step and one registrar step per iteration.

    Returns the models at the best validation Err_Def (checked every
    validate_every iterations and at the end). The starting registrar and
    the identity registrar are both candidates, so the result never scores
    worse on the validation cases than leaving them unregistered.
    """
    data = _Stacked(dataset)
    if validation is None:
        validation = dataset

    for disc in (disc_ref, disc_flt):
        if data.ref.shape[1:] != (disc.config.height, disc.config.width):
            raise DimensionMismatchError(
                f"Discriminator built for {disc.config.height}x{disc.config.width}, "
                f"dataset is {data.ref.shape[2]}x{data.ref.shape[1]}"
            )

    models = CycleGanModels(gen_g=gen_g, gen_f=gen_f, disc_ref=disc_ref, disc_flt=disc_flt)
    weights = config.loss_weights()
    feat = feature_net or get_feature_net(config.seed)
    rng = np.random.default_rng(config.seed)
    states = {name: AdamState() for name in models.networks()}
    log = TrainLog(phase="gan")
    start_time = time.perf_counter()
    border = config.border

    best = models.snapshot()
    best_err: typing.Optional[float] = None
    if validation:
        best_err, best_dice = validate(gen_g, validation, config)
        log.append(
            TrainRecord(iteration=0, losses={}, val_err_def=best_err, val_dice=best_dice)
        )
        _LOGGER.info("Validation before adversarial training: Err_Def %.4f", best_err)

        # Identity registrar is always a candidate
        start_g = gen_g.snapshot()
        gen_g.reset_to_identity()
        identity_err, _ = validate(gen_g, validation, config)
        if identity_err < best_err:
            _LOGGER.info("Identity registrar is better (Err_Def %.4f)", identity_err)
            best = models.snapshot()
            best_err = identity_err

        gen_g.restore(start_g)

    _LOGGER.info("Adversarial training for %s iteration(s)", config.gan_iters)

    try:
        for iteration in range(1, config.gan_iters + 1):
            idx = rng.integers(0, len(data), size=config.batch_size)
            flt, ref = data.flt[idx], data.ref[idx]

            models.train()
            gen_g.zero_grad()
            gen_f.zero_grad()

            with gen_g.lock, gen_f.lock:
                fields_g, trans_g = gen_g.forward_pair(
                    flt, ref, max_disp=config.max_displacement, border=border
                )
                fields_f, trans_f = gen_f.forward_pair(
                    ref, flt, max_disp=config.max_displacement, border=border
                )

                # Discriminators
                loss_d_ref = _discriminator_step(
                    disc_ref, data.flt_aligned[idx], trans_g, ref
                )
                loss_d_flt = _discriminator_step(
                    disc_flt, data.ref_in_flt[idx], trans_f, flt
                )
                states["disc_ref"] = _optimize(
                    disc_ref, states["disc_ref"], config.lr_gan, config
                )
                states["disc_flt"] = _optimize(
                    disc_flt, states["disc_flt"], config.lr_gan, config
                )

                # Registrars
                adv_g, grad_trans_g = _adversarial_grad(disc_ref, trans_g, ref)
                adv_f, grad_trans_f = _adversarial_grad(disc_flt, trans_f, flt)

                content_g, grad_content_g = _content_batch(weights, feat, trans_g, ref)
                content_f, grad_content_f = _content_batch(weights, feat, trans_f, flt)

                cycle = cycle_gradients(
                    flt, ref, trans_g, trans_f, fields_g, fields_f, weights.lambda_cyc, border
                )

                total = total_objective(
                    weights, {"adv_G": adv_g, "adv_F": adv_f, "cyc": cycle.value}
                )
                total += content_g + content_f
                if not np.isfinite(total):
                    raise DivergenceError(f"Non-finite objective at iteration {iteration}")

                _, grad_fields_g = warp_gradient(
                    flt,
                    fields_g,
                    grad_trans_g + grad_content_g + cycle.trans_g,
                    border=border,
                )
                _, grad_fields_f = warp_gradient(
                    ref,
                    fields_f,
                    grad_trans_f + grad_content_f + cycle.trans_f,
                    border=border,
                )

                gen_g.backward(grad_fields_g + cycle.fields_g)
                gen_f.backward(grad_fields_f + cycle.fields_f)

            states["gen_g"] = _optimize(gen_g, states["gen_g"], config.lr_gan, config)
            states["gen_f"] = _optimize(gen_f, states["gen_f"], config.lr_gan, config)

            losses = {
                "d_ref": loss_d_ref,
                "d_flt": loss_d_flt,
                "adv_g": adv_g,
                "adv_f": adv_f,
                "cyc": cycle.value,
                "content_g": content_g,
                "content_f": content_f,
                "total": total,
            }
            _LOGGER.debug("Iteration %s: %s", iteration, losses)

            is_last = iteration == config.gan_iters
            if (iteration % config.validate_every == 0) or is_last:
                val_err: typing.Optional[float] = None
                val_dice: typing.Optional[float] = None
                if validation:
                    val_err, val_dice = validate(gen_g, validation, config)
                    _LOGGER.info(
                        "Iteration %s: validation Err_Def %.4f, Dice %.4f",
                        iteration,
                        val_err,
                        val_dice,
                    )
                    if (best_err is None) or (val_err < best_err):
                        best, best_err = models.snapshot(), val_err
                else:
                    best = models.snapshot()

                log.append(
                    TrainRecord(
                        iteration=iteration,
                        losses=losses,
                        val_err_def=val_err,
                        val_dice=val_dice,
                        wall_s=time.perf_counter() - start_time,
                    )
                )

            if (
                (checkpoint_dir is not None)
                and (config.checkpoint_every > 0)
                and (iteration % config.checkpoint_every == 0)
            ):
                save_models(models, checkpoint_dir)
    except DivergenceError as e:
        raise DivergenceError(str(e), last_good=best) from e

    models.restore(best)
    models.eval()

    return models, log


def save_models(models: CycleGanModels, directory: typing.Union[str, Path]):
    """Write one RGPT checkpoint per network"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in models.networks().items():
        save_checkpoint(net, directory / f"{name}.rgpt")

    _LOGGER.info("Wrote checkpoints to %s", directory)


# -----------------------------------------------------------------------------


def register(
    gen: Generator,
    ref: np.ndarray,
    flt: np.ndarray,
    max_disp: typing.Optional[float] = None,
) -> GeneratorOutput:
    """Single-pass registration of flt onto ref with frozen statistics"""
    ref = np.asarray(ref, dtype=np.float64)
    flt = np.asarray(flt, dtype=np.float64)
    if ref.shape != flt.shape:
        raise DimensionMismatchError(
            f"Reference {ref.shape} and floating {flt.shape} shapes differ"
        )

    with gen.lock:
        gen.eval()
        start_time = time.perf_counter()
        output = generator_forward(gen, ref, flt, max_disp=max_disp)
        output.time_s = time.perf_counter() - start_time

    _LOGGER.debug("Registered %sx%s pair in %.3f s", ref.shape[1], ref.shape[0], output.time_s)

    return output
