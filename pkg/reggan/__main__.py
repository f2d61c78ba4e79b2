#!/usr/bin/env python3
"""Command-line interface to reggan"""
import argparse
import dataclasses
import json
import logging
import shutil
import sys
import typing
from pathlib import Path

from reggan.constants import (
    ConfigError,
    DivergenceError,
    Method,
    Preset,
    ReportFormat,
)

# -----------------------------------------------------------------------------

_LOGGER = logging.getLogger("reggan")

EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_PARTIAL = 4

# -----------------------------------------------------------------------------


def main(argv: typing.Optional[typing.Sequence[str]] = None):
    """Main entry point"""
    args = get_args(argv)

    if args.debug:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.INFO)

    _LOGGER.debug(args)

    try:
        # Dispatch to sub-command
        args.func(args)
    except DivergenceError as e:
        _LOGGER.fatal("Training diverged: %s", e)
        sys.exit(EXIT_DIVERGENCE)
    except (ValueError, FileNotFoundError) as e:
        # ConfigError, DimensionMismatchError, ImageFormatError, bad checkpoints
        _LOGGER.fatal(e)
        sys.exit(EXIT_USAGE)


# -----------------------------------------------------------------------------


def resolve_config(args):
    """Config file or preset, then command-line overrides (flags win)"""
    from reggan.config import load_config

    config = load_config(args.config, preset=args.preset)

    if args.seed is not None:
        config.seed = args.seed
        config.train = dataclasses.replace(config.train, seed=args.seed)

    return config


def do_simulate(args):
    """Write a synthetic registration dataset"""
    from reggan.synthdata import build_dataset, write_dataset

    config = resolve_config(args)
    for arg_name, config_name in (
        ("phantoms", "n_phantoms"),
        ("deformations", "deformations_per_pair"),
        ("width", "width"),
        ("height", "height"),
    ):
        value = getattr(args, arg_name)
        if value is not None:
            setattr(config, config_name, value)

    if args.max_displacement is not None:
        config.deformation = dataclasses.replace(
            config.deformation, max_displacement=args.max_displacement
        )

    if args.unimodal:
        config.multimodal = False

    out_dir = Path(args.out)
    config.dataset_dir = str(out_dir.resolve())
    config.validate()

    if args.dry_run:
        print(json.dumps(config.to_dict(), indent=4, sort_keys=True))
        return

    if out_dir.is_dir() and any(out_dir.iterdir()):
        if not args.force:
            raise ConfigError(f"Output directory is not empty (use --force): {out_dir}")

        cases_dir = out_dir / "cases"
        if cases_dir.is_dir():
            shutil.rmtree(cases_dir)

    out_dir.mkdir(parents=True, exist_ok=True)

    cases = build_dataset(
        config.n_phantoms,
        config.deformations_per_pair,
        config.deformation,
        seed=config.seed,
        width=config.width,
        height=config.height,
        multimodal=config.multimodal,
    )
    write_dataset(cases, out_dir, config=config.to_dict())

    print(len(cases))


# -----------------------------------------------------------------------------


def _save_last_good(last_good: typing.Any, out_dir: Path):
    """Write whatever finite state survived a divergence"""
    from reggan.networks import network_from_architecture, save_checkpoint

    if last_good is None:
        return

    snapshots = last_good if isinstance(last_good, dict) else {"gen_g": last_good}
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, snapshot in snapshots.items():
        net = network_from_architecture(snapshot.architecture)
        net.restore(snapshot)
        save_checkpoint(net, out_dir / f"{name}.rgpt")

    _LOGGER.info("Kept last good checkpoint(s) in %s", out_dir)


def do_train(args):
    """Pretrain, then adversarially train, the registration networks"""
    from reggan.networks import build_discriminator, build_generator
    from reggan.synthdata import read_dataset
    from reggan.training import pretrain_generator, save_models, split_cases, train_cyclegan
    from reggan.utils import derive_seed

    config = resolve_config(args)
    for arg_name in ("pretrain_iters", "gan_iters", "batch_size"):
        value = getattr(args, arg_name)
        if value is not None:
            config.train = dataclasses.replace(config.train, **{arg_name: value})

    train_config = config.train
    if args.dry_run:
        print(
            f"beta1={train_config.beta1:g} lambda={train_config.lambda_cyc:g} "
            f"lr={train_config.lr_gan:g} iters={train_config.gan_iters} "
            f"pretrain_iters={train_config.pretrain_iters}"
        )
        return

    if not args.dataset:
        raise ConfigError("Training needs --dataset")

    dataset_dir = Path(args.dataset)
    if not dataset_dir.is_dir():
        raise FileNotFoundError(f"Missing dataset: {dataset_dir}")

    cases = read_dataset(dataset_dir)
    if not cases:
        raise ConfigError(f"Dataset has no cases: {dataset_dir}")

    train_cases, held_out = split_cases(cases, config.train_fraction)
    height, width = cases[0].ref.shape
    seed = config.seed

    gen_g = build_generator(
        channels=config.generator_channels,
        blocks=config.generator_blocks,
        seed=derive_seed(seed, 0),
        max_displacement=train_config.max_displacement,
    )
    gen_f = build_generator(
        channels=config.generator_channels,
        blocks=config.generator_blocks,
        seed=derive_seed(seed, 1),
        max_displacement=train_config.max_displacement,
    )
    disc_ref, disc_flt = (
        build_discriminator(
            channels=config.discriminator_channels,
            height=height,
            width=width,
            dense_units=config.discriminator_dense_units,
            seed=derive_seed(seed, disc_idx),
        )
        for disc_idx in (2, 3)
    )

    out_dir = Path(args.out) if args.out else dataset_dir / "model"
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        gen_g, pretrain_log = pretrain_generator(train_config, train_cases, gen_g)
        pretrain_log.to_csv(out_dir / "pretrain_log.csv")

        models, gan_log = train_cyclegan(
            train_config,
            train_cases,
            gen_g,
            gen_f,
            disc_ref,
            disc_flt,
            validation=held_out,
            checkpoint_dir=out_dir,
        )
    except DivergenceError as e:
        _save_last_good(e.last_good, out_dir)
        raise

    save_models(models, out_dir)
    gan_log.to_csv(out_dir / "train_log.csv")

    with open(out_dir / "config.json", "w", encoding="utf-8") as config_file:
        json.dump(config.to_dict(), config_file, indent=4, sort_keys=True)

    print(out_dir / "gen_g.rgpt")


# -----------------------------------------------------------------------------


def do_register(args):
    """Register a floating image to a reference in a single pass"""
    from reggan.imaging import load_image, save_field, save_image
    from reggan.networks import Generator, load_checkpoint
    from reggan.training import register

    gen = load_checkpoint(args.checkpoint)
    if not isinstance(gen, Generator):
        raise ConfigError(f"Checkpoint is not a generator: {args.checkpoint}")

    ref = load_image(args.ref)
    flt = load_image(args.flt)
    output = register(gen, ref, flt)

    save_image(output.trans, args.out)
    if args.out_field:
        save_field(output.field, args.out_field)

    print(f"time_s={output.time_s:.3f}")


# -----------------------------------------------------------------------------


def do_evaluate(args):
    """Evaluate registration methods on a dataset"""
    from reggan.harness import (
        EvaluationArtifacts,
        aggregate,
        evaluate_cases,
        render_cases,
        render_report,
    )
    from reggan.networks import Generator, load_checkpoint
    from reggan.synthdata import read_dataset
    from reggan.training import split_cases

    config = resolve_config(args)
    if args.jobs is not None:
        config.jobs = args.jobs

    if args.pixel_size is not None:
        config.pixel_size_mm = args.pixel_size

    config.validate()

    methods = [Method(m) for m in args.methods]

    # All checkpoints must exist before any case runs
    checkpoint_args = {
        Method.GAN_REG: args.gan_checkpoint,
        Method.GAN_REG_NCYC: args.ncyc_checkpoint,
    }
    generators: typing.Dict[Method, Generator] = {}
    for method, checkpoint_path in checkpoint_args.items():
        if method not in methods:
            continue

        if not checkpoint_path:
            raise ConfigError(f"Method {method.value} needs a checkpoint")

        gen = load_checkpoint(checkpoint_path)
        if not isinstance(gen, Generator):
            raise ConfigError(f"Checkpoint is not a generator: {checkpoint_path}")

        generators[method] = gen

    dataset_dir = Path(args.dataset)
    if not dataset_dir.is_dir():
        raise FileNotFoundError(f"Missing dataset: {dataset_dir}")

    cases = read_dataset(dataset_dir)
    if args.split == "eval":
        _, held_out = split_cases(cases, config.train_fraction)
        if held_out:
            cases = held_out
        else:
            _LOGGER.warning("No held-out phantoms; evaluating every case")

    artifacts = EvaluationArtifacts(
        generators=generators,
        baseline_grid=config.baseline_grid,
        baseline_iters=config.baseline_iters,
        baseline_step=config.baseline_step,
        pixel_size_mm=config.pixel_size_mm,
        mask_only=args.mask_only,
        border=config.train.border,
    )

    reports, failures = evaluate_cases(cases, methods, artifacts, jobs=config.jobs)

    out_dir = Path(args.out) if args.out else dataset_dir / "results"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "cases.csv").write_bytes(render_cases(reports))

    if reports:
        table = aggregate(reports)
        (out_dir / "aggregate.csv").write_bytes(render_report(table, ReportFormat.CSV))
        (out_dir / "aggregate.json").write_bytes(render_report(table, ReportFormat.JSON))
        sys.stdout.write(render_report(table, ReportFormat.TEXT).decode("utf-8"))

    if failures:
        _LOGGER.fatal("%s evaluation(s) failed", len(failures))
        sys.exit(EXIT_PARTIAL)


# -----------------------------------------------------------------------------


def do_report(args):
    """Aggregate a per-case CSV into a table"""
    from reggan.harness import aggregate, read_cases, render_report

    cases_path = Path(args.cases)
    if not cases_path.is_file():
        raise FileNotFoundError(f"Missing per-case CSV: {cases_path}")

    try:
        reports = read_cases(cases_path)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    if not reports:
        raise ConfigError(f"No reports in {cases_path}")

    report = render_report(aggregate(reports), args.format)
    if args.out:
        Path(args.out).write_bytes(report)
    else:
        sys.stdout.write(report.decode("utf-8"))


# -----------------------------------------------------------------------------


def get_args(argv: typing.Optional[typing.Sequence[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments"""
    parser = argparse.ArgumentParser(prog="reggan")

    # Create subparsers for each sub-command
    sub_parsers = parser.add_subparsers()
    sub_parsers.required = True
    sub_parsers.dest = "command"

    # --------
    # simulate
    # --------
    simulate_parser = sub_parsers.add_parser(
        "simulate", help="Write a synthetic multimodal dataset"
    )
    simulate_parser.set_defaults(func=do_simulate)
    simulate_parser.add_argument("--out", required=True, help="Dataset directory")
    simulate_parser.add_argument("--phantoms", type=int, help="Number of phantoms")
    simulate_parser.add_argument(
        "--deformations", type=int, help="Deformations per phantom pair"
    )
    simulate_parser.add_argument("--width", type=int, help="Image width (pixels)")
    simulate_parser.add_argument("--height", type=int, help="Image height (pixels)")
    simulate_parser.add_argument(
        "--max-displacement", type=float, help="Displacement cap (pixels)"
    )
    simulate_parser.add_argument(
        "--unimodal",
        action="store_true",
        help="Keep the floating image in the reference modality",
    )
    simulate_parser.add_argument(
        "--force", action="store_true", help="Overwrite a non-empty output directory"
    )

    # -----
    # train
    # -----
    train_parser = sub_parsers.add_parser(
        "train", help="Pretrain and adversarially train the registrar"
    )
    train_parser.set_defaults(func=do_train)
    train_parser.add_argument("--dataset", help="Dataset directory")
    train_parser.add_argument(
        "--out", help="Checkpoint directory (default: <dataset>/model)"
    )
    train_parser.add_argument("--pretrain-iters", type=int, help="MSE pretraining steps")
    train_parser.add_argument("--gan-iters", type=int, help="Adversarial training steps")
    train_parser.add_argument("--batch-size", type=int, help="Cases per step")

    # --------
    # register
    # --------
    register_parser = sub_parsers.add_parser(
        "register", help="Register one image pair with a trained generator"
    )
    register_parser.set_defaults(func=do_register)
    register_parser.add_argument("--checkpoint", required=True, help="Generator checkpoint")
    register_parser.add_argument("--ref", required=True, help="Reference image")
    register_parser.add_argument("--flt", required=True, help="Floating image")
    register_parser.add_argument("--out", required=True, help="Registered image (.pgm/.rimg)")
    register_parser.add_argument("--out-field", help="Deformation field (.rfld)")

    # --------
    # evaluate
    # --------
    evaluate_parser = sub_parsers.add_parser(
        "evaluate", help="Before/after metrics for registration methods"
    )
    evaluate_parser.set_defaults(func=do_evaluate)
    evaluate_parser.add_argument("--dataset", required=True, help="Dataset directory")
    evaluate_parser.add_argument(
        "--methods",
        nargs="+",
        default=[Method.BEFORE.value],
        choices=[m.value for m in Method],
        help="Methods to evaluate (default: before)",
    )
    evaluate_parser.add_argument("--gan-checkpoint", help="gan_reg generator checkpoint")
    evaluate_parser.add_argument(
        "--ncyc-checkpoint", help="gan_reg_ncyc generator checkpoint"
    )
    evaluate_parser.add_argument(
        "--split",
        choices=["eval", "all"],
        default="eval",
        help="Cases to evaluate (default: held-out phantoms)",
    )
    evaluate_parser.add_argument(
        "--mask-only",
        action="store_true",
        help="Skip Err_Def and MSE (structure masks only)",
    )
    evaluate_parser.add_argument(
        "--pixel-size", type=float, help="Millimeters per pixel for distance metrics"
    )
    evaluate_parser.add_argument(
        "--jobs",
        type=int,
        help="Cases evaluated in parallel (default: 1). Only evaluation runs in parallel",
    )
    evaluate_parser.add_argument(
        "--out", help="Report directory (default: <dataset>/results)"
    )

    # ------
    # report
    # ------
    report_parser = sub_parsers.add_parser(
        "report", help="Aggregate a per-case CSV into a table"
    )
    report_parser.set_defaults(func=do_report)
    report_parser.add_argument("cases", help="Per-case CSV from evaluate")
    report_parser.add_argument(
        "--format",
        choices=[f.value for f in ReportFormat],
        default=ReportFormat.TEXT.value,
        help="Output format (default: aligned-text)",
    )
    report_parser.add_argument("--out", help="Write to a file instead of stdout")

    # Shared arguments
    for sub_parser in [simulate_parser, train_parser, evaluate_parser]:
        sub_parser.add_argument("--config", help="JSON run configuration")
        sub_parser.add_argument(
            "--preset",
            choices=[p.value for p in Preset],
            help="Named configuration (default: desk)",
        )
        sub_parser.add_argument(
            "--seed", type=int, help="Random seed (default: $REGGAN_SEED or 0)"
        )

    for sub_parser in [simulate_parser, train_parser]:
        sub_parser.add_argument(
            "--dry-run", action="store_true", help="Print the resolved config and exit"
        )

    for sub_parser in [
        simulate_parser,
        train_parser,
        register_parser,
        evaluate_parser,
        report_parser,
    ]:
        sub_parser.add_argument(
            "--debug", action="store_true", help="Print DEBUG messages to console"
        )

    return parser.parse_args(argv)


# -----------------------------------------------------------------------------


if __name__ == "__main__":
    main()
