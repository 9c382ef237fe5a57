#!/usr/bin/env python3
"""
Command Line Interface for the deconvolution toolkit
"""

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from . import FORMAT_VERSION, __version__
from .blur_model import (
    Boundary,
    SynthesisConfig,
    blur_synthesize,
    edge_taper,
    generate_kernel,
    kernel_size_for_seed,
    load_observations,
    synthesize_dataset,
    synthetic_scene,
)
from .config import Profile, ToolkitConfig
from .config_utils import describe_config, get_config, setup_logging, validate_config
from .deconv import ZInit
from .errors import ConfigError, DeconvError, EmptyDatasetError
from .experiments import Experiment, run_ablation, split_heldout, write_ablation_report
from .fcnn import STANDARD_HIDDEN_CHANNELS, Domain, Loss, TrainConfig, standard_architecture, train_denoiser
from .gradcheck import DEFAULT_TOLERANCE, run_gradcheck
from .hyper import HyperTrainConfig, train_hyper
from .image_io import load_weights, read_image, read_kernel, read_manifest, save_weights, write_image, write_kernel
from .pipeline import PipelineConfig, dump_intermediates, run_pipeline
from .recipe_loader import RecipeLoader, TrainingRecipe
from .metrics import evaluate_pairs
from .training import build_corpus, stage_samples, train_pipeline

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


class RunManifest(BaseModel):
    """Everything needed to repeat a run bit for bit"""
    subcommand: str
    argv: List[str]
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    tool_version: str = __version__
    format_version: int = FORMAT_VERSION


@dataclass
class CommandResult:
    exit_code: int = 0
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    seeds: Dict[str, int] = field(default_factory=dict)
    manifest_path: Optional[Path] = None


def manifest_path_for(output: Path) -> Path:
    """<dir>/run_manifest.json for directory outputs, <file>.manifest.json otherwise"""
    if output.is_dir():
        return output / MANIFEST_NAME
    return output.with_name(output.name + ".manifest.json")


def write_run_manifest(path: Path, manifest: RunManifest) -> None:
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Run manifest written to {path}")


def read_run_manifest(path: Path) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


def derive_seeds(seed: int, stream: int, count: int) -> List[int]:
    return [
        int(np.random.SeedSequence([seed, stream, index]).generate_state(1, dtype=np.uint32)[0])
        for index in range(count)
    ]


def write_training_log(path: Path, rows: Sequence[Sequence[Any]], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _given(value, default):
    return default if value is None else value


def _load_recipe(args, config: ToolkitConfig, threads: int) -> TrainingRecipe:
    """Load the recipe and pin its resolved path in the configuration a manifest records"""
    loader = RecipeLoader()
    recipe = loader.load(_given(args.recipe, config.recipe_path), config)
    if loader.recipe_file is not None:
        config.recipe_path = str(loader.recipe_file)
    return recipe.with_run_settings(args.seed, threads)


def _load_training_set(data: str):
    observations = load_observations(read_manifest(data))
    if not observations:
        raise EmptyDatasetError(f"{data}: manifest lists no entries")
    return observations


# subcommands -------------------------------------------------------------------

def synth_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    """Synthesize a blurred training or evaluation set"""
    out = Path(args.out)
    if args.clean_dir:
        paths = sorted(Path(args.clean_dir).glob("*.pgm"))
        if not paths:
            raise EmptyDatasetError(f"no PGM images in {args.clean_dir}")
        images = [(p.name, read_image(p)) for p in paths]
        inputs = [str(p) for p in paths]
    else:
        scene_seeds = derive_seeds(args.seed, 0, args.scenes)
        images = [(f"scene{i:03d}", synthetic_scene(s, args.scene_size)) for i, s in enumerate(scene_seeds)]
        inputs = []
    kernel_seeds = derive_seeds(args.seed, 1, args.count)
    kernel_sizes = _given(args.kernel_sizes, config.synthesis.kernel_sizes)
    noise = config.synthesis.noise_sigma if args.noise is None else args.noise
    patch = _given(args.patch, config.synthesis.patch_size)

    synthesize_dataset(images, kernel_seeds, noise, patch, args.seed, out, threads, kernel_sizes)
    return CommandResult(inputs=inputs, outputs=[str(out)], seeds={"seed": args.seed},
                         manifest_path=out / MANIFEST_NAME)


def kernel_gen_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    size = _given(args.size, kernel_size_for_seed(args.seed))
    write_kernel(args.out, generate_kernel(args.seed, size))
    out = Path(args.out)
    return CommandResult(outputs=[str(out)], seeds={"seed": args.seed}, manifest_path=manifest_path_for(out))


def blur_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    noise = config.synthesis.noise_sigma if args.noise is None else args.noise
    x = read_image(args.input)
    kernel = read_kernel(args.kernel)
    y = blur_synthesize(x, kernel, SynthesisConfig(noise, args.seed, Boundary(args.boundary)))
    write_image(args.out, y)
    out = Path(args.out)
    return CommandResult(inputs=[args.input, args.kernel], outputs=[str(out)],
                         seeds={"seed": args.seed}, manifest_path=manifest_path_for(out))


def deblur_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    y = read_image(args.input)
    kernel = read_kernel(args.kernel)
    inputs = [args.input, args.kernel]
    if args.weights:
        archive = load_weights(args.weights, allow_narrow=config.allow_narrow_denoiser)
        cfg = PipelineConfig.from_archive(archive, monotone=False)
        inputs.append(args.weights)
    else:
        z_init = ZInit(_given(args.z_init, config.pipeline.z_init))
        cfg = PipelineConfig(gamma0=_given(args.gamma0, config.pipeline.gamma0), z_init=z_init, monotone=False)
    if args.iterations is not None:
        if not 0 <= args.iterations <= cfg.iterations:
            raise ConfigError(f"--iterations must be within [0, {cfg.iterations}] for these weights")
        cfg = cfg.truncated(args.iterations)
    if args.edge_taper:
        y = edge_taper(y, kernel)
    cfg.dump_intermediates = bool(args.dump_intermediate)

    logger.info(f"Deblurring {args.input} with {cfg.iterations} stage(s), gammas {cfg.all_gammas}")
    result = run_pipeline(y, kernel, cfg)
    write_image(args.out, result.image)
    outputs = [args.out]
    if args.dump_intermediate:
        outputs.extend(str(p) for p in dump_intermediates(result, args.dump_intermediate))
    return CommandResult(inputs=inputs, outputs=outputs, manifest_path=manifest_path_for(Path(args.out)))


def train_denoiser_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    if args.stage < 1:
        raise ConfigError(f"--stage must be at least 1, got {args.stage}")
    observations = _load_training_set(args.data)
    inputs = [args.data]
    if args.prev_weights:
        prev = load_weights(args.prev_weights, allow_narrow=config.allow_narrow_denoiser)
        base = PipelineConfig.from_archive(prev, monotone=False)
        inputs.append(args.prev_weights)
    else:
        base = PipelineConfig(
            gamma0=_given(args.gamma0, config.pipeline.gamma0),
            domain=Domain(args.domain),
            z_init=ZInit(_given(args.z_init, config.pipeline.z_init)),
            monotone=False,
        )
    if base.iterations != args.stage - 1:
        raise ConfigError(
            f"stage {args.stage} needs {args.stage - 1} earlier stage(s), the archive has {base.iterations}"
        )

    gamma = _given(args.gamma, base.all_gammas[-1] / 2.0)
    hidden = _given(args.hidden, config.denoiser.hidden_channels)
    train_cfg = TrainConfig(
        learning_rate=_given(args.lr, config.denoiser.learning_rate),
        momentum=config.denoiser.momentum if args.momentum is None else args.momentum,
        batch_size=_given(args.batch, config.denoiser.batch_size),
        iterations=config.denoiser.iterations if args.iters is None else args.iters,
        seed=args.seed,
        loss=Loss(args.loss),
        threads=threads,
    )
    samples = stage_samples(observations, base, threads)
    result = train_denoiser(args.stage, samples, train_cfg, standard_architecture(hidden))

    trained = PipelineConfig(
        gamma0=base.gamma0, gammas=base.gammas + [gamma], weights=base.weights + [result.weights],
        domain=base.domain, z_init=base.z_init, monotone=False,
    )
    out = Path(args.out)
    save_weights(out, trained.to_archive(), allow_narrow=config.allow_narrow_denoiser)
    log_path = out.with_name(out.name + ".log.tsv")
    write_training_log(log_path, list(enumerate(result.losses)), ("iteration", "loss"))
    return CommandResult(inputs=inputs, outputs=[str(out), str(log_path)], seeds={"seed": args.seed},
                         manifest_path=manifest_path_for(out))


def train_hyper_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    observations = _load_training_set(args.data)
    archive = load_weights(args.weights, allow_narrow=config.allow_narrow_denoiser)
    base = PipelineConfig.from_archive(archive, monotone=False)
    hyper_cfg = HyperTrainConfig(
        lr_last=_given(args.lr_last, config.hyper.lr_last),
        lr_other=_given(args.lr_other, config.hyper.lr_other),
        momentum=config.hyper.momentum if args.momentum is None else args.momentum,
        iterations=config.hyper.iterations if args.iters is None else args.iters,
        seed=args.seed,
        monotone_projection=not args.no_projection,
        restarts=_given(args.restarts, config.hyper.restarts),
        batch_size=args.batch,
        threads=threads,
    )
    result = train_hyper(base, observations, hyper_cfg, initial=base.all_gammas)
    logger.info(f"Selected gammas {result.gammas} with loss {result.loss:.6f}")

    out = Path(args.out)
    save_weights(out, base.with_gammas(result.gammas).to_archive(), allow_narrow=config.allow_narrow_denoiser)
    log_path = out.with_name(out.name + ".log.tsv")
    rows = [(r.restart, i, v) for r in result.restarts for i, v in enumerate(r.history)]
    write_training_log(log_path, rows, ("restart", "iteration", "loss"))
    return CommandResult(inputs=[args.data, args.weights], outputs=[str(out), str(log_path)],
                         seeds={"seed": args.seed}, manifest_path=manifest_path_for(out))


def train_pipeline_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    recipe = _load_recipe(args, config, threads)
    if args.data:
        train = _load_training_set(args.data)
    else:
        train, _ = build_corpus(recipe.corpus, recipe.seed)
    result = train_pipeline(train, recipe)

    allow_narrow = config.allow_narrow_denoiser or recipe.hidden_channels != STANDARD_HIDDEN_CHANNELS
    out = Path(args.out)
    save_weights(out, result.config.to_archive(), allow_narrow=allow_narrow)
    log_path = out.with_name(out.name + ".log.tsv")
    write_training_log(log_path, result.losses, ("phase", "iteration", "loss"))
    inputs = [args.data] if args.data else []
    if config.recipe_path:
        inputs.append(config.recipe_path)
    return CommandResult(inputs=inputs, outputs=[str(out), str(log_path)], seeds={"seed": recipe.seed},
                         manifest_path=manifest_path_for(out))


def eval_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    report = evaluate_pairs(args.pairs)
    report.write(args.out)
    print(f"mean\tpsnr={report.mean_psnr:.4f}\tssim={report.mean_ssim:.6f}")
    out = Path(args.out)
    return CommandResult(inputs=[args.pairs], outputs=[str(out)], manifest_path=manifest_path_for(out))


def ablate_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    recipe = _load_recipe(args, config, threads)
    if args.data:
        train, heldout = split_heldout(_load_training_set(args.data))
    else:
        train, heldout = build_corpus(recipe.corpus, recipe.seed)
    rows = run_ablation(Experiment(args.experiment), recipe, train, heldout)
    write_ablation_report(args.out, rows)
    for row in rows:
        print(f"{row.variant}\tpsnr={row.psnr:.4f}\tssim={row.ssim:.6f}")
    out = Path(args.out)
    inputs = [args.data] if args.data else []
    if config.recipe_path:
        inputs.append(config.recipe_path)
    return CommandResult(inputs=inputs, outputs=[str(out)], seeds={"seed": recipe.seed},
                         manifest_path=manifest_path_for(out))


def gradcheck_command(args, config: ToolkitConfig, threads: int) -> CommandResult:
    report = run_gradcheck(args.size, args.seed, args.tolerance)
    for line in report.lines():
        print(line)
    print(f"max\t{report.max_error:.3e}")
    return CommandResult(exit_code=0 if report.passed else 1, seeds={"seed": args.seed})


# parser ------------------------------------------------------------------------

def create_parser() -> argparse.ArgumentParser:
    """Create command line argument parser"""
    parser = argparse.ArgumentParser(
        prog="iterdeconv",
        description="Iterative non-blind deconvolution with learned gradient-domain denoisers",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s kernel-gen --size 15 --seed 3 --out k.txt
  %(prog)s blur --in x.pgm --kernel k.txt --noise 0.01 --seed 1 --out y.pgm
  %(prog)s deblur --in y.pgm --kernel k.txt --weights w.bin --out x.pgm
  %(prog)s gradcheck --size 6 --seed 1
  %(prog)s --replay x.pgm.manifest.json
        """
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__} (weight format {FORMAT_VERSION})")
    parser.add_argument("--profile", choices=[p.value for p in Profile], default=None,
                        help="Configuration profile (default: DECONV_PROFILE or desk)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: from profile)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None,
                        help="Logging level (default: from profile)")
    parser.add_argument("--replay", metavar="MANIFEST", default=None,
                        help="Re-run the command recorded in a run manifest")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    synth = subparsers.add_parser("synth", help="Synthesize a blurred dataset")
    synth.add_argument("--clean-dir", default=None, help="Directory of clean PGM images (default: synthetic scenes)")
    synth.add_argument("--scenes", type=int, default=20, help="Synthetic scenes when no --clean-dir is given")
    synth.add_argument("--scene-size", type=int, default=96)
    synth.add_argument("--count", type=int, default=2, help="Kernels per clean image")
    synth.add_argument("--kernel-sizes", type=int, nargs="+", default=None)
    synth.add_argument("--noise", type=float, default=None, help="Noise sigma, e.g. 0.01, 0.03 or 0.05")
    synth.add_argument("--patch", type=int, default=None)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=synth_command)

    kernel_gen = subparsers.add_parser("kernel-gen", help="Generate a camera-shake kernel")
    kernel_gen.add_argument("--size", type=int, default=None)
    kernel_gen.add_argument("--seed", type=int, default=0)
    kernel_gen.add_argument("--out", required=True)
    kernel_gen.set_defaults(func=kernel_gen_command)

    blur = subparsers.add_parser("blur", help="Blur an image and add noise")
    blur.add_argument("--in", dest="input", required=True)
    blur.add_argument("--kernel", required=True)
    blur.add_argument("--noise", type=float, default=None)
    blur.add_argument("--seed", type=int, default=0)
    blur.add_argument("--boundary", choices=[b.value for b in Boundary], default=Boundary.CIRCULAR.value)
    blur.add_argument("--out", required=True)
    blur.set_defaults(func=blur_command)

    deblur = subparsers.add_parser("deblur", help="Deblur an image with a known kernel")
    deblur.add_argument("--in", dest="input", required=True)
    deblur.add_argument("--kernel", required=True)
    deblur.add_argument("--weights", default=None, help="Weight archive (default: initial deconvolution only)")
    deblur.add_argument("--iterations", type=int, default=None)
    deblur.add_argument("--gamma0", type=float, default=None)
    deblur.add_argument("--z-init", choices=[z.value for z in ZInit], default=None)
    deblur.add_argument("--edge-taper", action="store_true")
    deblur.add_argument("--dump-intermediate", default=None, metavar="DIR")
    deblur.add_argument("--out", required=True)
    deblur.set_defaults(func=deblur_command)

    train_d = subparsers.add_parser("train-denoiser", help="Train one stage denoiser")
    train_d.add_argument("--data", required=True)
    train_d.add_argument("--stage", type=int, required=True)
    train_d.add_argument("--prev-weights", default=None)
    train_d.add_argument("--gamma", type=float, default=None, help="Gamma of the new stage")
    train_d.add_argument("--gamma0", type=float, default=None)
    train_d.add_argument("--domain", choices=[d.value for d in Domain], default=Domain.GRADIENT.value)
    train_d.add_argument("--z-init", choices=[z.value for z in ZInit], default=None)
    train_d.add_argument("--hidden", type=int, default=None)
    train_d.add_argument("--loss", choices=[l.value for l in Loss], default=Loss.L1.value)
    train_d.add_argument("--lr", type=float, default=None)
    train_d.add_argument("--momentum", type=float, default=None)
    train_d.add_argument("--batch", type=int, default=None)
    train_d.add_argument("--iters", type=int, default=None)
    train_d.add_argument("--seed", type=int, default=0)
    train_d.add_argument("--out", required=True)
    train_d.set_defaults(func=train_denoiser_command)

    train_h = subparsers.add_parser("train-hyper", help="Learn every gamma end-to-end")
    train_h.add_argument("--data", required=True)
    train_h.add_argument("--weights", required=True)
    train_h.add_argument("--restarts", type=int, default=None)
    train_h.add_argument("--iters", type=int, default=None)
    train_h.add_argument("--lr-last", type=float, default=None)
    train_h.add_argument("--lr-other", type=float, default=None)
    train_h.add_argument("--momentum", type=float, default=None)
    train_h.add_argument("--batch", type=int, default=None)
    train_h.add_argument("--no-projection", action="store_true", help="Do not keep gammas non-increasing")
    train_h.add_argument("--seed", type=int, default=0)
    train_h.add_argument("--out", required=True)
    train_h.set_defaults(func=train_hyper_command)

    train_p = subparsers.add_parser("train-pipeline", help="Run the full alternating training recipe")
    train_p.add_argument("--recipe", default=None)
    train_p.add_argument("--data", default=None, help="Dataset manifest (default: recipe corpus)")
    train_p.add_argument("--seed", type=int, default=None)
    train_p.add_argument("--out", required=True)
    train_p.set_defaults(func=train_pipeline_command)

    evaluate = subparsers.add_parser("eval", help="PSNR/SSIM report for image pairs")
    evaluate.add_argument("--pairs", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.set_defaults(func=eval_command)

    ablate = subparsers.add_parser("ablate", help="Run an ablation study")
    ablate.add_argument("--experiment", choices=[e.value for e in Experiment], required=True)
    ablate.add_argument("--data", default=None, help="Dataset manifest (default: recipe corpus)")
    ablate.add_argument("--recipe", default=None)
    ablate.add_argument("--seed", type=int, default=None)
    ablate.add_argument("--out", required=True)
    ablate.set_defaults(func=ablate_command)

    gradcheck = subparsers.add_parser("gradcheck", help="Finite-difference check of every gradient")
    gradcheck.add_argument("--size", type=int, default=6)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    gradcheck.set_defaults(func=gradcheck_command)

    return parser


def _strip_replay(argv: Sequence[str]) -> List[str]:
    cleaned, skip = [], False
    for token in argv:
        if skip:
            skip = False
            continue
        if token == "--replay":
            skip = True
            continue
        if token.startswith("--replay="):
            continue
        cleaned.append(token)
    return cleaned


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    recorded: Optional[ToolkitConfig] = None
    if args.replay:
        try:
            manifest = read_run_manifest(Path(args.replay))
            recorded = ToolkitConfig.from_dict(manifest.config)
        except (OSError, ValueError) as e:
            logger.error(f"Cannot replay {args.replay}: {e}")
            return 1
        logger.info(f"Replaying {manifest.subcommand} from {args.replay}")
        argv = _strip_replay(manifest.argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)

    if not args.command:
        parser.print_help(sys.stderr)
        return 2

    try:
        config = recorded if recorded is not None else get_config(args.profile)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1
    setup_logging(config, args.log_level)
    if not validate_config(config):
        return 1
    threads = config.threads if args.threads is None else args.threads
    if threads < 1:
        logger.error("--threads must be at least 1")
        return 2
    logger.debug(f"Configuration: {describe_config(config)}")

    try:
        result = args.func(args, config, threads)
    except (DeconvError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1

    if result.manifest_path is not None:
        seeds = dict(result.seeds)
        write_run_manifest(result.manifest_path, RunManifest(
            subcommand=args.command,
            argv=argv,
            config=config.to_dict(),
            seeds=seeds,
            inputs=result.inputs,
            outputs=result.outputs,
        ))
    return result.exit_code


def main():
    """Main CLI entry point"""
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
