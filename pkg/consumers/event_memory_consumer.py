"""
event_memory_consumer.py

Command-line entry point: consume video tensor files and run the
segmentation / sampling / event-memory pipeline over them.

Subcommands:
    segment    adjacent scores, split points and event ranges
    sample     batched two-event sampling plan
    run        full pipeline; writes Z_v (HEMT) and a JSON report
    gradcheck  finite-difference check of the analytic gradients
    synth      write a synthetic block video
    ablate     component study (local / global memory, adaptive segmentation)

Examples:
    python -m consumers.event_memory_consumer synth --blocks 4,4,4,4 --output data/blocks.hemt
    python -m consumers.event_memory_consumer run --input data/blocks.hemt --events 4
    python -m consumers.event_memory_consumer gradcheck

Exit codes: 0 success, 1 stage failure, 2 configuration error, 3 gradient check failed.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import argparse
import json
import pathlib
import sys
from dataclasses import replace
from typing import Optional, Sequence

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import ConfigError, PipelineStageError
from hem.pipeline import (
    GRADCHECK_DEFAULTS,
    ablate,
    gradcheck,
    run,
    sample_plan,
    segment_report,
    stage,
    write_report,
)
from hem.qformer import PipelineGradients
from producers.synthetic_video_producer import generate_block_video, generate_random_video, write_video
from utils.utils_config import PipelineConfig, resolve_config
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_GRADCHECK_FAILED = 3

SOURCE_CHOICES = ["raw", "feat_avg", "feat_cls"]
SCHEME_CHOICES = ["1", "2"]
PRESET_CHOICES = ["vqa", "caption", "breakfast", "coin"]

#####################################
# Argument Parsing
#####################################


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of configuration keys")
    p.add_argument("--preset", choices=PRESET_CHOICES, help="task preset for the event count")
    p.add_argument("--input", action="append", dest="inputs", help="video tensor file (repeatable)")
    p.add_argument("--output", help="output directory")
    p.add_argument("--events", type=int, dest="num_events", help="number of events K")
    p.add_argument("--scheme", choices=SCHEME_CHOICES, help="batched sampling scheme")
    p.add_argument("--source", choices=SOURCE_CHOICES, help="token source for similarity")
    p.add_argument("--cap", dest="global_memory_cap", help="global memory block cap (integer or inf)")
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--patches", type=int)
    p.add_argument("--queries", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--target", type=int, help="class index for the toy head loss")
    p.add_argument("--features", help="precomputed T x d x p feature tensor")
    p.add_argument("--plot", help="save a PNG of adjacent scores with boundaries")
    p.add_argument("--workers", type=int, help="parallel passes in batch mode")
    p.add_argument("--no-local-memory", action="store_false", dest="use_local_memory", default=None)
    p.add_argument("--no-global-memory", action="store_false", dest="use_global_memory", default=None)
    p.add_argument(
        "--uniform-segmentation",
        action="store_false",
        dest="use_adaptive_segmentation",
        default=None,
        help="equal-length events instead of similarity-selected boundaries",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="event_memory_consumer",
        description="Event segmentation and hierarchical memory over video tensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("segment", "score adjacent frames and split into events"),
        ("run", "run the full pipeline and write Z_v plus a report"),
        ("ablate", "run the component study on one input"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "run":
            p.add_argument("--batch", action="store_true", help="allow several inputs, processed in parallel")

    p = sub.add_parser("sample", help="build a batched two-event sampling plan")
    _add_common(p)
    p.add_argument("--frames", type=int, help="shared frame count T (with --split-points)")
    p.add_argument("--split-points", type=_int_list, help="one boundary per batch item, e.g. 3,6")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("synth", help="write a synthetic block video")
    p.add_argument("--blocks", type=_int_list, default=[4, 4, 4, 4], help="frames per block, e.g. 4,4,4,4")
    p.add_argument("--size", type=int, default=8, help="square frame size")
    p.add_argument("--random", type=int, metavar="T", help="write T uniform random frames instead of blocks")
    p.add_argument("--seed", type=int, default=0, help="random generator seed for --random")
    p.add_argument("--output", required=True, help="file to write (.hemt or .json)")
    return parser


_CONFIG_FLAGS = (
    "inputs",
    "output",
    "num_events",
    "scheme",
    "source",
    "global_memory_cap",
    "seed",
    "dim",
    "patches",
    "queries",
    "heads",
    "classes",
    "target",
    "features",
    "plot",
    "workers",
    "use_local_memory",
    "use_global_memory",
    "use_adaptive_segmentation",
)


def config_from_args(args: argparse.Namespace, base: Optional[dict] = None) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FLAGS}
    return resolve_config(preset=args.preset, config_path=args.config, cli_overrides=overrides, base=base)


#####################################
# Command Handlers
#####################################


def _corrupt(grads: PipelineGradients) -> PipelineGradients:
    return replace(grads, grad_delta=grads.grad_delta * 1.5 + 1e-3)


def cmd_segment(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if not config.inputs:
        raise ConfigError("segment needs at least one --input")
    results = [segment_report(config, p) for p in config.inputs]
    with stage("write"):
        write_report(pathlib.Path(config.output).joinpath("segments.json"), {"videos": results})
    for r in results:
        print(f"{r['input']}: frames={r['num_frames']} split_points={r['split_points']} ranges={r['event_ranges']}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    plan = sample_plan(config, total_frames=args.frames, split_points=args.split_points)
    with stage("write"):
        write_report(pathlib.Path(config.output).joinpath("sample_plan.json"), plan.to_dict())
    print(f"scheme={plan.scheme.value} items={len(plan.items)} segment_lengths={list(plan.segment_lengths)}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if len(config.inputs) > 1 and not args.batch:
        raise ConfigError("several --input files need --batch")
    for report in run(config):
        print(report.summary_line())
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = config_from_args(args, base=GRADCHECK_DEFAULTS)
    result = gradcheck(
        config,
        epsilon=args.epsilon,
        tolerance=args.tolerance,
        analytic_hook=_corrupt if args.corrupt_gradient else None,
    )
    status = "PASS" if result.passed else "FAIL"
    print(
        f"gradcheck {status}: max_relative_error={result.max_relative_error:.3e} "
        f"tolerance={result.tolerance:g} epsilon={result.epsilon:g} checked={result.checked}"
    )
    return EXIT_OK if result.passed else EXIT_GRADCHECK_FAILED


def cmd_synth(args: argparse.Namespace) -> int:
    if args.random is not None:
        if args.random < 1:
            raise ConfigError(f"--random needs at least one frame, got {args.random}")
        video = generate_random_video(args.random, args.size, args.size, np.random.default_rng(args.seed))
        content = f"random seed={args.seed}"
    else:
        video = generate_block_video(args.blocks, height=args.size, width=args.size)
        content = f"blocks={args.blocks}"
    with stage("write"):
        path = write_video(pathlib.Path(args.output), video)
    print(f"wrote {path}: frames={video.num_frames} size={args.size}x{args.size} {content}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if len(config.inputs) != 1:
        raise ConfigError("ablate needs exactly one --input")
    for row in ablate(config, config.inputs[0]):
        print(json.dumps(row, sort_keys=True))
    return EXIT_OK


HANDLERS = {
    "segment": cmd_segment,
    "sample": cmd_sample,
    "run": cmd_run,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "ablate": cmd_ablate,
}

#####################################
# Main Function
#####################################


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch to a subcommand, and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    logger.info(f"START {args.command}.")
    try:
        code = HANDLERS[args.command](args)
    except PipelineStageError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    except ConfigError as e:
        logger.error(f"{args.command} configuration error: {e}")
        print(f"error: [config] {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: [{args.command}] {e}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    logger.info(f"END {args.command} with exit code {code}.")
    return code


#####################################
# Conditional Execution
#####################################

if __name__ == "__main__":
    sys.exit(main())
