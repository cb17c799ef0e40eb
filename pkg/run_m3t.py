# -*- coding: utf-8 -*-

"""
M3T Command-Line Runner

Trains, evaluates and queries the Multi-Modal Medical Transformer, and runs
its verification tools. Every subcommand reads the same configuration:
profile defaults, then an optional YAML file (--config), then --set
section.key=value overrides, then the M3T_SEED environment variable.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(corpus, image, features, checkpoint, missing file), 3 verification failure.
"""
import argparse
import logging
import sys
from pathlib import Path

# Add the project root to the Python path to allow imports from m3t_lib
project_root = Path(__file__).resolve().parent
sys.path.insert(0, str(project_root))

from m3t_lib.core.exceptions import (CheckpointFormatError, ConfigError, CorpusError, FeatureFormatError,
                                     ImageFormatError, M3TError)
from m3t_lib.core_engine import commands
from m3t_lib.core_engine.checkpoint import load_checkpoint
from m3t_lib.core_engine.config import ModelConfig
from m3t_lib.io.yaml_loader import ConfigLoader

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
DATA_ERRORS = (CorpusError, ImageFormatError, FeatureFormatError, CheckpointFormatError, FileNotFoundError)

logger = logging.getLogger("m3t")


class UsageParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors exit with 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed_list(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML configuration file.")
    common.add_argument("--profile", choices=["desk", "full"], help="Profile to start from (default: desk).")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one configuration value; may be repeated.")
    common.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level.")

    parser = UsageParser(description="Multi-Modal Medical Transformer: training, evaluation and tooling.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    p = sub.add_parser("train", parents=[common], help="Train a model on a corpus.")
    p.add_argument("corpus", nargs="?", help="Corpus TSV (default: paths.corpus).")
    p.add_argument("--resume", type=str, help="Checkpoint to continue from.")

    p = sub.add_parser("eval", parents=[common], help="Score a checkpoint on a corpus split.")
    p.add_argument("checkpoint")
    p.add_argument("corpus", nargs="?", help="Corpus TSV (default: paths.corpus from the checkpoint).")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--beam", type=int, help="Beam size (1 = greedy).")
    p.add_argument("--oracle-decode", action="store_true", help="Score the references against themselves.")

    p = sub.add_parser("generate", parents=[common], help="Describe one image.")
    p.add_argument("checkpoint")
    p.add_argument("image", help="Image file or precomputed .m3tf features.")
    p.add_argument("--keywords", default="", help="Comma-separated keywords.")
    p.add_argument("--beam", type=int, help="Beam size (1 = greedy).")
    p.add_argument("--heatmap", type=str, help="Write the lesion-gate map to this .pgm file.")
    p.add_argument("--overlay", type=str, help="Write the map blended over the image to this .png file.")

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference check of every op and block.")
    p.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--case", dest="cases", action="append", help="Restrict to one case; may be repeated.")

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic corpus.")
    p.add_argument("out", help="Output directory.")
    p.add_argument("-n", type=int, default=200, help="Number of samples.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, help="Side length (default: model.image_size).")

    p = sub.add_parser("init-config", parents=[common], help="Write all defaults of a profile as YAML.")
    p.add_argument("out")

    p = sub.add_parser("ablate", parents=[common], help="Train and score the four model variants.")
    p.add_argument("corpus", nargs="?")
    p.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])

    sub.add_parser("trace-shapes", parents=[common], help="Print the symbolic shape trace.")
    return parser


def load_config(args, base: ModelConfig = None) -> ModelConfig:
    """Run configuration; for checkpoint commands the checkpoint's configuration is the base."""
    overrides = list(args.overrides)
    if getattr(args, "beam", None):
        overrides.append(f"evaluation.beam_size={args.beam}")
    if getattr(args, "oracle_decode", False):
        overrides.append("evaluation.oracle_decode=true")
    if base is None:
        return ConfigLoader(args.config, args.profile).load(overrides)
    config = ModelConfig.from_dict(base.to_dict())
    if args.config:
        config = ModelConfig.from_dict(ConfigLoader(args.config).raw, base=config)
    return config.apply_overrides(overrides).apply_environment().validate()


def run(args) -> int:
    if args.command == "train":
        commands.cmd_train(load_config(args), args.corpus, args.resume)
    elif args.command == "eval":
        config = load_config(args, load_checkpoint(args.checkpoint).config)
        report = commands.cmd_eval(args.checkpoint, args.corpus, args.split, config).report
        print(report.to_text(), end="")
    elif args.command == "generate":
        config = load_config(args, load_checkpoint(args.checkpoint).config)
        result = commands.cmd_generate(args.checkpoint, args.image, args.keywords,
                                       args.heatmap, args.overlay, config)
        print(result.text)
    elif args.command == "gradcheck":
        results = commands.cmd_gradcheck(args.seeds, args.cases)
        if not all(r.passed for r in results):
            logger.error("Gradient check failed")
            return EXIT_VERIFY
    elif args.command == "synth":
        size = args.image_size or load_config(args).model.image_size
        summary = commands.cmd_synth(args.n, args.seed, args.out, size)
        print(summary.to_string(index=False))
    elif args.command == "init-config":
        commands.cmd_init_config(args.profile or "desk", args.out)
    elif args.command == "ablate":
        result = commands.cmd_ablate(load_config(args), args.corpus, args.seeds)
        print(result.verdict.describe())
        if not result.verdict.passed:
            return EXIT_VERIFY
    elif args.command == "trace-shapes":
        print(commands.cmd_trace_shapes(load_config(args)).to_string(index=False))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    logger.info(f"--- m3t {args.command} ---")
    try:
        return run(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except DATA_ERRORS as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except M3TError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
