#!/usr/bin/env python3

# Command line for the counting pipeline. Run the stages in order:
#
#   maskcount gen          synthetic single and multi-class scenes
#   maskcount train-base   the exemplar counter
#   maskcount pseudo-label K-Means pseudo masks with the best K per scene
#   maskcount train-seg    the segmenter, trained on the pseudo masks
#   maskcount eval         counting with and without masks
#
# and then optionally ablate, bench-time and count (a single scene).

import argparse
import json
import logging
import os
import sys

from maskcount import __version__, pipeline
from maskcount.errors import MaskCountError
from maskcount.settings import Config

logger = logging.getLogger("maskcount")

FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
COMMANDS = ["gen", "train-base", "pseudo-label", "train-seg", "count", "eval", "ablate", "bench-time"]


def get_parser():
    parser = argparse.ArgumentParser(
        description="Mask Count: exemplar counting in multi-class scenes with pseudo masks",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"maskcount {__version__}")
    subparsers = parser.add_subparsers(
        help="actions",
        title="actions",
        description="actions",
        dest="command",
    )

    commands = {
        "gen": subparsers.add_parser("gen", description="generate the synthetic dataset"),
        "train-base": subparsers.add_parser("train-base", description="train the base counter"),
        "pseudo-label": subparsers.add_parser(
            "pseudo-label", description="write optimal-K pseudo masks for the multi-class scenes"
        ),
        "train-seg": subparsers.add_parser("train-seg", description="train the segmenter on pseudo masks"),
        "count": subparsers.add_parser("count", description="count one scene with the segmenter mask"),
        "eval": subparsers.add_parser("eval", description="evaluate on the test splits"),
        "ablate": subparsers.add_parser("ablate", description="compare pseudo-label strategies"),
        "bench-time": subparsers.add_parser("bench-time", description="time every masking path"),
    }

    commands["count"].add_argument(
        "--scene",
        required=True,
        help="Scene bundle directory (image.ppm + annotations.json)",
    )

    for command in commands.values():
        command.add_argument(
            "--config",
            help="INI config file, defaults are used for anything it leaves out",
        )
        command.add_argument(
            "--seed",
            help="root seed, overrides [train] seed",
            type=int,
        )
        command.add_argument(
            "--dump-images",
            dest="dump_images",
            help="write PGM dumps of masks and density maps",
            default=False,
            action="store_true",
        )
        command.add_argument(
            "--force",
            help="compare artifacts made under a different config",
            default=False,
            action="store_true",
        )
        command.add_argument(
            "--verbose",
            help="debug logging",
            default=False,
            action="store_true",
        )
    return parser


def setup_logging(verbose=False):
    """
    Console logging for the package logger.
    """
    logger.setLevel(logging.DEBUG)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.INFO)
    console.setFormatter(logging.Formatter(FORMAT))
    logger.addHandler(console)
    return console


def add_run_log(ws, command):
    """
    Per-command run log under reports_dir/logs, opened fresh every run.
    """
    directory = os.path.join(ws.reports_dir, "logs")
    os.makedirs(directory, exist_ok=True)
    handler = logging.FileHandler(os.path.join(directory, f"{command}.log"), mode="w")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FORMAT))
    logger.addHandler(handler)
    logger.info("maskcount %s seed=%d fingerprint=%s", command, ws.cfg.seed, ws.fingerprint)
    return handler


def run_command(args, cfg, ws):
    if args.command == "gen":
        return pipeline.cmd_gen(cfg, ws)
    if args.command == "train-base":
        return pipeline.cmd_train_base(cfg, ws)
    if args.command == "pseudo-label":
        return pipeline.cmd_pseudo_label(cfg, ws, args.dump_images)
    if args.command == "train-seg":
        return pipeline.cmd_train_seg(cfg, ws)
    if args.command == "count":
        return pipeline.cmd_count(cfg, ws, args.scene, args.dump_images)
    if args.command == "eval":
        return pipeline.cmd_eval(cfg, ws, args.force)
    if args.command == "ablate":
        return pipeline.cmd_ablate(cfg, ws, args.force)
    return pipeline.cmd_bench_time(cfg, ws)


def main(argv=None):
    parser = get_parser()

    # If an error occurs while parsing the arguments, the interpreter will exit with value 2
    args = parser.parse_args(argv)
    if args.command not in COMMANDS:
        parser.print_help()
        sys.exit(2)

    handlers = [setup_logging(args.verbose)]
    try:
        cfg = Config.from_file(args.config) if args.config else Config()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        ws = pipeline.Workspace(cfg)
        handlers.append(add_run_log(ws, args.command))
        result = run_command(args, cfg, ws)
    except MaskCountError as e:
        logger.error(str(e))
        sys.exit(e.exit_code)
    except ValueError as e:
        # bad input that got past the config checks, e.g. a scene of the wrong size
        logger.error(str(e))
        sys.exit(2)
    except OSError as e:
        logger.error(str(e))
        sys.exit(3)
    finally:
        for handler in handlers:
            logger.removeHandler(handler)
            handler.close()

    print(json.dumps(result, indent=4, default=str))
    return result


if __name__ == "__main__":
    main()
