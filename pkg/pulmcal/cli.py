"""
Command-line interface.

``pulmcal <stage> -c run.yaml`` runs one pipeline stage, ``pulmcal pipeline``
runs several in order and ``pulmcal preprocess`` balances measured flows.
Exit codes: 0 success, 1 usage error, 2 data or validation error, 3
numerical failure.
"""
import argparse
import logging
import sys

from ._config import load_run_config
from ._exceptions import PulmcalError
from ._pipeline import STAGES, Pipeline, analyze_cohort, preprocess_flow_csv
from ._version import __version__

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
USAGE_ERROR = 1


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _add_run_options(parser, config_required=True):
    parser.add_argument("-c", "--config", required=config_required, help="run configuration (YAML)")
    parser.add_argument(
        "--force", action="store_true", help="rebuild artifacts made with a different configuration"
    )
    parser.add_argument("--jobs", type=int, default=None, help="worker processes for parallel stages")


def _cohort_pair(text):
    baseline, sep, disease = text.rpartition(":")
    if not sep or not baseline or not disease:
        raise argparse.ArgumentTypeError("expected BASELINE_DIR:DISEASE_DIR")
    return baseline, disease


def _stage_list(text):
    stages = tuple(s.strip() for s in text.split(",") if s.strip())
    unknown = set(stages) - set(STAGES)
    if not stages or unknown:
        raise argparse.ArgumentTypeError(f"stages must be drawn from {', '.join(STAGES)}")
    return stages


def build_parser():
    parser = ArgumentParser(prog="pulmcal", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    preprocess = commands.add_parser("preprocess", help="shift MPA flow to match the branch flows")
    preprocess.add_argument("input", help="CSV with columns t, q_mpa, q_lpa, q_rpa")
    preprocess.add_argument("output", help="where to write the adjusted table")
    preprocess.add_argument("--floor", action="store_true", help="also lift MPA flow to be nonnegative")

    helps = {
        "design": "Latin hypercube design of the parameters",
        "simulate": "run the solver on every design point",
        "train": "fit the PCA + Gaussian-process emulator",
        "synthesize": "simulate noisy observations at a known parameter vector",
        "calibrate": "sample the posterior with DRAM",
        "propagate": "credible and prediction bands from the posterior",
    }
    for stage, text in helps.items():
        _add_run_options(commands.add_parser(stage, help=text))

    analyze = commands.add_parser("analyze", help="posterior statistics and plot data")
    _add_run_options(analyze, config_required=False)
    analyze.add_argument(
        "--cohort",
        type=_cohort_pair,
        action="append",
        metavar="BASELINE_DIR:DISEASE_DIR",
        help="pair of completed run directories; repeat once per subject",
    )
    analyze.add_argument("--output", default=".", help="directory for the cohort report")

    pipeline = commands.add_parser("pipeline", help="run several stages in order")
    _add_run_options(pipeline)
    pipeline.add_argument(
        "--stages",
        type=_stage_list,
        default=None,
        help="comma-separated stages (default: all; synthesize only without an observation file)",
    )
    return parser


def _default_stages(config):
    if config.paths.observations is None:
        return STAGES
    return tuple(stage for stage in STAGES if stage != "synthesize")


def run(args):
    if args.command == "preprocess":
        preprocess_flow_csv(args.input, args.output, floor=args.floor)
        return
    if args.command == "analyze" and args.cohort:
        analyze_cohort(args.cohort, args.output)
        if args.config is None:
            return
    config = load_run_config(args.config)
    pipeline = Pipeline(config, force=args.force, n_jobs=args.jobs)
    if args.command == "pipeline":
        pipeline.run(args.stages or _default_stages(config))
    else:
        pipeline.run((args.command,))


def main(argv=None):
    """Entry point of the ``pulmcal`` script; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "analyze" and args.config is None and not args.cohort:
            parser.error("analyze needs --config or --cohort")
    except SystemExit as exc:
        return exc.code or 0
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        run(args)
    except PulmcalError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except ValueError as exc:
        logger.error("%s", exc)
        return PulmcalError.exit_code
    return 0
