from pathlib import Path
import argparse
import json
import logging
import os
import sys
import traceback
from typing import Callable, Dict, List, Optional, Sequence

from config_loader import load_config
from config_types import OracleConfig
from custom_types import (
    ConfigError, OracleError, Recording, RecordingFormatError, Role, SceneSpecError, SweepError,
    UnknownObjectError, Violation,
)
from explain import explain
from oracle import OracleEngine
from recording_io import load_recording, validate_recording
from report import (
    RunClock, build_manifest, emit_report, read_report, sweep_rows, write_events_csv, write_manifest, write_report,
    write_sweep_csv,
)
from synth import load_scene_spec, write_synth_outputs
from verdict import SweepResult, aggregate, threshold_sweep

logger = logging.getLogger(__name__)


DEFAULT_CONFIG_PATH = Path(__file__).parent.resolve() / "config.json"
LOG_LEVEL_ENV = "ORACLE_LOG_LEVEL"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2


class InvalidRecordingError(OracleError):
    """Raised when a recording parses but violates the recording invariants."""

    def __init__(self, violations: Sequence[Violation]) -> None:
        super().__init__(f"{len(violations)} recording violation(s)")
        self.violations = list(violations)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parses CLI arguments: a global verbosity flag and one subcommand."""
    parser = argparse.ArgumentParser(description="Perception test oracle: judge SUT object lists against a reference")
    parser.add_argument(
        "-v", "--verbose",
        action="store_true",
        default=False,
        help="Enable verbose (DEBUG) logging"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    evaluate_p = sub.add_parser("evaluate", help="Evaluate a SUT recording against a ReS recording")
    evaluate_p.add_argument("--sut", type=Path, required=True, help="SUT recording (JSONL)")
    evaluate_p.add_argument("--res", type=Path, required=True, help="ReS recording (JSONL)")
    evaluate_p.add_argument("-c", "--config", type=Path, default=DEFAULT_CONFIG_PATH,
                            help=f"Path to oracle config JSON (default: {DEFAULT_CONFIG_PATH})")
    evaluate_p.add_argument("--out", type=Path, required=True, help="Report output path")
    evaluate_p.add_argument("--format", choices=["structured", "human"], default="structured",
                            help="Report format (default: structured)")
    evaluate_p.add_argument("--csv", type=Path, default=None, help="Optional CSV export of the event table")

    synth_p = sub.add_parser("synth", help="Generate a synthetic scene with its expected ledger")
    synth_p.add_argument("--spec", type=Path, required=True, help="Scene spec JSON")
    synth_p.add_argument("--out-dir", type=Path, required=True, help="Output directory")

    sweep_p = sub.add_parser("sweep", help="Evaluate across K evenly spaced existence thresholds")
    sweep_p.add_argument("--sut", type=Path, required=True, help="SUT recording (JSONL)")
    sweep_p.add_argument("--res", type=Path, required=True, help="ReS recording (JSONL)")
    sweep_p.add_argument("-c", "--config", type=Path, default=DEFAULT_CONFIG_PATH,
                         help=f"Path to oracle config JSON (default: {DEFAULT_CONFIG_PATH})")
    sweep_p.add_argument("-k", type=int, required=True, help="Number of thresholds")
    sweep_p.add_argument("--out", type=Path, required=True, help="Per-threshold table output path (JSON)")
    sweep_p.add_argument("--csv", type=Path, default=None, help="Optional CSV copy of the table")

    explain_p = sub.add_parser("explain", help="Explain the verdicts of one ReS object in a report")
    explain_p.add_argument("--report", type=Path, required=True, help="Structured report")
    explain_p.add_argument("--res-id", required=True, help="ReS track id")
    explain_p.add_argument("--t", type=float, default=None, help="Restrict to one sample time in seconds")

    return parser.parse_args(argv)


def configure_logging(verbose: bool) -> None:
    """-v selects DEBUG; otherwise ORACLE_LOG_LEVEL, defaulting to INFO."""
    level = logging.INFO
    unknown: Optional[str] = None
    if verbose:
        level = logging.DEBUG
    elif os.environ.get(LOG_LEVEL_ENV):
        name = os.environ[LOG_LEVEL_ENV].strip().upper()
        resolved = logging.getLevelName(name)
        if isinstance(resolved, int):
            level = resolved
        else:
            unknown = name
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S"
    )
    if unknown is not None:
        logger.warning("Unknown log level %s=%s, using INFO.", LOG_LEVEL_ENV, unknown)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load_inputs(args: argparse.Namespace) -> tuple:  # type: ignore[type-arg]
    cfg: OracleConfig = load_config(args.config)
    res: Recording = load_recording(args.res, Role.RES)
    sut: Recording = load_recording(args.sut, Role.SUT)
    violations = validate_recording(res) + validate_recording(sut)
    if violations:
        raise InvalidRecordingError(violations)
    return cfg, res, sut


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Writes the report, its manifest and optionally the event CSV."""
    cfg, res, sut = _load_inputs(args)
    clock = RunClock().start()
    ledger = OracleEngine(cfg).evaluate(res, sut)
    summary = aggregate(ledger)

    sweep: Optional[SweepResult] = None
    k = cfg.probabilistic.sweep_thresholds
    if k is not None:
        try:
            sweep = threshold_sweep(res, sut, cfg, k)
        except SweepError as e:
            logger.warning("Skipping threshold sweep: %s", e)

    text = emit_report(ledger, summary, args.format, sweep)
    write_report(text, args.out)
    manifest = build_manifest(ledger, {"res": args.res, "sut": args.sut}, args.config, text, clock)
    write_manifest(manifest, args.out, ledger)
    if args.csv is not None:
        write_events_csv(ledger, args.csv)
    logger.info("TP=%d FP=%d FN=%d in %.2f s", summary.tp, summary.fp, summary.fn, manifest.wall_clock_s)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_scene_spec(args.spec)
    paths = write_synth_outputs(spec, args.out_dir)
    logger.info("Synthetic scene written to %s (%s)", args.out_dir, ", ".join(sorted(p.name for p in paths.values())))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg, res, sut = _load_inputs(args)
    sweep = threshold_sweep(res, sut, cfg, args.k)
    rows = sweep_rows(sweep)
    doc = {"per_threshold": rows, "mean_precision": sweep.mean_precision, "mean_recall": sweep.mean_recall}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.csv is not None:
        write_sweep_csv(sweep, args.csv)
    logger.info("Sweep over %d thresholds written to %s", len(rows), args.out)
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    ledger, _ = read_report(args.report)
    sys.stdout.write(explain(ledger, args.res_id, args.t))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
    "explain": cmd_explain,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point. Dispatches to the subcommand and maps failures to exit codes:
    1 for usage, I/O, unknown ids and evaluation failures, 2 for invalid
    configs, recordings, reports and scene specs.
    """
    try:
        args: argparse.Namespace = parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_FAILURE
    configure_logging(args.verbose)

    try:
        return COMMANDS[args.command](args)
    except InvalidRecordingError as e:
        for v in e.violations:
            print(v, file=sys.stderr)
        logger.error("%s", e)
        return EXIT_INVALID
    except (ConfigError, RecordingFormatError, SceneSpecError) as e:
        logger.error("%s", e)
        return EXIT_INVALID
    except UnknownObjectError as e:
        logger.error("%s", e)
        return EXIT_FAILURE
    except OracleError as e:
        logger.error("Evaluation failed: %s", e)
        logger.debug(traceback.format_exc())
        return EXIT_FAILURE
    except OSError as e:
        logger.error("%s", e)
        return EXIT_FAILURE
    except (ValueError, KeyError) as e:
        # malformed report documents
        logger.error("Invalid input: %s", e)
        logger.debug(traceback.format_exc())
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
