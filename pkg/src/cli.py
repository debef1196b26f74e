#!/usr/bin/env python3
"""
CA-GST command line.

    cagst [global options] design|simulate|reconstruct|report|sweep|run [command options]
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# Add parent directory to path for direct execution
if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).parent.parent))

from src.app import create_app
from src.services.logging_config import set_log_level


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cagst",
        description="Context-aware gate set tomography: design, simulate, reconstruct and report",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exit codes:
  0  success
  1  unexpected failure or invalid configuration
  2  infeasible design
  3  reconstruction did not converge
  4  I/O problem or dataset does not cover the design

Environment:
  CAGST_THREADS, CAGST_OUTPUT_DIR, CAGST_LOG_FILE, CAGST_SEED, CAGST_MODE, CAGST_SHOTS
        """,
    )
    parser.add_argument("--config", help="Campaign file (JSON, or TOML with a .toml suffix)")
    parser.add_argument("--env-file", default=".env", help="dotenv file with CAGST_* variables")
    parser.add_argument("--output-dir", help="Directory for all artifacts")
    parser.add_argument("--mode", choices=["none", "crosstalk", "memory"], help="Context mode")
    parser.add_argument("--seed", type=int, help="Campaign seed")
    parser.add_argument("--shots", type=int, help="Shots per circuit; 0 for exact probabilities")
    parser.add_argument("--threads", type=int, help="Worker threads for independent evaluations")
    parser.add_argument("--dataset", help="External dataset (JSON lines) to reconstruct from")
    parser.add_argument("--halved", action="store_true", default=None,
                        help="Report the halved diamond distance")
    parser.add_argument("--log-file", help="Application log file")
    parser.add_argument("--log-level", default="WARNING", help="Level for structured library logs")
    parser.add_argument("--metrics-file", help="Write Prometheus text metrics here after the command")

    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("design", help="Select fiducials and germs, write the circuit list")
    subparsers.add_parser("simulate", help="Run the circuit list on a virtual QPU")
    subparsers.add_parser("reconstruct", help="Fit the gate set to the dataset")
    report = subparsers.add_parser("report", help="Diamond distances, corrections and inaccuracies")
    report.add_argument("--fit", help="Fit result or gate set file (default: <output-dir>/fit_result.json)")
    report.add_argument("--truth", help="Ground-truth gate set for the inaccuracy column")
    report.add_argument("--fixture", choices=["crosstalk", "memory"],
                        help="Report on a published idle-gate fixture instead of a fit result")
    subparsers.add_parser("sweep", help="Accuracy against error-generator scale")
    subparsers.add_parser("run", help="design, simulate, reconstruct and report")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Campaign values given on the command line; unset flags are left out."""
    overrides: Dict[str, Any] = {}
    simple = {
        "output_dir": args.output_dir,
        "mode": args.mode,
        "seed": args.seed,
        "shots": args.shots,
        "workers": args.threads,
        "dataset_path": args.dataset,
    }
    overrides.update({k: v for k, v in simple.items() if v is not None})
    if args.halved:
        overrides["metrics"] = {"halved": True}
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_log_level(args.log_level)

    app = create_app(
        config_path=args.config,
        overrides=overrides_from_args(args),
        env_file=args.env_file,
        log_file=args.log_file,
        metrics_file=args.metrics_file,
    )
    try:
        kwargs: Dict[str, Any] = {}
        if args.command == "report":
            kwargs = {"fit_path": args.fit, "truth_path": args.truth, "fixture": args.fixture}
        return app.run_command(args.command, **kwargs)
    finally:
        app.shutdown()


if __name__ == "__main__":
    sys.exit(main())
