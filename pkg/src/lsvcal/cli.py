"""Command-line front end: ``calibrate --config <path> [...]``."""
from __future__ import annotations

import argparse
import sys

from .pipeline import RunConfig, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="calibrate",
        description="Calibrate a local-stochastic-volatility leverage surface "
                    "to vanilla quotes by solving the joint forward equation.")
    p.add_argument("--config", required=True, help="path to the run configuration")
    p.add_argument("--output-dir", default=None,
                   help="override paths.output_dir from the config")
    p.add_argument("--mode", choices=["fixed-point", "time-lagged"], default=None,
                   help="override fp.mode from the config")
    p.add_argument("--verify", action="store_true", default=None,
                   help="force the marginal/repricing verification on")
    p.add_argument("--snapshot-every", type=int, default=None, metavar="N",
                   help="write a density snapshot every N steps")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config)
    except (OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    return run_pipeline(config, output_dir=args.output_dir, mode=args.mode,
                        verify=args.verify, snapshot_every=args.snapshot_every)


if __name__ == "__main__":
    sys.exit(main())
