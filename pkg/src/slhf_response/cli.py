"""Command line entry point: slhf-response <mode> --config <path>."""

import argparse
import os
import sys

from .errors import ConfigurationError
from .pipeline import EXIT_CONFIG, parse_config, run

MODES = ("scf", "scan-ti", "scan-td", "fit", "tables")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="slhf-response",
        description="Photoionization cross sections from SLHF linear response")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="path to the run config file")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for frequency scans "
                             "(default: config value or CPU count)")
    parser.add_argument("--no-cache", action="store_true",
                        help="ignore and do not write the SCF cache")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.threads is not None:
        cfg.threads = args.threads
    elif cfg.threads <= 1:
        cfg.threads = os.cpu_count() or 1
    return run(cfg, mode=args.mode, use_cache=not args.no_cache)


if __name__ == "__main__":
    sys.exit(main())
