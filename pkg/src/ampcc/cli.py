"""Command-line driver: se | couple-se | rate | mi | ber | asc.

Example:
    ampcc ber --config cfg.json --snr-db 4,5,6 --out results/ --seed 7
Information rates are reported in bits on the CLI; internals are in nats.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import Experiment, run_experiment

_KINDS = ("se", "couple-se", "rate", "mi", "ber", "asc")


def _add_common(sub):
    sub.add_argument("--config", required=True, help="JSON config file")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="experiment seed (u64)")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: AMPCC_THREADS or 1)")
    sub.add_argument("--snr-db", default=None,
                     help="comma-separated SNR sweep in dB")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ampcc",
        description="Compressed-coding workbench: AMP/GAMP decoding, "
                    "state evolution, area-theorem rates, spatial coupling.")
    subs = parser.add_subparsers(dest="kind", required=True)
    for kind in _KINDS:
        _add_common(subs.add_parser(kind))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print("error: cannot read config: %s" % exc, file=sys.stderr)
        return 2
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("AMPCC_THREADS", "1"))
    if args.snr_db is not None:
        sweep = [float(x) for x in args.snr_db.split(",") if x.strip()]
    else:
        sweep = config.pop("snr_db_sweep", None) or [0.0]
    try:
        exp = Experiment(kind=args.kind, config=config, sweep=sweep,
                         out=args.out, seed=args.seed, threads=threads)
        outputs = run_experiment(exp)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
