"""Command-line entry point: ``knapsack-lab <verb> --config run.yaml``.

Each verb runs one experiment kind; ``report`` summarises a results
directory. Flags override the configuration document. Failures print a
one-line JSON object on stderr and exit with the failure class code
(2 validation, 3 resource, 4 numerical, 5 io).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import KnapsackLabError, ValidationError
from .experiments import VERB_KINDS, load_config, report, run

log = logging.getLogger("knapsack_lab")


def build_parser():
    parser = argparse.ArgumentParser(prog="knapsack-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    verbs = parser.add_subparsers(dest="verb", required=True)
    for verb, kind in VERB_KINDS.items():
        sub = verbs.add_parser(verb, help=f"run a {kind} experiment")
        sub.add_argument("--config", required=True, help="YAML run configuration")
        sub.add_argument("--seed", type=int, help="64-bit seed")
        sub.add_argument("--out", help="output directory")
        sub.add_argument("--mode", choices=("accept-prob", "verbatim-g"))
        sub.add_argument("--scale-ladder", help="comma-separated scales, e.g. 10,20,40")
        sub.add_argument("--workers", type=int, help="worker threads")
        sub.add_argument("--full-paths", action="store_true", default=None,
                         help="also dump every simulated path")
    rep = verbs.add_parser("report", help="summarise a results directory")
    rep.add_argument("directory")
    return parser


def _failure(exc):
    payload = {"error": exc.failure_class, "exit_code": exc.exit_code, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    return exc.exit_code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "report":
            rows = report(args.directory)
            print(f"{len(rows)} run(s) summarised in {args.directory}")
            return 0
        overrides = {
            "seed": args.seed,
            "out": args.out,
            "mode": args.mode,
            "scale_ladder": args.scale_ladder,
            "workers": args.workers,
            "full_paths": args.full_paths,
        }
        config = load_config(args.config, overrides)
        kind = VERB_KINDS[args.verb]
        if config.kind != kind:
            raise ValidationError(f"verb {args.verb!r} runs {kind!r}, config says {config.kind!r}")
        if config.out is None:
            raise ValidationError("no output directory: pass --out or set 'out'")
        log.info("running %s into %s", kind, config.out)
        manifest = run(config)
        status = manifest["metrics"].get("passed")
        print(f"{kind}: wrote {len(manifest['outputs'])} file(s) to {config.out}; passed={status}")
        return 0
    except KnapsackLabError as exc:
        return _failure(exc)
