"""Command-line entry point: ``python -m islab <command> ...``.

Every command that builds a run takes ``--config FILE`` (JSON written by
``RunConfig.save``) plus any number of ``--set key=value`` overrides; the
overrides win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from .config import RunConfig, parse_override
from .data import export_csv, gen_manifold, MANIFOLDS
from .evaluation import additions_precision
from .nn import ConfigurationError
from .pipeline import (
    export_embeddings, load_datasets, load_run, run_eval, run_mine, run_sweep, run_train,
)

logger = logging.getLogger("islab")


def build_config(path=None, overrides=()) -> RunConfig:
    base = RunConfig.load(path).to_dict() if path else RunConfig().to_dict()
    for text in overrides:
        key, value = parse_override(text)
        if key not in base:
            raise ConfigurationError(f"unknown config key {key!r}")
        base[key] = value
    return RunConfig.from_dict(base)


def parse_grid(items) -> dict:
    """``h=0.1,0.5,0.9`` style arguments to a dict of value lists."""
    grid = {}
    for text in items:
        key, _, raw = text.partition("=")
        if not raw:
            raise ConfigurationError(f"grid entry {text!r} is not key=v1,v2,...")
        grid[key.strip()] = [json.loads(v) for v in raw.split(",")]
    return grid


def _add_config_args(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config field (repeatable)")


def cmd_train(args):
    cfg = build_config(args.config, args.overrides)
    res = run_train(cfg, args.out, resume_from=args.resume)
    if res.reports:
        print(res.reports[-1].to_json())


def cmd_eval(args):
    report = run_eval(args.checkpoint)
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_mine(args):
    overrides = dict(parse_override(t) for t in args.overrides)
    report = run_mine(args.checkpoint, args.out, **overrides)
    labels = load_datasets(load_run(args.checkpoint).config)[0].eval_labels()
    print(json.dumps(report.summary(additions_precision(report, labels)), sort_keys=True))


def cmd_sweep(args):
    cfg = build_config(args.config, args.overrides)
    rows = run_sweep(cfg, parse_grid(args.grid), args.out, vary_seed=not args.same_seed)
    writer = csv.DictWriter(sys.stdout, ["param", "value", "knn_accuracy", "precision",
                                         "seed", "error"])
    writer.writeheader()
    writer.writerows(rows)


def cmd_export(args):
    run = load_run(args.checkpoint)
    train, test = load_datasets(run.config)
    export_embeddings(run, train if args.split == "train" else test, args.out)


def cmd_gen_data(args):
    ds = gen_manifold(args.kind, args.n_per_class, args.noise, args.seed)
    export_csv(ds, args.out)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="islab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the full multi-round protocol")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="round checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a round checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", help="write the report JSON here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mine", help="one extra mining pass from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", help="save the updated run to this checkpoint")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="mining overrides such as h, r, m")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("sweep", help="grid over h, r and m")
    _add_config_args(p)
    p.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2,...")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--same-seed", action="store_true", help="use the base seed in every cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-embeddings", help="write encoder features as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--out", default="embeddings.csv")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen-data", help="write a toy manifold as CSV")
    p.add_argument("--kind", choices=MANIFOLDS, default="two_moons")
    p.add_argument("--n-per-class", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
