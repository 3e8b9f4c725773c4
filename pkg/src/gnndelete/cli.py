"""Command-line entry point: ``gnndelete {train,unlearn,eval,pipeline,gen}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    InsufficientCandidatesError,
    MissingEdgeError,
    NumericError,
    ParseError,
)
from .graph import save_edge_list
from .pipeline import (
    RunExistsError,
    base_report,
    load_config,
    report,
    run_pipeline,
    stage_base,
    stage_deletion,
    stage_gnndelete,
)
from .synthetic import generate_synthetic, parse_spec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4

log = logging.getLogger("gnndelete")


def _config(args):
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    return cfg


def _seed_dir(cfg, seed: int) -> Path:
    return Path(cfg.output_dir) / f"seed_{seed}"


def cmd_train(args) -> int:
    cfg = _config(args)
    for seed in cfg.seeds:
        st = stage_base(cfg, seed, _seed_dir(cfg, seed), resume=not args.force)
        print(f"seed {seed}: base model in {st.out / 'base.gnnd'}")
    return EXIT_OK


def _require(path: Path, hint: str) -> None:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; {hint}")


def cmd_unlearn(args) -> int:
    cfg = _config(args)
    for seed in cfg.seeds:
        out = _seed_dir(cfg, seed)
        _require(out / "base.gnnd", "run `train` first")
        st = stage_deletion(cfg, stage_base(cfg, seed, out, resume=True), resume=not args.force)
        rep = stage_gnndelete(cfg, st, resume=not args.force)
        print(json.dumps({"seed": seed, "gnndelete": rep.report.to_dict()}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    for seed in cfg.seeds:
        out = _seed_dir(cfg, seed)
        for name in ("base.gnnd", "split.npz", "gnndelete.gnnd"):
            _require(out / name, "run `train` and `unlearn` first")
        st = stage_deletion(cfg, stage_base(cfg, seed, out, resume=True), resume=True)
        rows = {"base": base_report(st).report.to_dict(),
                "gnndelete": stage_gnndelete(cfg, st, resume=True).report.to_dict()}
        print(json.dumps({"seed": seed, **rows}, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    record = run_pipeline(cfg, force=args.force)
    table, summary = report(record)
    print(table)
    (Path(cfg.output_dir) / "summary.json").write_text(summary)
    return EXIT_OK


def cmd_gen(args) -> int:
    if not args.spec:
        raise ConfigError("gen needs --spec, e.g. two_cliques:n_per=20,bridges=1")
    if not args.out:
        raise ConfigError("gen needs --out DIR")
    g = generate_synthetic(parse_spec(args.spec, args.features), 0 if args.seed is None else args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = out / "labels.csv" if g.labels is not None else None
    save_edge_list(g, out / "edges.tsv", out / "features.csv", labels)
    print(f"{g.num_nodes} nodes, {g.num_edges} edges -> {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "unlearn": cmd_unlearn, "eval": cmd_eval,
            "pipeline": cmd_pipeline, "gen": cmd_gen}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnndelete", description="Graph unlearning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (INI)", required=name != "gen")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--force", action="store_true", help="recompute and overwrite results")
        if name == "gen":
            p.add_argument("--spec", help="kind:key=value,... e.g. erdos_renyi:n=100,p=0.05")
            p.add_argument("--features", default="degree", choices=("degree", "random"))
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, RunExistsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, DimensionError, MissingEdgeError, InsufficientCandidatesError,
            CheckpointError, FileNotFoundError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
