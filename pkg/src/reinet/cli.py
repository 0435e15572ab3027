"""Command line entry point: ``reinet layer|train|eval|summarize|plot``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .agents import ConfigError
from .graph import GraphError, load_graph, save_json, to_layered
from .runner import RunConfig, evaluate, load_config, random_baseline, train_seed
from .summary import read_summary, render_svg, summarize, write_summary


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"3"`` -> (3,), ``"0..4"`` -> (0, 1, 2, 3, 4), ``"1,5"`` -> (1, 5)."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            seeds = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use N, N..M or N,M") from None
    if not seeds:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return seeds


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.variant:
        changes["variant"] = args.variant
    if args.env:
        changes["env"] = args.env
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.out:
        changes["out"] = args.out
    return replace(cfg, **changes) if changes else cfg


def cmd_layer(args) -> int:
    layered = to_layered(load_graph(args.inp))
    save_json(layered.to_dict(), args.out)
    print(f"{layered.vertex_count} vertices, {len(layered.identity_vertices)} identity, "
          f"layers {[len(l) for l in layered.layers]} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if args.resume and len(cfg.seeds) != 1:
        raise ConfigError("--resume needs exactly one seed")
    for seed in cfg.seeds:
        path = train_seed(cfg, seed, resume=args.resume)
        print(f"seed {seed}: {path}")
    return 0


def cmd_eval(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.random:
        cfg = _config_from_args(args)
        res = random_baseline(cfg, args.episodes, seed)
    else:
        if not args.inp:
            raise ConfigError("eval needs --in CHECKPOINT_DIR (or --random)")
        res = evaluate(args.inp, args.episodes, seed, greedy=args.greedy)
    print(json.dumps({"mean": res.mean, "std": res.std, "episodes": len(res.returns)}))
    return 0


def cmd_summarize(args) -> int:
    files = []
    for p in args.inp:
        path = Path(p)
        files.extend(sorted(path.rglob("metrics.csv")) if path.is_dir() else [path])
    if not files:
        raise ConfigError("no metrics files found")
    bins = summarize(files, args.bin_width)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(bins, out / "summary.csv")
    (out / "chart.svg").write_text(render_svg(bins))
    print(f"{len(files)} metrics files, {len(bins)} bins -> {out}")
    return 0


def cmd_plot(args) -> int:
    bins = read_summary(args.inp[0])
    Path(args.out).write_text(render_svg(bins))
    print(f"chart -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reinet", description="Train and inspect agent networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("layer", help="insert identity vertices so every edge spans one layer")
    p.add_argument("--in", dest="inp", required=True, help="graph JSON")
    p.add_argument("--out", required=True, help="layered graph JSON")
    p.set_defaults(func=cmd_layer)

    for name, helptext, func in (("train", "train a variant over one or more seeds", cmd_train),
                                 ("eval", "evaluate a checkpoint without learning", cmd_eval)):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--variant", help="ippo, 3ppo, bridged-3ppo or bridged-3ppo-comm")
        p.add_argument("--env", help="spread or balance")
        p.add_argument("--steps", type=int, help="environment step budget")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", type=parse_seeds, help="N..M or N,M,...")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--resume", help="checkpoint directory to continue from")
        else:
            p.add_argument("--in", dest="inp", help="checkpoint directory")
            p.add_argument("--episodes", type=int, default=100)
            p.add_argument("--greedy", action="store_true", help="take the most likely action")
            p.add_argument("--random", action="store_true", help="evaluate the uniform-random baseline")

    p = sub.add_parser("summarize", help="seed-averaged curves with 95%% intervals")
    p.add_argument("--in", dest="inp", nargs="+", required=True, help="metrics CSVs or run directories")
    p.add_argument("--out", required=True, help="directory for summary.csv and chart.svg")
    p.add_argument("--bin-width", type=int, default=100, help="episodes per bin")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("plot", help="render a summary CSV as SVG")
    p.add_argument("--in", dest="inp", nargs=1, required=True, help="summary CSV")
    p.add_argument("--out", required=True, help="SVG path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GraphError, ValueError, OSError) as exc:
        print(f"reinet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
