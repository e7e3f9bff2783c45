"""Command line: ``firzen <verb> --config PATH [flags]``."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import FirzenError
from .model import Ablation
from .synthetic import SyntheticSpec


def _apply_overrides(cfg, args):
    if getattr(args, "ablate", None):
        cfg.ablation = Ablation.from_names(args.ablate.split(","))
    return cfg


def cmd_build(args):
    cfg = load_config(args.config)
    pipeline.build(cfg, seed=args.seed, out=sys.stdout)


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    trainer = pipeline.train(cfg, resume=args.checkpoint, epochs=args.epochs)
    print(f"best_epoch\t{trainer.best_epoch}")
    print(f"best_val_recall@{cfg.train.eval_k}\t{trainer.best_metric:.6f}")
    print(f"checkpoint\t{Path(cfg.output_dir) / 'checkpoints' / 'best.ckpt'}")


def _checkpoint(cfg, args):
    return args.checkpoint or Path(cfg.output_dir) / "checkpoints" / "best.ckpt"


def cmd_eval(args):
    cfg = load_config(args.config)
    settings = args.setting or ["cold", "warm"]
    reports = pipeline.evaluate(cfg, _checkpoint(cfg, args), settings)
    for rep in reports:
        print("\n".join(rep.lines()))


def cmd_export(args):
    cfg = load_config(args.config)
    out = args.out or Path(cfg.output_dir) / "embeddings.tsv"
    n = pipeline.export_embeddings(cfg, _checkpoint(cfg, args), out)
    print(f"wrote {n} item embeddings to {out}")


def cmd_inject_noise(args):
    cfg = load_config(args.config)
    out = args.out or Path(cfg.output_dir) / "kg.noisy.tsv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    n = pipeline.inject_noise(cfg, out, seed=args.seed)
    print(f"added {n} {cfg.noise.mode} triples; wrote {out}")


def cmd_synth(args):
    spec = SyntheticSpec()
    if args.config:
        cfg = load_config(args.config)
        spec = cfg.synthetic or spec
    overrides = {k: getattr(args, k) for k in ("n_users", "n_items", "n_clusters") if getattr(args, k)}
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = replace(spec, **overrides)
    path = pipeline.synth(spec, args.out)
    print(f"wrote synthetic inputs; config at {path}")


def make_parser():
    parser = argparse.ArgumentParser(prog="firzen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name, func, config_required=True):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=config_required)
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    verb("build", cmd_build)
    p = verb("train", cmd_train)
    p.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    p.add_argument("--ablate", help="comma list of ba,ka,ma_text,ma_image,ms to disable")
    p.add_argument("--epochs", type=int)
    p = verb("eval", cmd_eval)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--setting", action="append", choices=pipeline.SETTINGS)
    p = verb("export-embeddings", cmd_export)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--out", type=Path)
    p = verb("inject-noise", cmd_inject_noise)
    p.add_argument("--out", type=Path)
    p = verb("synth", cmd_synth, config_required=False)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-users", dest="n_users", type=int)
    p.add_argument("--n-items", dest="n_items", type=int)
    p.add_argument("--n-clusters", dest="n_clusters", type=int)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FirzenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
