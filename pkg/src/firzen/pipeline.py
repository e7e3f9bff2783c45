"""End-to-end steps shared by the command line, demos and tests.

Artifacts live under the configured output directory::

    split.manifest  users.txt  items.txt  kg.tsv  graphs.bin
    features.<modality>.bin  stats.txt
    checkpoints/last.ckpt  checkpoints/best.ckpt  train.log
    report.txt  report.tsv
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (MODALITIES, align_features, build_normal_cold_splits, build_strict_cold_splits,
                   k_core_filter, load_features, load_interactions, read_split_manifest, save_features,
                   write_interactions, write_split_manifest)
from .errors import ConfigError, DataError, ParseError
from .evaluation import evaluate_embeddings, harmonic_mean, write_report_table, format_reports
from .graphs import build_frozen_graphs, load_bundle, save_bundle
from .kg import construct_kg_from_metadata, inject_kg_noise, read_kg_tsv, write_kg_tsv
from .model import Ablation, make_operators
from .synthetic import generate_synthetic
from .trainer import Trainer, read_checkpoint, restore_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

MANIFEST = "split.manifest"
BUNDLE = "graphs.bin"
KG_FILE = "kg.tsv"
STATS = "stats.txt"
SETTINGS = ("cold", "warm", "normal_cold")


@dataclass
class Inputs:
    dataset: object
    kg: object
    features: dict


@dataclass
class Artifacts:
    split: object
    bundle: object
    features: dict
    user_vocab: list
    item_vocab: list


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{x}\n" for x in lines)


def read_metadata(path):
    """JSON lines; each record carries its raw id under ``item``."""
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, path=path) from None
            if "item" not in rec:
                raise ParseError("record has no 'item' key", line=lineno, path=path)
            records[str(rec["item"])] = rec
    return records


def load_inputs(cfg):
    """Dataset, knowledge graph and aligned features before splitting."""
    if cfg.synthetic is not None:
        ds, kg, features, _ = generate_synthetic(cfg.synthetic)
        return Inputs(ds, kg, features)
    p = cfg.paths
    ds = load_interactions(p.interactions, p.interactions_format)
    if cfg.split.k_core > 1:
        ds = k_core_filter(ds, cfg.split.k_core)
    if p.kg is not None:
        kg = read_kg_tsv(p.kg, ds.item_vocab)
    else:
        kg = construct_kg_from_metadata(
            ds.item_vocab, read_metadata(p.metadata),
            (cfg.split.word_freq_min, cfg.split.word_freq_max), cfg.split.tfidf_threshold)
    source_vocab = _read_lines(p.feature_items) if p.feature_items is not None else None
    features = {}
    for m in MODALITIES:
        path = getattr(p, f"{m}_features")
        if path is None:
            continue
        fm = load_features(path, m)
        if source_vocab is not None:
            fm = align_features(fm, ds.item_vocab, source_vocab)
        elif len(fm.values) != ds.item_count:
            raise DataError(f"{path}: {len(fm.values)} rows for {ds.item_count} items; "
                            "set [paths] feature_items to align by id")
        features[m] = fm
    if not features:
        raise ConfigError("no modality features configured")
    return Inputs(ds, kg, features)


def dataset_statistics(ds, split, kg):
    """Table-style counts as ``(name, value)`` pairs."""
    return [
        ("users", ds.user_count),
        ("items", ds.item_count),
        ("warm_items", len(split.warm_items)),
        ("cold_items", len(split.cold_items)),
        ("interactions", len(ds.interactions)),
        ("sparsity", f"{100.0 * ds.sparsity():.3f}%"),
        ("entities", kg.n_entities),
        ("relations", kg.n_relations),
        ("triplets", len(kg.triples)),
    ]


def format_statistics(stats):
    return "\n".join(f"{k}\t{v}" for k, v in stats)


def parse_statistics(text):
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, value = line.split("\t")
            out[key] = value
    return out


def build(cfg, seed=None, out=None):
    """Split, build graphs and write every artifact. Returns the statistics text."""
    seed = cfg.split.seed if seed is None else seed
    inputs = load_inputs(cfg)
    ds, kg = inputs.dataset, inputs.kg
    if cfg.noise.mode is not None:
        kg = inject_kg_noise(kg, cfg.noise.mode, cfg.noise.fraction, cfg.noise.seed)
    split = build_strict_cold_splits(ds, cfg.split.cold_fraction, cfg.split.ratios, seed)
    split = build_normal_cold_splits(split, seed)
    bundle = build_frozen_graphs(split, kg, inputs.features, cfg.train.K_item, cfg.train.K_user)

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_split_manifest(split, outdir / MANIFEST)
    _write_lines(outdir / "users.txt", ds.user_vocab)
    _write_lines(outdir / "items.txt", ds.item_vocab)
    write_kg_tsv(kg, outdir / KG_FILE)
    save_bundle(bundle, outdir / BUNDLE)
    for m, fm in inputs.features.items():
        save_features(fm, outdir / f"features.{m}.bin")
    stats = format_statistics(dataset_statistics(ds, split, kg))
    (outdir / STATS).write_text(stats + "\n", encoding="utf-8")
    if out is not None:
        out.write(stats + "\n")
    return stats


def load_artifacts(cfg):
    """Read built artifacts and cross-check their dimensions."""
    outdir = Path(cfg.output_dir)
    for name in (MANIFEST, BUNDLE, "items.txt", "users.txt"):
        if not (outdir / name).exists():
            raise ConfigError(f"{outdir / name} is missing; run build first")
    split = read_split_manifest(outdir / MANIFEST)
    bundle = load_bundle(outdir / BUNDLE)
    users, items = _read_lines(outdir / "users.txt"), _read_lines(outdir / "items.txt")
    if (bundle.n_users, bundle.n_items) != (split.user_count, split.item_count) \
            or (len(users), len(items)) != (split.user_count, split.item_count):
        raise ConfigError("split manifest, vocabularies and graph bundle disagree on sizes")
    if not np.array_equal(bundle.cold_mask, split.cold_mask()):
        raise ConfigError("graph bundle was built for a different cold-item set")
    if (bundle.k_item, bundle.k_user) != (cfg.train.K_item, cfg.train.K_user):
        raise ConfigError(f"artifacts built with K_item={bundle.k_item}, K_user={bundle.k_user}; "
                          f"config asks for {cfg.train.K_item}, {cfg.train.K_user}")
    features = {m: load_features(outdir / f"features.{m}.bin", m, split.item_count)
                for m in bundle.modalities}
    return Artifacts(split, bundle, features, users, items)


def make_trainer(cfg, artifacts, ablation=None, log=None):
    return Trainer(artifacts.bundle, artifacts.split, artifacts.features, cfg.train,
                   ablation or cfg.ablation, log)


def train(cfg, resume=None, epochs=None):
    """Fit with per-epoch ``last.ckpt`` and a final ``best.ckpt``; returns the trainer."""
    artifacts = load_artifacts(cfg)
    outdir = Path(cfg.output_dir)
    ckdir = outdir / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    echo = {"config_text": cfg.to_text()}
    with open(outdir / "train.log", "a" if resume else "w", encoding="utf-8") as log:
        trainer = make_trainer(cfg, artifacts, log=log)
        if resume is not None:
            restore_checkpoint(trainer, resume)
        trainer.fit(epochs, on_epoch=lambda t: save_checkpoint(t, ckdir / "last.ckpt", echo))
    save_checkpoint(trainer, ckdir / "best.ckpt", echo)
    return trainer


def load_trained(cfg, checkpoint):
    """Artifacts plus a trainer holding the checkpoint's parameters.

    The ablation recorded in the checkpoint wins over the config's.
    """
    artifacts = load_artifacts(cfg)
    meta, _ = read_checkpoint(checkpoint)
    ablation = Ablation(**meta["ablation"])
    trainer = make_trainer(cfg, artifacts, ablation=ablation)
    restore_checkpoint(trainer, checkpoint, params_only=True)
    return artifacts, trainer


def evaluate(cfg, checkpoint, settings=("cold", "warm"), stage="test"):
    """Metric reports per requested setting and K; cold+warm adds harmonic means."""
    for s in settings:
        if s not in SETTINGS:
            raise ConfigError(f"unknown setting {s!r}")
    artifacts, trainer = load_trained(cfg, checkpoint)
    split = artifacts.split
    users, items = trainer.embeddings()
    reports = []
    for k in cfg.eval_k:
        by_setting = {}
        for s in settings:
            if s == "normal_cold":
                ops = make_operators(artifacts.bundle, "inference", extra_interactions=split.known_cold,
                                     behavior_norm=cfg.train.behavior_norm)
                u, i = trainer.embeddings(ops)
                by_setting[s] = evaluate_embeddings(u, i, split, s, k, stage)
            else:
                by_setting[s] = evaluate_embeddings(users, items, split, s, k, stage)
        reports.extend(by_setting[s] for s in settings)
        if "cold" in by_setting and "warm" in by_setting:
            reports.append(harmonic_mean(by_setting["cold"], by_setting["warm"]))
    outdir = Path(cfg.output_dir)
    (outdir / "report.txt").write_text(format_reports(reports) + "\n", encoding="utf-8")
    write_report_table(reports, outdir / "report.tsv")
    return reports


def export_embeddings(cfg, checkpoint, out_path):
    """One row per item: raw id, warm/cold tag, final embedding."""
    artifacts, trainer = load_trained(cfg, checkpoint)
    _, items = trainer.embeddings()
    cold = artifacts.split.cold_mask()
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for idx, raw in enumerate(artifacts.item_vocab):
            vec = "\t".join(f"{float(x):.9g}" for x in items[idx])
            fh.write(f"{raw}\t{'cold' if cold[idx] else 'warm'}\t{vec}\n")
    return len(artifacts.item_vocab)


def inject_noise(cfg, out_path, seed=None):
    """Write a noise-injected copy of the input knowledge graph."""
    if cfg.noise.mode is None:
        raise ConfigError("set [noise] mode to inject noise")
    kg = load_inputs(cfg).kg
    noisy = inject_kg_noise(kg, cfg.noise.mode, cfg.noise.fraction,
                            cfg.noise.seed if seed is None else seed)
    write_kg_tsv(noisy, out_path)
    return len(noisy.triples) - len(kg.triples)


def synth(spec, out_dir):
    """Write a synthetic dataset as plain input files plus a matching config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, kg, features, clusters = generate_synthetic(spec)
    write_interactions(ds, out_dir / "interactions.tsv")
    write_kg_tsv(kg, out_dir / "kg.tsv")
    for m, fm in features.items():
        save_features(fm, out_dir / f"{m}.bin")
    _write_lines(out_dir / "items.txt", ds.item_vocab)
    _write_lines(out_dir / "clusters.txt", [f"{raw}\t{c}" for raw, c in zip(ds.item_vocab, clusters)])
    config = "\n".join([
        "[paths]",
        "output_dir = out",
        "interactions = interactions.tsv",
        "kg = kg.tsv",
        "text_features = text.bin",
        "image_features = image.bin",
        "feature_items = items.txt",
        "",
        "[split]",
        f"k_core = {spec.k_core}",
        "",
    ])
    (out_dir / "config.ini").write_text(config, encoding="utf-8")
    return out_dir / "config.ini"
