"""Experiment configuration: sectioned ``key = value`` files.

Sections: ``[paths]``, ``[synthetic]``, ``[split]``, ``[train]``,
``[ablation]``, ``[noise]``, ``[eval]``. Relative paths resolve against the
config file's directory; the output directory resolves against
``$FIRZEN_OUTPUT_ROOT`` when that variable is set.
"""

import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .kg import NOISE_MODES
from .model import Ablation
from .synthetic import SyntheticSpec
from .trainer import TrainingConfig

OUTPUT_ROOT_ENV = "FIRZEN_OUTPUT_ROOT"
SECTIONS = ("paths", "synthetic", "split", "train", "ablation", "noise", "eval")
ABLATION_KEYS = {"enable_BA": "ba", "enable_KA": "ka", "enable_MA_text": "ma_text",
                 "enable_MA_image": "ma_image", "enable_MS": "ms"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(raw, key):
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


@dataclass
class PathsConfig:
    output_dir: Path = Path("out")
    interactions: Path = None
    interactions_format: str = "tsv"
    kg: Path = None
    metadata: Path = None  # JSON lines, one record per item with an "item" key
    text_features: Path = None
    image_features: Path = None
    feature_items: Path = None  # raw item id per feature row; default: dataset order


@dataclass
class SplitConfig:
    cold_fraction: float = 0.2
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    seed: int = 0
    k_core: int = 5
    word_freq_min: int = 10
    word_freq_max: int = 1000
    tfidf_threshold: float = 0.1

    @property
    def ratios(self):
        return (self.train_ratio, self.val_ratio, self.test_ratio)


@dataclass
class NoiseConfig:
    mode: str = None
    fraction: float = 0.2
    seed: int = 0


@dataclass
class ExperimentConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    synthetic: SyntheticSpec = None
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    ablation: Ablation = field(default_factory=Ablation)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    eval_k: tuple = (20,)
    source: Path = None

    @property
    def output_dir(self):
        return self.paths.output_dir

    def validate(self):
        if self.synthetic is None and self.paths.interactions is None:
            raise ConfigError("set [paths] interactions or add a [synthetic] section")
        if self.synthetic is None:
            if self.paths.kg is None and self.paths.metadata is None:
                raise ConfigError("set [paths] kg or metadata")
            for name in ("interactions", "kg", "metadata", "text_features", "image_features",
                         "feature_items"):
                p = getattr(self.paths, name)
                if p is not None and not p.exists():
                    raise ConfigError(f"[paths] {name}: {p} does not exist")
        if not 0 < self.split.cold_fraction < 1:
            raise ConfigError("cold_fraction must lie in (0, 1)")
        if abs(sum(self.split.ratios) - 1.0) > 1e-9 or min(self.split.ratios) <= 0:
            raise ConfigError("split ratios must be positive and sum to 1")
        if self.noise.mode is not None:
            if self.noise.mode not in NOISE_MODES:
                raise ConfigError(f"noise mode must be one of {NOISE_MODES}")
            if not 0 <= self.noise.fraction <= 1:
                raise ConfigError("noise fraction must lie in [0, 1]")
        if not self.eval_k or min(self.eval_k) < 1:
            raise ConfigError("eval K values must be positive")
        return self

    def to_text(self):
        """Round-trippable text form (used as the config echo in checkpoints)."""
        cp = _parser()
        cp["paths"] = {k: str(v) for k, v in asdict(self.paths).items() if v is not None}
        if self.synthetic is not None:
            cp["synthetic"] = {k: str(v) for k, v in asdict(self.synthetic).items()}
        cp["split"] = {k: str(v) for k, v in asdict(self.split).items()}
        cp["train"] = {k: str(v) for k, v in self.train.to_dict().items()}
        cp["ablation"] = {key: str(getattr(self.ablation, attr)).lower() for key, attr in ABLATION_KEYS.items()}
        if self.noise.mode is not None:
            cp["noise"] = {k: str(v) for k, v in asdict(self.noise).items()}
        cp["eval"] = {"K": ",".join(str(k) for k in self.eval_k)}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _parser():
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys like K_item are case-sensitive
    return cp


def _typed(cls, section, items, exclude=()):
    known = {f.name: f for f in fields(cls) if f.name not in exclude}
    out = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        ftype = known[key].type
        try:
            out[key] = _bool(raw, key) if ftype is bool else ftype(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    return out


def resolve_output_dir(raw, base):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(raw)
    if path.is_absolute():
        return path
    return Path(root) / path if root else base / path


def parse_config(text, base_dir=Path("."), source=None):
    cp = _parser()
    try:
        cp.read_string(text, source=str(source or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    base_dir = Path(base_dir)

    paths = PathsConfig(output_dir=resolve_output_dir("out", base_dir))
    if cp.has_section("paths"):
        for key, raw in cp.items("paths"):
            if key not in PathsConfig.__dataclass_fields__:
                raise ConfigError(f"[paths] unknown key {key!r}")
            if key == "interactions_format":
                paths.interactions_format = raw
            elif key == "output_dir":
                paths.output_dir = resolve_output_dir(raw, base_dir)
            else:
                p = Path(raw)
                setattr(paths, key, p if p.is_absolute() else base_dir / p)

    synthetic = None
    if cp.has_section("synthetic"):
        synthetic = SyntheticSpec(**_typed(SyntheticSpec, "synthetic", cp.items("synthetic")))
    split = SplitConfig(**_typed(SplitConfig, "split", cp.items("split"))) if cp.has_section("split") \
        else SplitConfig()
    train = TrainingConfig()
    if cp.has_section("train"):
        try:
            train = TrainingConfig.from_mapping(dict(cp.items("train")))
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None
    flags = {}
    if cp.has_section("ablation"):
        for key, raw in cp.items("ablation"):
            if key not in ABLATION_KEYS:
                raise ConfigError(f"[ablation] unknown key {key!r}")
            flags[ABLATION_KEYS[key]] = _bool(raw, key)
    ablation = Ablation(**flags)
    noise = NoiseConfig()
    if cp.has_section("noise"):
        items = dict(cp.items("noise"))
        if items.get("mode", "").strip().lower() in ("", "none"):
            items.pop("mode", None)
        noise = NoiseConfig(**_typed(NoiseConfig, "noise", items.items()))
    eval_k = (20,)
    if cp.has_section("eval"):
        for key, raw in cp.items("eval"):
            if key != "K":
                raise ConfigError(f"[eval] unknown key {key!r}")
            try:
                eval_k = tuple(int(x) for x in raw.split(",") if x.strip())
            except ValueError:
                raise ConfigError(f"[eval] K: cannot parse {raw!r}") from None
    cfg = ExperimentConfig(paths, synthetic, split, train, ablation, noise, eval_k, source)
    return cfg.validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent, path)
