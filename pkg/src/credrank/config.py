"""Pipeline configuration: an INI file with one section per stage.

Precedence, lowest to highest: built-in defaults, the config file, command
line flags. Relative input paths are resolved against the workdir.

Example::

    [paths]
    lexicon = synth/lexicon.txt

    [lda]
    K = 15
    iterations = 100

    [train]
    epochs = 100
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace

from .errors import CredrankError
from .features import FeatureConfig
from .lda import GibbsConfig
from .network import NetworkHyper
from .synth import SynthConfig
from .training import TrainConfig


class ConfigError(CredrankError, ValueError):
    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


@dataclass(frozen=True)
class Paths:
    lexicon: str = "synth/lexicon.txt"
    articles: str = "synth/articles.jsonl"
    companies: str = "synth/companies.csv"
    ratings: str = "synth/ratings.csv"
    investigations: str = "synth/investigations.csv"


@dataclass(frozen=True)
class VerifyConfig:
    window: int = 200
    folds: int = 5
    seed: int = 0
    negative_epochs: int = 20
    negative_learning_rate: float = 0.05
    disjoint: bool = True  # negative scorer skips rated companies


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    lda: GibbsConfig = field(default_factory=lambda: GibbsConfig(K=15, iterations=100))
    features: FeatureConfig = field(default_factory=lambda: FeatureConfig(c=0.3))
    network: NetworkHyper = field(default_factory=NetworkHyper)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, learning_rate=0.05))
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def negative_train(self) -> TrainConfig:
        return replace(self.train, epochs=self.verify.negative_epochs,
                       learning_rate=self.verify.negative_learning_rate)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Apply one seed to every seeded component."""
        return replace(
            self,
            lda=replace(self.lda, seed=seed),
            network=replace(self.network, seed=seed),
            train=replace(self.train, seed=seed),
            verify=replace(self.verify, seed=seed),
            synth=replace(self.synth, seed=seed),
        )

    def section_dict(self, name) -> dict:
        return _plain(getattr(self, name))

    def stage_hash(self, *sections) -> str:
        """Short digest of the named sections, used to tag artifacts."""
        payload = {name: self.section_dict(name) for name in sections}
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


SECTIONS = ("paths", "lda", "features", "network", "train", "verify", "synth")


def _plain(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _coerce(key_path, raw: str, current):
    text = raw.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float) or current is None:
            return float(text)
        if isinstance(current, tuple):
            return tuple(int(p) for p in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(key_path, str(exc)) from None


def _update(section_name, obj, items: dict):
    known = {f.name.lower(): f.name for f in fields(obj)}
    changes = {}
    for key, raw in items.items():
        path = f"{section_name}.{key}"
        name = known.get(key.lower())
        if name is None:
            raise ConfigError(path, "unknown key")
        changes[name] = _coerce(path, raw, getattr(obj, name))
    try:
        return replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigError(section_name, str(exc)) from None


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    cfg = base or PipelineConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        updated = _update(section, getattr(cfg, section), dict(parser.items(section)))
        cfg = replace(cfg, **{section: updated})
    return cfg


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for key, value in cfg.section_dict(name).items():
            if value is None:
                continue
            if isinstance(value, list):
                value = " ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def resolve(workdir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(workdir, path)

