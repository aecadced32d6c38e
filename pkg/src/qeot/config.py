"""Run configuration: one flat record covering data, model, loss and
training knobs, parseable from key=value text files with CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .data import DatasetSpec, required_vocab
from .errors import ConfigError
from .loss import LossWeights
from .model import ModelConfig


@dataclass
class RunConfig:
    # data
    seed: int = 0
    n_train: int = 2000
    n_test: int = 200
    L: int = 16
    G: int = 4
    c_img: int = 8
    R: int = 8
    max_triples: int = 6
    n_entity_patterns: int = 12
    sigma_noise: float = 0.02
    # model
    d: int = 64
    Q: int = 5
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    vocab: int = 0  # 0 = smallest vocabulary covering the dataset
    # loss
    w_ent: float = 1.0
    w_rel: float = 2.0
    w_l1: float = 3.0
    w_giou: float = 3.5
    empty_class_weight: float = 1.0
    # training / evaluation
    steps: int = 3000
    batch_size: int = 8
    lr: float = 3e-5
    weight_decay: float = 0.0
    checkpoint_every: int = 1000
    iou_threshold: float = 0.5

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            seed=self.seed, n_train=self.n_train, n_test=self.n_test,
            L=self.L, G=self.G, c_img=self.c_img, R=self.R,
            max_triples=self.max_triples, n_entity_patterns=self.n_entity_patterns,
            sigma_noise=self.sigma_noise,
        )

    def model_config(self) -> ModelConfig:
        vocab = self.vocab if self.vocab > 0 else required_vocab(self.dataset_spec())
        return ModelConfig(
            L=self.L, G=self.G, d=self.d, Q=self.Q, R=self.R,
            enc_layers=self.enc_layers, dec_layers=self.dec_layers,
            heads=self.heads, vocab=vocab, c_img=self.c_img,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(ent=self.w_ent, rel=self.w_rel, l1=self.w_l1, giou=self.w_giou)

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, target_type: type):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key '{name}': cannot parse '{raw}' as {target_type.__name__}") from exc


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """key=value lines; '#' starts a comment; unknown keys are errors."""
    cfg = dataclasses.replace(base) if base else RunConfig()
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {"int": int, "float": float, "str": str}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key=value, got '{stripped}'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in fields:
            raise ConfigError(f"config line {lineno}: unknown key '{key}'")
        target = types.get(fields[key], str) if isinstance(fields[key], str) else fields[key]
        setattr(cfg, key, _coerce(key, value, target))
    return cfg


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, base)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Non-None entries replace config fields (flags beat file values)."""
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in valid:
            raise ConfigError(f"unknown config field '{key}'")
        setattr(cfg, key, value)
    return cfg
