"""Run configuration: a JSON document with every field explicit."""

from __future__ import annotations

import copy
import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields

from .checkpoint import canonical
from .models import (DESK_SCHEDULE, VGG16_SCHEDULE, DecoderConfig, EncoderConfig, EvalClassifierConfig,
                     FeatureStackConfig)
from .training import ClassifierFitConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    seed: int = 0
    num_classes: int = 8
    images_per_class: int = 40
    sketches_per_image: int = 5
    size: int = 32
    split_ratio: float = 0.9


@dataclass
class EncoderSection:
    schedule: list = field(default_factory=lambda: list(DESK_SCHEDULE))
    pretrain_epochs: int = 15
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 32
    seed: int = 0


@dataclass
class DecoderSection:
    conditioning: str = "adain"
    skip_variant: str = "skip"


@dataclass
class LossSection:
    kind: str = "psim"
    channels: list = field(default_factory=lambda: [16, 32, 48, 48, 32])
    kernels: list = field(default_factory=lambda: [5, 3, 3, 3, 3])
    pool_after: list = field(default_factory=lambda: [0, 1, 4])
    head_hidden: int = 128
    dropout: float = 0.5
    pretrain_epochs: int = 15
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 32
    split_ratio: float = 0.8
    seed: int = 0


@dataclass
class TrainSection:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    flip: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    jitter: float = 0.1
    patience: int = 20


@dataclass
class EvalSection:
    widths: list = field(default_factory=lambda: [16, 32, 64])
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 32
    split_ratio: float = 0.8
    topk: int = 5
    seed: int = 0
    ablation_seeds: list = field(default_factory=lambda: [0, 1, 2])


SECTIONS = {
    "data": DataSection,
    "encoder": EncoderSection,
    "decoder": DecoderSection,
    "loss": LossSection,
    "train": TrainSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- derived module configs ------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(list(self.encoder.schedule), 3, self.data.size)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.decoder.conditioning, self.decoder.skip_variant)

    def feature_stack_config(self) -> FeatureStackConfig:
        lo = self.loss
        return FeatureStackConfig(list(lo.channels), list(lo.kernels), list(lo.pool_after), 1, self.data.size,
                                  "post_relu", lo.head_hidden, lo.dropout)

    def eval_classifier_config(self) -> EvalClassifierConfig:
        return EvalClassifierConfig(list(self.eval.widths), 1, self.data.size)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.lr, t.seed, self.loss.kind, t.flip, t.beta1, t.beta2, t.eps,
                           t.jitter, t.patience)

    def encoder_fit(self) -> ClassifierFitConfig:
        e = self.encoder
        return ClassifierFitConfig(e.pretrain_epochs, e.pretrain_batch_size, e.pretrain_lr, e.seed)

    def loss_fit(self) -> ClassifierFitConfig:
        lo = self.loss
        return ClassifierFitConfig(lo.pretrain_epochs, lo.pretrain_batch_size, lo.pretrain_lr, lo.seed)

    def eval_fit(self) -> ClassifierFitConfig:
        ev = self.eval
        return ClassifierFitConfig(ev.epochs, ev.batch_size, ev.lr, ev.seed)

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> bytes:
        return canonical(self.to_dict())

    def hash(self) -> str:
        return f"{zlib.crc32(self.canonical()) & 0xFFFFFFFF:08x}"

    def validate(self) -> "RunConfig":
        try:
            self.encoder_config().validate()
            self.decoder_config().validate()
            self.feature_stack_config().validate()
            self.eval_classifier_config().validate()
            self.train_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        d = self.data
        if d.num_classes < 2 or d.images_per_class < 2 or d.sketches_per_image < 1:
            raise ConfigError("data: need num_classes >= 2, images_per_class >= 2, sketches_per_image >= 1")
        for name, r in (("data.split_ratio", d.split_ratio), ("loss.split_ratio", self.loss.split_ratio),
                        ("eval.split_ratio", self.eval.split_ratio)):
            if not 0.0 < r < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {r}")
        if self.eval.topk < 1 or not self.eval.ablation_seeds:
            raise ConfigError("eval: topk >= 1 and at least one ablation seed are required")
        return self


def _check_type(path: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")
    return value


def from_dict(doc: dict) -> RunConfig:
    """Strict parse: every section and field must be present, nothing else may be."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    extra = sorted(set(doc) - set(SECTIONS))
    if extra:
        raise ConfigError(f"unknown config section(s): {', '.join(extra)}")
    parts = {}
    for name, cls in SECTIONS.items():
        if name not in doc:
            raise ConfigError(f"missing required section: {name}")
        sec = doc[name]
        if not isinstance(sec, dict):
            raise ConfigError(f"{name}: section must be an object")
        default = cls()
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(sec) - set(names))
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(f'{name}.{u}' for u in unknown)}")
        values = {}
        for fname in names:
            if fname not in sec:
                raise ConfigError(f"missing required field: {name}.{fname}")
            values[fname] = _check_type(f"{name}.{fname}", sec[fname], getattr(default, fname))
        parts[name] = cls(**values)
    return RunConfig(**parts).validate()


def parse(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return from_dict(doc)


def serialize(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


def _desk(conditioning: str, skip: str) -> RunConfig:
    cfg = RunConfig()
    cfg.decoder = DecoderSection(conditioning, skip)
    return cfg


def _full(conditioning: str, skip: str) -> RunConfig:
    cfg = RunConfig()
    cfg.data = DataSection(num_classes=125, size=224)
    cfg.encoder = EncoderSection(schedule=list(VGG16_SCHEDULE))
    cfg.decoder = DecoderSection(conditioning, skip)
    return cfg


PRESETS = {
    "desk": lambda: _desk("adain", "skip"),
    "desk-none": lambda: _desk("batchnorm", "none"),
    "desk-adain": lambda: _desk("adain", "none"),
    "desk-skip1": lambda: _desk("adain", "skip1"),
    "desk-skip": lambda: _desk("adain", "skip"),
    "fullscale-none": lambda: _full("batchnorm", "none"),
    "fullscale-adain": lambda: _full("adain", "none"),
    "fullscale-skip1": lambda: _full("adain", "skip1"),
    "fullscale-skip": lambda: _full("adain", "skip"),
}

# Reference decoder sizes (parameters) for the full-scale presets and the accepted relative band.
REFERENCE_PARAMS = {
    "fullscale-none": 17.0e6,
    "fullscale-adain": 18.2e6,
    "fullscale-skip1": 19.2e6,
    "fullscale-skip": 21.3e6,
}
REFERENCE_BAND = 0.15


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name]().validate()


def load(spec: str) -> RunConfig:
    """``spec`` is a preset name or a path to a JSON file."""
    if spec in PRESETS:
        return preset(spec)
    if not os.path.exists(spec):
        raise ConfigError(f"config not found: {spec} (not a file and not a preset)")
    with open(spec, encoding="utf-8") as f:
        return parse(f.read())


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    out = copy.deepcopy(cfg)
    sec = getattr(out, section)
    for k, v in values.items():
        setattr(sec, k, v)
    return out.validate()
