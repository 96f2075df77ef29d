"""Encoder, conditional decoder, loss-network trunk and evaluation classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import AdaIN, BatchNorm2d, Conv2d, Linear, Module, bilinear_upsample2, dropout, maxpool2
from .tensor import ShapeError, Tensor

CONDITIONING = ("batchnorm", "adain")
SKIP_VARIANTS = ("none", "skip1", "skip")

VGG16_SCHEDULE = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]
DESK_SCHEDULE = [16, 16, "M", 32, 32, "M", 64, 64, "M", 128, 128, "M", 128, 128, "M"]


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    schedule: list = field(default_factory=lambda: list(DESK_SCHEDULE))
    in_channels: int = 3
    input_size: int = 32

    def blocks(self) -> list[list[int]]:
        """Split the schedule at pooling markers; every block ends with a pool."""
        blocks, cur = [], []
        for item in self.schedule:
            if item == "M":
                if not cur:
                    raise ConfigError("encoder schedule has a pool with no preceding convolution")
                blocks.append(cur)
                cur = []
            elif isinstance(item, int) and not isinstance(item, bool) and item > 0:
                cur.append(item)
            else:
                raise ConfigError(f"encoder schedule entry {item!r} is neither a positive int nor 'M'")
        if cur:
            raise ConfigError("encoder schedule must end with a pooling stage 'M'")
        return blocks

    def validate(self) -> None:
        blocks = self.blocks()
        if len(blocks) < 2:
            raise ConfigError("encoder needs at least two pooling stages")
        if self.input_size % (2 ** len(blocks)):
            raise ConfigError(f"input size {self.input_size} is not divisible by 2^{len(blocks)}")

    @property
    def num_pools(self) -> int:
        return len(self.blocks())

    def tap_channels(self) -> list[int]:
        """Channels of the activations tapped before each pool except the last."""
        return [b[-1] for b in self.blocks()[:-1]]

    def bottleneck_shape(self) -> tuple[int, int, int]:
        blocks = self.blocks()
        side = self.input_size // 2 ** len(blocks)
        return blocks[-1][-1], side, side


@dataclass
class DecoderConfig:
    conditioning: str = "batchnorm"
    skip_variant: str = "none"
    out_channels: int = 1

    def validate(self) -> None:
        if self.conditioning not in CONDITIONING:
            raise ConfigError(f"conditioning must be one of {CONDITIONING}, got {self.conditioning!r}")
        if self.skip_variant not in SKIP_VARIANTS:
            raise ConfigError(f"skip_variant must be one of {SKIP_VARIANTS}, got {self.skip_variant!r}")
        if self.out_channels != 1:
            raise ConfigError("decoder produces single-channel sketches; out_channels must be 1")


def full_scale_encoder() -> EncoderConfig:
    return EncoderConfig(schedule=list(VGG16_SCHEDULE), in_channels=3, input_size=224)


def desk_scale_encoder() -> EncoderConfig:
    return EncoderConfig(schedule=list(DESK_SCHEDULE), in_channels=3, input_size=32)


def _conv_bn(in_ch, out_ch, rng, kernel=3):
    return Conv2d(in_ch, out_ch, kernel, rng=rng), BatchNorm2d(out_ch)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


class EncoderBlock(Module):
    def __init__(self, in_ch: int, channels: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.convs, self.norms = [], []
        for ch in channels:
            conv, bn = _conv_bn(in_ch, ch, rng)
            self.convs.append(conv)
            self.norms.append(bn)
            in_ch = ch

    def __call__(self, x: Tensor) -> Tensor:
        for conv, bn in zip(self.convs, self.norms):
            x = T.relu(bn(conv(x)))
        return x


class Encoder(Module):
    """VGG-style conv/BN/ReLU stack. Returns the bottleneck and the pre-pool taps."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        in_ch = config.in_channels
        self.blocks = []
        for channels in config.blocks():
            self.blocks.append(EncoderBlock(in_ch, channels, rng))
            in_ch = channels[-1]

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
            raise ShapeError(
                f"encoder expects [N,{cfg.in_channels},{cfg.input_size},{cfg.input_size}], got {x.shape}"
            )
        taps = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.blocks) - 1:
                taps.append(x)
            x = maxpool2(x)
        return x, taps

    def shapes(self, batch: int = 1) -> dict:
        """Shape inference without running the network."""
        cfg = self.config
        side = cfg.input_size
        taps = []
        for i, channels in enumerate(cfg.blocks()):
            if i < cfg.num_pools - 1:
                taps.append((batch, channels[-1], side, side))
            side //= 2
        return {"bottleneck": (batch, *cfg.bottleneck_shape()), "taps": taps}


def build_encoder(config: EncoderConfig, seed: int = 0) -> Encoder:
    return Encoder(config, seed)


def encode(encoder: Encoder, image) -> tuple[Tensor, list[Tensor]]:
    """Frozen-mode forward pass; never records encoder parameters on the tape."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    with T.no_grad():
        return encoder(x)


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------


class DecoderBlock(Module):
    """Upsample, optional skip concatenation, then conv + norm + ReLU layers."""

    def __init__(self, in_ch: int, channels: Sequence[int], conditioning: str, num_classes: int,
                 skip: str, tap_ch: int, rng: np.random.Generator):
        super().__init__()
        self.conditioning = conditioning
        self.skip = skip
        self.tap_ch = tap_ch
        self.widened = 0
        if skip == "skip1":
            self.adapter = Conv2d(in_ch + tap_ch, in_ch, kernel=1, rng=rng)
        first_in = in_ch + tap_ch if skip == "skip" else in_ch
        if skip == "skip":
            self.widened = tap_ch * 9 * channels[0]
        self.convs, self.norms = [], []
        for ch in channels:
            self.convs.append(Conv2d(first_in, ch, 3, rng=rng))
            if conditioning == "adain":
                self.norms.append(AdaIN(num_classes, ch, rng))
            else:
                self.norms.append(BatchNorm2d(ch))
            first_in = ch

    def __call__(self, x: Tensor, tap: Tensor | None, class_ids) -> Tensor:
        x = bilinear_upsample2(x)
        if self.skip != "none":
            if tap is None:
                raise ValueError("decoder configured with skip connections needs encoder taps")
            if tap.shape[2:] != x.shape[2:] or tap.shape[1] != self.tap_ch:
                raise ShapeError(f"skip tap shape {tap.shape} does not fit decoder activation {x.shape}")
            x = T.concat([x, tap], axis=1)
            if self.skip == "skip1":
                x = self.adapter(x)
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x)
            x = norm(x, class_ids) if self.conditioning == "adain" else norm(x)
            x = T.relu(x)
        return x


class Decoder(Module):
    """Mirror of the encoder: one block per pooling stage, bilinear upsampling in
    place of pooling, sigmoid output. Skips attach to every block but the first."""

    def __init__(self, config: DecoderConfig, encoder_config: EncoderConfig, num_classes: int, seed: int = 0):
        super().__init__()
        config.validate()
        encoder_config.validate()
        if num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        self.config = config
        self.encoder_config = encoder_config
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        enc_blocks = encoder_config.blocks()
        taps = encoder_config.tap_channels()
        in_ch = enc_blocks[-1][-1]
        self.blocks = []
        for i, channels in enumerate(reversed(enc_blocks)):
            skip = config.skip_variant if i > 0 else "none"
            tap_ch = taps[len(taps) - i] if skip != "none" else 0
            self.blocks.append(DecoderBlock(in_ch, channels, config.conditioning, num_classes, skip, tap_ch, rng))
            in_ch = channels[-1]
        self.out_conv = Conv2d(in_ch, config.out_channels, 3, rng=rng)

    @property
    def num_sites(self) -> int:
        return sum(1 for b in self.blocks if b.skip != "none")

    def __call__(self, bottleneck: Tensor, taps: Sequence[Tensor] | None = None, class_ids=None) -> Tensor:
        if self.config.conditioning == "adain":
            if class_ids is None:
                raise ValueError("AdaIN decoder needs class ids")
            class_ids = np.asarray(class_ids)
        if self.config.skip_variant != "none" and (taps is None or len(taps) != len(self.blocks) - 1):
            raise ValueError(f"decoder needs {len(self.blocks) - 1} encoder taps for skip connections")
        x = bottleneck
        for i, block in enumerate(self.blocks):
            tap = taps[len(taps) - i] if block.skip != "none" else None
            x = block(x, tap, class_ids)
        return T.sigmoid(self.out_conv(x))


def build_decoder(config: DecoderConfig, encoder_config: EncoderConfig, num_classes: int, seed: int = 0) -> Decoder:
    return Decoder(config, encoder_config, num_classes, seed)


def decode(decoder: Decoder, bottleneck: Tensor, taps=None, class_ids=None) -> Tensor:
    return decoder(bottleneck, taps, class_ids)


# ---------------------------------------------------------------------------
# Loss-network trunk (AlexNet-like) and its pretraining head
# ---------------------------------------------------------------------------


@dataclass
class FeatureStackConfig:
    channels: list = field(default_factory=lambda: [16, 32, 48, 48, 32])
    kernels: list = field(default_factory=lambda: [5, 3, 3, 3, 3])
    pool_after: list = field(default_factory=lambda: [0, 1, 4])
    in_channels: int = 1
    input_size: int = 32
    activation: str = "post_relu"
    head_hidden: int = 128
    dropout: float = 0.5

    def validate(self) -> None:
        if len(self.channels) != 5 or len(self.kernels) != 5:
            raise ConfigError("feature stack must have exactly 5 convolutions")
        if any(k % 2 == 0 for k in self.kernels):
            raise ConfigError("feature stack kernels must be odd")
        if self.activation != "post_relu":
            raise ConfigError("only post-ReLU activations are supported")
        if self.input_size % (2 ** len(self.pool_after)):
            raise ConfigError("input size not divisible by the pooling stages")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


class FeatureStack(Module):
    """Five conv+ReLU layers; ``features`` returns every post-ReLU activation."""

    def __init__(self, config: FeatureStackConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        in_ch = config.in_channels
        self.convs = []
        for ch, k in zip(config.channels, config.kernels):
            self.convs.append(Conv2d(in_ch, ch, k, rng=rng))
            in_ch = ch

    def features(self, x: Tensor) -> list[Tensor]:
        if x.shape[1] != self.config.in_channels:
            if self.config.in_channels == 3 and x.shape[1] == 1:
                x = T.concat([x, x, x], axis=1)
            else:
                raise ShapeError(f"feature stack expects {self.config.in_channels} channels, got {x.shape}")
        acts = []
        for i, conv in enumerate(self.convs):
            x = T.relu(conv(x))
            acts.append(x)
            if i in self.config.pool_after:
                x = maxpool2(x)
        return acts

    def output_shape(self) -> tuple[int, int, int]:
        side = self.config.input_size // 2 ** len(self.config.pool_after)
        return self.config.channels[-1], side, side


class SketchClassifier(Module):
    """Trunk plus a detachable two-layer head with dropout."""

    def __init__(self, trunk: FeatureStack, num_classes: int, seed: int = 0):
        super().__init__()
        self.trunk = trunk
        rng = np.random.default_rng(seed + 1)
        c, h, w = trunk.output_shape()
        cfg = trunk.config
        self.fc1 = Linear(c * h * w, cfg.head_hidden, rng)
        self.fc2 = Linear(cfg.head_hidden, num_classes, rng)
        self.dropout_rate = cfg.dropout

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        feats = self.trunk.features(x)[-1]
        h = maxpool2(feats) if (len(self.trunk.convs) - 1) in self.trunk.config.pool_after else feats
        h = h.reshape(h.shape[0], -1)
        h = dropout(h, self.dropout_rate, self.training, rng)
        h = T.relu(self.fc1(h))
        h = dropout(h, self.dropout_rate, self.training, rng)
        return self.fc2(h)

    def decapitate(self) -> FeatureStack:
        """Drop the head and return the frozen trunk."""
        return self.trunk.freeze()


def build_feature_extractor(config: FeatureStackConfig, num_classes: int, seed: int = 0) -> SketchClassifier:
    return SketchClassifier(FeatureStack(config, seed), num_classes, seed)


# ---------------------------------------------------------------------------
# Evaluation classifier (residual)
# ---------------------------------------------------------------------------


@dataclass
class EvalClassifierConfig:
    widths: list = field(default_factory=lambda: [16, 32, 64])
    in_channels: int = 1
    input_size: int = 32

    def validate(self) -> None:
        if not self.widths:
            raise ConfigError("eval classifier needs at least one stage")
        if self.input_size % (2 ** len(self.widths)):
            raise ConfigError("input size not divisible by the number of stages")


class ResidualBlock(Module):
    def __init__(self, ch: int, rng: np.random.Generator):
        super().__init__()
        self.conv1, self.bn1 = _conv_bn(ch, ch, rng)
        self.conv2, self.bn2 = _conv_bn(ch, ch, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return T.relu(h + x)


class EvalClassifier(Module):
    def __init__(self, config: EvalClassifierConfig, num_classes: int, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        w0 = config.widths[0]
        self.stem, self.stem_bn = _conv_bn(config.in_channels, w0, rng)
        self.projections, self.projection_bns, self.stages = [], [], []
        prev = w0
        for w in config.widths:
            if w != prev:
                conv, bn = _conv_bn(prev, w, rng)
                self.projections.append(conv)
                self.projection_bns.append(bn)
            else:
                self.projections.append(None)
                self.projection_bns.append(None)
            self.stages.append(ResidualBlock(w, rng))
            prev = w
        self.fc = Linear(prev, num_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.stem_bn(self.stem(x)))
        for proj, bn, stage in zip(self.projections, self.projection_bns, self.stages):
            h = maxpool2(h)
            if proj is not None:
                h = T.relu(bn(proj(h)))
            h = stage(h)
        h = h.mean(axis=(2, 3))
        return self.fc(h)


def build_eval_classifier(config: EvalClassifierConfig, num_classes: int, seed: int = 0) -> EvalClassifier:
    return EvalClassifier(config, num_classes, seed)


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------


@dataclass
class ParamReport:
    components: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def to_dict(self) -> dict:
        out = dict(self.components)
        out["total"] = self.total
        return out

    def __str__(self) -> str:
        width = max(len(k) for k in self.components) if self.components else 5
        lines = [f"{k:<{width}}  {v:>12,d}" for k, v in self.components.items()]
        lines.append(f"{'total':<{width}}  {self.total:>12,d}")
        return "\n".join(lines)


def count_params(model: Module, trainable_only: bool = True) -> ParamReport:
    """Count parameters by component.

    Decoders are split into convolutions, normalization affine terms, AdaIN
    embeddings, 1x1 skip adapters and the extra input channels added by the
    widening skip variant. Other models are grouped by top-level attribute.
    """
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad or not trainable_only]
    if isinstance(model, Decoder):
        comp = {"decoder_convs": 0, "normalization": 0, "embeddings": 0, "skip_adapters": 0, "skip_widening": 0}
        for name, p in params:
            if ".table." in name:
                comp["embeddings"] += p.size
            elif ".adapter." in name:
                comp["skip_adapters"] += p.size
            elif ".norms." in name:
                comp["normalization"] += p.size
            else:
                comp["decoder_convs"] += p.size
        widened = sum(b.widened for b in model.blocks)
        if not trainable_only or model.blocks[0].convs[0].weight.requires_grad:
            comp["decoder_convs"] -= widened
            comp["skip_widening"] = widened
        return ParamReport(comp)
    comp: dict[str, int] = {}
    for name, p in params:
        key = name.split(".")[0]
        comp[key] = comp.get(key, 0) + p.size
    return ParamReport(comp)


def config_dict(cfg) -> dict:
    return asdict(cfg)
