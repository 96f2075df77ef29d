"""Optimizer and the training phases.

Phase 0 pretrains the encoder as an image classifier (in place of weights
from a large photo corpus) and phase 1 pretrains the loss network as a
sketch classifier; both are then frozen. Phase 2 trains only the decoder and AdaIN embeddings
end-to-end against one sampled target sketch per image.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, module_arrays
from .data import AugmentSpec, DatasetSplit, SketchSample, all_sketches, augment_image, augment_sketch, split_items
from .layers import Linear, Module, cross_entropy
from .loss import mse_loss, psim
from .models import Decoder, Encoder, EvalClassifier, FeatureStack, SketchClassifier
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Loss became NaN/Inf."""


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. ``None`` grads leave a parameter untouched."""
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise T.ShapeError(f"adam_step: grad {g.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self, prefix: str = "adam") -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"{prefix}.m/{i}"] = m
            out[f"{prefix}.v/{i}"] = v
        return out

    def meta(self) -> dict:
        s = self.state
        return {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step}

    def load(self, meta: dict, arrays: dict[str, np.ndarray], prefix: str = "adam") -> None:
        s = self.state
        s.lr, s.beta1, s.beta2, s.eps, s.step = meta["lr"], meta["beta1"], meta["beta2"], meta["eps"], meta["step"]
        if f"{prefix}.m/0" in arrays:
            s.m = [arrays[f"{prefix}.m/{i}"].astype(p.dtype, copy=True) for i, p in enumerate(self.params)]
            s.v = [arrays[f"{prefix}.v/{i}"].astype(p.dtype, copy=True) for i, p in enumerate(self.params)]


def _check_finite(loss: Tensor, what: str) -> float:
    val = float(loss.data)
    if not math.isfinite(val):
        raise TrainingDiverged(f"{what}: loss became {val}")
    return val


# ---------------------------------------------------------------------------
# Generic classifier fitting (phases 0/1 and the evaluation classifier)
# ---------------------------------------------------------------------------


@dataclass
class ClassifierFitConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def predict_logits(forward: Callable[[Tensor], Tensor], x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    outs = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(forward(Tensor(x[i : i + batch_size])).data)
    return np.concatenate(outs, axis=0)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Fraction of rows whose label is among the k highest scores (ties -> lower class index)."""
    if len(labels) == 0:
        raise ValueError("topk_accuracy: empty input")
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == np.asarray(labels)[:, None], axis=1)))


def fit_classifier(
    model: Module,
    forward: Callable[[Tensor, np.random.Generator], Tensor],
    x: np.ndarray,
    y: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    cfg: ClassifierFitConfig,
    augment: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
    params: list[Tensor] | None = None,
    name: str = "classifier",
) -> list[dict]:
    """Minibatch cross-entropy training with Adam; returns per-epoch history."""
    params = params if params is not None else [p for p in model.parameters() if p.requires_grad]
    opt = Adam(params, lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        perm = train_idx[rng.permutation(len(train_idx))]
        model.train()
        losses = []
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            xb = x[idx]
            if augment is not None:
                xb = np.stack([augment(item, rng) for item in xb]).astype(x.dtype)
            opt.zero_grad()
            loss = cross_entropy(forward(Tensor(xb), rng), y[idx])
            losses.append(_check_finite(loss, name))
            T.backward(loss)
            opt.step()
        model.eval()
        test_acc = float("nan")
        if len(test_idx):
            logits = predict_logits(lambda t: forward(t, None), x[test_idx])
            test_acc = topk_accuracy(logits, y[test_idx], 1)
        history.append({"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "test_top1": test_acc})
        log.info("%s epoch %d loss %.4f test top1 %.3f", name, epoch + 1, history[-1]["train_loss"], test_acc)
    return history


def _sketch_augmenter(spec: AugmentSpec):
    def fn(item: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return augment_sketch(item[0], spec, rng)[None]

    return fn


# ---------------------------------------------------------------------------
# Phase 0: encoder pretraining
# ---------------------------------------------------------------------------


class EncoderClassifier(Module):
    """Encoder plus a temporary linear head on the flattened bottleneck."""

    def __init__(self, encoder: Encoder, num_classes: int, seed: int = 0):
        super().__init__()
        self.encoder = encoder
        c, h, w = encoder.config.bottleneck_shape()
        self.head = Linear(c * h * w, num_classes, np.random.default_rng(seed + 7))

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        z, _ = self.encoder(x)
        return self.head(z.reshape(z.shape[0], -1))


def pretrain_encoder(encoder: Encoder, samples: list[SketchSample], split: DatasetSplit,
                     cfg: ClassifierFitConfig, jitter: float = 0.1) -> tuple[Encoder, list[dict]]:
    """Train encoder + linear head as an image classifier, then freeze the encoder."""
    by_id = {s.sample_id: i for i, s in enumerate(samples)}
    x = np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples])
    train_idx = np.array([by_id[i] for i in split.train])
    test_idx = np.array([by_id[i] for i in split.test])
    spec = AugmentSpec(jitter=jitter)
    model = EncoderClassifier(encoder, int(y.max()) + 1, cfg.seed)

    def augment(item, rng):
        flip = bool(rng.random() < 0.5)
        return augment_image(item.transpose(1, 2, 0), spec, rng, flip).transpose(2, 0, 1)

    history = fit_classifier(model, model, x, y, train_idx, test_idx, cfg, augment, name="encoder")
    encoder.freeze()
    return encoder, history


# ---------------------------------------------------------------------------
# Phase 1: loss-network pretraining
# ---------------------------------------------------------------------------


def pretrain_loss_classifier(model: SketchClassifier, samples: list[SketchSample], cfg: ClassifierFitConfig,
                             ratio: float = 0.8, spec: AugmentSpec | None = None
                             ) -> tuple[FeatureStack, SketchClassifier, float, list[dict]]:
    """Train the sketch classifier on augmented sketches; return the frozen trunk,
    the classifier (head still attached) and the held-out top-1 accuracy."""
    x, y = all_sketches(samples)
    if len(np.unique(y)) < 2:
        raise ValueError("loss classifier pretraining needs at least 2 classes")
    train_idx, test_idx = split_items(len(x), ratio, cfg.seed)
    spec = spec or AugmentSpec()
    history = fit_classifier(model, model, x, y, train_idx, test_idx, cfg, _sketch_augmenter(spec), name="loss-net")
    acc = history[-1]["test_top1"] if history else float("nan")
    trunk = model.decapitate()
    return trunk, model, acc, history


# ---------------------------------------------------------------------------
# Evaluation classifier
# ---------------------------------------------------------------------------


def train_eval_classifier(model: EvalClassifier, samples: list[SketchSample], cfg: ClassifierFitConfig,
                          ratio: float = 0.8, spec: AugmentSpec | None = None
                          ) -> tuple[EvalClassifier, float, float, list[dict]]:
    x, y = all_sketches(samples)
    if len(np.unique(y)) < 2:
        raise ValueError("evaluation classifier needs at least 2 classes")
    train_idx, test_idx = split_items(len(x), ratio, cfg.seed + 1000)
    spec = spec or AugmentSpec()
    history = fit_classifier(model, lambda t, rng: model(t), x, y, train_idx, test_idx, cfg,
                             _sketch_augmenter(spec), name="eval-clf")
    model.freeze()
    logits = predict_logits(model, x[test_idx])
    top1 = topk_accuracy(logits, y[test_idx], 1)
    top5 = topk_accuracy(logits, y[test_idx], min(5, logits.shape[1]))
    return model, top1, top5, history


# ---------------------------------------------------------------------------
# Phase 2: end-to-end decoder training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-4
    seed: int = 0
    loss: str = "psim"
    flip: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    jitter: float = 0.1
    patience: int = 20

    def validate(self) -> None:
        if self.loss not in ("psim", "mse"):
            raise ValueError(f"loss must be 'psim' or 'mse', got {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, lr > 0 and patience >= 1 are required")


@dataclass
class Batch:
    images: np.ndarray  # [B, 3, H, W]
    targets: np.ndarray  # [B, 1, H, W]
    labels: np.ndarray


def epoch_batches(samples_by_id: dict[int, SketchSample], train_ids: list[int], cfg: TrainConfig, epoch: int):
    """Deterministic batches for one epoch.

    Every pair draws the same random numbers (flip coin, jitter factors)
    whether or not flipping is enabled, so toggling ``flip`` changes nothing else.
    """
    rng = np.random.default_rng([cfg.seed, 1 + epoch])
    ids = np.asarray(train_ids)[rng.permutation(len(train_ids))]
    spec = AugmentSpec(jitter=cfg.jitter)
    for i in range(0, len(ids), cfg.batch_size):
        imgs, tgts, labels = [], [], []
        for sid in ids[i : i + cfg.batch_size]:
            s = samples_by_id[int(sid)]
            target = s.sketches[int(rng.integers(len(s.sketches)))]
            coin = bool(rng.random() < 0.5)
            flip = coin and cfg.flip
            imgs.append(augment_image(s.image, spec, rng, flip).transpose(2, 0, 1))
            tgts.append(target[:, ::-1] if flip else target)
            labels.append(s.label)
        yield Batch(np.stack(imgs).astype(np.float32), np.stack(tgts)[:, None].astype(np.float32), np.array(labels))


def generate_sketches(encoder: Encoder, decoder: Decoder, images: np.ndarray, labels=None,
                      batch_size: int = 64) -> np.ndarray:
    """Inference-mode generation for [N, 3, H, W] images -> [N, 1, H, W]."""
    was_training = decoder.training
    decoder.eval()
    outs = []
    try:
        with T.no_grad():
            for i in range(0, len(images), batch_size):
                z, taps = encoder(Tensor(images[i : i + batch_size]))
                ids = None if labels is None else np.asarray(labels)[i : i + batch_size]
                outs.append(decoder(z, taps, ids).data)
    finally:
        decoder.train(was_training)
    return np.concatenate(outs, axis=0)


@dataclass
class EndToEnd:
    """Everything phase 2 touches. Only ``decoder`` is optimized."""

    encoder: Encoder
    decoder: Decoder
    trunk: FeatureStack | None = None
    eval_classifier: EvalClassifier | None = None


def train_end_to_end(
    samples: list[SketchSample],
    split: DatasetSplit,
    models: EndToEnd,
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[int, "Adam", list[dict]], None] | None = None,
    max_steps: int | None = None,
) -> tuple[Decoder, list[dict]]:
    """Train decoder (+ embeddings) with frozen encoder and frozen loss trunk.

    ``on_epoch(epoch, optimizer, history)`` runs after each epoch (checkpointing
    hooks in here). ``max_steps`` caps total optimizer steps, for tests.
    """
    cfg.validate()
    if cfg.loss == "psim" and models.trunk is None:
        raise ValueError("psim loss requires a pretrained loss trunk")
    if models.trunk is not None and any(p.requires_grad for p in models.trunk.parameters()):
        raise ValueError("loss trunk must be frozen before end-to-end training")
    if any(p.requires_grad for p in models.encoder.parameters()):
        raise ValueError("encoder must be frozen before end-to-end training")
    encoder, decoder, trunk = models.encoder, models.decoder, models.trunk
    encoder.eval()
    by_id = {s.sample_id: s for s in samples}
    params = [p for p in decoder.parameters() if p.requires_grad]
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[dict] = []
    start = 0
    if resume is not None:
        decoder.load_state_dict(resume.component("decoder"))
        opt.load(resume.optimizer, resume.arrays)
        history = [dict(h) for h in resume.history]
        start = resume.epoch

    test_ids = list(split.test)
    test_images = np.stack([by_id[i].image.transpose(2, 0, 1) for i in test_ids]).astype(np.float32) if test_ids else None
    test_labels = np.array([by_id[i].label for i in test_ids])

    best, since_best, steps = -1.0, 0, 0
    for h in history:
        if h.get("eval_top1") is not None and h["eval_top1"] > best:
            best, since_best = h["eval_top1"], 0
        else:
            since_best += 1

    for epoch in range(start, cfg.epochs):
        decoder.train()
        losses = []
        for batch in epoch_batches(by_id, split.train, cfg, epoch):
            if max_steps is not None and steps >= max_steps:
                break
            z, taps = encoder(Tensor(batch.images))
            out = decoder(z, taps, batch.labels)
            target = Tensor(batch.targets)
            loss = psim(out, target, trunk) if cfg.loss == "psim" else mse_loss(out, target)
            losses.append(_check_finite(loss, "end-to-end"))
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            steps += 1
        rec = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)) if losses else float("nan"), "eval_top1": None}
        if models.eval_classifier is not None and test_images is not None:
            gen = generate_sketches(encoder, decoder, test_images, test_labels)
            logits = predict_logits(models.eval_classifier, gen)
            rec["eval_top1"] = topk_accuracy(logits, test_labels, 1)
        history.append(rec)
        log.info("e2e epoch %d loss %.5f eval top1 %s", rec["epoch"], rec["train_loss"], rec["eval_top1"])
        if on_epoch is not None:
            on_epoch(epoch + 1, opt, history)
        if rec["eval_top1"] is not None:
            if rec["eval_top1"] > best:
                best, since_best = rec["eval_top1"], 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    log.info("early stop at epoch %d", epoch + 1)
                    break
        if max_steps is not None and steps >= max_steps:
            break
    return decoder, history


def decoder_checkpoint(config: dict, decoder: Decoder, opt: Adam, epoch: int, history: list[dict], seed: int,
                       extra_modules: dict[str, Module] | None = None) -> Checkpoint:
    arrays = module_arrays("decoder", decoder)
    for name, mod in (extra_modules or {}).items():
        arrays.update(module_arrays(name, mod))
    arrays.update(opt.state_arrays())
    return Checkpoint(config=config, arrays=arrays, optimizer=opt.meta(), rng_state={"seed": seed, "next_epoch": epoch},
                      epoch=epoch, history=history)


def asdict_config(cfg) -> dict:
    return asdict(cfg)
