"""Classifier-based scoring of generated sketches and the ablation harness."""

from __future__ import annotations

import csv
import io
import logging
import multiprocessing as mp
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import canonical
from .data import DatasetSplit, SketchSample
from .models import DecoderConfig, Encoder, EvalClassifier, FeatureStack, build_decoder, count_params
from .training import (EndToEnd, TrainConfig, TrainingDiverged, generate_sketches, predict_logits, topk_accuracy,
                       train_end_to_end)

log = logging.getLogger(__name__)

# method -> (loss, flip, conditioning, skip variant); each row adds one component to the previous
METHODS: dict[str, tuple[str, bool, str, str]] = {
    "mse": ("mse", False, "batchnorm", "none"),
    "psim": ("psim", False, "batchnorm", "none"),
    "psim+flip": ("psim", True, "batchnorm", "none"),
    "psim+flip+adain": ("psim", True, "adain", "none"),
    "psim+flip+adain+skip1": ("psim", True, "adain", "skip1"),
    "psim+flip+adain+skip": ("psim", True, "adain", "skip"),
}

CSV_FIELDS = ["method", "top1", "top5", "params_total", "params_embeddings", "params_skip", "seed"]


def evaluate_topk(generated: np.ndarray, labels, classifier: EvalClassifier, k: int = 1) -> float:
    """Top-k accuracy of ``classifier`` on [N, 1, H, W] sketches."""
    labels = np.asarray(labels)
    if len(generated) == 0:
        raise ValueError("evaluate_topk: empty input set")
    if len(generated) != len(labels):
        raise ValueError(f"evaluate_topk: {len(generated)} sketches but {len(labels)} labels")
    logits = predict_logits(classifier, np.asarray(generated, dtype=np.float32))
    return topk_accuracy(logits, labels, k)


@dataclass
class EvalReport:
    method: str
    top1: float
    top5: float
    count: int
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(cfg: dict) -> str:
    return f"{zlib.crc32(canonical(cfg)) & 0xFFFFFFFF:08x}"


def cell_config(method: str, seed: int, budget: TrainConfig) -> dict:
    loss, flip, cond, skip = METHODS[method]
    train = replace(budget, loss=loss, flip=flip, seed=seed)
    return {"decoder": asdict(DecoderConfig(cond, skip)), "train": asdict(train)}


@dataclass
class AblationSetup:
    """Shared, frozen pieces every ablation cell reuses."""

    samples: list[SketchSample]
    split: DatasetSplit
    encoder: Encoder
    trunk: FeatureStack
    eval_classifier: EvalClassifier
    num_classes: int
    topk: int = 5


@dataclass
class CellResult:
    method: str
    seed: int
    report: EvalReport | None
    params: dict = field(default_factory=dict)
    error: str | None = None
    history: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.report is None


@dataclass
class AblationMatrix:
    methods: list[str]
    seeds: list[int]
    cells: list[CellResult]

    def cell(self, method: str, seed: int) -> CellResult:
        for c in self.cells:
            if c.method == method and c.seed == seed:
                return c
        raise KeyError((method, seed))

    def median(self, method: str, metric: str = "top1") -> float:
        vals = [getattr(c.report, metric) for c in self.cells if c.method == method and not c.failed]
        return float(np.median(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for m in self.methods:
            rows = [c for c in self.cells if c.method == m]
            for c in rows:
                p = c.params
                if c.failed:
                    w.writerow([m, "failed", "failed", p.get("total", ""), p.get("embeddings", ""),
                                _skip_params(p), c.seed])
                else:
                    w.writerow([m, f"{c.report.top1:.6f}", f"{c.report.top5:.6f}", p["total"], p["embeddings"],
                                _skip_params(p), c.seed])
            p = rows[0].params if rows else {}
            w.writerow([m, f"{self.median(m, 'top1'):.6f}", f"{self.median(m, 'top5'):.6f}", p.get("total", ""),
                        p.get("embeddings", ""), _skip_params(p) if p else "", "median"])
        return buf.getvalue()


def _skip_params(p: dict) -> int:
    return p.get("skip_adapters", 0) + p.get("skip_widening", 0)


def run_cell(setup: AblationSetup, method: str, seed: int, budget: TrainConfig) -> CellResult:
    loss, flip, cond, skip = METHODS[method]
    cfg = replace(budget, loss=loss, flip=flip, seed=seed)
    decoder = build_decoder(DecoderConfig(cond, skip), setup.encoder.config, setup.num_classes, seed)
    params = count_params(decoder).to_dict()
    models = EndToEnd(setup.encoder, decoder, setup.trunk, setup.eval_classifier)
    try:
        decoder, history = train_end_to_end(setup.samples, setup.split, models, cfg)
    except TrainingDiverged as exc:
        log.warning("cell %s seed %d failed: %s", method, seed, exc)
        return CellResult(method, seed, None, params, str(exc))
    by_id = {s.sample_id: s for s in setup.samples}
    test = [by_id[i] for i in setup.split.test]
    images = np.stack([s.image.transpose(2, 0, 1) for s in test]).astype(np.float32)
    labels = np.array([s.label for s in test])
    gen = generate_sketches(setup.encoder, decoder, images, labels)
    logits = predict_logits(setup.eval_classifier, gen)
    k = min(setup.topk, logits.shape[1])
    report = EvalReport(method, topk_accuracy(logits, labels, 1), topk_accuracy(logits, labels, k), len(labels),
                        config_hash(cell_config(method, seed, budget)))
    log.info("cell %s seed %d top1 %.3f top%d %.3f", method, seed, report.top1, k, report.top5)
    return CellResult(method, seed, report, params, None, history)


_WORKER_SETUP: AblationSetup | None = None


def _init_worker(setup: AblationSetup) -> None:
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _run_cell_worker(args) -> CellResult:
    method, seed, budget = args
    return run_cell(_WORKER_SETUP, method, seed, budget)


def run_ablation(setup: AblationSetup, budget: TrainConfig, seeds: list[int], methods: list[str] | None = None,
                 jobs: int = 1) -> AblationMatrix:
    """Train and score every (method, seed) cell on one shared split and budget.

    A diverging cell is recorded as failed and the remaining cells still run.
    """
    methods = list(methods or METHODS)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown ablation methods: {unknown}")
    tasks = [(m, s, budget) for m in methods for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(jobs, len(tasks)), initializer=_init_worker, initargs=(setup,)) as pool:
            cells = pool.map(_run_cell_worker, tasks)
    else:
        cells = [run_cell(setup, m, s, budget) for m, s, budget in tasks]
    return AblationMatrix(methods, list(seeds), cells)
