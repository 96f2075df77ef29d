"""Command-line entry point: ``sketchgen <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as C
from . import netpbm
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, module_arrays, save_checkpoint
from .data import export_dataset, generate_dataset, load_dataset, split_dataset, all_sketches, split_items
from .evaluation import AblationSetup, evaluate_topk, run_ablation
from .gradcheck import run_suite
from .models import build_decoder, build_encoder, build_eval_classifier, build_feature_extractor, count_params
from .tensor import NumericError
from .training import (EndToEnd, TrainingDiverged, decoder_checkpoint, generate_sketches, pretrain_encoder,
                       pretrain_loss_classifier, train_end_to_end, train_eval_classifier)

log = logging.getLogger("sketchgen")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _resolve(args, path: str | None) -> str | None:
    if path is None or args.workdir is None:
        return path
    return os.path.join(args.workdir, path)


def _config(args) -> C.RunConfig:
    spec = args.config
    if spec not in C.PRESETS:
        spec = _resolve(args, spec)
    try:
        return C.load(spec)
    except C.ConfigError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc


def _require(path: str | None, what: str) -> str:
    if path is None or not os.path.exists(path):
        raise CliError(EXIT_MISSING, f"missing prerequisite: {what} ({path or 'not given'})")
    return path


def _load_cp(path: str | None, what: str, kind: str) -> Checkpoint:
    try:
        cp = load_checkpoint(_require(path, what))
    except CheckpointError as exc:
        raise CliError(EXIT_USAGE, f"{what}: {exc}") from exc
    if cp.config.get("kind") != kind:
        raise CliError(EXIT_USAGE, f"{what}: expected a {kind} checkpoint, got {cp.config.get('kind')!r}")
    return cp


def _dataset(args):
    path = _require(_resolve(args, args.data), "dataset directory")
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise CliError(EXIT_MISSING, f"missing prerequisite: dataset manifest in {path}")
    return load_dataset(path)


def _run_of(cp: Checkpoint) -> C.RunConfig:
    return C.from_dict(cp.config["run"])


def _encoder_from(cp: Checkpoint):
    enc = build_encoder(_run_of(cp).encoder_config())
    enc.load_state_dict(cp.component("encoder"))
    return enc.freeze()


def _trunk_from(cp: Checkpoint, num_classes: int):
    clf = build_feature_extractor(_run_of(cp).feature_stack_config(), num_classes)
    clf.trunk.load_state_dict(cp.component("trunk"))
    return clf.trunk.freeze()


def _eval_clf_from(cp: Checkpoint):
    run = _run_of(cp)
    clf = build_eval_classifier(run.eval_classifier_config(), cp.config["num_classes"])
    clf.load_state_dict(cp.component("eval_classifier"))
    return clf.freeze()


def _decoder_from(cp: Checkpoint):
    run = _run_of(cp)
    dec = build_decoder(run.decoder_config(), run.encoder_config(), cp.config["num_classes"])
    dec.load_state_dict(cp.component("decoder"))
    return dec.eval()


def _meta(kind: str, run: C.RunConfig, num_classes: int, **extra) -> dict:
    return {"kind": kind, "run": run.to_dict(), "config_hash": run.hash(), "num_classes": num_classes, **extra}


def _history_csv(history: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for h in history:
        w.writerow(["" if h.get(f) is None else repr(h[f]) for f in fields])
    return buf.getvalue()


def _metrics_path(out: str) -> str:
    return str(Path(out).with_suffix("")) + ".metrics.csv"


def _write(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _num_classes(samples) -> int:
    return 1 + max(s.label for s in samples)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    run = _config(args)
    if args.seed is not None:
        run = C.override(run, "data", seed=args.seed)
    d = run.data
    try:
        samples = generate_dataset(d.seed, d.num_classes, d.images_per_class, d.sketches_per_image, d.size)
        split = split_dataset(samples, d.split_ratio, d.seed)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    path = export_dataset(samples, split, _resolve(args, args.out), {"data_config": vars(d)})
    print(f"wrote {len(samples)} images ({len(split.train)} train / {len(split.test)} test) -> {path}")
    return EXIT_OK


def cmd_pretrain_encoder(args) -> int:
    run = _config(args)
    if args.seed is not None:
        run = C.override(run, "encoder", seed=args.seed)
    samples, split, _ = _dataset(args)
    enc = build_encoder(run.encoder_config(), run.encoder.seed)
    enc, history = pretrain_encoder(enc, samples, split, run.encoder_fit())
    out = _resolve(args, args.out)
    cp = Checkpoint(_meta("encoder", run, _num_classes(samples)), module_arrays("encoder", enc), epoch=len(history),
                    history=history)
    save_checkpoint(out, cp)
    _write(_metrics_path(out), _history_csv(history, ["epoch", "train_loss", "test_top1"]))
    print(f"encoder held-out top1 {history[-1]['test_top1']:.4f} -> {out}")
    return EXIT_OK


def cmd_pretrain_loss(args) -> int:
    run = _config(args)
    if args.seed is not None:
        run = C.override(run, "loss", seed=args.seed)
    samples, _, _ = _dataset(args)
    n = _num_classes(samples)
    clf = build_feature_extractor(run.feature_stack_config(), n, run.loss.seed)
    trunk, clf, acc, history = pretrain_loss_classifier(clf, samples, run.loss_fit(), run.loss.split_ratio)
    out = _resolve(args, args.out)
    arrays = module_arrays("trunk", trunk)
    arrays.update({k: v for k, v in module_arrays("head", clf).items() if not k.split(":", 1)[1].startswith("trunk.")})
    save_checkpoint(out, Checkpoint(_meta("trunk", run, n, test_top1=acc), arrays, epoch=len(history),
                                    history=history))
    _write(_metrics_path(out), _history_csv(history, ["epoch", "train_loss", "test_top1"]))
    print(f"loss network held-out top1 {acc:.4f} -> {out}")
    return EXIT_OK


def cmd_train_eval_classifier(args) -> int:
    run = _config(args)
    if args.seed is not None:
        run = C.override(run, "eval", seed=args.seed)
    samples, _, _ = _dataset(args)
    n = _num_classes(samples)
    clf = build_eval_classifier(run.eval_classifier_config(), n, run.eval.seed)
    clf, top1, top5, history = train_eval_classifier(clf, samples, run.eval_fit(), run.eval.split_ratio)
    out = _resolve(args, args.out)
    save_checkpoint(out, Checkpoint(_meta("eval_classifier", run, n, top1=top1, top5=top5),
                                    module_arrays("eval_classifier", clf), epoch=len(history), history=history))
    _write(_metrics_path(out), _history_csv(history, ["epoch", "train_loss", "test_top1"]))
    print(f"eval classifier held-out top1 {top1:.4f} top5 {top5:.4f} -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _config(args)
    if args.seed is not None:
        run = C.override(run, "train", seed=args.seed)
    enc_cp = _load_cp(_resolve(args, args.encoder), "encoder checkpoint", "encoder")
    trunk_cp = None
    if run.loss.kind == "psim":
        trunk_cp = _load_cp(_resolve(args, args.trunk), "loss trunk checkpoint", "trunk")
    clf_cp = None
    if args.eval_classifier:
        clf_cp = _load_cp(_resolve(args, args.eval_classifier), "eval classifier checkpoint", "eval_classifier")
    samples, split, manifest = _dataset(args)
    n = _num_classes(samples)
    encoder = _encoder_from(enc_cp)
    if encoder.config.input_size != run.data.size:
        raise CliError(EXIT_USAGE, "encoder checkpoint input size differs from the run config")
    trunk = _trunk_from(trunk_cp, n) if trunk_cp else None
    clf = _eval_clf_from(clf_cp) if clf_cp else None
    decoder = build_decoder(run.decoder_config(), run.encoder_config(), n, run.train.seed)
    out = _resolve(args, args.out)
    resume = None
    if args.resume:
        resume = _load_cp(_resolve(args, args.resume), "resume checkpoint", "decoder")
        if resume.config["run"] != run.to_dict():
            raise CliError(EXIT_USAGE, "resume checkpoint was written with a different config")
    meta = _meta("decoder", run, n, class_names=manifest["classes"])

    def on_epoch(epoch, opt, history):
        save_checkpoint(out, decoder_checkpoint(meta, decoder, opt, epoch, history, run.train.seed,
                                                {"encoder": encoder}))

    decoder, history = train_end_to_end(samples, split, EndToEnd(encoder, decoder, trunk, clf), run.train_config(),
                                        resume=resume, on_epoch=on_epoch)
    metrics = _resolve(args, args.metrics) if args.metrics else _metrics_path(out)
    _write(metrics, _history_csv(history, ["epoch", "train_loss", "eval_top1"]))
    last = history[-1] if history else {}
    print(f"trained {len(history)} epochs, final loss {last.get('train_loss')}, eval top1 {last.get('eval_top1')}"
          f" -> {out}")
    return EXIT_OK


def cmd_sketch(args) -> int:
    cp = _load_cp(_resolve(args, args.checkpoint), "decoder checkpoint", "decoder")
    run = _run_of(cp)
    decoder = _decoder_from(cp)
    encoder = _encoder_from(cp)
    img_path = _require(_resolve(args, args.image), "input image")
    try:
        img = netpbm.read(img_path)
    except netpbm.NetpbmError as exc:
        raise CliError(EXIT_USAGE, f"{img_path}: {exc}") from exc
    size = run.data.size
    if img.ndim != 3 or img.shape != (size, size, 3):
        raise CliError(EXIT_USAGE, f"image must be a {size}x{size} RGB PPM, got shape {img.shape}")
    labels = None
    if run.decoder.conditioning == "adain":
        if args.class_id is None:
            raise CliError(EXIT_USAGE, "--class is required for a class-conditioned checkpoint")
        names = cp.config.get("class_names") or []
        cls = args.class_id
        cid = names.index(cls) if cls in names else (int(cls) if cls.isdigit() else -1)
        if not 0 <= cid < cp.config["num_classes"]:
            raise CliError(EXIT_USAGE, f"--class {cls!r} is not a valid class id")
        labels = np.array([cid])
    x = (img.astype(np.float32) / 255.0).transpose(2, 0, 1)[None]
    out = generate_sketches(encoder, decoder, x, labels)[0, 0]
    path = _resolve(args, args.out)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    netpbm.write_pgm(path, 1.0 - out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    clf_cp = _load_cp(_resolve(args, args.eval_classifier), "eval classifier checkpoint", "eval_classifier")
    clf = _eval_clf_from(clf_cp)
    samples, split, _ = _dataset(args)
    k = args.topk
    if args.ground_truth:
        run = _run_of(clf_cp)
        x, y = all_sketches(samples)
        _, test_idx = split_items(len(x), run.eval.split_ratio, run.eval.seed + 1000)
        gen, labels = x[test_idx], y[test_idx]
        what = "ground-truth sketches (classifier held-out split)"
    else:
        cp = _load_cp(_resolve(args, args.checkpoint), "decoder checkpoint", "decoder")
        encoder, decoder = _encoder_from(cp), _decoder_from(cp)
        by_id = {s.sample_id: s for s in samples}
        test = [by_id[i] for i in split.test]
        images = np.stack([s.image.transpose(2, 0, 1) for s in test]).astype(np.float32)
        labels = np.array([s.label for s in test])
        cond = _run_of(cp).decoder.conditioning == "adain"
        gen = generate_sketches(encoder, decoder, images, labels if cond else None)
        what = f"generated sketches for {len(test)} held-out images"
    kk = min(k, clf.fc.weight.shape[0])
    top1 = evaluate_topk(gen, labels, clf, 1)
    topk = evaluate_topk(gen, labels, clf, kk)
    print(f"{what}: top1 {top1:.4f} top{kk} {topk:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = _config(args)
    enc_cp = _load_cp(_resolve(args, args.encoder), "encoder checkpoint", "encoder")
    trunk_cp = _load_cp(_resolve(args, args.trunk), "loss trunk checkpoint", "trunk")
    clf_cp = _load_cp(_resolve(args, args.eval_classifier), "eval classifier checkpoint", "eval_classifier")
    samples, split, _ = _dataset(args)
    n = _num_classes(samples)
    setup = AblationSetup(samples, split, _encoder_from(enc_cp), _trunk_from(trunk_cp, n), _eval_clf_from(clf_cp),
                          n, run.eval.topk)
    seeds = args.seeds if args.seeds else list(run.eval.ablation_seeds)
    matrix = run_ablation(setup, run.train_config(), seeds, args.methods, args.jobs)
    text = matrix.to_csv()
    _write(_resolve(args, args.out), text)
    sys.stdout.write(text)
    failed = [f"{c.method}/{c.seed}" for c in matrix.cells if c.failed]
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
    return EXIT_OK


def cmd_param_count(args) -> int:
    run = _config(args)
    num_classes = args.num_classes or run.data.num_classes
    decoder = build_decoder(run.decoder_config(), run.encoder_config(), num_classes)
    report = count_params(decoder)
    print(report)
    ref = C.REFERENCE_PARAMS.get(args.config)
    if ref is not None:
        lo, hi = ref * (1 - C.REFERENCE_BAND), ref * (1 + C.REFERENCE_BAND)
        ok = lo <= report.total <= hi
        print(f"reference {ref / 1e6:.1f}M, band [{lo / 1e6:.2f}M, {hi / 1e6:.2f}M]: {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_VERIFY
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = run_suite(args.seeds)
    for name, err in result.max_error.items():
        print(f"{name:<20} max rel err {err:.3e}")
    verdict = "PASS" if result.passed else "FAIL"
    print(f"{verdict} (max rel err = {result.worst:.3e}, {result.seconds:.1f}s)")
    return EXIT_OK if result.passed else EXIT_VERIFY


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sketchgen", description="Image-to-sketch synthesis with a conditional encoder-decoder.")
    p.add_argument("--workdir", help="resolve relative paths against this directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = cmd("gen-data", cmd_gen_data, "render a synthetic dataset")
    sp.add_argument("--config", required=True, help="preset name or JSON file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, help="override data.seed")

    for name, fn, help_ in [("pretrain-encoder", cmd_pretrain_encoder, "pretrain and freeze the image encoder"),
                            ("pretrain-loss", cmd_pretrain_loss, "pretrain the loss network sketch classifier"),
                            ("train-eval-classifier", cmd_train_eval_classifier, "train the evaluation classifier")]:
        sp = cmd(name, fn, help_)
        sp.add_argument("--config", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int)

    sp = cmd("train", cmd_train, "train decoder and embeddings end-to-end")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--encoder", required=True, help="encoder checkpoint")
    sp.add_argument("--trunk", help="loss trunk checkpoint (needed for psim)")
    sp.add_argument("--eval-classifier", help="score held-out generations each epoch")
    sp.add_argument("--out", required=True)
    sp.add_argument("--metrics", help="per-epoch CSV (default: <out>.metrics.csv)")
    sp.add_argument("--resume", help="continue from a checkpoint written by this command")
    sp.add_argument("--seed", type=int, help="override train.seed")

    sp = cmd("sketch", cmd_sketch, "generate a sketch for one image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True, help="RGB PPM")
    sp.add_argument("--class", dest="class_id", help="class id or name (class-conditioned checkpoints)")
    sp.add_argument("--out", required=True, help="output PGM")

    sp = cmd("eval", cmd_eval, "score generations (or ground truth) with the evaluation classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--eval-classifier", required=True)
    sp.add_argument("--checkpoint", help="decoder checkpoint")
    sp.add_argument("--ground-truth", action="store_true", help="score the dataset sketches instead")
    sp.add_argument("--topk", type=int, default=5)

    sp = cmd("ablate", cmd_ablate, "run the ablation matrix and write a CSV")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--trunk", required=True)
    sp.add_argument("--eval-classifier", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--methods", nargs="+")
    sp.add_argument("--jobs", type=int, default=1)

    sp = cmd("param-count", cmd_param_count, "print decoder parameter accounting")
    sp.add_argument("--config", required=True)
    sp.add_argument("--num-classes", type=int)

    sp = cmd("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable layer")
    sp.add_argument("--seeds", type=int, default=20)
    return p


def _limit_threads():
    n = os.environ.get("SKETCHGEN_THREADS")
    if not n:
        return None
    return threadpool_limits(limits=int(n))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _limit_threads()
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except C.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
