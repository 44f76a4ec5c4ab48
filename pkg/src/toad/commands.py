"""Implementations behind the CLI subcommands.

Every command is reproducible from (config, seed) alone, writes only under
its configured output directory, and archives the exact configuration it
ran with next to its outputs.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as dt
from .checkpoint import load_checkpoint, read_records, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, DataError
from .metrics import (
    MetricReport,
    ScoreTable,
    action_frame_accuracy,
    dump_scores,
    format_report,
    map_report,
    write_summary,
)
from .model import ClassifierMatrix, ModelParams, build_classifier
from .streaming import StreamState, run_stream
from .train import build_params, train

log = logging.getLogger("toad.commands")


def worker_count() -> int:
    """Evaluation fan-out cap from TOAD_THREADS (default: sequential)."""
    raw = os.environ.get("TOAD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TOAD_THREADS must be an integer, got {raw!r}") from None


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.used")
    return out


def _classifier_for(cfg: RunConfig, source_dir) -> ClassifierMatrix:
    name, prompt, future = dt.load_classifier_sources(source_dir, need_future=cfg.future)
    return build_classifier(name, prompt, cfg.classifier_mode,
                            future_embeds=future if cfg.future else None)


def _select_window(params: ModelParams, window: int) -> None:
    if window not in params.cfg.window_lengths:
        raise ConfigError(
            f"window {window} not covered by checkpoint lengths "
            f"{params.cfg.window_lengths}")
    params.cfg.window = window


def _check_dims(params: ModelParams, dataset: dt.Dataset) -> None:
    if dataset.dim != params.cfg.feature_dim:
        raise DataError(f"dataset feature dim {dataset.dim} != model dim "
                        f"{params.cfg.feature_dim}")
    if dataset.classes != params.cfg.classes:
        raise DataError(f"dataset has {dataset.classes} classes, model has "
                        f"{params.cfg.classes}")


# --------------------------------------------------------------------------
# Evaluation plumbing
# --------------------------------------------------------------------------

@dataclass
class EvalResult:
    table: ScoreTable
    report: MetricReport
    calibrated_report: MetricReport
    accuracy: float
    future_accuracy: float | None
    frames: int


def score_dataset(params: ModelParams, dataset: dt.Dataset, rate: int,
                  eval_stride: int = 1, threads: int | None = None):
    """Stream every video; returns pooled (scores, labels, future scores,
    future labels aligned at the configured horizon handled by caller)."""
    threads = threads or worker_count()

    def one(seq):
        return run_stream(params, seq, rate=rate, eval_stride=eval_stride)

    if threads > 1 and len(dataset.sequences) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, dataset.sequences))
    else:
        results = [one(seq) for seq in dataset.sequences]
    scores = np.concatenate([r.scores for r in results])
    labels = np.concatenate([t.labels for t in dataset.tracks])
    future_scores = None
    if params.cfg.future_enabled:
        future_scores = np.concatenate([r.future_scores for r in results])
    return scores, labels, future_scores, results


def evaluate(params: ModelParams, dataset: dt.Dataset, cfg: RunConfig) -> EvalResult:
    _check_dims(params, dataset)
    scores, labels, future_scores, _ = score_dataset(
        params, dataset, cfg.rate, cfg.eval_stride)
    table = ScoreTable(scores, labels)
    report = map_report(table, calibrated=False, names=dataset.vocab.names)
    calibrated = map_report(table, calibrated=True, names=dataset.vocab.names)
    accuracy = action_frame_accuracy(table)
    future_accuracy = None
    if future_scores is not None:
        future_labels = np.concatenate([
            np.concatenate([track.labels[cfg.horizon:],
                            np.full(min(cfg.horizon, track.frames),
                                    dt.FUTURE_UNDEFINED, dtype=np.int64)])
            for track in dataset.tracks])
        defined = future_labels != dt.FUTURE_UNDEFINED
        if defined.any():
            pred = np.argmax(future_scores[defined], axis=1)
            future_accuracy = float((pred == future_labels[defined]).mean())
    return EvalResult(table, report, calibrated, accuracy, future_accuracy,
                      table.frames)


def _write_eval_outputs(out: Path, prefix: str, result: EvalResult,
                        fps: float = 0.0) -> None:
    text = (format_report(result.report) + "\n\n"
            + format_report(result.calibrated_report)
            + f"\n\naction-frame accuracy: {result.accuracy:.6f}\n")
    if result.future_accuracy is not None:
        text += f"future-label accuracy: {result.future_accuracy:.6f}\n"
    (out / f"{prefix}_report.txt").write_text(text, encoding="utf-8")
    extra = {
        "accuracy": result.accuracy,
        "frames": result.frames,
        "mcap": result.calibrated_report.mean,
    }
    if result.future_accuracy is not None:
        extra["future_accuracy"] = result.future_accuracy
    write_summary(out / f"{prefix}_summary.txt", result.report, extra=extra)
    with open(out / f"{prefix}_per_class.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "ap", "calibrated_ap", "positives", "w"])
        for e, ce in zip(result.report.entries, result.calibrated_report.entries):
            writer.writerow([e.name, repr(e.ap), repr(ce.ap), e.positives,
                             repr(e.ratio)])
    dump_scores(result.table, out / f"{prefix}_scores.feat", fps=fps)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, classes: int, dim: int, videos: int, frames: int,
              sep: float, noise: float = 1.0, background: float = 0.25,
              action_len: int = 90, cyclic: bool = False,
              anchor_seed: int | None = None, fps: float = 30.0) -> dict:
    out = Path(cfg.out_dir)
    dataset = dt.synth_dataset(classes, dim, videos, frames, sep, cfg.seed,
                               noise=noise, fps=fps,
                               background_fraction=background,
                               action_len=action_len, cyclic=cyclic,
                               anchor_seed=anchor_seed)
    dt.write_dataset(dataset, out)
    cfg.save(out / "config.used")
    log.info("wrote %d videos to %s", videos, out)
    return {"out": out, "videos": videos}


def cmd_train(cfg: RunConfig, resume: str | None = None) -> dict:
    out = _prepare_out(cfg)
    dataset = dt.load_dataset(cfg.data_dir)
    classifier = _classifier_for(cfg, cfg.data_dir)
    start_epoch = 0
    optim = None
    if resume:
        params, loaded = load_checkpoint(resume, cfg.classifier_mode,
                                         cfg.future_weight)
        if loaded is None:
            raise ConfigError(f"{resume} carries no optimizer state; cannot resume")
        _select_window(params, cfg.window)
        meta = read_records(resume)
        if "meta/epoch" not in meta:
            raise ConfigError(f"{resume} has no epoch marker; cannot resume")
        start_epoch = int(meta["meta/epoch"].reshape(-1)[0]) + 1
        optim = cfg.optim_state()  # schedule comes from the config
        optim.step = loaded.step
        optim.moments = loaded.moments
    else:
        params = build_params(cfg, dataset, classifier)
    _check_dims(params, dataset)

    log_lines: list[str] = []
    saved: list[Path] = []

    def on_epoch(epoch, params_, optim_, stats):
        path = out / f"ckpt_epoch_{epoch:03d}.toad"
        save_checkpoint(path, params_, optim_,
                        extra={"meta/epoch": np.asarray(float(epoch), np.float32)})
        saved.append(path)
        while len(saved) > cfg.keep_last:
            old = saved.pop(0)
            old.unlink(missing_ok=True)
        log_lines.append(
            f"epoch={epoch} loss={stats.mean_loss!r} lr={stats.lr!r} "
            f"frozen={stats.frozen_checksum}")
        (out / "train_log.txt").write_text("\n".join(log_lines) + "\n",
                                           encoding="utf-8")

    result = train(params, cfg, dataset, on_epoch=on_epoch,
                   start_epoch=start_epoch, optim=optim)
    final = out / "final.toad"
    save_checkpoint(final, params, result.optim,
                    extra={"meta/epoch": np.asarray(float(cfg.epochs - 1),
                                                    np.float32)})
    eval_result = evaluate(params, dataset, cfg)
    summary = {
        "final_loss": result.history[-1].mean_loss if result.history else None,
        "train_accuracy": eval_result.accuracy,
        "train_map": eval_result.report.mean,
        "iterations_per_epoch": result.iterations_per_epoch,
        "frozen_checksum": params.frozen_checksum(),
        "checkpoint": str(final),
    }
    lines = [f"{k}={v!r}" for k, v in summary.items()]
    (out / "train_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"result": result, "eval": eval_result, "checkpoint": final,
            "summary": summary, "out": out}


def _eval_dataset_dir(cfg: RunConfig) -> str:
    return cfg.eval_dir or cfg.data_dir


def cmd_eval(cfg: RunConfig, checkpoint: str) -> dict:
    out = _prepare_out(cfg)
    params, _ = load_checkpoint(checkpoint, cfg.classifier_mode, cfg.future_weight)
    _select_window(params, cfg.window)
    dataset = dt.load_dataset(_eval_dataset_dir(cfg))
    result = evaluate(params, dataset, cfg)
    _write_eval_outputs(out, "eval", result, fps=dataset.sequences[0].fps)
    print(format_report(result.report))
    print(format_report(result.calibrated_report))
    return {"eval": result, "out": out}


def cmd_zeroshot(cfg: RunConfig, checkpoint: str | None = None) -> dict:
    out = _prepare_out(cfg)
    source = _eval_dataset_dir(cfg)
    dataset = dt.load_dataset(source)
    classifier = _classifier_for(cfg, source)
    params = build_params(cfg, dataset, classifier)
    if checkpoint:
        records = read_records(checkpoint)
        for name, tensor in params.trainable():
            if name in records:
                if records[name].shape != tensor.data.shape:
                    raise ConfigError(
                        f"checkpoint record {name!r} has shape "
                        f"{records[name].shape}, expected {tensor.data.shape}")
                tensor.data = np.ascontiguousarray(
                    records[name].astype(tensor.data.dtype))
            else:
                log.warning("checkpoint lacks %s; keeping seeded init", name)
    result = evaluate(params, dataset, cfg)
    prefix = f"zeroshot_{cfg.classifier_mode}"
    _write_eval_outputs(out, prefix, result, fps=dataset.sequences[0].fps)
    print(format_report(result.report))
    return {"eval": result, "out": out, "prefix": prefix}


def cmd_fewshot(cfg: RunConfig, shots: tuple[int, ...] | None = None) -> dict:
    out = _prepare_out(cfg)
    shots = tuple(shots or cfg.shots)
    train_ds = dt.load_dataset(cfg.data_dir)
    eval_ds = dt.load_dataset(_eval_dataset_dir(cfg))
    classifier = _classifier_for(cfg, cfg.data_dir)
    full_count = len(dt.full_shot_samples(train_ds, cfg.rate))
    batch = cfg.batch_size
    rows = []
    for k in shots:
        subset = dt.fewshot_subset(train_ds, k, cfg.seed, cfg.rate)
        assert subset.full_shot_count == full_count
        params = build_params(cfg, train_ds, classifier)
        result = train(params, cfg, train_ds, samples=subset.samples)
        iters_full = -(-full_count // batch)
        if result.iterations_per_epoch != iters_full:
            raise ConfigError(
                f"iteration mismatch: {result.iterations_per_epoch} vs {iters_full}")
        ev = evaluate(params, eval_ds, cfg)
        rows.append({
            "shots": k,
            "distinct_samples": len(subset.distinct),
            "iterations_per_epoch": result.iterations_per_epoch,
            "map": ev.report.mean,
            "mcap": ev.calibrated_report.mean,
            "accuracy": ev.accuracy,
        })
        log.info("shots=%d map=%.4f", k, ev.report.mean)
    with open(out / "fewshot.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    text = ["shots  distinct  iters/epoch  mAP       mcAP      accuracy"]
    for r in rows:
        text.append(f"{r['shots']:<6d} {r['distinct_samples']:<9d} "
                    f"{r['iterations_per_epoch']:<12d} {r['map']:<9.4f} "
                    f"{r['mcap']:<9.4f} {r['accuracy']:.4f}")
    (out / "fewshot_report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    return {"rows": rows, "out": out}


ABLATION_AXES = ("frames", "classifier")


def cmd_ablate(cfg: RunConfig, axis: str) -> dict:
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    out = _prepare_out(cfg)
    train_ds = dt.load_dataset(cfg.data_dir)
    eval_ds = dt.load_dataset(_eval_dataset_dir(cfg))
    rows = []
    if axis == "frames":
        variants = [{"window": w} for w in cfg.window_lengths]
    else:
        variants = [{"classifier_mode": m, "future": fut}
                    for fut in (False, True)
                    for m in ("prompt", "class_name", "mixed")]
    for variant in variants:
        vcfg = replace(cfg, **variant)
        vcfg.validate()
        classifier = _classifier_for(vcfg, vcfg.data_dir)
        params = build_params(vcfg, train_ds, classifier)
        result = train(params, vcfg, train_ds)
        ev = evaluate(params, eval_ds, vcfg)
        row = dict(variant)
        row.update({"map": ev.report.mean, "mcap": ev.calibrated_report.mean,
                    "accuracy": ev.accuracy,
                    "final_loss": result.history[-1].mean_loss})
        rows.append(row)
        log.info("ablate %s: %s", axis, row)
    fieldnames = list(rows[0].keys())
    with open(out / f"ablate_{axis}.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    header = "  ".join(f"{k:<14s}" for k in fieldnames)
    lines = [header]
    for row in rows:
        lines.append("  ".join(f"{str(row[k]):<14s}" for k in fieldnames))
    (out / f"ablate_{axis}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"rows": rows, "out": out}


def cmd_stream(cfg: RunConfig, checkpoint: str, vocab_path: str,
               source: str = "-", stdout=None) -> dict:
    import struct
    import sys

    out_stream = stdout or sys.stdout
    params, _ = load_checkpoint(checkpoint, cfg.classifier_mode, cfg.future_weight)
    _select_window(params, cfg.window)
    vocab = dt.load_vocab(vocab_path)
    if vocab.classes != params.cfg.classes:
        raise DataError(f"vocabulary has {vocab.classes} names, model has "
                        f"{params.cfg.classes} classes")
    frames = 0

    def emit(t, scores):
        top = int(np.argmax(scores))
        out_stream.write(f"{t} {vocab.names[top]} {scores[top]:.6f}\n")

    state = StreamState(params, cfg.rate)
    if source == "-":
        stdin = sys.stdin.buffer
        last = None
        while True:
            head = stdin.read(4)
            if not head:
                break
            if len(head) < 4:
                raise DataError("truncated frame header on stdin")
            (dim,) = struct.unpack("<I", head)
            if dim != params.cfg.feature_dim:
                raise DataError(f"stdin frame dim {dim} != model dim "
                                f"{params.cfg.feature_dim}")
            payload = stdin.read(4 * dim)
            if len(payload) < 4 * dim:
                raise DataError("truncated frame payload on stdin")
            feature = np.frombuffer(payload, dtype="<f4")
            t = state.observe(feature)
            if t % cfg.eval_stride == 0:
                last, _ = state.score_current()
            emit(t, last)
            frames += 1
    else:
        seq = dt.load_features(source)
        if seq.dim != params.cfg.feature_dim:
            raise DataError(f"{source}: feature dim {seq.dim} != model dim "
                            f"{params.cfg.feature_dim}")
        result = run_stream(params, seq, rate=cfg.rate,
                            eval_stride=cfg.eval_stride, state=state)
        for t in range(seq.frames):
            emit(t, result.scores[t])
        frames = seq.frames
    return {"frames": frames}
