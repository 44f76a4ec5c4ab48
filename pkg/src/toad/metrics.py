"""Per-frame ranking metrics.

Average precision ranks all frames by a class's score (descending, ties
broken by ascending frame index so results are reproducible) and averages
precision at each positive's rank. The calibrated variant replaces
precision with w*TP / (w*TP + FP), where w is the negative/positive frame
ratio of the evaluated set; a prefix with no false positives counts as
precision 1 regardless of w. Scores are consumed raw: any strictly
increasing transform leaves every ranking metric unchanged.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureSequence, save_features
from .errors import DataError, MetricError, ShapeError


@dataclass(eq=False)
class ScoreTable:
    """Per-frame class scores aligned with ground-truth labels."""

    scores: np.ndarray  # (F, C)
    labels: np.ndarray  # (F,)

    def __post_init__(self):
        self.scores = np.asarray(self.scores)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.ndim != 2 or self.scores.shape[0] < 1:
            raise ShapeError(f"scores must be (F>=1, C), got {self.scores.shape}")
        if self.labels.shape != (self.scores.shape[0],):
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match {self.scores.shape[0]} frames")
        if not np.isfinite(self.scores).all():
            raise DataError("non-finite scores")
        if ((self.labels < 0) | (self.labels >= self.scores.shape[1])).any():
            raise DataError("labels outside score columns")

    @property
    def frames(self) -> int:
        return self.scores.shape[0]

    @property
    def classes(self) -> int:
        return self.scores.shape[1]


def _ranked(scores: np.ndarray) -> np.ndarray:
    """Frame order by descending score; equal scores keep frame order."""
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def average_precision(scores, positives) -> float:
    """Mean precision-at-rank over the positive frames."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    npos = int(positives.sum())
    if npos == 0:
        raise MetricError("average precision undefined without positives")
    tp = 0
    total = 0.0
    for rank, i in enumerate(_ranked(scores), start=1):
        if positives[i]:
            tp += 1
            total += tp / rank
    return total / npos


def calibrated_precision(tp: int, fp: int, w: float) -> float:
    """w*TP / (w*TP + FP); w is the negative-to-positive frame ratio."""
    if tp + fp <= 0:
        raise MetricError("precision undefined at an empty prediction set")
    if w <= 0:
        raise MetricError(f"calibration ratio must be positive, got {w}")
    return (w * tp) / (w * tp + fp)


def calibrated_ap(scores, positives, w: float | None = None) -> float:
    """Average precision with the calibrated precision at each positive's rank.

    w defaults to negatives/positives over the given frames. Prefixes with
    zero false positives score 1.0, which also covers the everything-is-
    positive edge where w collapses to 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    npos = int(positives.sum())
    if npos == 0:
        raise MetricError("calibrated AP undefined without positives")
    if w is None:
        w = (positives.size - npos) / npos
    tp = 0
    total = 0.0
    for rank, i in enumerate(_ranked(scores), start=1):
        if positives[i]:
            tp += 1
            fp = rank - tp
            total += 1.0 if fp == 0 else (w * tp) / (w * tp + fp)
    return total / npos


@dataclass
class ClassResult:
    index: int
    name: str
    ap: float
    positives: int
    ratio: float  # negatives / positives over the evaluated frames


@dataclass
class MetricReport:
    entries: list[ClassResult]
    skipped: list[str]
    calibrated: bool

    @property
    def mean(self) -> float:
        return float(np.mean([e.ap for e in self.entries]))


def map_report(table: ScoreTable, calibrated: bool = False,
               names: list[str] | None = None) -> MetricReport:
    """Per-class AP (or calibrated AP) over action classes; background
    (class 0) never enters the mean, and classes with no positive frames
    are reported as skipped rather than silently scored 0."""
    if names is None:
        names = [f"class_{c:02d}" for c in range(table.classes)]
    if len(names) != table.classes:
        raise ShapeError(f"{len(names)} names for {table.classes} classes")
    entries: list[ClassResult] = []
    skipped: list[str] = []
    for c in range(1, table.classes):
        positives = table.labels == c
        npos = int(positives.sum())
        if npos == 0:
            skipped.append(names[c])
            continue
        ratio = (table.frames - npos) / npos
        if calibrated:
            ap = calibrated_ap(table.scores[:, c], positives, ratio)
        else:
            ap = average_precision(table.scores[:, c], positives)
        entries.append(ClassResult(c, names[c], ap, npos, ratio))
    if not entries:
        raise MetricError("every action class is missing positives")
    return MetricReport(entries, skipped, calibrated)


def action_frame_accuracy(table: ScoreTable) -> float:
    """Argmax accuracy over annotated action frames (background frames have
    no positive target under the anchor/text classifier and are excluded,
    matching the mean-AP convention)."""
    action = table.labels > 0
    if not action.any():
        raise MetricError("no action frames to score")
    pred = np.argmax(table.scores[action], axis=1)
    return float((pred == table.labels[action]).mean())


def format_report(report: MetricReport) -> str:
    metric = "calibrated AP" if report.calibrated else "AP"
    lines = [f"per-class {metric}"]
    for e in report.entries:
        lines.append(
            f"  {e.name:<20s} ap={e.ap:.6f} positives={e.positives} w={e.ratio:.4f}")
    for name in report.skipped:
        lines.append(f"  {name:<20s} skipped (no positive frames)")
    lines.append(f"mean over {len(report.entries)} classes: {report.mean:.6f}")
    return "\n".join(lines)


def write_summary(path, report: MetricReport, extra: dict | None = None) -> None:
    """Machine-readable key=value summary; floats keep full precision."""
    key = "mcap" if report.calibrated else "map"
    lines = [f"{key}={report.mean!r}"]
    for e in report.entries:
        lines.append(f"class.{e.name}.ap={e.ap!r}")
        lines.append(f"class.{e.name}.positives={e.positives}")
        lines.append(f"class.{e.name}.w={e.ratio!r}")
    for name in report.skipped:
        lines.append(f"class.{name}.skipped=true")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


def dump_scores(table: ScoreTable, path, fps: float = 0.0) -> None:
    """Write the score matrix in the feature container for external diffing."""
    save_features(path, FeatureSequence("scores", fps,
                                        table.scores.astype(np.float32)))
