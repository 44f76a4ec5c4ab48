"""Causal online inference.

A StreamState keeps exactly the last (window-1)*rate + 1 frame features in
a ring buffer, so memory stays constant however long the stream runs. Each
pushed frame materializes the same window the offline sampler would build
for that frame index (same repeat-earliest padding) and runs one forward,
so streaming scores are bit-identical to the batch path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_RATE, FeatureSequence, LabelTrack, sample_window
from .errors import ConfigError, NumericsError, ShapeError
from .metrics import ScoreTable
from .model import ModelParams, forward


class StreamState:
    """Single-consumer stream over one model; reusable across videos via reset()."""

    def __init__(self, params: ModelParams, rate: int = DEFAULT_RATE):
        if rate < 1:
            raise ConfigError(f"rate must be >= 1, got {rate}")
        self.params = params
        self.rate = rate
        self.window = params.cfg.window
        self.dim = params.cfg.feature_dim
        self.capacity = (self.window - 1) * rate + 1
        self._buffer = np.zeros((self.capacity, self.dim), dtype=np.float32)
        self.frames_seen = 0

    def reset(self) -> None:
        self._buffer[:] = 0.0
        self.frames_seen = 0

    @property
    def buffer_nbytes(self) -> int:
        return self._buffer.nbytes

    def observe(self, feature: np.ndarray) -> int:
        """Store a frame without scoring it; returns its frame index."""
        feature = np.asarray(feature, dtype=np.float32)
        if feature.shape != (self.dim,):
            raise ShapeError(f"expected a ({self.dim},) feature, got {feature.shape}")
        if not np.isfinite(feature).all():
            raise NumericsError(f"non-finite feature at frame {self.frames_seen}")
        t = self.frames_seen
        self._buffer[t % self.capacity] = feature
        self.frames_seen += 1
        return t

    def _window_at(self, t: int) -> np.ndarray:
        idx = t - self.rate * np.arange(self.window - 1, -1, -1, dtype=np.int64)
        np.maximum(idx, t % self.rate, out=idx)
        return self._buffer[idx % self.capacity]

    def score_current(self) -> tuple[np.ndarray, np.ndarray | None]:
        """Scores for the most recently observed frame."""
        if self.frames_seen == 0:
            raise ConfigError("no frame has been pushed yet")
        window = self._window_at(self.frames_seen - 1)
        z, zf = forward(self.params, window[None])
        return z.data[0], None if zf is None else zf.data[0]

    def push_frame(self, feature: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Ingest one frame and return its per-class scores immediately."""
        self.observe(feature)
        return self.score_current()


@dataclass(eq=False)
class StreamResult:
    scores: np.ndarray                 # (F, C) cosine scores
    future_scores: np.ndarray | None   # (F, C) when the future head is on
    frame_seconds: np.ndarray          # per-computed-frame wall time

    def table(self, track: LabelTrack) -> ScoreTable:
        return ScoreTable(self.scores, track.labels)

    def latency_ratio(self) -> float:
        """p95/p50 of per-frame scoring time; flat cost keeps this small."""
        p50, p95 = np.percentile(self.frame_seconds, [50, 95])
        return float(p95 / p50) if p50 > 0 else float("inf")


def run_stream(params: ModelParams, seq: FeatureSequence,
               rate: int = DEFAULT_RATE, eval_stride: int = 1,
               state: StreamState | None = None) -> StreamResult:
    """Push every frame of a video in order and collect per-frame scores.

    With eval_stride k > 1 only every k-th frame is scored and the score is
    held for the frames in between (cheaper smoke evaluation).
    """
    if eval_stride < 1:
        raise ConfigError(f"eval_stride must be >= 1, got {eval_stride}")
    if state is None:
        state = StreamState(params, rate)
    elif state.rate != rate or state.dim != seq.dim:
        raise ConfigError("stream state does not match this video/rate")
    state.reset()
    n = seq.frames
    c = params.cfg.classes
    scores = np.zeros((n, c), dtype=np.float32)
    future = np.zeros((n, c), dtype=np.float32) if params.cfg.future_enabled else None
    times = []
    last = last_future = None
    for t in range(n):
        state.observe(seq.features[t])
        if t % eval_stride == 0:
            tick = time.perf_counter()
            last, last_future = state.score_current()
            times.append(time.perf_counter() - tick)
        scores[t] = last
        if future is not None:
            future[t] = last_future
    return StreamResult(scores, future, np.asarray(times))


def offline_scores(params: ModelParams, seq: FeatureSequence,
                   rate: int = DEFAULT_RATE, eval_stride: int = 1) -> StreamResult:
    """The batch-side twin of run_stream: windows come from the full feature
    array via the offline sampler instead of the ring buffer."""
    if eval_stride < 1:
        raise ConfigError(f"eval_stride must be >= 1, got {eval_stride}")
    window = params.cfg.window
    n = seq.frames
    c = params.cfg.classes
    scores = np.zeros((n, c), dtype=np.float32)
    future = np.zeros((n, c), dtype=np.float32) if params.cfg.future_enabled else None
    last = last_future = None
    for t in range(n):
        if t % eval_stride == 0:
            x, _, _ = sample_window(seq, None, t, window, rate)
            z, zf = forward(params, x[None])
            last = z.data[0]
            last_future = None if zf is None else zf.data[0]
        scores[t] = last
        if future is not None:
            future[t] = last_future
    return StreamResult(scores, future, np.asarray([]))
