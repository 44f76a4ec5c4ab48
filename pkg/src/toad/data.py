"""Dataset ingestion, window sampling, few-shot subsets, synthetic data.

Binary containers (all little-endian):

  feature file   magic TOADFEAT | version u32 | fps f32 | N u32 | d u32 | N*d f32
  label file     magic TOADLABL | version u32 | N u32 | C u32 | N u16
  text file      magic TOADTEXT | version u32 | C u32 | d u32 | mode u8 | C*d f32
  vocabulary     UTF-8 text, one class name per line, line 0 = background

The window sampler walks backwards from the current frame in steps of the
downsampling rate and repeats the earliest candidate when the video has
not run long enough yet, so a window always has exactly `window` rows and
never touches a frame after the current one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    LabelError,
    ParseError,
    TruncatedFileError,
)
from .tensor import IGNORE_LABEL

FEATURE_MAGIC = b"TOADFEAT"
LABEL_MAGIC = b"TOADLABL"
TEXT_MAGIC = b"TOADTEXT"
FORMAT_VERSION = 1

TEXT_MODES = {"class_name": 0, "prompt": 1, "future_prompt": 2}
TEXT_MODE_NAMES = {v: k for k, v in TEXT_MODES.items()}

PROMPT_TEMPLATE = "a video of a person {}"
FUTURE_TEMPLATE = "a video of a person {} in the future"
BACKGROUND_PROMPT = "a video of background"
BACKGROUND_FUTURE_PROMPT = "a video of background in the future"

FUTURE_UNDEFINED = IGNORE_LABEL

DEFAULT_RATE = 6
DEFAULT_HORIZON = 60


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(eq=False)
class FeatureSequence:
    video_id: str
    fps: float
    features: np.ndarray  # (N, d) float32, one row per original frame

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"{self.video_id}: features must be (N>=1, d), "
                            f"got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise DataError(f"{self.video_id}: non-finite feature rows")

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(eq=False)
class LabelTrack:
    video_id: str
    labels: np.ndarray  # (N,) ints, 0 = background
    classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        bad = (self.labels < 0) | (self.labels >= self.classes)
        if bad.any():
            i = int(np.argmax(bad))
            raise LabelError(
                f"{self.video_id}: label {self.labels[i]} out of range "
                f"[0, {self.classes}) at frame {i}")

    @property
    def frames(self) -> int:
        return self.labels.shape[0]


@dataclass
class ClassVocabulary:
    names: list[str]

    def __post_init__(self):
        if not self.names:
            raise DataError("vocabulary is empty")
        if any(not n for n in self.names):
            raise DataError("vocabulary has an empty class name")
        if len(set(self.names)) != len(self.names):
            raise DataError("vocabulary has duplicate class names")

    @property
    def classes(self) -> int:
        return len(self.names)

    def prompt(self, index: int) -> str:
        if index == 0:
            return BACKGROUND_PROMPT
        return PROMPT_TEMPLATE.format(self.names[index])

    def future_prompt(self, index: int) -> str:
        if index == 0:
            return BACKGROUND_FUTURE_PROMPT
        return FUTURE_TEMPLATE.format(self.names[index])


@dataclass(eq=False)
class WindowBatch:
    x: np.ndarray            # (B, T, d) float32
    y: np.ndarray            # (B,) current labels
    y_future: np.ndarray     # (B,) future labels, FUTURE_UNDEFINED past the end
    frame_index: np.ndarray  # (B,) original-frame index of the current frame
    video_index: np.ndarray  # (B,) which sequence each window came from


@dataclass(eq=False)
class Dataset:
    sequences: list[FeatureSequence]
    tracks: list[LabelTrack]
    vocab: ClassVocabulary
    anchors: np.ndarray | None = None  # synthetic class directions, (C, d)

    def __post_init__(self):
        if len(self.sequences) != len(self.tracks):
            raise DataError(
                f"{len(self.sequences)} feature files vs {len(self.tracks)} label files")
        for seq, track in zip(self.sequences, self.tracks):
            if seq.frames != track.frames:
                raise DataError(
                    f"{seq.video_id}: {seq.frames} feature rows vs {track.frames} labels")

    @property
    def dim(self) -> int:
        return self.sequences[0].dim

    @property
    def classes(self) -> int:
        return self.vocab.classes


# --------------------------------------------------------------------------
# Binary containers
# --------------------------------------------------------------------------

class _Reader:
    """Cursor over file bytes that reports the offset of any short read."""

    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFileError(f"{self.path}: needed {n} more bytes", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _open_container(path, magic: bytes) -> _Reader:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    r = _Reader(path.read_bytes(), str(path))
    found = r.take(len(magic))
    if found != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {found!r}", 0)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported version {version}", 8)
    return r


def save_features(path, seq: FeatureSequence) -> None:
    n, d = seq.features.shape
    payload = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<IfII", FORMAT_VERSION, seq.fps, n, d))
        f.write(payload)


def load_features(path) -> FeatureSequence:
    r = _open_container(path, FEATURE_MAGIC)
    fps = r.f32()
    n = r.u32()
    d = r.u32()
    if n < 1 or d < 1:
        raise ParseError(f"{path}: bad extents N={n} d={d}", 16)
    start = r.pos
    payload = r.take(4 * n * d)
    if r.pos != len(r.raw):
        raise ParseError(f"{path}: {len(r.raw) - r.pos} trailing bytes", r.pos)
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    if not np.isfinite(feats).all():
        raise ParseError(f"{path}: non-finite feature payload", start)
    return FeatureSequence(Path(path).stem, fps, feats.copy())


def save_labels(path, track: LabelTrack) -> None:
    if (track.labels > 0xFFFF).any():
        raise DataError(f"{track.video_id}: label does not fit in u16")
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, track.frames, track.classes))
        f.write(np.ascontiguousarray(track.labels, dtype="<u2").tobytes())


def load_labels(path) -> LabelTrack:
    r = _open_container(path, LABEL_MAGIC)
    n = r.u32()
    c = r.u32()
    if n < 1 or c < 2:
        raise ParseError(f"{path}: bad extents N={n} C={c}", 12)
    start = r.pos
    labels = np.frombuffer(r.take(2 * n), dtype="<u2").astype(np.int64)
    bad = labels >= c
    if bad.any():
        i = int(np.argmax(bad))
        raise LabelError(f"{path}: label {labels[i]} >= class count {c} at frame {i} "
                         f"(byte offset {start + 2 * i})")
    return LabelTrack(Path(path).stem, labels, c)


def save_text_embeddings(path, matrix: np.ndarray, mode: str) -> None:
    if mode not in TEXT_MODES:
        raise ConfigError(f"unknown text-embedding mode {mode!r}")
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    c, d = matrix.shape
    with open(path, "wb") as f:
        f.write(TEXT_MAGIC)
        f.write(struct.pack("<IIIB", FORMAT_VERSION, c, d, TEXT_MODES[mode]))
        f.write(matrix.tobytes())


def load_text_embeddings(path) -> tuple[np.ndarray, str]:
    r = _open_container(path, TEXT_MAGIC)
    c = r.u32()
    d = r.u32()
    mode = r.u8()
    if mode not in TEXT_MODE_NAMES:
        raise ParseError(f"{path}: unknown mode byte {mode}", 20)
    start = r.pos
    mat = np.frombuffer(r.take(4 * c * d), dtype="<f4").reshape(c, d)
    if not np.isfinite(mat).all():
        raise ParseError(f"{path}: non-finite embedding payload", start)
    return mat.copy(), TEXT_MODE_NAMES[mode]


def save_vocab(path, vocab: ClassVocabulary) -> None:
    Path(path).write_text("\n".join(vocab.names) + "\n", encoding="utf-8")


def load_vocab(path) -> ClassVocabulary:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    names = [line for line in path.read_text(encoding="utf-8").splitlines() if line]
    return ClassVocabulary(names)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def sample_window(seq: FeatureSequence, track: LabelTrack | None, t: int,
                  window: int, rate: int = DEFAULT_RATE):
    """Window of `window` frames ending at original-frame index t.

    Candidates are t, t-rate, t-2*rate, ...; too-early positions repeat the
    earliest candidate, so no index ever exceeds t.
    """
    n = seq.frames
    if not 0 <= t < n:
        raise DataError(f"{seq.video_id}: frame {t} outside [0, {n})")
    if window < 1 or rate < 1:
        raise ConfigError(f"window {window} and rate {rate} must be positive")
    idx = t - rate * np.arange(window - 1, -1, -1, dtype=np.int64)
    np.maximum(idx, t % rate, out=idx)
    x = seq.features[idx]
    y = int(track.labels[t]) if track is not None else None
    return x, y, idx


def future_label(track: LabelTrack, t: int, horizon_frames: int) -> int:
    """Label `horizon_frames` past t, or FUTURE_UNDEFINED beyond the video."""
    if horizon_frames < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon_frames}")
    j = t + horizon_frames
    if j >= track.frames:
        return FUTURE_UNDEFINED
    return int(track.labels[j])


def make_batch(dataset: Dataset, samples, window: int, rate: int,
               horizon: int, future_enabled: bool) -> WindowBatch:
    """Assemble (video, frame) sample pairs into one dense batch."""
    xs, ys, yfs, frames, vids = [], [], [], [], []
    for vid, t in samples:
        seq, track = dataset.sequences[vid], dataset.tracks[vid]
        x, y, _ = sample_window(seq, track, t, window, rate)
        xs.append(x)
        ys.append(y)
        yfs.append(future_label(track, t, horizon) if future_enabled
                   else FUTURE_UNDEFINED)
        frames.append(t)
        vids.append(vid)
    return WindowBatch(
        x=np.stack(xs), y=np.asarray(ys, dtype=np.int64),
        y_future=np.asarray(yfs, dtype=np.int64),
        frame_index=np.asarray(frames, dtype=np.int64),
        video_index=np.asarray(vids, dtype=np.int64))


def full_shot_samples(dataset: Dataset, rate: int = DEFAULT_RATE):
    """Training anchors: every downsampled position of every video."""
    out = []
    for vid, seq in enumerate(dataset.sequences):
        out.extend((vid, t) for t in range(0, seq.frames, rate))
    return out


def video_instances(track: LabelTrack):
    """Maximal contiguous non-background runs as (class, start, end) inclusive."""
    runs = []
    labels = track.labels
    start = 0
    for i in range(1, track.frames + 1):
        if i == track.frames or labels[i] != labels[start]:
            if labels[start] != 0:
                runs.append((int(labels[start]), start, i - 1))
            start = i
    return runs


@dataclass
class FewshotSubset:
    samples: list            # tiled (video, frame) pairs, one epoch's worth
    distinct: list           # the untiled sample set
    instances: dict          # class -> chosen (video, start, end) instances
    full_shot_count: int


def fewshot_subset(dataset: Dataset, shots: int, seed: int,
                   rate: int = DEFAULT_RATE) -> FewshotSubset:
    """Per action class, keep `shots` annotated instances picked by a seeded
    permutation (so smaller shot counts are prefixes of larger ones), then
    tile the sample list until it matches the full-shot per-epoch count."""
    if shots not in (1, 2, 4, 8):
        raise ConfigError(f"shots must be one of 1, 2, 4, 8; got {shots}")
    by_class: dict[int, list] = {c: [] for c in range(1, dataset.classes)}
    for vid, track in enumerate(dataset.tracks):
        for cls, start, end in video_instances(track):
            by_class[cls].append((vid, start, end))
    chosen: dict[int, list] = {}
    distinct: list = []
    for cls in range(1, dataset.classes):
        pool = by_class[cls]
        if not pool:
            raise DataError(
                f"class {dataset.vocab.names[cls]!r} has no annotated instances")
        order = np.random.default_rng([seed, cls]).permutation(len(pool))
        chosen[cls] = [pool[i] for i in order[:shots]]
        for vid, start, end in chosen[cls]:
            first = ((start + rate - 1) // rate) * rate
            anchors = list(range(first, end + 1, rate)) or [start]
            distinct.extend((vid, t) for t in anchors)
    full_count = len(full_shot_samples(dataset, rate))
    reps = -(-full_count // len(distinct))
    samples = (distinct * reps)[:full_count]
    return FewshotSubset(samples=samples, distinct=distinct,
                         instances=chosen, full_shot_count=full_count)


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

def synth_dataset(classes: int, dim: int, videos: int, frames: int,
                  sep: float, seed: int, *, noise: float = 1.0,
                  fps: float = 30.0, background_fraction: float = 0.25,
                  action_len: int = 90, cyclic: bool = False,
                  anchor_seed: int | None = None) -> Dataset:
    """Separable test-bed videos. Every action class gets one unit anchor
    direction; action frames are anchor*sep plus Gaussian noise, background
    frames are pure noise. The anchor matrix stands in for text embeddings,
    so zero-shot evaluation is meaningful on this data.

    cyclic=True makes action segments follow each other deterministically
    (class c then c+1, wrapping), which pins down the future label.
    anchor_seed fixes the class directions independently of the video draw,
    so train/test splits share one classifier.
    """
    if sep < 0:
        raise ConfigError(f"sep must be >= 0, got {sep}")
    if classes < 2 or dim < 1 or videos < 1 or frames < 1:
        raise ConfigError("synth_dataset needs classes>=2, dim>=1, videos>=1, frames>=1")
    if not 0 <= background_fraction < 1:
        raise ConfigError(f"background_fraction must be in [0, 1), got {background_fraction}")
    if action_len < 1:
        raise ConfigError(f"action_len must be >= 1, got {action_len}")
    rng = np.random.default_rng(seed)
    anchor_rng = rng if anchor_seed is None else np.random.default_rng(anchor_seed)
    if dim >= classes:
        g = anchor_rng.standard_normal((dim, classes))
        q, r = np.linalg.qr(g)
        anchors = (q * np.sign(np.diag(r))).T
    else:
        g = anchor_rng.standard_normal((classes, dim))
        anchors = g / np.linalg.norm(g, axis=1, keepdims=True)
    anchors = anchors.astype(np.float32)

    bg_len = int(round(action_len * background_fraction / (1.0 - background_fraction)))
    sequences, tracks = [], []
    next_cls = 1
    for vid in range(videos):
        labels = np.zeros(frames, dtype=np.int64)
        pos = 0
        while pos < frames:
            if bg_len > 0:
                pos += bg_len  # leave a background run
                if pos >= frames:
                    break
            if cyclic:
                cls = next_cls
                next_cls = next_cls % (classes - 1) + 1
            else:
                cls = int(rng.integers(1, classes))
            end = min(pos + action_len, frames)
            labels[pos:end] = cls
            pos = end
        feats = rng.standard_normal((frames, dim)) * noise
        action = labels > 0
        feats[action] += sep * anchors[labels[action]]
        video_id = f"video_{vid:03d}"
        sequences.append(FeatureSequence(video_id, fps, feats.astype(np.float32)))
        tracks.append(LabelTrack(video_id, labels, classes))
    names = ["background"] + [f"action_{c:02d}" for c in range(1, classes)]
    return Dataset(sequences, tracks, ClassVocabulary(names), anchors=anchors)


# --------------------------------------------------------------------------
# On-disk dataset layout
# --------------------------------------------------------------------------

TEXT_FILES = {
    "class_name": "text_class_name.emb",
    "prompt": "text_prompt.emb",
    "future_prompt": "text_future.emb",
}


def write_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for seq, track in zip(dataset.sequences, dataset.tracks):
        save_features(out / "features" / f"{seq.video_id}.feat", seq)
        save_labels(out / "labels" / f"{track.video_id}.lab", track)
    save_vocab(out / "vocab.txt", dataset.vocab)
    if dataset.anchors is not None:
        for mode, fname in TEXT_FILES.items():
            save_text_embeddings(out / fname, dataset.anchors, mode)


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"no such dataset directory: {root}")
    feat_paths = sorted((root / "features").glob("*.feat"))
    if not feat_paths:
        raise DataError(f"{root}: no feature files under features/")
    sequences, tracks = [], []
    for fp in feat_paths:
        lp = root / "labels" / (fp.stem + ".lab")
        if not lp.exists():
            raise DataError(f"{root}: missing label file for {fp.stem}")
        sequences.append(load_features(fp))
        tracks.append(load_labels(lp))
    vocab = load_vocab(root / "vocab.txt")
    for track in tracks:
        if track.classes != vocab.classes:
            raise DataError(
                f"{track.video_id}: label file says {track.classes} classes, "
                f"vocabulary has {vocab.classes}")
    return Dataset(sequences, tracks, vocab)


def load_classifier_sources(data_dir, need_future: bool):
    """Raw text-embedding matrices for the classifier builder."""
    root = Path(data_dir)
    mats = {}
    for mode, fname in TEXT_FILES.items():
        path = root / fname
        if not path.exists():
            if mode == "future_prompt" and not need_future:
                mats[mode] = None
                continue
            raise ConfigError(f"missing text-embedding file {path}")
        mat, stored_mode = load_text_embeddings(path)
        if stored_mode != mode:
            raise DataError(f"{path}: mode byte says {stored_mode!r}, expected {mode!r}")
        mats[mode] = mat
    return mats["class_name"], mats["prompt"], mats["future_prompt"]
