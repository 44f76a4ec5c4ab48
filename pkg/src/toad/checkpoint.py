"""Self-contained binary checkpoints.

Container: magic TOADCKPT, version u32 LE, then repeated records of
(name-length u32, UTF-8 name, rank u32, extents u32 x rank, f32 payload).
A checkpoint always carries the frozen classifier and logit scale next to
the trainable tensors, and optionally the optimizer moments under the
"optim/" prefix so a run can resume exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .data import FORMAT_VERSION, _open_container
from .errors import ParseError
from .model import ModelParams
from .optim import OptimState

CHECKPOINT_MAGIC = b"TOADCKPT"


def write_records(path, records: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(records):
            arr = np.asarray(records[name], dtype="<f4")
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.tobytes())


def read_records(path) -> dict[str, np.ndarray]:
    r = _open_container(path, CHECKPOINT_MAGIC)
    records: dict[str, np.ndarray] = {}
    total = len(r.raw)
    while r.pos < total:
        name_len = r.u32()
        if name_len > 4096:
            raise ParseError(f"{path}: implausible record name length {name_len}",
                             r.pos - 4)
        name = r.take(name_len).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise ParseError(f"{path}: implausible rank {rank} for {name!r}", r.pos - 4)
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = r.take(4 * count)
        records[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return records


def save_checkpoint(path, params: ModelParams, optim: OptimState | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    records = params.records()
    if optim is not None:
        records.update(optim.records())
    if extra:
        records.update(extra)
    write_records(path, records)


def load_checkpoint(path, classifier_mode: str = "prompt",
                    future_weight: float = 0.5) -> tuple[ModelParams, OptimState | None]:
    records = read_records(path)
    model_records = {k: v for k, v in records.items() if not k.startswith("optim/")}
    params = ModelParams.from_records(model_records, classifier_mode=classifier_mode,
                                      future_weight=future_weight)
    optim = None
    if "optim/step" in records:
        optim = OptimState()
        optim.load_records({k: v for k, v in records.items() if k.startswith("optim/")})
    return params, optim
