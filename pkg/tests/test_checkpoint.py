"""Checkpoint container: round trips, corruption handling, resume state."""

import numpy as np
import pytest

from toad import model as md
from toad.checkpoint import (
    load_checkpoint,
    read_records,
    save_checkpoint,
    write_records,
)
from toad.errors import BadMagicError, ConfigError, TruncatedFileError
from toad.optim import OptimState, adamw_step

from test_model import tiny_model


class TestRecordContainer:
    def test_round_trip_with_scalars(self, tmp_path):
        rng = np.random.default_rng(0)
        records = {
            "a/weight": rng.standard_normal((3, 4)).astype(np.float32),
            "b/bias": rng.standard_normal(7).astype(np.float32),
            "scalar": np.asarray(2.5, dtype=np.float32),
        }
        path = tmp_path / "r.toad"
        write_records(path, records)
        back = read_records(path)
        assert set(back) == set(records)
        for k in records:
            assert back[k].tobytes() == records[k].tobytes()
            assert back[k].shape == records[k].shape

    def test_truncation(self, tmp_path):
        path = tmp_path / "r.toad"
        write_records(path, {"w": np.ones((4, 4), dtype=np.float32)})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(TruncatedFileError):
            read_records(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "r.toad"
        write_records(path, {"w": np.ones(2, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            read_records(path)

    def test_deterministic_bytes(self, tmp_path):
        records = {"b": np.ones(3, dtype=np.float32),
                   "a": np.zeros((2, 2), dtype=np.float32)}
        p1, p2 = tmp_path / "1.toad", tmp_path / "2.toad"
        write_records(p1, records)
        write_records(p2, dict(reversed(records.items())))
        assert p1.read_bytes() == p2.read_bytes()


class TestModelCheckpoints:
    def test_save_load_identical_forward(self, tmp_path):
        params = tiny_model(seed=1)
        path = tmp_path / "m.toad"
        save_checkpoint(path, params)
        back, optim = load_checkpoint(path)
        assert optim is None
        assert back.frozen_checksum() == params.frozen_checksum()
        x = np.random.default_rng(2).standard_normal((2, 4, 8)).astype(np.float32)
        za, _ = md.forward(params, x)
        zb, _ = md.forward(back, x)
        assert za.data.tobytes() == zb.data.tobytes()

    def test_optimizer_state_round_trip(self, tmp_path):
        params = tiny_model(seed=3)
        state = OptimState(weight_decay=0.1)
        for _, t in params.trainable():
            t.grad = np.full_like(t.data, 0.01)
        adamw_step(params.trainable(), state, lr=1e-3)
        path = tmp_path / "m.toad"
        save_checkpoint(path, params, state)
        _, back = load_checkpoint(path)
        assert back.step == state.step
        for name in state.moments:
            np.testing.assert_array_equal(back.moments[name][0],
                                          state.moments[name][0])

    def test_missing_record_rejected(self, tmp_path):
        params = tiny_model(seed=4)
        records = params.records()
        del records["future/bias"]
        path = tmp_path / "m.toad"
        write_records(path, records)
        with pytest.raises(ConfigError, match="future/bias"):
            load_checkpoint(path)
