import math
import struct

import numpy as np
import pytest

from otlm import tensor as tn
from otlm.config import ModelConfig
from otlm.gradcheck import check_lm
from otlm.model import (
    CheckpointError,
    ForwardTrace,
    init_weights,
    lm_forward,
    lm_loss,
    load_checkpoint,
    save_checkpoint,
)
from otlm.tensor import Tensor

from reference import ref_cross_entropy, ref_lm_logits


def tiny(precision="wide", **kw):
    base = dict(vocab_size=11, d_model=8, n_layers=1, n_heads=2, gate_dim=2, chunk_factor=2, max_seq_len=8)
    cfg = ModelConfig(**{**base, **kw, "precision": precision})
    return init_weights(cfg, np.random.default_rng(0))


def trace_of(logits):
    return ForwardTrace([], Tensor(np.asarray(logits, dtype=float)))


class TestForward:
    def test_shape_and_normalisation(self):
        w = tiny()
        logits = lm_forward([3, 1, 4, 1, 5], w).logits.data
        assert logits.shape == (5, 11)
        probs = tn.softmax(Tensor(logits)).data
        assert np.abs(probs.sum(axis=-1) - 1).max() <= 1e-6

    def test_shared_prefix(self):
        w = tiny()
        a = lm_forward([3, 1, 4, 1, 5, 9], w).logits.data
        b = lm_forward([3, 1, 4, 7, 2, 6], w).logits.data
        assert a[:3].tobytes() == b[:3].tobytes()

    def test_matches_independent_composition(self):
        w = tiny()
        for t in w.layers[0].values():
            t.data = t.data + np.random.default_rng(1).normal(scale=0.1, size=t.shape)
        tokens = [4, 0, 9]
        np.testing.assert_allclose(lm_forward(tokens, w).logits.data, ref_lm_logits(tokens, w), rtol=0, atol=1e-8)

    def test_two_layers_match_composition(self):
        w = tiny(n_layers=2)
        tokens = [2, 7, 7, 1]
        np.testing.assert_allclose(lm_forward(tokens, w).logits.data, ref_lm_logits(tokens, w), rtol=0, atol=1e-8)

    def test_overlong_rejected(self):
        with pytest.raises(ValueError, match="max_seq_len"):
            lm_forward(list(range(9)), tiny())

    def test_unknown_id_rejected(self):
        with pytest.raises(ValueError, match="unknown token id 11"):
            lm_forward([1, 11], tiny())

    def test_capture_gates(self):
        w = tiny(n_layers=2)
        trace = lm_forward([1, 2, 3], w, capture_gates=True)
        assert len(trace.per_layer) == 2
        assert trace.per_layer[0].forget_gates.shape == (3, 2, 2)
        assert lm_forward([1, 2, 3], w).per_layer == []

    def test_batch_matches_single(self):
        w = tiny()
        batch = lm_forward([[1, 2, 3], [4, 5, 6]], w).logits.data
        np.testing.assert_allclose(batch[1], lm_forward([4, 5, 6], w).logits.data, atol=1e-12)


class TestInvariants:
    def test_causality(self):
        w = tiny()
        rng = np.random.default_rng(5)
        for _ in range(10):
            tokens = rng.integers(0, 11, size=8)
            base = lm_forward(tokens, w).logits.data
            for j in range(8):
                flipped = tokens.copy()
                flipped[j] = (flipped[j] + 1 + rng.integers(10)) % 11
                out = lm_forward(flipped, w).logits.data
                assert out[:j].tobytes() == base[:j].tobytes()

    def test_full_model_gradients(self):
        assert check_lm().error <= 1e-4

    def test_weight_tying(self):
        w = tiny()
        before = lm_forward([3, 5], w).logits.data
        w.token_embedding.data[5] += 0.5
        after = lm_forward([3, 5], w).logits.data
        # position 0 sees token 3 only, so only its logit for class 5 may move
        moved = np.abs(after[0] - before[0]) > 0
        assert moved.tolist() == [k == 5 for k in range(11)]
        # position 1 reads token 5 as input, so its whole row moves
        assert np.all(np.abs(after[1] - before[1]) > 0)


class TestLoss:
    def test_uniform(self):
        loss = lm_loss(trace_of(np.zeros((3, 4))), [0, 1, 3])
        assert abs(float(loss.data) - math.log(4)) <= 1e-12

    def test_saturated(self):
        targets = [2, 0, 1]
        logits = np.full((3, 4), -50.0)
        logits[np.arange(3), targets] = 50.0
        assert float(lm_loss(trace_of(logits), targets).data) <= 1e-6

    def test_matches_independent_cross_entropy(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(scale=3, size=(6, 7))
        targets = rng.integers(0, 7, size=6)
        loss = float(lm_loss(trace_of(logits), targets).data)
        assert abs(loss - ref_cross_entropy(logits.tolist(), targets.tolist())) <= 1e-10

    def test_pad_positions_ignored(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(4, 5))
        pad = [False, False, True, True]
        loss = float(lm_loss(trace_of(logits), [1, 2, 0, 0], pad).data)
        assert abs(loss - ref_cross_entropy(logits[:2].tolist(), [1, 2])) <= 1e-12

    def test_all_padded(self):
        with pytest.raises(ValueError, match="padding"):
            lm_loss(trace_of(np.zeros((2, 4))), [0, 0], [True, True])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="targets"):
            lm_loss(trace_of(np.zeros((2, 4))), [0, 0, 1])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        w = tiny("narrow", n_layers=2)
        tokens = [1, 2, 3, 4, 5, 6]
        before = lm_forward(tokens, w).logits.data
        path = save_checkpoint(w, w.config, tmp_path / "m.otlm")
        loaded, cfg = load_checkpoint(path)
        assert cfg == w.config
        assert lm_forward(tokens, loaded).logits.data.tobytes() == before.tobytes()

    def test_header_layout(self, tmp_path):
        w = tiny()
        raw = save_checkpoint(w, None, tmp_path / "m.otlm").read_bytes()
        assert raw[:4] == b"OTLM"
        assert struct.unpack("<I", raw[4:8])[0] == 1
        n = struct.unpack("<I", raw[8:12])[0]
        text = raw[12 : 12 + n].decode("utf-8")
        assert "d_model=8" in text.splitlines()
        assert struct.unpack("<I", raw[12 + n : 16 + n])[0] == len(w.named_parameters())

    def test_wide_loaded_narrow(self, tmp_path):
        w = tiny("wide")
        loaded, cfg = load_checkpoint(save_checkpoint(w, None, tmp_path / "m.otlm"), precision="narrow")
        assert cfg.precision == "narrow"
        for name, t in loaded.named_parameters().items():
            original = w.named_parameters()[name].data
            assert t.data.dtype == np.float32
            np.testing.assert_allclose(t.data, original.astype(np.float32), rtol=0, atol=1e-6)

    def _corrupt(self, tmp_path, edit):
        path = save_checkpoint(tiny(), None, tmp_path / "m.otlm")
        raw = bytearray(path.read_bytes())
        path.write_bytes(bytes(edit(raw)))
        return path

    def test_bad_magic(self, tmp_path):
        def edit(raw):
            raw[:4] = b"OTLX"
            return raw

        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(self._corrupt(tmp_path, edit))

    def test_bad_version(self, tmp_path):
        def edit(raw):
            raw[4:8] = struct.pack("<I", 2)
            return raw

        with pytest.raises(CheckpointError, match="version 2"):
            load_checkpoint(self._corrupt(tmp_path, edit))

    def test_truncated(self, tmp_path):
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(self._corrupt(tmp_path, lambda raw: raw[:-10]))

    def test_trailing_bytes(self, tmp_path):
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(self._corrupt(tmp_path, lambda raw: raw + b"\0"))

    def test_dimension_mismatch(self, tmp_path):
        def edit(raw):
            n = struct.unpack("<I", raw[8:12])[0]
            text = raw[12 : 12 + n].decode().replace("vocab_size=11", "vocab_size=12")
            return raw[:8] + struct.pack("<I", len(text)) + text.encode() + raw[12 + n :]

        with pytest.raises(CheckpointError, match="token_embedding"):
            load_checkpoint(self._corrupt(tmp_path, edit))

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(tiny(), None, tmp_path / "m.otlm")
        assert [p.name for p in tmp_path.iterdir()] == ["m.otlm"]
