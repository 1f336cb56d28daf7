"""Compressor network: initialization law, forward invariants, checkpoints."""

import struct
import zlib

import numpy as np
import pytest

from annpress.autodiff import Tape
from annpress.model import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    CompressorNet,
    ModelConfig,
    count_params,
    forward,
    init_params,
    load_checkpoint,
    project_tokens,
    sparse_projection,
    wrap_params,
)

SMALL = ModelConfig(d_in=24, d_out=8, n_projections=4, stages=2,
                    encoders_per_stage=(1, 1), heads=2, seed=5)


def test_config_validation():
    with pytest.raises(ValueError, match="positive"):
        ModelConfig(d_in=0, d_out=8)
    with pytest.raises(ValueError, match="heads"):
        ModelConfig(d_in=8, d_out=8, heads=3)
    with pytest.raises(ValueError, match="encoders_per_stage"):
        ModelConfig(d_in=8, d_out=8, stages=2, encoders_per_stage=(1,))
    with pytest.raises(ValueError, match="qk_dim"):
        ModelConfig(d_in=8, d_out=8, heads=2, qk_dim=9)


def test_projection_entries_take_three_values():
    w = sparse_projection(256, 64, np.random.default_rng(0))
    magnitude = np.sqrt(16 / 64)
    values = np.unique(w)
    assert set(np.round(values, 6)) <= {-np.float32(magnitude), 0.0, np.float32(magnitude)}
    zero_fraction = (w == 0).mean()
    assert zero_fraction == pytest.approx(15 / 16, abs=0.02)


def test_init_is_deterministic_in_seed():
    p1, s1 = init_params(SMALL)
    p2, s2 = init_params(SMALL)
    assert p1.keys() == p2.keys()
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])
    for k in s1:
        np.testing.assert_array_equal(s1[k], s2[k])
    p3, _ = init_params(ModelConfig(**{**SMALL.to_dict(), "seed": 6}))
    assert any(not np.array_equal(p1[k], p3[k]) for k in p1)


def test_project_tokens_identity_bank():
    config = ModelConfig(d_in=6, d_out=6, n_projections=1, heads=2)
    params, _ = init_params(config)
    params["proj.0"] = np.eye(6, dtype=np.float32)
    x = np.random.default_rng(0).normal(size=(5, 6)).astype(np.float32)
    tokens = project_tokens(params, config, x)
    assert tokens.shape == (5, 1, 6)
    np.testing.assert_allclose(tokens[:, 0], x, atol=1e-7)


def test_forward_shape_and_determinism():
    params, stats = init_params(SMALL)
    x = np.random.default_rng(1).normal(size=(7, SMALL.d_in)).astype(np.float32)
    outs = []
    for _ in range(2):
        tape = Tape(np.float32)
        out = forward(tape, SMALL, wrap_params(tape, params), stats, x, mode="infer")
        assert out.data.shape == (7, SMALL.d_out)
        assert np.all(np.isfinite(out.data))
        outs.append(out.data)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_forward_rejects_bad_inputs():
    params, stats = init_params(SMALL)
    tape = Tape(np.float32)
    wrapped = wrap_params(tape, params)
    with pytest.raises(ValueError, match="expected"):
        forward(tape, SMALL, wrapped, stats, np.ones((3, SMALL.d_in + 1), dtype=np.float32))
    with pytest.raises(ValueError, match="at least 2"):
        forward(tape, SMALL, wrapped, stats, np.ones((1, SMALL.d_in), dtype=np.float32), mode="train")


def test_projection_token_order_carries_no_information():
    params, stats = init_params(SMALL)
    x = np.random.default_rng(2).normal(size=(6, SMALL.d_in))
    tape = Tape(np.float64)
    base = forward(tape, SMALL, wrap_params(tape, params), stats, x).data

    perm = [2, 0, 3, 1]
    shuffled = dict(params)
    for new_i, old_i in enumerate(perm):
        shuffled[f"proj.{new_i}"] = params[f"proj.{old_i}"]
    tape = Tape(np.float64)
    again = forward(tape, SMALL, wrap_params(tape, shuffled), stats, x).data
    np.testing.assert_allclose(again, base, atol=1e-10)


def test_count_params_matches_actual_arrays():
    for config in (SMALL, ModelConfig(d_in=32, d_out=12, n_projections=2, heads=3)):
        params, _ = init_params(config)
        counts = count_params(config)
        assert counts["total"] == sum(v.size for v in params.values())


def test_compress_is_independent_of_batch_size():
    model = CompressorNet(SMALL)
    x = np.random.default_rng(3).normal(size=(30, SMALL.d_in)).astype(np.float32)
    np.testing.assert_array_equal(model.compress(x, batch_size=7), model.compress(x, batch_size=30))


def test_compress_empty_input():
    model = CompressorNet(SMALL)
    out = model.compress(np.zeros((0, SMALL.d_in), dtype=np.float32))
    assert out.shape == (0, SMALL.d_out)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = CompressorNet(SMALL)
    path = tmp_path / "model.ckpt"
    model.save(str(path))
    back = CompressorNet.load(str(path))
    assert back.config == model.config
    assert back.params.keys() == model.params.keys()
    for k in model.params:
        np.testing.assert_array_equal(back.params[k], model.params[k])
    for k in model.stats:
        np.testing.assert_array_equal(back.stats[k], model.stats[k])
    x = np.random.default_rng(4).normal(size=(5, SMALL.d_in)).astype(np.float32)
    np.testing.assert_array_equal(back.compress(x), model.compress(x))


def test_checkpoint_rejects_corruption(tmp_path):
    model = CompressorNet(SMALL)
    path = tmp_path / "model.ckpt"
    model.save(str(path))
    blob = bytearray(path.read_bytes())

    flipped = tmp_path / "flipped.ckpt"
    corrupt = bytearray(blob)
    corrupt[len(corrupt) // 2] ^= 0xFF
    flipped.write_bytes(corrupt)
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(str(flipped))

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(blob[:-9])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(truncated))

    wrong_magic = tmp_path / "magic.ckpt"
    wrong_magic.write_bytes(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(str(wrong_magic))


def test_checkpoint_rejects_unknown_version(tmp_path):
    model = CompressorNet(SMALL)
    path = tmp_path / "model.ckpt"
    model.save(str(path))
    blob = bytearray(path.read_bytes())[:-4]
    blob[4:8] = struct.pack("<I", 99)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    assert bytes(blob[:4]) == CHECKPOINT_MAGIC
    bad = tmp_path / "v99.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(str(bad))


def test_checkpoint_reports_input_dim_mismatch(tmp_path):
    model = CompressorNet(SMALL)
    path = tmp_path / "model.ckpt"
    model.save(str(path))
    with pytest.raises(CheckpointError, match="dim"):
        load_checkpoint(str(path), expect_d_in=SMALL.d_in + 1)
