import dataclasses
import struct

import numpy as np
import pytest

import oracle
from dualpath_av import DualPathAVModel, ModelConfig
from dualpath_av.model import MAGIC, CheckpointError, load_checkpoint

TINY = ModelConfig(N=2, N_intra=1, N_inter=1, K=4, D_a=8, D_v=6, h=2, D_k=4, D_f=16, attn_half_width=2)


def _inputs(length=120, cfg=TINY, seed=0, rows=None):
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal(length)
    n_frames = (length - cfg.W) // cfg.stride + 1
    s = -(-n_frames // (cfg.K // 2))
    return mix, rng.standard_normal((rows or s, cfg.D_v))


def test_output_length_and_mask_range():
    model = DualPathAVModel(TINY, seed=0)
    mix, vis = _inputs(16 + 8 * 20)
    est, mask = model.forward(mix, vis)
    assert est.shape == (len(mix),)
    assert mask.shape == (21, TINY.D_a)
    assert ((mask.data > 0) & (mask.data < 1)).all()


def test_zero_decoder_gives_silence():
    model = DualPathAVModel(TINY, seed=1)
    model.params["decoder.weight"].data[:] = 0
    mix, vis = _inputs()
    assert not model.extract(mix, vis).any()


@pytest.mark.parametrize("cfg", [
    TINY,
    dataclasses.replace(TINY, attn_half_width=-1, N=1),
    dataclasses.replace(TINY, collapse="full"),
])
def test_forward_matches_loop_oracle(cfg):
    model = DualPathAVModel(cfg, seed=2, dtype=np.float64)
    mix, vis = _inputs(100, cfg, seed=3)
    est, mask = model.forward(mix, vis)
    p = {k: v.data for k, v in model.params.items()}
    ref_est, ref_mask = oracle.forward(p, cfg, mix, vis)
    np.testing.assert_allclose(mask.data, ref_mask, atol=1e-9)
    np.testing.assert_allclose(est.data, ref_est, atol=1e-9)


def test_visual_rows_off_by_one_are_aligned():
    model = DualPathAVModel(TINY, seed=4, dtype=np.float64)
    mix, vis = _inputs(100, seed=5)
    short = vis[:-1]
    padded = np.concatenate([short, short[-1:]])
    np.testing.assert_array_equal(model.extract(mix, short), model.extract(mix, padded))


def test_visual_dim_mismatch_names_field():
    model = DualPathAVModel(TINY)
    mix, vis = _inputs()
    with pytest.raises(ValueError, match="D_v"):
        model.forward(mix, vis[:, :5])


def test_parameter_count_and_dtype():
    model = DualPathAVModel(TINY)
    assert all(p.dtype == np.float32 for p in model.parameters())
    assert model.n_parameters() == sum(p.data.size for p in model.parameters())
    assert "dp.1.inter.0.q_av.weight" in model.params


def test_seeded_init_is_deterministic():
    a, b = DualPathAVModel(TINY, seed=7), DualPathAVModel(TINY, seed=7)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    c = DualPathAVModel(TINY, seed=8)
    assert not np.array_equal(a.params["encoder.weight"].data, c.params["encoder.weight"].data)


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_identical(tmp_path):
    model = DualPathAVModel(TINY, seed=9)
    path = tmp_path / "m.avck"
    model.save(path)
    loaded = DualPathAVModel.load(path, expected_config=TINY)
    assert loaded.config == TINY
    for k, p in model.params.items():
        assert loaded.params[k].data.tobytes() == p.data.tobytes()
    mix, vis = _inputs()
    assert model.extract(mix, vis).tobytes() == loaded.extract(mix, vis).tobytes()


def test_checkpoint_layout(tmp_path):
    model = DualPathAVModel(TINY, seed=0)
    path = tmp_path / "m.avck"
    model.save(path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, blob_len = struct.unpack("<II", raw[4:12])
    assert version == 1
    pos = 12 + blob_len
    (name_len,) = struct.unpack("<H", raw[pos:pos + 2])
    assert raw[pos + 2: pos + 2 + name_len] == b"encoder.weight"
    floats = sum(p.data.size for p in model.parameters())
    headers = sum(2 + len(k.encode()) + 1 + 4 * p.ndim for k, p in model.params.items())
    assert len(raw) == 12 + blob_len + headers + 4 * floats


def test_truncated_checkpoint_errors(tmp_path):
    path = tmp_path / "m.avck"
    DualPathAVModel(TINY).save(path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "m.avck"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError, match="magic"):
        DualPathAVModel.load(path)


def test_config_mismatch_names_field(tmp_path):
    path = tmp_path / "m.avck"
    DualPathAVModel(TINY).save(path)
    with pytest.raises(CheckpointError, match="K"):
        DualPathAVModel.load(path, expected_config=dataclasses.replace(TINY, K=6))
