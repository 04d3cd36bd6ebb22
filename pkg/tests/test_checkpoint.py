import json
import struct

import numpy as np
import pytest
import torch

from timeweaver import checkpoint
from timeweaver.data import SyntheticConfig, fit_norm, generate_synthetic
from timeweaver.denoiser import ModelConfig, TimeWeaver
from timeweaver.diffusion import linear_schedule
from timeweaver.extractors import DualExtractor, ExtractorConfig
from timeweaver.training import generate, load_extractor, load_model, save_extractor, save_model


def _tiny_model(seed=0):
    torch.manual_seed(seed)
    return TimeWeaver(ModelConfig(d_meta=16, heads=2, residual_layers=1, ff_dim=16, encoder_heads=2,
                                  encoder_layers=1, T=5))


def test_container_round_trip(tmp_path):
    tensors = {
        "a.w": torch.randn(3, 4),
        "a.b": torch.arange(5, dtype=torch.int64),
        "b.scalar": torch.tensor(2.5, dtype=torch.float64),
        "b.empty": torch.zeros(0, 3),
    }
    checkpoint.save(tmp_path / "c.ckpt", {"kind": "test"}, tensors)
    manifest, back = checkpoint.load(tmp_path / "c.ckpt")
    assert manifest["sections"] == {"a": 2, "b": 2} and manifest["format_version"] == checkpoint.FORMAT_VERSION
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype and torch.equal(back[k], tensors[k])


def test_container_header_layout(tmp_path):
    checkpoint.save(tmp_path / "c.ckpt", {"kind": "test"}, {"x.y": torch.ones(2, dtype=torch.float32)})
    data = (tmp_path / "c.ckpt").read_bytes()
    assert data[:4] == b"TWCK"
    version, mlen = struct.unpack_from("<HI", data, 4)
    assert version == 1 and json.loads(data[10 : 10 + mlen])["kind"] == "test"
    # 4-byte count, 2+3 name, dtype+ndim, 1 shape word, 8 bytes of data
    assert len(data) == 10 + mlen + 4 + 2 + 3 + 2 + 4 + 8
    assert data[-8:] == np.ones(2, dtype="<f4").tobytes()


@pytest.mark.parametrize("damage", ["magic", "version", "truncate", "trailing"])
def test_container_rejects_damage(tmp_path, damage):
    path = tmp_path / "c.ckpt"
    checkpoint.save(path, {"kind": "test"}, {"x.y": torch.ones(4)})
    data = bytearray(path.read_bytes())
    if damage == "magic":
        data[:4] = b"NOPE"
    elif damage == "version":
        data[4:6] = struct.pack("<H", 99)
    elif damage == "truncate":
        data = data[:-3]
    else:
        data += b"\0"
    path.write_bytes(bytes(data))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(path)


def test_model_round_trip_reproduces_samples(tmp_path):
    ds = generate_synthetic(SyntheticConfig(n_samples=4, horizon=16, seed=0))
    model, sched = _tiny_model(), linear_schedule(1e-4, 0.1, 5)
    with torch.no_grad():
        model.denoiser.output_projection2.weight.normal_(0, 0.1)
    norm = fit_norm(ds)
    save_model(tmp_path / "m.ckpt", model, sched, norm, seed=3)
    back, sched2, norm2, manifest = load_model(tmp_path / "m.ckpt")
    assert manifest["param_count"] == model.config.param_count()
    np.testing.assert_array_equal(sched2.betas, sched.betas)
    assert norm2.to_dict() == norm.to_dict()
    a = generate(model.eval(), ds, sched, seed=1)
    b = generate(back, ds, sched2, seed=1)
    np.testing.assert_array_equal(a, b)


def test_extractor_round_trip(tmp_path):
    torch.manual_seed(0)
    ext = DualExtractor(ExtractorConfig(patch_len=16, d_emb=6, d_model=16, heads=2, layers=2)).eval()
    save_extractor(tmp_path / "e.ckpt", ext, None, seed=0)
    back, norm, _ = load_extractor(tmp_path / "e.ckpt")
    assert norm is None
    x = np.random.default_rng(0).standard_normal((3, 16, 1)).astype(np.float32)
    with torch.no_grad():
        assert torch.equal(ext.embed_time(x), back.embed_time(x))


def test_kind_and_shape_mismatch(tmp_path):
    torch.manual_seed(0)
    ext = DualExtractor(ExtractorConfig(patch_len=16, d_emb=6, d_model=16, heads=2, layers=2))
    save_extractor(tmp_path / "e.ckpt", ext, None, seed=0)
    with pytest.raises(checkpoint.CheckpointError, match="expected a 'diffusion'"):
        load_model(tmp_path / "e.ckpt")
    manifest, tensors = checkpoint.load(tmp_path / "e.ckpt")
    manifest["extractor"]["d_emb"] = 7
    checkpoint.save(tmp_path / "bad.ckpt", manifest, tensors)
    with pytest.raises(checkpoint.CheckpointError, match="do not fit"):
        load_extractor(tmp_path / "bad.ckpt")
