import numpy as np
import pytest

from vitp import checkpoint as ck
from vitp import vit
from vitp.optim import init_optimizer_state
from vitp.streams import make_rng
from vitp.tensor import Tensor


def _params(dtype=np.float32):
    rng = make_rng("ckpt-params")
    return {
        "vit.patch_embed.w": Tensor(rng.standard_normal((12, 8)).astype(dtype), requires_grad=True),
        "vit.ln_f.g": Tensor(np.ones(8, dtype=dtype), requires_grad=True),
        "lm.embed": Tensor(rng.standard_normal((10, 8)).astype(dtype), requires_grad=True),
    }


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_roundtrip_bitwise(tmp_path, dtype):
    params = _params(dtype)
    state = init_optimizer_state(params)
    state.m["lm.embed"][...] = 0.25
    state.step = 7
    path = tmp_path / "ck.bin"
    ck.save_checkpoint(path, params, state, {"next_step": 3, "seed": 1})
    arrays, m, v, opt_step, meta = ck.load_checkpoint(path)
    assert opt_step == 7
    assert meta["next_step"] == "3"
    for name, p in params.items():
        assert np.array_equal(arrays[name], p.data)
        assert arrays[name].dtype == p.data.dtype
    assert np.array_equal(m["lm.embed"], state.m["lm.embed"])


def test_checkpoint_corrupted_magic(tmp_path):
    params = _params()
    path = tmp_path / "ck.bin"
    ck.save_checkpoint(path, params, init_optimizer_state(params), {"next_step": 0})
    blob = path.read_bytes()
    path.write_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_checkpoint(path)


def test_checkpoint_truncated_blob(tmp_path):
    params = _params()
    path = tmp_path / "ck.bin"
    ck.save_checkpoint(path, params, init_optimizer_state(params), {"next_step": 0})
    blob = path.read_bytes()
    path.write_bytes(blob[:-17])
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_checkpoint(path)


def test_export_excludes_lm_parameters(tmp_path):
    cfg = vit.VitConfig(patch_size=8, embed_dim=32, depth=1, heads=4)
    params = vit.init_vit_params(cfg, (16, 16), seed=0)
    params["lm.embed"] = Tensor(np.zeros((50, 32), dtype=np.float32), requires_grad=True)
    full_path = tmp_path / "full.bin"
    bb_path = tmp_path / "bb.bin"
    ck.save_checkpoint(full_path, params, init_optimizer_state(params), {"next_step": 0})
    ck.export_backbone(bb_path, params, cfg, (16, 16))
    loaded, _, _ = ck.load_backbone(bb_path)
    assert all(name.startswith("vit.") for name in loaded)
    assert "lm.embed" not in loaded
    assert bb_path.stat().st_size < full_path.stat().st_size


def test_export_load_encode_bitwise(tmp_path):
    cfg = vit.VitConfig(patch_size=8, embed_dim=32, depth=2, heads=4)
    params = vit.init_vit_params(cfg, (16, 16), seed=5)
    img = make_rng("bb-img").random((16, 16, 3)).astype(np.float32)
    before = vit.encode(img, params, cfg).tokens.data
    path = tmp_path / "bb.bin"
    ck.export_backbone(path, params, cfg, (16, 16))
    loaded, cfg2, hw = ck.load_backbone(path)
    assert cfg2 == cfg and hw == (16, 16)
    after = vit.encode(img, loaded, cfg2).tokens.data
    assert np.array_equal(before, after)


def test_backbone_corrupted_header_no_partial_load(tmp_path):
    cfg = vit.VitConfig(patch_size=8, embed_dim=32, depth=1, heads=4)
    params = vit.init_vit_params(cfg, (16, 16), seed=0)
    path = tmp_path / "bb.bin"
    ck.export_backbone(path, params, cfg, (16, 16))
    blob = path.read_bytes()
    # mangle a tensor manifest line
    path.write_bytes(blob.replace(b"tensor\tvit.pos", b"tensor_vit.pos", 1))
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_backbone(path)
