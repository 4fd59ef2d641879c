import json
import struct

import numpy as np
import pytest
import torch

from styledrag.diffusion import (ArchSpec, UNet, ModelBundle, TextEncoder,
                                 build_schedule, save_checkpoint, load_checkpoint,
                                 encode_checkpoint)
from styledrag.errors import CorruptionError, NotFoundError, ParameterError


def test_roundtrip_preserves_bits(tmp_path):
    tensors = {
        "a.weight": torch.randn(4, 3),
        "b.bias": torch.randn(7),
        "scalar": torch.tensor(2.5),
    }
    arch = {"kind": "test", "widths": [1, 2]}
    sections = {"note": "hello", "n": 3}
    path = save_checkpoint(tmp_path / "ck.bin", tensors, arch, sections)
    loaded, arch2, sections2 = load_checkpoint(path)
    assert arch2 == arch and sections2 == sections
    for name, t in tensors.items():
        assert torch.equal(loaded[name], t)


def test_header_is_json_and_blobs_are_le_f32(tmp_path):
    tensors = {"w": torch.tensor([[1.0, -2.0]])}
    path = save_checkpoint(tmp_path / "ck.bin", tensors, None, {})
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<Q", raw)
    header = json.loads(raw[8:8 + hlen])
    assert header["format_version"] == 1
    assert header["tensors"] == [{"name": "w", "shape": [1, 2], "dtype": "float32"}]
    blob = np.frombuffer(raw[8 + hlen:], dtype="<f4")
    np.testing.assert_array_equal(blob, [1.0, -2.0])


def test_truncated_file_raises_corruption(tmp_path):
    path = save_checkpoint(tmp_path / "ck.bin", {"w": torch.randn(10)}, None, {})
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CorruptionError):
        load_checkpoint(path)


def test_missing_file_raises_not_found(tmp_path):
    with pytest.raises(NotFoundError):
        load_checkpoint(tmp_path / "nope.bin")


def test_integer_tensors_rejected():
    with pytest.raises(ParameterError):
        encode_checkpoint({"idx": torch.tensor([1, 2, 3])})


def test_model_bundle_roundtrip():
    arch = ArchSpec(image_size=8, base_width=8, channel_mults=(1,), d_ctx=8,
                    time_dim=8, num_heads=1)
    bundle = ModelBundle(unet=UNet(arch, seed=4), text_encoder=TextEncoder(dim=8, seed=4),
                         schedule=build_schedule(10, 1e-3, 0.02))
    restored = ModelBundle.from_bytes(bundle.to_bytes())
    assert restored.arch == arch
    assert restored.schedule.num_steps == 10
    for (n1, p1), (n2, p2) in zip(bundle.unet.state_dict().items(),
                                  restored.unet.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    x = torch.randn(1, 3, 8, 8)
    ctx = bundle.encode_prompt("a red disk")[None].detach()
    assert torch.equal(bundle.unet(x, torch.tensor([3]), ctx),
                       restored.unet(x, torch.tensor([3]), ctx))
