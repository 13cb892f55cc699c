"""Checkpoint binary format: bit-exact roundtrips and corruption handling."""

import numpy as np
import pytest

from gmix.checkpoint import (
    MAGIC,
    load_checkpoint,
    load_model,
    model_arrays,
    save_checkpoint,
)
from gmix.heads import Backbone, init_head


class TestRoundtrip:
    def test_bit_exact(self, tmp_path, rng):
        arrays = {
            "a": rng.normal(size=(3, 4)),
            "b.weird-name": rng.normal(size=(7,)),
            "scalarish": rng.normal(size=(1,)),
        }
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
            assert loaded[name].dtype == np.float64

    def test_model_roundtrip_preserves_outputs(self, tmp_path, rng):
        backbone = Backbone(6, latent_dim=3, seed=1)
        head = init_head("aagmm", 4, 3, seed=2)
        path = tmp_path / "model.bin"
        save_checkpoint(path, model_arrays(backbone, head))

        fresh_backbone = Backbone(6, latent_dim=3, seed=99)
        fresh_head = init_head("aagmm", 4, 3, seed=98)
        load_model(path, fresh_backbone, fresh_head)
        x = rng.normal(size=(5, 6))
        from gmix.autodiff import Tensor

        a = fresh_head.class_log_scores(fresh_backbone.embed(Tensor(x))).data
        b = head.class_log_scores(backbone.embed(Tensor(x))).data
        np.testing.assert_array_equal(a, b)


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v99.bin"
        path.write_bytes(MAGIC + (99).to_bytes(4, "little") + (0).to_bytes(4, "little"))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "trunc.bin"
        save_checkpoint(path, {"w": rng.normal(size=(4, 4))})
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_name_mismatch(self, tmp_path, rng):
        path = tmp_path / "names.bin"
        save_checkpoint(path, {"stray": rng.normal(size=(2,))})
        backbone = Backbone(4, latent_dim=2, seed=0)
        head = init_head("kmeans", 3, 2, seed=0)
        with pytest.raises(ValueError, match="do not match"):
            load_model(path, backbone, head)

    def test_shape_mismatch(self, tmp_path):
        backbone = Backbone(4, latent_dim=2, seed=0)
        head = init_head("kmeans", 3, 2, seed=0)
        path = tmp_path / "shape.bin"
        arrays = model_arrays(backbone, head)
        arrays["head.centers"] = np.zeros((5, 5))
        save_checkpoint(path, arrays)
        with pytest.raises(ValueError, match="shape mismatch"):
            load_model(path, backbone, head)
