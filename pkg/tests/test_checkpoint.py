import struct

import numpy as np
import pytest

from starformer.checkpoint import (MAGIC, CheckpointError, assign, config_path, load_checkpoint,
                                   read_config, read_tensors, save_checkpoint, write_tensors)
from starformer.star import StarConfig, StarModel
from starformer.tensor import Tensor


def test_round_trip_preserves_names_shapes_and_bits(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b.c": np.array([[np.pi]]), "scalar": np.array(2.5),
              "tiny": np.array([5e-324, -0.0, np.inf])}
    p = tmp_path / "x.ckpt"
    write_tensors(p, arrays)
    back = read_tensors(p)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()


def test_layout_is_the_documented_one(tmp_path):
    p = tmp_path / "x.ckpt"
    write_tensors(p, {"w": np.array([[1.0, 2.0]])})
    raw = p.read_bytes()
    expect = (MAGIC + struct.pack("<I", 1) + struct.pack("<H", 1) + b"w" + struct.pack("<B", 2)
              + struct.pack("<2I", 1, 2) + struct.pack("<2d", 1.0, 2.0))
    assert raw == expect


def test_corrupt_files_are_rejected(tmp_path):
    p = tmp_path / "x.ckpt"
    write_tensors(p, {"w": np.ones((2, 2))})
    raw = p.read_bytes()
    p.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_tensors(p)
    p.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        read_tensors(p)
    p.write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_tensors(p)


def test_config_sidecar(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, {"w": Tensor(np.eye(2))}, {"kind": "star", "hidden": 4, "lr": 0.003})
    assert config_path(p).read_text() == "kind = star\nhidden = 4\nlr = 0.003\n"
    arrays, kv = load_checkpoint(p)
    assert kv == {"kind": "star", "hidden": "4", "lr": "0.003"}
    assert np.array_equal(arrays["w"], np.eye(2))


def test_read_config_comments_and_errors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# header\nhidden = 8  # trailing\n\n  steps=2\n")
    assert read_config(p) == {"hidden": "8", "steps": "2"}
    p.write_text("hidden 8\n")
    with pytest.raises(CheckpointError, match=":1:"):
        read_config(p)


def test_model_restores_exactly(tmp_path):
    c = StarConfig(d_in=3, d_out=2, hidden=4, heads=2, head_dim=2, steps=2, max_len=6)
    a, b = StarModel(c, seed=1), StarModel(c, seed=2)
    X = Tensor(np.random.default_rng(0).normal(size=(5, 3)))
    save_checkpoint(tmp_path / "m.ckpt", a.named_parameters(), {})
    arrays, _ = load_checkpoint(tmp_path / "m.ckpt")
    assign(b.named_parameters(), arrays)
    assert np.array_equal(a(X).data, b(X).data)


def test_assign_checks_names_and_shapes():
    params = {"w": Tensor(np.zeros((2, 2)))}
    with pytest.raises(CheckpointError, match="missing"):
        assign(params, {})
    with pytest.raises(CheckpointError, match="unexpected"):
        assign(params, {"w": np.zeros((2, 2)), "v": np.zeros(1)})
    with pytest.raises(CheckpointError, match="shape"):
        assign(params, {"w": np.zeros((3, 2))})
