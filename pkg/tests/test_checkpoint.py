import struct

import numpy as np
import pytest

from cpn import autodiff as ad
from cpn.checkpoint import CheckpointError, load_params, save_params


def test_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"conv.w": ad.Tensor(rng.normal(size=(4, 3, 3, 3))), "bias": rng.normal(size=4), "scalar": np.array(2.5)}
    save_params(tmp_path / "a.cpnw", params)
    back = load_params(tmp_path / "a.cpnw")
    assert list(back) == list(params)
    for k, v in params.items():
        arr = getattr(v, "data", v)
        assert back[k].shape == arr.shape
        assert back[k].tobytes() == np.asarray(arr, dtype=np.float64).tobytes()


def test_layout_is_little_endian(tmp_path):
    save_params(tmp_path / "b.cpnw", {"w": np.array([1.0, -2.0])})
    raw = (tmp_path / "b.cpnw").read_bytes()
    expect = b"CPNW" + struct.pack("<I", 1) + struct.pack("<I", 1) + b"w" + struct.pack("<II", 1, 2)
    expect += struct.pack("<2d", 1.0, -2.0)
    assert raw == expect


def test_bad_magic_and_truncation(tmp_path):
    (tmp_path / "c").write_bytes(b"NOPE")
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "c")
    save_params(tmp_path / "d", {"w": np.ones((3, 3))})
    raw = (tmp_path / "d").read_bytes()
    for cut in (6, 10, 13, 20, len(raw) - 1):
        (tmp_path / "e").write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="truncated"):
            load_params(tmp_path / "e")


def test_unknown_version(tmp_path):
    (tmp_path / "f").write_bytes(b"CPNW" + struct.pack("<I", 99))
    with pytest.raises(CheckpointError, match="version"):
        load_params(tmp_path / "f")
