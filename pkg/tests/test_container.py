import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from firzen.container import read_container, write_container
from firzen.errors import CheckpointError


def test_round_trip_preserves_blocks(tmp_path):
    blocks = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "step": np.array(7),
              "big": np.array([1, 2], dtype=">i4"), "t": np.arange(6.0).reshape(2, 3).T, "e": np.zeros((0, 4))}
    write_container(tmp_path / "c", "ckpt", 1, {"a": [1, 2]}, blocks)
    version, meta, back = read_container(tmp_path / "c", "ckpt")
    assert version == 1 and meta == {"a": [1, 2]}
    for k, v in blocks.items():
        assert back[k].shape == v.shape and np.array_equal(back[k], v)
    assert back["step"].ndim == 0


@given(hnp.arrays(st.sampled_from([np.float64, np.float32, np.int64]), hnp.array_shapes(min_dims=0, max_dims=3)))
def test_arbitrary_arrays_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("c") / "x"
    write_container(path, "graphs", 1, {}, {"a": arr})
    out = read_container(path, "graphs")[2]["a"]
    assert out.dtype == arr.dtype and out.shape == arr.shape
    assert np.array_equal(out, arr, equal_nan=arr.dtype.kind == "f")


def test_identical_inputs_identical_bytes(tmp_path):
    for name in ("a", "b"):
        write_container(tmp_path / name, "ckpt", 1, {"z": 1, "a": 2}, {"x": np.ones(3)})
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_wrong_kind_version_and_truncation(tmp_path):
    write_container(tmp_path / "c", "ckpt", 2, {}, {"x": np.ones(10)})
    with pytest.raises(CheckpointError):
        read_container(tmp_path / "c", "graphs", (2,))
    with pytest.raises(CheckpointError):
        read_container(tmp_path / "c", "ckpt", (1,))
    data = (tmp_path / "c").read_bytes()
    (tmp_path / "t").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        read_container(tmp_path / "t", "ckpt", (2,))
    (tmp_path / "m").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError):
        read_container(tmp_path / "m", "ckpt", (2,))
    (tmp_path / "s").write_bytes(b"FI")
    with pytest.raises(CheckpointError):
        read_container(tmp_path / "s", "ckpt", (2,))


def test_kind_length_limit(tmp_path):
    with pytest.raises(ValueError):
        write_container(tmp_path / "c", "waytoolongkind", 1, {}, {})
