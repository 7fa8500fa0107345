import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewseg.container import MAGIC, ContainerError, read_tensors, write_tensors


def roundtrip(tmp_path, tensors):
    path = tmp_path / "t.vatc"
    write_tensors(path, tensors)
    return read_tensors(path)


def test_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "weights": rng.standard_normal((3, 4, 5)).astype(np.float32),
        "trace": rng.standard_normal(17).astype(np.float64),
        "bytes": rng.integers(0, 256, (2, 2)).astype(np.uint8),
        "scalar": np.float64(3.5).reshape(()),
        "empty": np.zeros((0, 3), dtype=np.float32),
    }
    back = roundtrip(tmp_path, tensors)
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].dtype == tensors[name].dtype
        assert back[name].shape == tensors[name].shape
        assert np.array_equal(back[name], tensors[name])


def test_magic_bytes(tmp_path):
    path = tmp_path / "t.vatc"
    write_tensors(path, {"x": np.zeros(1, dtype=np.float32)})
    assert path.read_bytes()[:4] == MAGIC == b"VAT1"


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "t.vatc"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ContainerError):
        read_tensors(path)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(ContainerError):
        write_tensors(tmp_path / "t.vatc", {"x": np.zeros(1, dtype=np.int32)})


def test_rejects_truncation(tmp_path):
    path = tmp_path / "t.vatc"
    write_tensors(path, {"x": np.arange(8, dtype=np.float32)})
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ContainerError):
        read_tensors(path)


def test_nan_and_inf_preserved(tmp_path):
    arr = np.array([np.nan, np.inf, -np.inf, -0.0], dtype=np.float64)
    back = roundtrip(tmp_path, {"x": arr})["x"]
    assert back.tobytes() == arr.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(
    st.tuples(
        st.text(min_size=1, max_size=8),
        st.sampled_from(["f32", "f64", "u8"]),
        st.lists(st.integers(0, 4), min_size=0, max_size=3),
    ),
    min_size=1, max_size=5,
    unique_by=lambda e: e[0],
))
def test_roundtrip_property(tmp_path_factory, entries):
    rng = np.random.default_rng(1)
    tensors = {}
    for name, tag, dims in entries:
        if tag == "f32":
            tensors[name] = rng.standard_normal(dims).astype(np.float32)
        elif tag == "f64":
            tensors[name] = rng.standard_normal(dims).astype(np.float64)
        else:
            tensors[name] = rng.integers(0, 256, dims).astype(np.uint8)
    path = tmp_path_factory.mktemp("c") / "t.vatc"
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].dtype == tensors[name].dtype
        assert np.array_equal(back[name], tensors[name])
