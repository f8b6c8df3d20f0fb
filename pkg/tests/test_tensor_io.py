import csv
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from roadeval.errors import FormatError, GridMismatch, UnsupportedDtype
from roadeval.evaluation import EvaluationCurve
from roadeval.tensor_io import (
    Dataset,
    ImageTensor,
    SaliencyMap,
    load_dataset,
    read_array,
    read_curve_csv,
    read_tensor,
    save_dataset,
    write_array,
    write_curve_csv,
    write_tensor,
)


def test_saliency_header_roundtrip(tmp_path):
    arr = np.random.default_rng(0).random((28, 28)).astype(np.float32)
    np.save(tmp_path / "s.npy", arr)
    t = read_tensor(tmp_path / "s.npy")
    assert isinstance(t, SaliencyMap)
    assert (t.height, t.width) == (28, 28)
    np.testing.assert_array_equal(t.scores, arr.astype(np.float64))


def test_zero_image_value_range(tmp_path):
    np.save(tmp_path / "z.npy", np.zeros((32, 32, 3)))
    t = read_tensor(tmp_path / "z.npy")
    assert isinstance(t, ImageTensor)
    assert t.value_range == (0.0, 0.0)
    assert (t.height, t.width, t.channels) == (32, 32, 3)


def test_random_tensor_roundtrip_bitwise(tmp_path):
    data = np.random.default_rng(1).standard_normal((5, 5, 2))
    write_tensor(ImageTensor(data), tmp_path / "t.npy")
    back = read_tensor(tmp_path / "t.npy")
    assert back.data.tobytes() == data.tobytes()


def test_single_value_layout(tmp_path):
    write_tensor(ImageTensor(np.array([[[0.5]]])), tmp_path / "one.npy")
    raw = (tmp_path / "one.npy").read_bytes()
    assert raw[:8] == b"\x93NUMPY\x01\x00"
    header_len = int.from_bytes(raw[8:10], "little")
    assert (10 + header_len) % 64 == 0
    assert len(raw) == 128 + 8
    assert np.frombuffer(raw[128:], "<f8")[0] == 0.5


def test_negative_values_preserved(tmp_path):
    s = SaliencyMap(-np.arange(784, dtype=np.float64).reshape(28, 28) / 7.0)
    write_tensor(s, tmp_path / "neg.npy")
    np.testing.assert_array_equal(read_tensor(tmp_path / "neg.npy").scores, s.scores)


def test_bad_magic(tmp_path):
    (tmp_path / "bad.npy").write_bytes(b"not an npy file at all")
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "bad.npy")


def test_unsupported_dtype(tmp_path):
    np.save(tmp_path / "i.npy", np.zeros((4, 4), dtype=np.int32))
    with pytest.raises(UnsupportedDtype):
        read_tensor(tmp_path / "i.npy")
    np.save(tmp_path / "be.npy", np.zeros((4, 4), dtype=">f8"))
    with pytest.raises(UnsupportedDtype):
        read_tensor(tmp_path / "be.npy")


def test_version_2_rejected(tmp_path):
    with open(tmp_path / "v2.npy", "wb") as fh:
        np.lib.format.write_array(fh, np.zeros((2, 2)), version=(2, 0))
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "v2.npy")


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(dtype=st.sampled_from([np.float32, np.float64]),
                  shape=hnp.array_shapes(min_dims=2, max_dims=3, max_side=6),
                  elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_read_write_identity(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("rt") / "a.npy"
    write_array(arr, path)
    back = read_array(path)
    assert back.dtype == arr.dtype
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_dataset_mean_matches_naive_loop(tmp_path):
    rng = np.random.default_rng(3)
    images = rng.standard_normal((7, 4, 5, 3))
    ds = Dataset(images, rng.integers(0, 3, 7))
    naive = []
    for ch in range(3):
        total, count = 0.0, 0
        for n in range(7):
            for i in range(4):
                for j in range(5):
                    total += images[n, i, j, ch]
                    count += 1
        naive.append(total / count)
    np.testing.assert_allclose(ds.per_channel_mean, naive, rtol=0, atol=1e-12)

    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.images.tobytes() == ds.images.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)


def _curve(name, eta, acc):
    return EvaluationCurve(name, list(eta), list(acc), [0.01] * len(acc))


def test_curve_csv_one_curve(tmp_path):
    write_curve_csv([_curve("ig", [0.0, 0.5], [0.8, 0.6])], tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "eta,ig_mean,ig_stderr"


def test_curve_csv_empty(tmp_path):
    write_curve_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == ["eta"]


def test_curve_csv_parse_back(tmp_path):
    rng = np.random.default_rng(4)
    curves = [_curve(f"m{i}", np.linspace(0, 0.9, 8), rng.random(8)) for i in range(3)]
    write_curve_csv(curves, tmp_path / "c.csv")
    table = read_curve_csv(tmp_path / "c.csv")
    for c in curves:
        np.testing.assert_allclose(table[f"{c.name}_mean"], c.acc_mean, rtol=1e-5, atol=1e-6)
    with open(tmp_path / "c.csv") as fh:
        assert len(next(csv.reader(fh))) == 7


def test_curve_csv_grid_mismatch(tmp_path):
    with pytest.raises(GridMismatch):
        write_curve_csv([_curve("a", [0, 0.5], [1, 1]), _curve("b", [0, 0.4], [1, 1])], tmp_path / "x.csv")
    assert not os.path.exists(tmp_path / "x.csv")
