"""Reading and writing of tensors, datasets and result tables.

Arrays are stored as NPY version 1.0 files. Data is always handed out as
float64 regardless of the on-disk dtype; writing preserves the dtype of the
array passed in so that ``read(write(x))`` is bit-exact.

Dataset directory layout::

    images.npy              N x H x W x C
    labels.npy              N
    saliency_<method>.npy   N x H x W   (optional, one per method)
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib import format as npy_format

from .errors import FormatError, GridMismatch, IoError, ShapeMismatch, UnsupportedDtype

FLOAT_DTYPES = (np.dtype("<f4"), np.dtype("<f8"))
LABEL_DTYPES = (np.dtype("<i4"), np.dtype("<i8"), np.dtype("u1"), np.dtype("<u2"),
                np.dtype("<u4"), np.dtype("<u8"), np.dtype("i1"), np.dtype("<i2"))


@dataclass
class ImageTensor:
    """An ``H x W x C`` image held as float64."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeMismatch(f"ImageTensor needs 3 dims, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FormatError("ImageTensor contains non-finite values")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def value_range(self) -> tuple[float, float]:
        if self.data.size == 0:
            return (0.0, 0.0)
        return (float(self.data.min()), float(self.data.max()))


@dataclass
class SaliencyMap:
    """Per-pixel importance scores, shape ``H x W``."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim == 3:
            # per-channel attributions: whole pixels are removed, so sum channels
            scores = scores.sum(axis=2)
        if scores.ndim != 2:
            raise ShapeMismatch(f"SaliencyMap needs 2 dims, got shape {scores.shape}")
        self.scores = scores

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass
class Dataset:
    images: np.ndarray  # N x H x W x C, float64
    labels: np.ndarray  # N, int64
    num_classes: int = 0
    per_channel_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4:
            raise ShapeMismatch(f"images must be N x H x W x C, got {images.shape}")
        labels = np.asarray(self.labels).astype(np.int64).ravel()
        if len(labels) != len(images):
            raise ShapeMismatch(f"{len(images)} images but {len(labels)} labels")
        if labels.size and labels.min() < 0:
            raise FormatError("labels must be non-negative class indices")
        self.images = images
        self.labels = labels
        if not self.num_classes:
            self.num_classes = int(labels.max()) + 1 if labels.size else 0
        if self.per_channel_mean is None:
            self.per_channel_mean = images.mean(axis=(0, 1, 2)) if len(images) else np.zeros(images.shape[-1])
        self.per_channel_mean = np.asarray(self.per_channel_mean, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def value_range(self) -> tuple[float, float]:
        return (float(self.images.min()), float(self.images.max()))

    def subset(self, idx) -> "Dataset":
        # keeps the full-set channel mean on purpose
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.per_channel_mean)


# --------------------------------------------------------------------------
# raw NPY access


def read_array(path, allowed=FLOAT_DTYPES) -> np.ndarray:
    """Read an NPY v1.0 file, validating magic, version and dtype.

    The array is returned with its on-disk dtype (native byte order).
    """
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    with fh:
        try:
            version = npy_format.read_magic(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: bad NPY magic ({exc})") from exc
        if version != (1, 0):
            raise FormatError(f"{path}: NPY version {version} unsupported, need 1.0")
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed NPY header ({exc})") from exc
        if dtype.byteorder == ">" or dtype not in allowed:
            raise UnsupportedDtype(f"{path}: dtype {dtype.str} not supported")
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated payload")
    arr = np.frombuffer(payload, dtype=dtype)
    if fortran_order:
        arr = arr.reshape(shape[::-1]).transpose()
    else:
        arr = arr.reshape(shape)
    return arr.copy()


def write_array(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            npy_format.write_array(fh, np.ascontiguousarray(arr), version=(1, 0), allow_pickle=False)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_tensor(path) -> ImageTensor | SaliencyMap:
    """Load a 2-D array as a SaliencyMap and a 3-D array as an ImageTensor."""
    arr = read_array(path)
    if arr.ndim == 2:
        return SaliencyMap(arr)
    if arr.ndim == 3:
        return ImageTensor(arr)
    raise FormatError(f"{path}: expected 2-D or 3-D array, got shape {arr.shape}")


def write_tensor(t: ImageTensor | SaliencyMap | np.ndarray, path, dtype=None) -> None:
    if isinstance(t, ImageTensor):
        arr = t.data
    elif isinstance(t, SaliencyMap):
        arr = t.scores
    else:
        arr = np.asarray(t)
    if dtype is not None:
        arr = arr.astype(dtype)
    if arr.dtype not in FLOAT_DTYPES:
        raise UnsupportedDtype(f"cannot write tensor of dtype {arr.dtype}")
    write_array(arr, path)


# --------------------------------------------------------------------------
# datasets


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    images = read_array(directory / "images.npy")
    labels = read_array(directory / "labels.npy", allowed=LABEL_DTYPES + FLOAT_DTYPES)
    if labels.dtype.kind == "f":
        if not np.all(labels == np.round(labels)):
            raise FormatError("labels.npy holds non-integer values")
    return Dataset(images, labels)


def save_dataset(ds: Dataset, directory, dtype=np.float64) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_array(ds.images.astype(dtype), directory / "images.npy")
    write_array(ds.labels.astype(np.int64), directory / "labels.npy")
    return [directory / "images.npy", directory / "labels.npy"]


def load_saliency(directory, method: str) -> np.ndarray:
    """Return the saliency stored for `method`.

    Either an ``N x H x W`` stack (one map per image) or a single ``H x W``
    map shared by every image. Per-channel maps are summed over channels.
    """
    arr = read_array(Path(directory) / f"saliency_{method}.npy").astype(np.float64)
    if arr.ndim == 4:
        arr = arr.sum(axis=3)
    if arr.ndim not in (2, 3):
        raise FormatError(f"saliency_{method}.npy must be H x W or N x H x W, got {arr.shape}")
    return arr


def list_saliency_methods(directory) -> list[str]:
    return sorted(p.name[len("saliency_"):-4] for p in Path(directory).glob("saliency_*.npy"))


# --------------------------------------------------------------------------
# curve tables


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_curve_csv(curves: Sequence, path) -> None:
    """Write curves side by side: ``eta,<name>_mean,<name>_stderr,...``.

    All curves must share one eta grid.
    """
    curves = list(curves)
    if curves:
        eta = np.asarray(curves[0].eta, dtype=np.float64)
        for c in curves[1:]:
            other = np.asarray(c.eta, dtype=np.float64)
            if other.shape != eta.shape or not np.array_equal(other, eta):
                raise GridMismatch(f"curve {c.name!r} uses a different eta grid")
    else:
        eta = np.zeros(0)
    header = ["eta"]
    for c in curves:
        header += [f"{c.name}_mean", f"{c.name}_stderr"]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, e in enumerate(eta):
                row = [_fmt(e)]
                for c in curves:
                    row += [_fmt(c.acc_mean[i]), _fmt(c.acc_stderr[i])]
                writer.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_curve_csv(path) -> dict[str, np.ndarray]:
    """Parse a curve CSV back into ``{column: values}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def write_rows_csv(header: Iterable[str], rows: Iterable[Sequence], path) -> None:
    """Plain table writer used for timing and gamma tables."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(header))
            for r in rows:
                writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def file_readable(path) -> bool:
    return os.path.isfile(path) and os.access(path, os.R_OK)
