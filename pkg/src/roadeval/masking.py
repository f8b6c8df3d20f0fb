"""Saliency ranking, top-k masks, and the selection / scatter operators.

A mask is a boolean ``H x W`` array whose True entries mark the top-k pixels
of a ranking. ``part="low"`` refers to the pixels outside the mask (the less
important ones), ``part="high"`` to the pixels inside it. Pixels are always
handled whole, across all channels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidK, InvalidSaliency, LengthMismatch, ShapeMismatch


class RemovalOrder(str, enum.Enum):
    MORF = "morf"  # most relevant first
    LERF = "lerf"  # least relevant first

    @classmethod
    def parse(cls, value) -> "RemovalOrder":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown removal order {value!r}; use 'morf' or 'lerf'") from None


PARTS = ("low", "high")


@dataclass
class FeatureVector:
    """Values of the selected pixels, ``len(source_indices) x C``, in ascending pixel order."""

    values: np.ndarray
    source_indices: np.ndarray

    def __len__(self):
        return self.values.size


def _check_part(part):
    if part not in PARTS:
        raise ValueError(f"part must be 'low' or 'high', got {part!r}")


def rank_pixels(scores) -> np.ndarray:
    """Flat pixel indices sorted by descending score.

    Ties go to the lower flat index, so the ordering is fully deterministic.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 3:
        s = s.sum(axis=2)
    s = s.ravel()
    if np.isnan(s).any():
        raise InvalidSaliency("saliency contains NaN")
    if not np.isfinite(s).all():
        raise InvalidSaliency("saliency contains infinite values")
    # stable sort keeps ascending index order within ties
    return np.argsort(-s, kind="stable")


def count_for_fraction(eta: float, n_pixels: int) -> int:
    """Pixel count for fraction `eta`, rounding halves up."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidK(f"fraction {eta} outside [0, 1]")
    return int(np.floor(eta * n_pixels + 0.5))


def topk_mask(perm, k: int, shape=None) -> np.ndarray:
    perm = np.asarray(perm)
    d = perm.size
    if not 0 <= k <= d:
        raise InvalidK(f"k={k} outside [0, {d}]")
    bits = np.zeros(d, dtype=bool)
    bits[perm[:k]] = True
    return bits.reshape(shape) if shape is not None else bits


def removed_set(mask: np.ndarray, part: str) -> np.ndarray:
    """Pixels that get imputed when `part` is the one kept."""
    _check_part(part)
    mask = np.asarray(mask, dtype=bool)
    return mask.copy() if part == "low" else ~mask


def removal_mask(scores, eta: float, order) -> np.ndarray:
    """Boolean ``H x W`` set of pixels removed at fraction `eta`.

    MoRF removes the top ``round(eta*d)`` pixels. LeRF removes the bottom
    ``round(eta*d)`` pixels, i.e. it keeps the top ``d - round(eta*d)``.
    """
    order = RemovalOrder.parse(order)
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 3:
        s = s.sum(axis=2)
    d = s.size
    k = count_for_fraction(eta, d)
    perm = rank_pixels(s)
    if order is RemovalOrder.MORF:
        return topk_mask(perm, k, s.shape)
    return ~topk_mask(perm, d - k, s.shape)


def _as_image(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    return x


def select(mask, x, part: str) -> FeatureVector:
    _check_part(part)
    mask = np.asarray(mask, dtype=bool)
    img = _as_image(x)
    if mask.shape != img.shape[:2]:
        raise ShapeMismatch(f"mask {mask.shape} vs image {img.shape[:2]}")
    flat = mask.ravel()
    wanted = ~flat if part == "low" else flat
    idx = np.flatnonzero(wanted)
    values = img.reshape(-1, img.shape[2])[idx]
    return FeatureVector(values=values.copy(), source_indices=idx)


def scatter(mask, v: FeatureVector, part: str, channels: int | None = None):
    """Put `v` back at its pixel positions.

    Returns ``(image, unknown)`` where `image` holds v's values at the known
    pixels and zeros elsewhere, and `unknown` is the boolean set of pixels
    left for an imputation operator to fill.
    """
    _check_part(part)
    mask = np.asarray(mask, dtype=bool)
    known = ~mask if part == "low" else mask
    idx = np.flatnonzero(known.ravel())
    values = np.asarray(v.values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(-1, channels or 1)
    if values.shape[0] != len(idx):
        raise LengthMismatch(f"vector holds {values.shape[0]} pixels, mask expects {len(idx)}")
    c = values.shape[1]
    out = np.zeros((mask.size, c))
    out[idx] = values
    return out.reshape(mask.shape + (c,)), ~known


def rank_positions(scores) -> np.ndarray:
    """Rank of every pixel (0 = most important) for a stack of ``N x H x W`` maps.

    Row i is the inverse of ``rank_pixels(scores[i])``, flattened.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 4:
        s = s.sum(axis=3)
    s = s.reshape(len(s), -1)
    if not np.isfinite(s).all():
        raise InvalidSaliency("saliency contains NaN or infinite values")
    perm = np.argsort(-s, axis=1, kind="stable")
    pos = np.empty_like(perm)
    rows = np.arange(len(s))[:, None]
    pos[rows, perm] = np.arange(s.shape[1])[None, :]
    return pos


def removal_masks(positions: np.ndarray, eta: float, order, shape) -> np.ndarray:
    """Removal sets for every row of `positions` (see `rank_positions`)."""
    order = RemovalOrder.parse(order)
    d = positions.shape[1]
    k = count_for_fraction(eta, d)
    gone = positions < k if order is RemovalOrder.MORF else positions >= d - k
    return gone.reshape((len(positions),) + tuple(shape))
