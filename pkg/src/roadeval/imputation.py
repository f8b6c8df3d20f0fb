"""Filling removed pixels: fixed-value and noisy linear imputation.

Noisy linear imputation treats every removed pixel as the weighted mean of
its 8 neighbours (1/6 for direct, 1/12 for diagonal neighbours). Known
neighbours move to the right-hand side, giving one sparse symmetric system
per channel::

    (sum of existing neighbour weights) * x_i - sum_j w_ij x_j = sum_k w_ik x_k

with j over unknown and k over known neighbours. At the image border only
existing neighbours contribute, so a corner pixel with all three neighbours
known reads ``5/12 x00 = 1/6 x10 + 1/6 x01 + 1/12 x11``. The system is solved
with conjugate gradient and Gaussian noise is added to the solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
import scipy.sparse

from .errors import InputError, ShapeMismatch, SolverDiverged
from .masking import removed_set

log = logging.getLogger(__name__)

W_DIRECT = 1.0 / 6.0
W_DIAGONAL = 1.0 / 12.0

# (di, dj, weight) for the 8-neighbourhood
NEIGHBOURS = (
    (-1, 0, W_DIRECT), (1, 0, W_DIRECT), (0, -1, W_DIRECT), (0, 1, W_DIRECT),
    (-1, -1, W_DIAGONAL), (-1, 1, W_DIAGONAL), (1, -1, W_DIAGONAL), (1, 1, W_DIAGONAL),
)

STRATEGIES = ("fixed", "noisy_linear")


@dataclass
class ImputationConfig:
    """How removed pixels are filled.

    ``fill_value`` is used by the fixed strategy (None means the dataset's
    per-channel mean) and as the fallback for unknown regions that touch no
    known pixel. Noise has standard deviation ``noise_sigma`` if given,
    otherwise ``noise_fraction`` times the value range.
    """

    strategy: str = "noisy_linear"
    fill_value: object = None
    noise_fraction: float = 0.01
    noise_sigma: float | None = None
    solver_tol: float = 1e-8
    solver_max_iters: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        self.strategy = self.strategy.replace("-", "_").lower()
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown imputation strategy {self.strategy!r}")
        if self.solver_tol <= 0:
            raise InputError("solver_tol must be positive")
        if self.noise_fraction < 0 or (self.noise_sigma is not None and self.noise_sigma < 0):
            raise InputError("noise scale must be non-negative")

    def noise_scale(self, value_range) -> float:
        if self.noise_sigma is not None:
            return float(self.noise_sigma)
        lo, hi = value_range
        return self.noise_fraction * (hi - lo)

    @property
    def name(self) -> str:
        return "fixed" if self.strategy == "fixed" else "linear"


@dataclass
class SparseSystem:
    n_unknowns: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    rhs: np.ndarray
    unknown_index_map: np.ndarray = field(repr=False)  # flat pixel -> row, -1 if known

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def matrix(self) -> scipy.sparse.csr_matrix:
        n = self.n_unknowns
        return scipy.sparse.csr_matrix((self.values, (self.rows, self.cols)), shape=(n, n))

    def residual(self, x) -> np.ndarray:
        return self.matrix() @ x - self.rhs


# --------------------------------------------------------------------------
# fixed value


def _channels_value(value, channels: int) -> np.ndarray:
    v = np.broadcast_to(np.asarray(value, dtype=np.float64).ravel(), (channels,)) \
        if np.ndim(value) else np.full(channels, float(value))
    return np.array(v, dtype=np.float64)


def _image(x) -> np.ndarray:
    img = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def impute_fixed(x, mask, part: str, value) -> np.ndarray:
    """Set every removed pixel to `value` (scalar or per channel)."""
    img = _image(x)
    gone = removed_set(mask, part)
    if gone.shape != img.shape[:2]:
        raise ShapeMismatch(f"mask {gone.shape} vs image {img.shape[:2]}")
    out = img.copy()
    out[gone] = _channels_value(value, img.shape[2])
    return out


def probe_fixed_inverse(x_imp, fill_value) -> np.ndarray:
    """Recover the removal mask from a fixed-value imputed image.

    A pixel counts as removed when every channel equals the fill value exactly.
    """
    img = _image(x_imp)
    v = _channels_value(fill_value, img.shape[2])
    return np.all(img == v, axis=2)


# --------------------------------------------------------------------------
# linear system


def _shifted_pairs(h: int, w: int, di: int, dj: int):
    """Flat index pairs (p, q) with q = p shifted by (di, dj), both inside the grid."""
    i0, i1 = max(0, -di), min(h, h - di)
    j0, j1 = max(0, -dj), min(w, w - dj)
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    p = (ii * w + jj).ravel()
    q = ((ii + di) * w + (jj + dj)).ravel()
    return p, q


def _structure(unknown: np.ndarray):
    """Matrix pattern shared by every channel and every image with this unknown set.

    Returns the row map, diagonal, off-diagonal triplets, and for the
    right-hand side the (row, known pixel, weight) triplets.
    """
    h, w = unknown.shape
    flat = unknown.ravel()
    index = np.full(h * w, -1, dtype=np.int64)
    upix = np.flatnonzero(flat)
    index[upix] = np.arange(len(upix))
    diag = np.zeros(len(upix))
    off_r, off_c, off_v = [], [], []
    rhs_r, rhs_p, rhs_w = [], [], []
    for di, dj, wt in NEIGHBOURS:
        p, q = _shifted_pairs(h, w, di, dj)
        sel = flat[p]
        p, q = p[sel], q[sel]
        rows = index[p]
        np.add.at(diag, rows, wt)
        unk = flat[q]
        off_r.append(rows[unk])
        off_c.append(index[q[unk]])
        off_v.append(np.full(int(unk.sum()), -wt))
        rhs_r.append(rows[~unk])
        rhs_p.append(q[~unk])
        rhs_w.append(np.full(int((~unk).sum()), wt))
    return (index, upix, diag,
            np.concatenate(off_r), np.concatenate(off_c), np.concatenate(off_v),
            np.concatenate(rhs_r), np.concatenate(rhs_p), np.concatenate(rhs_w))


def assemble_system(x, unknown, channel: int = 0) -> SparseSystem:
    img = _image(x)
    unknown = np.asarray(unknown, dtype=bool)
    if unknown.shape != img.shape[:2]:
        raise ShapeMismatch(f"unknown set {unknown.shape} vs image {img.shape[:2]}")
    index, upix, diag, orow, ocol, oval, rrow, rpix, rw = _structure(unknown)
    n = len(upix)
    vals = img[..., channel].ravel()
    rhs = np.zeros(n)
    np.add.at(rhs, rrow, rw * vals[rpix])
    rows = np.concatenate([np.arange(n), orow])
    cols = np.concatenate([np.arange(n), ocol])
    values = np.concatenate([diag, oval])
    return SparseSystem(n, rows, cols, values, rhs, index)


def conjugate_gradient(A, b, tol: float = 1e-8, max_iters: int | None = None,
                       precondition: bool = True, x0=None) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite `A`.

    `b` may hold several right-hand sides as columns; each column runs its
    own CG recurrence. Stops once ``||A x - b|| <= tol`` for every column,
    checked against the true residual, so no single equation is off by more
    than `tol`. `x0` is the starting point (zeros by default).
    """
    b = np.asarray(b, dtype=np.float64)
    single = b.ndim == 1
    B = b[:, None] if single else b
    n = B.shape[0]
    if n == 0:
        return np.zeros_like(b)
    if max_iters is None:
        max_iters = 10 * n
    if precondition:
        d = A.diagonal() if hasattr(A, "diagonal") else np.diag(A)
        minv = (1.0 / d)[:, None]
    else:
        minv = np.ones((n, 1))
    if x0 is None:
        X = np.zeros_like(B)
        R = B.copy()
    else:
        X = np.array(x0, dtype=np.float64).reshape(B.shape)
        R = B - A @ X
    Z = minv * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while True:
        res = np.sqrt(np.einsum("ij,ij->j", R, R))
        if np.all(res <= tol):
            true_res = np.linalg.norm(A @ X - B, axis=0)
            if np.all(true_res <= tol):
                break
            # recurrence drifted from the true residual: restart from X
            R = B - A @ X
            Z = minv * R
            P = Z.copy()
            rz = np.einsum("ij,ij->j", R, Z)
        if it >= max_iters:
            raise SolverDiverged(f"CG did not reach tol={tol} in {max_iters} iterations "
                                 f"(residual {res.max():.3e})")
        AP = A @ P
        pap = np.einsum("ij,ij->j", P, AP)
        alpha = np.divide(rz, pap, out=np.zeros_like(rz), where=pap > 0)
        X += alpha * P
        AP *= alpha
        R -= AP
        np.multiply(minv, R, out=Z)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz > 0)
        P *= beta
        P += Z
        rz = rz_new
        it += 1
    return X[:, 0] if single else X


def solve_system(s: SparseSystem, tol: float = 1e-8, max_iters: int | None = None) -> np.ndarray:
    return conjugate_gradient(s.matrix(), s.rhs, tol=tol, max_iters=max_iters)


def equation_residuals(imputed, unknown, channel: int = 0) -> np.ndarray:
    """Per-equation residuals of a (noise-free) imputed image.

    Rebuilds the system from the known pixels of `imputed` and evaluates it at
    the imputed values. Isolated unknown regions are excluded.
    """
    img = _image(imputed)
    unknown = np.asarray(unknown, dtype=bool)
    solvable = unknown & ~isolated_unknowns(unknown)
    s = assemble_system(img, solvable, channel)
    x = img[..., channel].ravel()[np.flatnonzero(solvable.ravel())]
    return s.residual(x)


def isolated_unknowns(unknown: np.ndarray) -> np.ndarray:
    """Unknown pixels whose 8-connected component touches no known pixel."""
    unknown = np.asarray(unknown, dtype=bool)
    if unknown.all():
        return unknown.copy()
    labels, n = scipy.ndimage.label(unknown, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros_like(unknown)
    near_known = scipy.ndimage.binary_dilation(~unknown, structure=np.ones((3, 3)))
    touching = np.unique(labels[near_known & unknown])
    return unknown & ~np.isin(labels, touching)


# --------------------------------------------------------------------------
# noisy linear imputation


class _LinearSolver:
    """Assembled system for one unknown set, reusable across images and channels."""

    def __init__(self, unknown: np.ndarray):
        self.isolated = isolated_unknowns(unknown)
        self.solvable = unknown & ~self.isolated
        (self.index, self.upix, diag, orow, ocol, oval,
         self.rhs_rows, self.rhs_pix, self.rhs_w) = _structure(self.solvable)
        n = len(self.upix)
        self.n = n
        self.A = scipy.sparse.csr_matrix(
            (np.concatenate([diag, oval]), (np.concatenate([np.arange(n), orow]), np.concatenate([np.arange(n), ocol]))),
            shape=(n, n))
        # rhs = G @ pixel values
        self.G = scipy.sparse.csr_matrix((self.rhs_w, (self.rhs_rows, self.rhs_pix)),
                                         shape=(n, unknown.size))

    def solve(self, columns: np.ndarray, tol, max_iters) -> np.ndarray:
        """`columns` is ``d x m`` (flattened channel images); returns ``n x m``."""
        # start from the mean of the known pixels; exact for constant images
        known = np.flatnonzero(~(self.solvable | self.isolated).ravel())
        x0 = np.broadcast_to(columns[known].mean(axis=0), (self.n, columns.shape[1]))
        return conjugate_gradient(self.A, self.G @ columns, tol=tol, max_iters=max_iters, x0=x0)


def _fill(images: np.ndarray, unknown: np.ndarray, solver: _LinearSolver, cfg: ImputationConfig,
          rngs, fallback: np.ndarray, sigma: float) -> np.ndarray:
    """Impute a batch ``m x H x W x C`` sharing one unknown set."""
    m, h, w, c = images.shape
    out = images.copy()
    flat = out.reshape(m, h * w, c)
    if solver.n:
        cols = images.reshape(m, h * w, c).transpose(1, 0, 2).reshape(h * w, m * c)
        sol = solver.solve(cols, cfg.solver_tol, cfg.solver_max_iters)
        flat[:, solver.upix, :] = sol.reshape(solver.n, m, c).transpose(1, 0, 2)
    iso = np.flatnonzero(solver.isolated.ravel())
    if len(iso):
        flat[:, iso, :] = fallback
    gone = np.flatnonzero(unknown.ravel())
    if sigma > 0 and len(gone):
        for k, rng in enumerate(rngs):
            noise = np.stack([rng.standard_normal(len(gone)) for _ in range(c)], axis=1)
            flat[k, gone, :] += sigma * noise
    return out


def impute_noisy_linear(x, mask, part: str, cfg: ImputationConfig, rng=None,
                        fallback=None, value_range=None) -> np.ndarray:
    """Noisy linear imputation of one image.

    Known pixels are returned bit-identical. Removed pixels whose connected
    component has no known neighbour get `fallback` (per-channel, defaults to
    the image mean). `value_range` sets the noise scale for range-relative
    noise and defaults to the image's own range.
    """
    img = _image(x)
    unknown = removed_set(mask, part)
    if unknown.shape != img.shape[:2]:
        raise ShapeMismatch(f"mask {unknown.shape} vs image {img.shape[:2]}")
    if not unknown.any():
        return img.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if fallback is None:
        fallback = img.mean(axis=(0, 1))
    fallback = _channels_value(fallback, img.shape[2])
    if value_range is None:
        value_range = (float(img.min()), float(img.max()))
    sigma = cfg.noise_scale(value_range)
    return _fill(img[None], unknown, _LinearSolver(unknown), cfg, [rng], fallback, sigma)[0]


def impute(x, mask, part: str, cfg: ImputationConfig, rng=None, fallback=None, value_range=None) -> np.ndarray:
    if cfg.strategy == "fixed":
        img = _image(x)
        value = cfg.fill_value if cfg.fill_value is not None else (
            fallback if fallback is not None else img.mean(axis=(0, 1)))
        return impute_fixed(img, mask, part, value)
    return impute_noisy_linear(x, mask, part, cfg, rng=rng, fallback=fallback, value_range=value_range)


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Noise stream for image `index` of a batch; independent of batch order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def impute_dataset(images: np.ndarray, removed: np.ndarray, cfg: ImputationConfig,
                   channel_mean=None, value_range=None, indices=None) -> np.ndarray:
    """Impute a stack of images, ``removed[i]`` being the pixels to fill in image i.

    Images that share an identical removal set are solved together, which
    makes fixed orderings (one mask for the whole dataset) cheap. The noise
    for image i depends only on ``(cfg.rng_seed, indices[i])``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    removed = np.asarray(removed, dtype=bool)
    if removed.ndim == 2:
        removed = np.broadcast_to(removed, images.shape[:3])
    if removed.shape != images.shape[:3]:
        raise ShapeMismatch(f"removal sets {removed.shape} vs images {images.shape[:3]}")
    n, h, w, c = images.shape
    if channel_mean is None:
        channel_mean = images.mean(axis=(0, 1, 2)) if n else np.zeros(c)
    channel_mean = _channels_value(channel_mean, c)
    if indices is None:
        indices = np.arange(n)
    if cfg.strategy == "fixed":
        value = _channels_value(cfg.fill_value if cfg.fill_value is not None else channel_mean, c)
        out = images.copy()
        out[removed] = value
        return out

    if value_range is None:
        value_range = (float(images.min()), float(images.max())) if n else (0.0, 0.0)
    sigma = cfg.noise_scale(value_range)
    out = images.copy()
    flat = removed.reshape(n, -1)
    groups: dict[bytes, list[int]] = {}
    for i in range(n):
        if flat[i].any():
            groups.setdefault(np.packbits(flat[i]).tobytes(), []).append(i)
    for members in groups.values():
        unknown = removed[members[0]]
        solver = _LinearSolver(unknown)
        rngs = [image_rng(cfg.rng_seed, indices[i]) for i in members]
        out[members] = _fill(images[members], unknown, solver, cfg, rngs, channel_mean, sigma)
    return out
