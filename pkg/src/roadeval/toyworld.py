"""Two-class Gaussian-process image world with known ground truth.

Images are ``mu_c + L z`` with a squared-exponential covariance over pixel
positions shared by both classes and sinusoidal class means

    mu_c(i, j) = A sin(2 pi f i / H + phi_c) sin(2 pi f j / W + phi_c),
    phi_0 = 0, phi_1 = pi / 2.

Because the covariance is known, the bias ratio of any mask can be computed
exactly and serves as an oracle for the data-driven estimate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, SingularCovariance
from .infotheory import GaussianModel, bias_ratio
from .masking import rank_pixels, topk_mask
from .tensor_io import Dataset

ORDERINGS = ("true", "worst", "rand", "semi", "gauss")


@dataclass
class GPDatasetConfig:
    height: int = 28
    width: int = 28
    kernel_width_fraction: float = 0.2
    n_samples: int = 2000
    class_priors: tuple = (0.5, 0.5)
    mean_amplitude: float = 1.0
    mean_frequency: float = 1.5
    nugget: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.kernel_width_fraction < 1.0:
            raise InputError("kernel_width_fraction must lie in (0, 1)")
        self.class_priors = tuple(float(p) for p in self.class_priors)
        if len(self.class_priors) != 2 or abs(sum(self.class_priors) - 1.0) > 1e-12 or min(self.class_priors) < 0:
            raise InputError("class_priors must be two probabilities summing to 1")
        if self.n_samples < 0 or self.height < 1 or self.width < 1:
            raise InputError("sizes must be positive")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def length_scale(self) -> float:
        return self.kernel_width_fraction * self.width

    def to_dict(self) -> dict:
        return asdict(self)


def pixel_positions(height: int, width: int) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([ii.ravel(), jj.ravel()], axis=1).astype(np.float64)


def build_covariance(cfg: GPDatasetConfig) -> np.ndarray:
    pos = pixel_positions(cfg.height, cfg.width)
    sq = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
    cov = np.exp(-sq / (2.0 * cfg.length_scale ** 2))
    cov[np.diag_indices_from(cov)] += cfg.nugget
    return cov


def class_means(cfg: GPDatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    """Both class means as ``H x W`` arrays."""
    ii, jj = np.meshgrid(np.arange(cfg.height), np.arange(cfg.width), indexing="ij")
    a, f = cfg.mean_amplitude, cfg.mean_frequency

    def mu(phi):
        return a * np.sin(2 * np.pi * f * ii / cfg.height + phi) * np.sin(2 * np.pi * f * jj / cfg.width + phi)

    return mu(0.0), mu(np.pi / 2)


class GPWorld:
    """Covariance factor and means for one config, computed once."""

    def __init__(self, cfg: GPDatasetConfig | None = None):
        self.cfg = cfg or GPDatasetConfig()
        self.cov = build_covariance(self.cfg)
        try:
            self.chol = scipy.linalg.cholesky(self.cov, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise SingularCovariance(f"GP covariance not positive definite: {exc}") from exc
        self.means = class_means(self.cfg)

    def sample(self, n: int | None = None, seed: int | None = None) -> Dataset:
        cfg = self.cfg
        n = cfg.n_samples if n is None else n
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        labels = (rng.random(n) >= cfg.class_priors[0]).astype(np.int64)
        z = rng.standard_normal((n, cfg.n_pixels))
        mu = np.stack([m.ravel() for m in self.means])[labels]
        x = mu + z @ self.chol.T
        return Dataset(x.reshape(n, cfg.height, cfg.width, 1), labels, num_classes=2)

    def model(self) -> GaussianModel:
        return GaussianModel(None, self.cov, jitter=0.0)


def sample_dataset(cfg: GPDatasetConfig) -> Dataset:
    return GPWorld(cfg).sample()


def handcrafted_ordering(kind: str, cfg: GPDatasetConfig | None = None, seed: int = 0) -> np.ndarray:
    """Fixed importance scores (``H x W``) shared by every image.

    true   |mu_1 - mu_0|, the pixels that carry the class signal
    worst  the negated true scores
    rand   uniform random scores
    gauss  isotropic bump at the grid centre, sigma = W / 4
    semi   true scores on the left half, random ones on the right half
    """
    cfg = cfg or GPDatasetConfig()
    kind = kind.lower()
    h, w = cfg.height, cfg.width
    mu0, mu1 = class_means(cfg)
    true = np.abs(mu1 - mu0)
    if kind == "true":
        return true
    if kind == "worst":
        return -true
    rng = np.random.default_rng([int(seed), ORDERINGS.index(kind) if kind in ORDERINGS else 99])
    if kind == "rand":
        return rng.random((h, w))
    if kind == "gauss":
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        sigma = w / 4.0
        return np.exp(-((ii - h // 2) ** 2 + (jj - w // 2) ** 2) / (2 * sigma ** 2))
    if kind == "semi":
        out = rng.random((h, w))
        left = np.arange(w) < w // 2
        out[:, left] = true[:, left]
        return out
    raise InputError(f"unknown ordering {kind!r}; choose from {ORDERINGS}")


def analytic_bias(cov, ordering, k_grid, side: str = "low", floor: float | None = None) -> list[float]:
    """Exact bias ratio of the top-k mask of `ordering` for every k in `k_grid`.

    `floor` is the white-noise level the entropies are referenced to; it
    defaults to the default nugget, so pass the nugget used to build `cov`
    when it differs.
    """
    g = cov if isinstance(cov, GaussianModel) else GaussianModel(None, cov, jitter=0.0)
    perm = rank_pixels(ordering)
    shape = np.shape(ordering)[:2]
    if floor is None:
        floor = GPDatasetConfig().nugget
    return [bias_ratio(g, topk_mask(perm, int(k), shape), side, floor=floor) for k in k_grid]
