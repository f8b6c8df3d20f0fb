"""Removal curves, geometric debiasing, and ranking consistency.

Every curve is indexed by the removal fraction eta. For LeRF the same eta
removes the least important pixels, so the kept share is ``1 - eta``; the
plots label LeRF curves by that kept share.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .classifiers import LogisticModel, TrainConfig, eval_accuracy, split_index, train_ensemble
from .errors import EmptyPartition, GridMismatch, InputError, InvalidGamma, UndefinedCorrelation
from .imputation import ImputationConfig, impute_dataset, impute_noisy_linear
from .infotheory import GaussianModel, bias_ratio
from .masking import RemovalOrder, count_for_fraction, rank_positions, removal_masks
from .tensor_io import Dataset

log = logging.getLogger(__name__)

DEFAULT_ETA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9)


@dataclass
class StrategyConfig:
    order: RemovalOrder = RemovalOrder.MORF
    retrain: bool = True
    imputation: ImputationConfig = field(default_factory=ImputationConfig)
    eta_grid: tuple = DEFAULT_ETA_GRID
    n_models: int = 15
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.order = RemovalOrder.parse(self.order)
        eta = np.asarray(self.eta_grid, dtype=np.float64)
        if eta.size == 0 or np.any(np.diff(eta) <= 0) or eta[0] < 0 or eta[-1] > 1:
            raise InputError(f"eta grid must be strictly increasing within [0, 1], got {self.eta_grid}")
        self.eta_grid = tuple(float(e) for e in eta)
        if self.n_models < 1:
            raise InputError("n_models must be at least 1")

    @property
    def name(self) -> str:
        return f"{self.order.value}_{'retrain' if self.retrain else 'noretrain'}_{self.imputation.name}"


@dataclass
class EvaluationCurve:
    name: str
    eta: list
    acc_mean: list
    acc_stderr: list
    order: RemovalOrder = RemovalOrder.MORF
    clamped: list | None = None

    def __post_init__(self):
        if not len(self.eta) == len(self.acc_mean) == len(self.acc_stderr):
            raise InputError("curve lists differ in length")

    @property
    def kept_fraction(self) -> np.ndarray:
        return 1.0 - np.asarray(self.eta)

    def auc(self) -> float:
        """Trapezoidal area under accuracy vs. removal fraction."""
        return float(np.trapezoid(self.acc_mean, self.eta))


@dataclass
class BiasIndicatorSeries:
    eta: list
    gamma: list

    def __post_init__(self):
        if len(self.eta) != len(self.gamma):
            raise InputError("eta and gamma differ in length")
        if any(g <= 0 for g in self.gamma):
            raise InvalidGamma("bias indicators must be positive")


def _stderr(values: np.ndarray) -> float:
    if len(values) < 2 or np.ptp(values) == 0:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def _saliency_stack(saliency, n: int, shape) -> np.ndarray:
    s = np.asarray(saliency, dtype=np.float64)
    if s.ndim == 4:
        s = s.sum(axis=3)
    if s.ndim == 2:
        s = np.broadcast_to(s, (n,) + s.shape)
    if s.shape != (n,) + tuple(shape):
        raise InputError(f"saliency shape {s.shape} does not cover {n} images of {shape}")
    return s


def _positions(s: np.ndarray) -> np.ndarray:
    # shared maps are ranked once
    if s.shape[0] > 1 and np.all(s == s[0]):
        return np.broadcast_to(rank_positions(s[:1]), (s.shape[0], s[0].size))
    return rank_positions(s)


def model_seeds(cfg: StrategyConfig) -> list[int]:
    return [cfg.train.seed + i for i in range(cfg.n_models)]


def train_baseline(ds: Dataset, cfg: StrategyConfig, split: float = 2.0 / 3.0) -> list[LogisticModel]:
    """Ensemble trained on the unmodified training split."""
    n_train = split_index(len(ds), split)
    X = ds.images[:n_train].reshape(n_train, -1)
    return train_ensemble(X, ds.labels[:n_train], cfg.train, seeds=model_seeds(cfg), num_classes=ds.num_classes)


def run_curve(ds: Dataset, saliency, cfg: StrategyConfig, name: str | None = None,
              split: float = 2.0 / 3.0, baseline: list[LogisticModel] | None = None,
              clean_cache: dict | None = None) -> EvaluationCurve:
    """Accuracy after removing and imputing pixels at each eta.

    With ``cfg.retrain`` a fresh ensemble is trained on the imputed training
    split at every eta; otherwise the baseline ensemble (trained on clean
    data, or passed in) is evaluated on the imputed test split.

    `clean_cache` may be shared between calls on the same dataset: retrained
    accuracies at an eta that removes nothing are stored there and reused.
    """
    n = len(ds)
    h, w, c = ds.image_shape
    n_train = split_index(n, split)
    pos = _positions(_saliency_stack(saliency, n, (h, w)))
    if not cfg.retrain and baseline is None:
        baseline = train_baseline(ds, cfg, split)
    idx = np.arange(n)
    rows = slice(0, n) if cfg.retrain else slice(n_train, n)
    means, errs = [], []
    for eta in cfg.eta_grid:
        removed = removal_masks(pos[rows], eta, cfg.order, (h, w))
        key = (n_train, tuple(model_seeds(cfg)), repr(cfg.train))
        if cfg.retrain and clean_cache is not None and key in clean_cache and not removed.any():
            accs = clean_cache[key]
            means.append(float(accs.mean()))
            errs.append(_stderr(accs))
            continue
        imputed = impute_dataset(ds.images[rows], removed, cfg.imputation,
                                 channel_mean=ds.per_channel_mean, value_range=ds.value_range,
                                 indices=idx[rows])
        flat = imputed.reshape(len(imputed), -1)
        if cfg.retrain:
            models = train_ensemble(flat[:n_train], ds.labels[:n_train], cfg.train,
                                    seeds=model_seeds(cfg), num_classes=ds.num_classes)
            test_x, test_y = flat[n_train:], ds.labels[n_train:]
        else:
            models = baseline
            test_x, test_y = flat, ds.labels[n_train:]
        accs = np.array([eval_accuracy(m, test_x, test_y) for m in models])
        if cfg.retrain and clean_cache is not None and not removed.any():
            clean_cache[key] = accs
        means.append(float(accs.mean()))
        errs.append(_stderr(accs))
        log.debug("%s eta=%.2f acc=%.4f", name or cfg.name, eta, means[-1])
    return EvaluationCurve(name or cfg.name, list(cfg.eta_grid), means, errs, cfg.order)


def debias_curve(curve: EvaluationCurve, baseline_acc: float, gammas: BiasIndicatorSeries,
                 order=None) -> EvaluationCurve:
    """Rescale the accuracy drop from the baseline by ``1 / gamma``.

    ``acc' = baseline - (baseline - acc) / gamma``, clamped to [0, 1];
    the returned curve's `clamped` list flags the clamped entries.
    """
    if not 0.0 <= baseline_acc <= 1.0:
        raise InputError("baseline accuracy must lie in [0, 1]")
    if len(gammas.eta) != len(curve.eta) or not np.allclose(gammas.eta, curve.eta, rtol=0, atol=1e-12):
        raise GridMismatch("gamma series and curve use different eta grids")
    g = np.asarray(gammas.gamma, dtype=np.float64)
    if np.any(g <= 0):
        raise InvalidGamma("gamma must be positive")
    acc = np.asarray(curve.acc_mean, dtype=np.float64)
    raw = baseline_acc - (baseline_acc - acc) / g
    out = np.clip(raw, 0.0, 1.0)
    order = RemovalOrder.parse(order) if order is not None else curve.order
    return EvaluationCurve(curve.name + "_debiased", list(curve.eta), out.tolist(),
                           (np.asarray(curve.acc_stderr) / g).tolist(), order,
                           clamped=(out != raw).tolist())


def removed_side(order) -> str:
    """Mask partition removed by `order` when the mask marks the top-ranked pixels."""
    return "high" if RemovalOrder.parse(order) is RemovalOrder.MORF else "low"


def shrunk_covariance(X: np.ndarray, shrinkage: float = 1e-3) -> tuple[np.ndarray, float]:
    """Empirical covariance plus ``shrinkage * tr / d`` on the diagonal; returns it and that ridge."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    cov = np.cov(X, rowvar=False)
    ridge = shrinkage * float(np.trace(cov)) / cov.shape[0]
    if not ridge > 0:
        raise InputError("degenerate data: zero total variance")
    cov[np.diag_indices_from(cov)] += ridge
    return cov, ridge


def gamma_for_mask(model: GaussianModel, mask_top: np.ndarray, side: str, floor: float) -> float:
    """Bias indicator of one mask; 1 when either partition is empty."""
    try:
        return bias_ratio(model, mask_top, side, floor=floor)
    except EmptyPartition:
        return 1.0


def estimate_gamma(ds: Dataset, saliency, order, eta_grid=DEFAULT_ETA_GRID, shrinkage: float = 1e-3,
                   side: str | None = None, max_masks: int = 16) -> BiasIndicatorSeries:
    """Bias indicator per eta from the empirical pixel covariance.

    By default the ratio is taken for the removed partition. When images
    have different masks the indicator is averaged over up to `max_masks`
    distinct masks, weighted by how often each occurs.
    """
    order = RemovalOrder.parse(order)
    side = side or removed_side(order)
    n = len(ds)
    h, w, c = ds.image_shape
    d = h * w * c
    if n < 2 * d:
        raise InputError(f"need at least {2 * d} images for a {d}-dimensional covariance, have {n}")
    cov, ridge = shrunk_covariance(ds.images.reshape(n, -1), shrinkage)
    model = GaussianModel(None, cov, jitter=0.0)
    pos = _positions(_saliency_stack(saliency, n, (h, w)))
    gammas = []
    for eta in eta_grid:
        k = count_for_fraction(eta, h * w)
        if k == 0:
            gammas.append(1.0)
            continue
        # mask of top-ranked pixels: removed for MoRF, kept for LeRF
        top = pos < (k if order is RemovalOrder.MORF else h * w - k)
        keys, first, counts = np.unique(np.packbits(top, axis=1), axis=0, return_index=True, return_counts=True)
        pick = np.argsort(-counts, kind="stable")[:max_masks]
        vals, weights = [], []
        for j in pick:
            m = np.repeat(top[first[j]].reshape(h, w)[..., None], c, axis=2).ravel()
            vals.append(gamma_for_mask(model, m, side, ridge))
            weights.append(counts[j])
        g = float(np.average(vals, weights=weights))
        gammas.append(min(max(g, 1e-3), 1.0))
    return BiasIndicatorSeries(list(eta_grid), gammas)


# --------------------------------------------------------------------------
# rankings


def _check_grids(curves: dict) -> np.ndarray:
    names = list(curves)
    eta = np.asarray(curves[names[0]].eta, dtype=np.float64)
    for nm in names[1:]:
        other = np.asarray(curves[nm].eta, dtype=np.float64)
        if other.shape != eta.shape or not np.allclose(other, eta, rtol=0, atol=1e-12):
            raise GridMismatch(f"curve {nm!r} uses a different eta grid")
    return eta


def strategy_ranking(curves: dict, order) -> tuple[list, np.ndarray]:
    """Rank methods at every eta, 1 = best; ties share their average rank.

    Lower accuracy is better for MoRF, higher for LeRF. Returns the method
    names and an ``n_eta x n_methods`` rank matrix.
    """
    if len(curves) < 2:
        raise InputError("ranking needs at least two methods")
    order = RemovalOrder.parse(order)
    _check_grids(curves)
    names = sorted(curves)
    acc = np.array([curves[nm].acc_mean for nm in names], dtype=np.float64).T
    key = acc if order is RemovalOrder.MORF else -acc
    ranks = np.vstack([scipy.stats.rankdata(row, method="average") for row in key])
    return names, ranks


def auc_ranking(curves: dict, order) -> dict:
    """Rank methods by area under their curve (1 = best)."""
    order = RemovalOrder.parse(order)
    names = sorted(curves)
    aucs = np.array([curves[nm].auc() for nm in names])
    ranks = scipy.stats.rankdata(aucs if order is RemovalOrder.MORF else -aucs, method="average")
    return dict(zip(names, ranks.tolist()))


def spearman(a, b) -> float:
    """Spearman correlation: Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise InputError("spearman needs two equally long vectors of length >= 2")
    ra = scipy.stats.rankdata(a, method="average")
    rb = scipy.stats.rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        raise UndefinedCorrelation("rank correlation undefined for a constant vector")
    return float(np.clip(ra @ rb / den, -1.0, 1.0))


def consistency(curves_a: dict, order_a, curves_b: dict, order_b, mode: str = "concat",
                skip_first: bool = True) -> float:
    """Rank agreement between two evaluation strategies over the same methods.

    ``mode="concat"`` correlates the concatenated per-eta rank rows (the
    first eta, where nothing is removed, is skipped by default).
    ``mode="mean"`` ranks the methods by their mean accuracy over eta.
    """
    if sorted(curves_a) != sorted(curves_b):
        raise InputError("strategies cover different methods")
    if mode == "concat":
        _, ra = strategy_ranking(curves_a, order_a)
        _, rb = strategy_ranking(curves_b, order_b)
        if skip_first:
            ra, rb = ra[1:], rb[1:]
        return spearman(ra.ravel(), rb.ravel())
    if mode == "mean":
        names = sorted(curves_a)
        sa = [np.mean(curves_a[nm].acc_mean) for nm in names]
        sb = [np.mean(curves_b[nm].acc_mean) for nm in names]
        if RemovalOrder.parse(order_a) is RemovalOrder.LERF:
            sa = [-v for v in sa]
        if RemovalOrder.parse(order_b) is RemovalOrder.LERF:
            sb = [-v for v in sb]
        return spearman(sa, sb)
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# timing


def runtime_benchmark(cfg: ImputationConfig, sizes=(28,), fractions=(0.1, 0.3, 0.5, 0.7, 0.9),
                      repeats: int = 5, seed: int = 0, channels: int = 1) -> list[dict]:
    """Median wall time of single-image noisy linear imputation per (size, fraction)."""
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        for frac in fractions:
            times = []
            n_unknown = 0
            for r in range(repeats):
                img = rng.random((size, size, channels))
                perm = rng.permutation(size * size)
                removed = np.zeros(size * size, dtype=bool)
                removed[perm[:count_for_fraction(frac, size * size)]] = True
                removed = removed.reshape(size, size)
                n_unknown = int(removed.sum())
                t0 = time.perf_counter()
                impute_noisy_linear(img, removed, "low", cfg, rng=np.random.default_rng([seed, r]))
                times.append(time.perf_counter() - t0)
            rows.append({"size": size, "fraction": frac, "n_unknown": n_unknown,
                         "seconds": float(np.median(times))})
    return rows


def scaling_slope(rows: list[dict]) -> float:
    """Least-squares slope of log(time) against log(unknown count)."""
    pts = [(r["n_unknown"], r["seconds"]) for r in rows if r["n_unknown"] > 0]
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
