"""Exact information-theoretic quantities.

Discrete quantities are computed by enumerating a full joint probability
table (bits). Gaussian entropies are closed form (nats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DomainError, EmptyPartition, InputError, InvalidAxes, SingularCovariance

LOG2E = 1.0 / math.log(2.0)


# --------------------------------------------------------------------------
# discrete tables


@dataclass
class DiscreteJoint:
    """Joint distribution over named discrete axes; ``probs.shape`` gives the cardinalities."""

    axis_names: Sequence[str]
    probs: np.ndarray

    def __post_init__(self):
        self.axis_names = list(self.axis_names)
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != len(self.axis_names):
            raise InvalidAxes(f"{len(self.axis_names)} names for a {probs.ndim}-d table")
        if len(set(self.axis_names)) != len(self.axis_names):
            raise InvalidAxes("duplicate axis names")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DomainError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {probs.sum()!r}")
        self.probs = probs

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return self.probs.shape

    @classmethod
    def from_counts(cls, axis_names, counts) -> "DiscreteJoint":
        counts = np.asarray(counts, dtype=np.float64)
        return cls(axis_names, counts / counts.sum())

    @classmethod
    def from_samples(cls, axis_names, *columns) -> "DiscreteJoint":
        """Empirical joint of integer-coded samples, one column per axis."""
        cols = [np.asarray(c, dtype=np.int64) for c in columns]
        shape = tuple(int(c.max()) + 1 for c in cols)
        counts = np.zeros(shape)
        np.add.at(counts, tuple(cols), 1.0)
        return cls.from_counts(axis_names, counts)

    def axis_index(self, axes) -> tuple[int, ...]:
        if isinstance(axes, (str, int)):
            axes = [axes]
        out = []
        for a in axes:
            if isinstance(a, str):
                if a not in self.axis_names:
                    raise InvalidAxes(f"unknown axis {a!r}")
                out.append(self.axis_names.index(a))
            else:
                if not 0 <= a < len(self.axis_names):
                    raise InvalidAxes(f"axis {a} out of range")
                out.append(int(a))
        return tuple(out)

    def marginal(self, axes) -> np.ndarray:
        keep = self.axis_index(axes)
        drop = tuple(i for i in range(self.probs.ndim) if i not in keep)
        m = self.probs.sum(axis=drop)
        # put axes into the requested order
        order = np.argsort(np.argsort(keep))
        return np.transpose(m, order) if len(keep) > 1 else m


def _h(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def entropy(j: DiscreteJoint, axes) -> float:
    """Shannon entropy in bits of the marginal over `axes`."""
    idx = j.axis_index(axes)
    if not idx:
        raise InvalidAxes("entropy needs at least one axis")
    return _h(j.marginal(idx).ravel())


def _disjoint(j, *groups):
    seen = set()
    out = []
    for g in groups:
        idx = j.axis_index(g) if g is not None else ()
        if seen & set(idx):
            raise InvalidAxes("axis sets overlap")
        seen |= set(idx)
        out.append(idx)
    return out


def conditional_entropy(j: DiscreteJoint, target, given) -> float:
    t, g = _disjoint(j, target, given)
    if not t:
        raise InvalidAxes("empty target")
    if not g:
        return entropy(j, t)
    return entropy(j, t + g) - entropy(j, g)


def mutual_information(j: DiscreteJoint, a, b, given=None) -> float:
    """I(a; b) or, with `given`, I(a; b | given), in bits."""
    ia, ib, ig = _disjoint(j, a, b, given)
    if not ia or not ib:
        raise InvalidAxes("mutual information needs two non-empty axis sets")
    if not ig:
        return entropy(j, ia) + entropy(j, ib) - entropy(j, ia + ib)
    return (entropy(j, ia + ig) + entropy(j, ib + ig)
            - entropy(j, ia + ib + ig) - entropy(j, ig))


def conditional_mutual_information(j: DiscreteJoint, a, b, given) -> float:
    return mutual_information(j, a, b, given=given)


@dataclass
class LeakageDecomposition:
    """``outcome = feature + mask - mitigator``, all in bits."""

    outcome: float    # I(X'; C)
    feature: float    # I(C; X' | M)
    mask: float       # I(C; M)
    mitigator: float  # I(C; M | X')

    @property
    def residual(self) -> float:
        return self.outcome - (self.feature + self.mask - self.mitigator)


def leakage_decomposition(j: DiscreteJoint, c="C", x="X", m="M") -> LeakageDecomposition:
    return LeakageDecomposition(
        outcome=mutual_information(j, x, c),
        feature=mutual_information(j, c, x, given=m),
        mask=mutual_information(j, c, m),
        mitigator=mutual_information(j, c, m, given=x),
    )


def interaction_information(j: DiscreteJoint, a, b, c) -> tuple[float, float]:
    """Both forms of the three-way co-information: ``I(a;b|c) - I(a;b)`` and ``I(a;c|b) - I(a;c)``."""
    return (mutual_information(j, a, b, given=c) - mutual_information(j, a, b),
            mutual_information(j, a, c, given=b) - mutual_information(j, a, c))


# --------------------------------------------------------------------------
# accuracy and information


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p={p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def inv_binary_entropy(h: float, tol: float = 1e-12) -> float:
    """The p in [0.5, 1] with binary_entropy(p) == h, by bisection."""
    if not 0.0 <= h <= 1.0:
        raise DomainError(f"h={h} outside [0, 1]")
    lo, hi = 0.5, 1.0  # binary_entropy falls from 1 to 0 on this interval
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) > h:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def accuracy_bounds(info: float, slack: float = 1e-12) -> tuple[float, float]:
    """Lower and upper bound on Bayes accuracy for two equiprobable classes given I(X; C) in bits."""
    if not -slack <= info <= 1.0 + slack:
        raise DomainError(f"I={info} outside [0, 1]")
    info = min(max(info, 0.0), 1.0)
    return (info + 1.0) / 2.0, inv_binary_entropy(1.0 - info)


def _split_class(j: DiscreteJoint, c):
    ci = j.axis_index(c)
    if len(ci) != 1:
        raise InvalidAxes("class must be a single axis")
    rest = tuple(i for i in range(j.probs.ndim) if i != ci[0])
    table = np.moveaxis(j.probs, ci[0], 0).reshape(j.probs.shape[ci[0]], -1)
    return table, rest


def bayes_accuracy(j: DiscreteJoint, c="C") -> float:
    """Accuracy of the maximum-posterior classifier: ``sum_x max_c p(c, x)``."""
    table, _ = _split_class(j, c)
    return float(table.max(axis=0).sum())


def conditional_accuracies(j: DiscreteJoint, c="C") -> tuple[np.ndarray, np.ndarray]:
    """``(p(s), acc(C | s))`` for every feature outcome s with p(s) > 0."""
    table, _ = _split_class(j, c)
    ps = table.sum(axis=0)
    keep = ps > 0
    return ps[keep], table[:, keep].max(axis=0) / ps[keep]


def check_equal_priors(j: DiscreteJoint, c="C", tol: float = 1e-9) -> None:
    prior = j.marginal(c)
    if prior.size != 2 or np.max(np.abs(prior - 0.5)) > tol:
        raise DomainError(f"accuracy bounds need two equiprobable classes, priors are {prior}")


def info_from_accuracies(j: DiscreteJoint, c="C") -> float:
    """``sum_s p(s) (1 - H2(acc(C|s)))``; equals I(X; C) for two equiprobable classes."""
    ps, acc = conditional_accuracies(j, c)
    return float(sum(p * (1.0 - binary_entropy(min(a, 1.0))) for p, a in zip(ps, acc)))


# --------------------------------------------------------------------------
# Gaussian entropies


@dataclass
class GaussianModel:
    """Multivariate normal. `jitter` is added to the diagonal before any factorisation."""

    mean: np.ndarray
    cov: np.ndarray
    jitter: float | None = None

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise InputError(f"covariance must be square, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise InputError("covariance is not symmetric")
        self.cov = cov
        n = cov.shape[0]
        self.mean = np.zeros(n) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        if self.jitter is None:
            self.jitter = 1e-9 * float(np.trace(cov)) / max(n, 1)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def block(self, rows, cols=None) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = rows if cols is None else np.asarray(cols, dtype=np.int64)
        b = self.cov[np.ix_(rows, cols)]
        if cols is rows:
            b = b + self.jitter * np.eye(len(rows))
        return b


def _logdet(a: np.ndarray) -> float:
    if a.shape[0] == 0:
        return 0.0
    try:
        chol = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularCovariance(f"covariance block not positive definite: {exc}") from exc
    return 2.0 * float(np.log(np.diag(chol)).sum())


def _subset(subset, n) -> np.ndarray:
    s = np.asarray(subset)
    if s.dtype == bool:
        s = np.flatnonzero(s.ravel())
    s = s.astype(np.int64).ravel()
    if s.size and (s.min() < 0 or s.max() >= n):
        raise InputError("subset index out of range")
    return s


def schur_complement(g: GaussianModel, target, given) -> np.ndarray:
    """Conditional covariance of `target` given `given`."""
    t, c = _subset(target, g.dim), _subset(given, g.dim)
    s_tt = g.block(t)
    if c.size == 0:
        return s_tt
    s_tg = g.cov[np.ix_(t, c)]
    s_gg = g.block(c)
    try:
        cf = scipy.linalg.cho_factor(s_gg, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularCovariance(f"conditioning block not positive definite: {exc}") from exc
    out = s_tt - s_tg @ scipy.linalg.cho_solve(cf, s_tg.T, check_finite=False)
    return 0.5 * (out + out.T)


def gaussian_entropy(g: GaussianModel, subset, bits: bool = False) -> float:
    """Differential entropy ``0.5 logdet(2 pi e Sigma_S)`` in nats (bits if asked)."""
    s = _subset(subset, g.dim)
    h = 0.5 * (len(s) * math.log(2 * math.pi * math.e) + _logdet(g.block(s)))
    return h * LOG2E if bits else h


def gaussian_conditional_entropy(g: GaussianModel, target, given, bits: bool = False) -> float:
    t = _subset(target, g.dim)
    h = 0.5 * (len(t) * math.log(2 * math.pi * math.e) + _logdet(schur_complement(g, t, given)))
    return h * LOG2E if bits else h


@dataclass
class BiasRatio:
    beta: float
    clamped: bool      # raw ratio fell outside [0, 1]
    negative: bool     # an entropy in the ratio was negative


def bias_ratio_detail(g: GaussianModel, mask, side: str, floor: float | None = None,
                      reference: str = "floor") -> BiasRatio:
    """Share of the `side` partition's entropy left after observing the other partition.

    ``side="low"`` uses the pixels outside the mask, ``side="high"`` those
    inside. With ``reference="floor"`` (default) entropies are measured
    relative to white noise of variance `floor` (defaults to the model's
    jitter): ``0.5 logdet(Sigma / floor)``. These are non-negative whenever
    the covariance dominates ``floor * I``, so the ratio lies in [0, 1].
    ``reference="absolute"`` uses raw differential entropies instead, which
    turn negative for strongly correlated pixels.
    """
    if side not in ("low", "high"):
        raise ValueError(f"side must be 'low' or 'high', got {side!r}")
    bits = np.asarray(mask, dtype=bool).ravel()
    if bits.size != g.dim:
        raise InputError(f"mask has {bits.size} pixels, model has {g.dim}")
    high = np.flatnonzero(bits)
    low = np.flatnonzero(~bits)
    if high.size == 0 or low.size == 0:
        raise EmptyPartition("both mask partitions must be non-empty")
    target, given = (low, high) if side == "low" else (high, low)
    if reference == "floor":
        fl = g.jitter if floor is None else floor
        if fl <= 0:
            raise DomainError("entropy floor must be positive")
        offset = 0.5 * len(target) * math.log(fl)
        num = 0.5 * _logdet(schur_complement(g, target, given)) - offset
        den = 0.5 * _logdet(g.block(target)) - offset
    elif reference == "absolute":
        num = gaussian_conditional_entropy(g, target, given)
        den = gaussian_entropy(g, target)
    else:
        raise ValueError(f"unknown reference {reference!r}")
    negative = num < 0 or den < 0
    raw = num / den if den != 0 else 1.0
    beta = min(max(raw, 0.0), 1.0)
    return BiasRatio(beta=beta, clamped=beta != raw, negative=negative)


def bias_ratio(g: GaussianModel, mask, side: str, floor: float | None = None,
               reference: str = "floor") -> float:
    return bias_ratio_detail(g, mask, side, floor=floor, reference=reference).beta
