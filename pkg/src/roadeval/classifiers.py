"""Multinomial logistic regression trained by full-batch gradient descent.

The step size is ``learning_rate / (1 + t/100)`` measured in units of
``1/L``, where L bounds the curvature of the regularised cross-entropy.
This keeps descent monotone on badly scaled inputs such as raw images
without per-dataset tuning.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ShapeMismatch, TrainingDiverged
from .tensor_io import read_array, write_array


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    l2: float = 1e-4
    epochs: int = 500
    batch_size: int | None = None  # full batch; kept for config round-trips
    seed: int = 0
    init_scale: float = 1e-2
    decay: float = 100.0


@dataclass
class LogisticModel:
    weights: np.ndarray  # (d + 1) x c, last row is the bias
    num_classes: int
    train_config: TrainConfig = field(default_factory=TrainConfig)
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.shape[0] - 1

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        X = X.reshape(len(X), -1)
        if X.shape[1] != self.n_features:
            raise ShapeMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X @ self.weights[:-1] + self.weights[-1]

    def predict(self, X) -> np.ndarray:
        # argmax returns the lowest index among ties
        return np.argmax(self.logits(X), axis=1)

    def save(self, stem) -> None:
        stem = Path(stem)
        write_array(self.weights, stem.with_suffix(".npy"))
        meta = {"num_classes": self.num_classes, "train_config": asdict(self.train_config)}
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, stem) -> "LogisticModel":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        return cls(read_array(stem.with_suffix(".npy")), meta["num_classes"], TrainConfig(**meta["train_config"]))


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


def loss_and_grad(W: np.ndarray, X1: np.ndarray, Y: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 * ||W_features||^2`` and its gradient.

    `W` may carry a leading batch axis of independent models.
    """
    if W.ndim == 3:
        return _stacked_loss_and_grad(W, X1, Y, l2)
    n = X1.shape[0]
    Z = X1 @ W
    Z = Z - Z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=-1, keepdims=True))
    logp = Z - logsum
    ce = -(Y * logp).sum(axis=(-1, -2)) / n
    wf = W[..., :-1, :]
    reg = 0.5 * l2 * (wf * wf).sum(axis=(-1, -2))
    G = np.swapaxes(X1, -1, -2) @ (np.exp(logp) - Y) / n
    G[..., :-1, :] += l2 * wf
    return ce + reg, G


def _stacked_loss_and_grad(W: np.ndarray, X1: np.ndarray, Y: np.ndarray, l2: float):
    # All models side by side in one matrix so X is read once per pass. Softmax
    # only sees logit differences and its residuals sum to zero over classes,
    # so both products need c - 1 columns per model only.
    m, d1, c = W.shape
    n = X1.shape[0]
    V = np.ascontiguousarray((W[:, :, :-1] - W[:, :, -1:]).transpose(1, 0, 2)).reshape(d1, m * (c - 1))
    Z = np.zeros((n, m, c))
    Z[:, :, :-1] = (X1 @ V).reshape(n, m, c - 1)
    Z = Z - Z.max(axis=-1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=-1, keepdims=True))
    ce = -(Y[:, None, :] * logp).sum(axis=(0, 2)) / n
    wf = W[:, :-1, :]
    reg = 0.5 * l2 * (wf * wf).sum(axis=(1, 2))
    # contiguous operands keep the products on the BLAS path
    D = np.ascontiguousarray((np.exp(logp) - Y[:, None, :])[:, :, :-1]).reshape(n, m * (c - 1))
    H = (X1.T @ D / n).reshape(d1, m, c - 1).transpose(1, 0, 2)
    G = np.empty_like(W)
    G[:, :, :-1] = H
    G[:, :, -1] = -H.sum(axis=2)
    G[:, :-1, :] += l2 * wf
    return ce + reg, G


def curvature_bound(X1: np.ndarray, l2: float, iters: int = 50, seed: int = 0) -> float:
    """Upper estimate of the Lipschitz constant of the loss gradient.

    Softmax cross-entropy has Hessian at most ``0.5 * X^T X / n`` per class
    block; the top eigenvalue is found by power iteration and padded by 10%.
    """
    n, d = X1.shape
    v = np.random.default_rng(seed).standard_normal(d)
    lam = 0.0
    for _ in range(iters):
        w = X1.T @ (X1 @ v) / n
        lam = float(np.linalg.norm(w))
        if lam == 0:
            break
        v = w / lam
    return 1.1 * 0.5 * lam + l2


def _one_hot(y, c):
    Y = np.zeros((len(y), c))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def _check_xy(X, y, num_classes):
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(len(X), -1)
    y = np.asarray(y).astype(np.int64).ravel()
    if len(X) != len(y) or len(y) == 0:
        raise ShapeMismatch(f"{len(X)} rows vs {len(y)} labels")
    c = num_classes or max(2, int(y.max()) + 1)
    if y.min() < 0 or y.max() >= c:
        raise InputError("labels outside [0, num_classes)")
    return X, y, c


def train_ensemble(X, y, cfg: TrainConfig | None = None, seeds=(0,), num_classes: int | None = None,
                   record_loss: bool = False) -> list[LogisticModel]:
    """Train one model per seed, all in one vectorised descent.

    Seeds only set the random initial weights; the data and schedule are shared.
    """
    cfg = cfg or TrainConfig()
    X, y, c = _check_xy(X, y, num_classes)
    X1 = _with_bias(X)
    Y = _one_hot(y, c)
    d1 = X1.shape[1]
    W = np.stack([np.random.default_rng(s).normal(0.0, cfg.init_scale, (d1, c)) for s in seeds])
    step0 = cfg.learning_rate / curvature_bound(X1, cfg.l2)
    history = []
    for t in range(cfg.epochs):
        loss, G = loss_and_grad(W, X1, Y, cfg.l2)
        if not np.all(np.isfinite(loss)):
            raise TrainingDiverged(f"non-finite loss at epoch {t}")
        if record_loss:
            history.append(loss.copy())
        W -= (step0 / (1.0 + t / cfg.decay)) * G
    if record_loss:
        loss, _ = loss_and_grad(W, X1, Y, cfg.l2)
        history.append(loss.copy())
    if not np.all(np.isfinite(W)):
        raise TrainingDiverged("non-finite weights after training")
    models = []
    for k, s in enumerate(seeds):
        tc = TrainConfig(**{**asdict(cfg), "seed": int(s)})
        hist = [float(h[k]) for h in history]
        models.append(LogisticModel(W[k].copy(), c, tc, hist))
    return models


def train_logistic(X, y, cfg: TrainConfig | None = None, num_classes: int | None = None,
                   record_loss: bool = False) -> LogisticModel:
    cfg = cfg or TrainConfig()
    return train_ensemble(X, y, cfg, seeds=(cfg.seed,), num_classes=num_classes, record_loss=record_loss)[0]


def eval_accuracy(model: LogisticModel, X, y) -> float:
    y = np.asarray(y).astype(np.int64).ravel()
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1) if len(y) else np.zeros((0, model.n_features))
    if len(y) == 0:
        raise ShapeMismatch("empty evaluation set")
    return float(np.mean(model.predict(X) == y))


def split_index(n: int, train_fraction: float = 2.0 / 3.0) -> int:
    """Number of leading rows used for training in a deterministic split."""
    return int(round(n * train_fraction))


def mask_only_accuracy(masks, labels, split: float | int = 2.0 / 3.0, cfg: TrainConfig | None = None) -> float:
    """Held-out accuracy of a classifier that only sees the binary removal masks.

    `split` is the training fraction, or the number of leading training
    rows if an int.
    """
    M = np.asarray(masks, dtype=np.float64)
    M = M.reshape(len(M), -1)
    y = np.asarray(labels).astype(np.int64).ravel()
    if len(M) != len(y):
        raise ShapeMismatch(f"{len(M)} masks vs {len(y)} labels")
    n_train = split if isinstance(split, (int, np.integer)) else split_index(len(y), split)
    c = max(2, int(y.max()) + 1)
    model = train_logistic(M[:n_train], y[:n_train], cfg, num_classes=c)
    return eval_accuracy(model, M[n_train:], y[n_train:])


def patch_features(image: np.ndarray, radius: int = 1) -> np.ndarray:
    """Per-pixel features from the ``(2r+1)^2 x C`` neighbourhood.

    Each pixel gets its raw patch values plus the absolute differences
    between the centre and every other patch entry. Borders are edge-padded.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    pad = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    vals = []
    for di in range(2 * radius + 1):
        for dj in range(2 * radius + 1):
            vals.append(pad[di:di + h, dj:dj + w, :])
    vals = np.stack(vals, axis=2)  # h x w x P x c
    centre = vals[:, :, (2 * radius + 1) ** 2 // 2: (2 * radius + 1) ** 2 // 2 + 1, :]
    diffs = np.abs(vals - centre)
    diffs = np.delete(diffs, (2 * radius + 1) ** 2 // 2, axis=2)
    return np.concatenate([vals.reshape(h * w, -1), diffs.reshape(h * w, -1)], axis=1)


def imputation_predictor_missrate(pairs, patch_radius: int = 1, cfg: TrainConfig | None = None,
                                  train_fraction: float = 2.0 / 3.0) -> float:
    """Held-out per-pixel error of a patch classifier predicting which pixels were imputed.

    `pairs` holds ``(imputed image, removed-pixel set)``. The first
    `train_fraction` of the images train the predictor, the rest test it.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InputError("need at least two images")
    feats, targets = [], []
    for img, removed in pairs:
        f = patch_features(img, patch_radius)
        r = np.asarray(removed, dtype=bool).ravel()
        if r.size != len(f):
            raise ShapeMismatch("mask does not match image")
        feats.append(f)
        targets.append(r.astype(np.int64))
    n_train = min(max(1, split_index(len(pairs), train_fraction)), len(pairs) - 1)
    Xtr, ytr = np.concatenate(feats[:n_train]), np.concatenate(targets[:n_train])
    Xte, yte = np.concatenate(feats[n_train:]), np.concatenate(targets[n_train:])
    mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0)
    sd[sd == 0] = 1.0
    model = train_logistic((Xtr - mu) / sd, ytr, cfg, num_classes=2)
    return 1.0 - eval_accuracy(model, (Xte - mu) / sd, yte)
