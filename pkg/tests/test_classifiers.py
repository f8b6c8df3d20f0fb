import numpy as np
import pytest

from roadeval.classifiers import (
    LogisticModel,
    TrainConfig,
    curvature_bound,
    eval_accuracy,
    imputation_predictor_missrate,
    loss_and_grad,
    mask_only_accuracy,
    patch_features,
    split_index,
    train_ensemble,
    train_logistic,
)
from roadeval.errors import InputError, ShapeMismatch
from roadeval.imputation import impute_fixed


def blobs(n=300, d=5, sep=3.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.standard_normal((n, d))
    X[:, 0] += sep * (2 * y - 1)
    return X, y


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X1 = np.hstack([rng.standard_normal((20, 4)), np.ones((20, 1))])
    Y = np.eye(3)[rng.integers(0, 3, 20)]
    W = rng.standard_normal((5, 3)) * 0.3
    _, G = loss_and_grad(W, X1, Y, 0.1)
    num = np.zeros_like(W)
    eps = 1e-6
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += eps
        Wm[idx] -= eps
        num[idx] = (loss_and_grad(Wp, X1, Y, 0.1)[0] - loss_and_grad(Wm, X1, Y, 0.1)[0]) / (2 * eps)
    np.testing.assert_allclose(G, num, atol=1e-8)


def test_curvature_bound_covers_top_eigenvalue():
    rng = np.random.default_rng(2)
    X1 = rng.standard_normal((50, 6)) * [1, 2, 3, 4, 5, 6]
    top = np.linalg.eigvalsh(X1.T @ X1 / 50).max()
    assert curvature_bound(X1, 0.0) >= 0.5 * top


def test_separable_blobs_and_monotone_loss():
    X, y = blobs()
    m = train_logistic(X, y, TrainConfig(epochs=200), record_loss=True)
    assert eval_accuracy(m, X, y) > 0.97
    h = np.array(m.loss_history)
    assert np.all(np.diff(h) <= 1e-12)


def test_badly_scaled_inputs_do_not_diverge():
    X, y = blobs(d=50)
    X = X * 40.0
    m = train_logistic(X, y, TrainConfig(epochs=50), record_loss=True)
    assert np.isfinite(m.loss_history).all()
    assert m.loss_history[-1] < m.loss_history[0]


def test_training_is_deterministic_and_ensemble_consistent():
    X, y = blobs(seed=3)
    cfg = TrainConfig(epochs=30)
    a = train_logistic(X, y, TrainConfig(epochs=30, seed=4))
    b = train_logistic(X, y, TrainConfig(epochs=30, seed=4))
    assert a.weights.tobytes() == b.weights.tobytes()
    ens = train_ensemble(X, y, cfg, seeds=[4, 5])
    np.testing.assert_allclose(ens[0].weights, a.weights, atol=1e-12)
    assert ens[1].train_config.seed == 5
    assert not np.allclose(ens[1].weights, a.weights)


def test_save_load_roundtrip(tmp_path):
    X, y = blobs(seed=6)
    m = train_logistic(X, y, TrainConfig(epochs=10))
    m.save(tmp_path / "model")
    back = LogisticModel.load(tmp_path / "model")
    assert back.weights.tobytes() == m.weights.tobytes()
    assert back.train_config == m.train_config
    np.testing.assert_array_equal(back.predict(X), m.predict(X))


def test_input_validation():
    with pytest.raises(ShapeMismatch):
        train_logistic(np.zeros((3, 2)), [0, 1])
    with pytest.raises(InputError):
        train_logistic(np.zeros((2, 2)), [0, 5], num_classes=2)
    m = train_logistic(np.zeros((2, 2)), [0, 1], TrainConfig(epochs=1))
    with pytest.raises(ShapeMismatch):
        m.predict(np.zeros((1, 3)))


def test_split_index():
    assert split_index(2000) == 1333
    assert split_index(3) == 2


def test_mask_only_accuracy_extremes():
    rng = np.random.default_rng(7)
    y = np.arange(600) % 2
    informative = rng.random((600, 4, 4)) < 0.5
    informative[:, 0, 0] = y == 1
    assert mask_only_accuracy(informative, y) > 0.95
    noise = rng.random((600, 4, 4)) < 0.5
    assert abs(mask_only_accuracy(noise, y) - 0.5) < 0.1


def test_patch_features_layout():
    img = np.arange(9, dtype=float).reshape(3, 3)
    f = patch_features(img, 1)
    assert f.shape == (9, 9 + 8)
    centre = f[4]
    assert centre[:9].tolist() == list(range(9))
    assert centre[9:].tolist() == [4, 3, 2, 1, 1, 2, 3, 4]
    # corner pixel sees edge-padded copies of itself
    assert f[0, :9].tolist() == [0, 0, 1, 0, 0, 1, 3, 3, 4]


def test_missrate_low_for_fixed_fill():
    rng = np.random.default_rng(8)
    pairs = []
    for _ in range(12):
        img = rng.random((10, 10))
        removed = rng.random((10, 10)) < 0.4
        pairs.append((impute_fixed(img, removed, "low", -1.0), removed))
    assert imputation_predictor_missrate(pairs, cfg=TrainConfig(epochs=200)) < 0.02


def test_stacked_gradient_matches_single_models():
    rng = np.random.default_rng(9)
    X1 = np.hstack([rng.standard_normal((30, 5)), np.ones((30, 1))])
    Y = np.eye(3)[rng.integers(0, 3, 30)]
    W = rng.standard_normal((4, 6, 3))
    loss, G = loss_and_grad(W, X1, Y, 0.05)
    for k in range(4):
        lk, gk = loss_and_grad(W[k], X1, Y, 0.05)
        assert loss[k] == pytest.approx(lk, abs=1e-12)
        np.testing.assert_allclose(G[k], gk, atol=1e-12)
