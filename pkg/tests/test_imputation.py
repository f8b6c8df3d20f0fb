import numpy as np
import pytest
import scipy.sparse
from hypothesis import given, settings
from hypothesis import strategies as st

from roadeval.errors import InputError, ShapeMismatch, SolverDiverged
from roadeval.imputation import (
    ImputationConfig,
    assemble_system,
    conjugate_gradient,
    equation_residuals,
    image_rng,
    impute,
    impute_dataset,
    impute_fixed,
    impute_noisy_linear,
    isolated_unknowns,
    probe_fixed_inverse,
    solve_system,
)

NOISELESS = ImputationConfig(strategy="noisy_linear", noise_sigma=0.0)


def loop_system(img, unknown):
    """Dense system built pixel by pixel, as an independent oracle."""
    h, w = unknown.shape
    order = [(i, j) for i in range(h) for j in range(w) if unknown[i, j]]
    pos = {p: r for r, p in enumerate(order)}
    A = np.zeros((len(order), len(order)))
    b = np.zeros(len(order))
    for r, (i, j) in enumerate(order):
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                a, c = i + di, j + dj
                if not (0 <= a < h and 0 <= c < w):
                    continue
                wt = 1 / 6 if di == 0 or dj == 0 else 1 / 12
                A[r, r] += wt
                if unknown[a, c]:
                    A[r, pos[(a, c)]] -= wt
                else:
                    b[r] += wt * img[a, c]
    return A, b


def test_corner_example():
    img = np.array([[0.0, 0.6], [0.6, 0.3]])
    unknown = np.array([[True, False], [False, False]])
    s = assemble_system(img, unknown)
    assert s.entries == [(0, 0, pytest.approx(5 / 12, abs=1e-15))]
    assert s.rhs[0] == pytest.approx(0.225, abs=1e-15)
    assert solve_system(s)[0] == pytest.approx(0.54, abs=1e-12)


def test_system_matches_loop_oracle():
    rng = np.random.default_rng(0)
    img = rng.random((7, 9))
    unknown = rng.random((7, 9)) < 0.5
    unknown[0, 0] = False
    s = assemble_system(img, unknown)
    A, b = loop_system(img, unknown)
    np.testing.assert_allclose(s.matrix().toarray(), A, atol=1e-15)
    np.testing.assert_allclose(s.rhs, b, atol=1e-15)
    np.testing.assert_allclose(s.matrix().toarray(), s.matrix().toarray().T)


def test_cg_matches_dense_solve():
    rng = np.random.default_rng(1)
    img = rng.random((10, 10))
    unknown = rng.random((10, 10)) < 0.7
    unknown[5, 5] = False
    A, b = loop_system(img, unknown)
    x = conjugate_gradient(scipy.sparse.csr_matrix(A), b, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-10)


def test_cg_multi_rhs_and_failure():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((20, 20))
    A = M @ M.T + 20 * np.eye(20)
    B = rng.standard_normal((20, 3))
    X = conjugate_gradient(A, B, tol=1e-12)
    np.testing.assert_allclose(A @ X, B, atol=1e-10)
    with pytest.raises(SolverDiverged):
        conjugate_gradient(A, B[:, 0], tol=1e-14, max_iters=1)


def test_constant_image_is_reproduced():
    img = np.full((12, 12, 3), 0.37)
    mask = np.zeros((12, 12), bool)
    mask[3:9, 2:10] = True
    out = impute_noisy_linear(img, mask, "low", NOISELESS)
    np.testing.assert_allclose(out, img, atol=1e-9)


def test_linear_ramp_is_reproduced_in_the_interior():
    ii, jj = np.mgrid[0:10, 0:10]
    img = (0.1 * ii - 0.05 * jj + 0.3).astype(float)
    mask = np.zeros((10, 10), bool)
    mask[2:8, 3:7] = True
    out = impute_noisy_linear(img, mask, "low", NOISELESS)[..., 0]
    np.testing.assert_allclose(out, img, atol=1e-9)


def test_equation_residuals_small():
    rng = np.random.default_rng(3)
    img = rng.random((28, 28))
    for frac in (0.1, 0.5, 0.9):
        mask = rng.random((28, 28)) < frac
        out = impute_noisy_linear(img, mask, "low", NOISELESS)
        assert np.abs(equation_residuals(out, mask)).max() < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.sampled_from(["low", "high"]))
def test_known_pixels_untouched(seed, frac, part):
    rng = np.random.default_rng(seed)
    img = rng.standard_normal((8, 8, 2))
    mask = rng.random((8, 8)) < frac
    out = impute_noisy_linear(img, mask, part, ImputationConfig(), rng=np.random.default_rng(0))
    known = ~mask if part == "low" else mask
    assert out[known].tobytes() == img[known].tobytes()


def test_nothing_removed_is_identity():
    img = np.random.default_rng(4).random((5, 5, 1))
    out = impute_noisy_linear(img, np.zeros((5, 5), bool), "low", ImputationConfig())
    assert out.tobytes() == img.tobytes()


def test_isolated_regions_use_fallback():
    img = np.random.default_rng(5).random((6, 6, 2))
    everything = np.ones((6, 6), bool)
    assert isolated_unknowns(everything).all()
    out = impute_noisy_linear(img, everything, "low", NOISELESS, fallback=[0.25, -1.0])
    np.testing.assert_array_equal(out[..., 0], 0.25)
    np.testing.assert_array_equal(out[..., 1], -1.0)
    partial = np.zeros((6, 6), bool)
    partial[2:4, 2:4] = True
    assert not isolated_unknowns(partial).any()


def test_noise_scale():
    img = np.zeros((40, 40))
    img[0, 0] = 2.0  # range 2 -> sigma 0.02
    mask = np.ones((40, 40), bool)
    mask[0, :] = False
    mask[:, 0] = False
    base = impute_noisy_linear(img, mask, "low", NOISELESS)
    noisy = impute_noisy_linear(img, mask, "low", ImputationConfig(), rng=np.random.default_rng(7))
    diff = (noisy - base)[mask]
    assert diff.std() == pytest.approx(0.02, rel=0.05)
    assert abs(diff.mean()) < 0.002
    assert ImputationConfig(noise_sigma=0.3).noise_scale((0, 10)) == 0.3


def test_fixed_imputation_and_probe():
    rng = np.random.default_rng(8)
    img = rng.random((6, 6, 3))
    mask = rng.random((6, 6)) < 0.4
    out = impute_fixed(img, mask, "low", -1.0)
    assert (out[mask] == -1.0).all()
    assert out[~mask].tobytes() == img[~mask].tobytes()
    np.testing.assert_array_equal(probe_fixed_inverse(out, -1.0), mask)
    out = impute(img, mask, "high", ImputationConfig(strategy="fixed", fill_value=[1, 2, 3]))
    np.testing.assert_array_equal(out[~mask], np.tile([1.0, 2.0, 3.0], ((~mask).sum(), 1)))


def test_config_validation():
    assert ImputationConfig(strategy="noisy-linear").strategy == "noisy_linear"
    with pytest.raises(InputError):
        ImputationConfig(strategy="blur")
    with pytest.raises(InputError):
        ImputationConfig(solver_tol=0)
    with pytest.raises(ShapeMismatch):
        impute_noisy_linear(np.zeros((4, 4)), np.zeros((3, 3), bool), "low", ImputationConfig())


def test_dataset_matches_single_image_path():
    rng = np.random.default_rng(9)
    images = rng.random((6, 8, 8, 2))
    shared = rng.random((8, 8)) < 0.4
    removed = np.stack([shared, shared, rng.random((8, 8)) < 0.4, shared, rng.random((8, 8)) < 0.6, shared])
    cfg = ImputationConfig(rng_seed=11)
    vr = (float(images.min()), float(images.max()))
    mean = images.mean(axis=(0, 1, 2))
    batch = impute_dataset(images, removed, cfg, channel_mean=mean, value_range=vr)
    for i in range(6):
        single = impute_noisy_linear(images[i], removed[i], "low", cfg, rng=image_rng(11, i),
                                     fallback=mean, value_range=vr)
        np.testing.assert_allclose(batch[i], single, atol=1e-9)
    # noise depends on the image index, not on the batch composition
    sub = impute_dataset(images[3:], removed[3:], cfg, channel_mean=mean, value_range=vr, indices=[3, 4, 5])
    np.testing.assert_allclose(sub, batch[3:], atol=1e-9)
