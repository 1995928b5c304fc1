import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from outfitgen.pca import (
    EmbeddingPCA, load_pca, pca_fit, pca_inverse_transform, pca_transform, save_pca,
)


def test_line_in_3d():
    rng = np.random.default_rng(0)
    t = rng.standard_normal(30)
    X = np.outer(t, [1.0, 2.0, -2.0]) + [1, 1, 1]
    m = pca_fit(X, 1)
    np.testing.assert_allclose(m.explained_variance_ratio, [1.0], atol=1e-12)
    # signed distance along the unit direction
    x = np.array([1.0, 1.0, 1.0]) + 0.7 * np.array([1.0, 2.0, -2.0])
    u = np.array([1.0, 2.0, -2.0]) / 3.0
    u = u * np.sign(u[np.argmax(np.abs(u))])
    expect = (x - m.mean) @ u
    assert pca_transform(m, x)[0] == pytest.approx(expect, abs=1e-8)


def test_plane_in_5d():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 5))
    assert pca_fit(X, 2).explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-8)


def test_matches_covariance_eigensolver():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((200, 50))
    m = pca_fit(X, 10)
    eig = np.linalg.eigvalsh(np.cov(X, rowvar=False))[::-1]
    np.testing.assert_allclose(m.explained_variance_ratio, eig[:10] / eig.sum(), atol=1e-6)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(10), atol=1e-8)


def test_transform_mean_is_zero_and_identity_projection():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((20, 4))
    m = pca_fit(X, 4)
    np.testing.assert_allclose(pca_transform(m, m.mean), 0.0, atol=1e-12)
    x = rng.standard_normal(4)
    np.testing.assert_allclose(pca_inverse_transform(m, pca_transform(m, x)), x, atol=1e-10)


def test_projected_variance_equals_eigenvalues():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((100, 8)) * np.arange(1, 9)
    m = pca_fit(X, 5)
    Z = pca_transform(m, X)
    np.testing.assert_allclose(Z.var(axis=0, ddof=1), m.explained_variance, rtol=1e-6)


def test_reconstruction_error_is_discarded_variance():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 6))
    full = pca_fit(X, 6)
    for d in range(1, 7):
        m = pca_fit(X, d)
        err = ((X - pca_inverse_transform(m, pca_transform(m, X))) ** 2).sum() / (len(X) - 1)
        assert err == pytest.approx(full.explained_variance[d:].sum(), rel=1e-6, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ratios_nonincreasing_and_error_monotone(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((15, 7))
    errs = []
    for d in range(1, 8):
        m = pca_fit(X, d)
        r = m.explained_variance_ratio
        assert np.all(np.diff(r) <= 1e-12) and r.sum() <= 1 + 1e-8
        errs.append(((X - pca_inverse_transform(m, pca_transform(m, X))) ** 2).sum())
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


def test_errors():
    with pytest.raises(ValueError):
        pca_fit(np.ones((3, 2)), 3)
    with pytest.raises(ValueError):
        pca_fit(np.array([[1.0, np.nan], [0.0, 1.0]]), 1)
    with pytest.raises(ValueError):
        pca_fit(np.ones((1, 4)), 1)
    m = pca_fit(np.random.default_rng(0).standard_normal((5, 3)), 2)
    with pytest.raises(ValueError):
        pca_transform(m, np.ones(4))


def test_checkpoint_roundtrip(tmp_path):
    m = pca_fit(np.random.default_rng(6).standard_normal((30, 6)), 3)
    save_pca(tmp_path / "p.json", m)
    back = load_pca(tmp_path / "p.json")
    np.testing.assert_array_equal(back.components, m.components)
    np.testing.assert_array_equal(back.mean, m.mean)


def test_estimator_wrapper():
    X = np.random.default_rng(7).standard_normal((30, 6))
    est = EmbeddingPCA(n_components=3).fit(X)
    assert est.get_params() == {"n_components": 3}
    np.testing.assert_allclose(est.transform(X), pca_transform(pca_fit(X, 3), X))
