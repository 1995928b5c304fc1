"""PCA compression of raw garment features to the model input size."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

PCA_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    total_variance: float

    @property
    def raw_dim(self):
        return self.components.shape[1]

    @property
    def d_e(self):
        return self.components.shape[0]


def pca_fit(raw_embeddings, d_e):
    """Fit a ``d_e``-component PCA through an SVD of the centred matrix.

    Each component is sign-normalised so that its largest-magnitude entry is
    positive.
    """
    X = np.asarray(raw_embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("raw_embeddings must be a 2-D matrix")
    n, dim = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("raw_embeddings contain non-finite values")
    d_e = int(d_e)
    if d_e < 1 or d_e > min(n, dim):
        raise ValueError(f"d_e={d_e} outside [1, min(N, D)={min(n, dim)}]")

    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:d_e].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d_e), pivot])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]

    eig = s**2 / (n - 1)
    total = float(eig.sum())
    ratio = eig[:d_e] / total if total > 0 else np.zeros(d_e)
    return PcaModel(mean, comps, eig[:d_e].copy(), ratio, total)


def pca_transform(model, x):
    """Project one vector (or a row matrix) onto the fitted components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.raw_dim:
        raise ValueError(f"expected raw dimension {model.raw_dim}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def pca_inverse_transform(model, z):
    z = np.asarray(z, dtype=np.float64)
    return z @ model.components + model.mean


def save_pca(path, model):
    payload = {
        "version": PCA_FORMAT_VERSION,
        "raw_dim": model.raw_dim,
        "d_e": model.d_e,
        "total_variance": model.total_variance,
        "mean": model.mean.tolist(),
        "components": model.components.ravel().tolist(),
        "explained_variance": model.explained_variance.tolist(),
        "explained_variance_ratio": model.explained_variance_ratio.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_pca(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != PCA_FORMAT_VERSION:
        raise ValueError(f"unsupported PCA checkpoint version {payload.get('version')!r}")
    raw_dim, d_e = int(payload["raw_dim"]), int(payload["d_e"])
    comps = np.array(payload["components"], dtype=np.float64).reshape(d_e, raw_dim)
    return PcaModel(
        np.array(payload["mean"], dtype=np.float64),
        comps,
        np.array(payload["explained_variance"], dtype=np.float64),
        np.array(payload["explained_variance_ratio"], dtype=np.float64),
        float(payload["total_variance"]),
    )


class EmbeddingPCA(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`pca_fit` / :func:`pca_transform`."""

    def __init__(self, n_components=128):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.model_ = pca_fit(X, self.n_components)
        self.components_ = self.model_.components
        self.mean_ = self.model_.mean
        self.explained_variance_ratio_ = self.model_.explained_variance_ratio
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return pca_transform(self.model_, X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return pca_inverse_transform(self.model_, check_array(Z, dtype=np.float64))
