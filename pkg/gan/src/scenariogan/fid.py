"""Frechet distance between real and generated image batches.

Classic FID backbones are photographic; for binary scenario images we fit a
small PCA feature extractor once on the real corpus and keep it fixed, so
scores are comparable within a run series (and only there).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class PcaFeatureExtractor:
    def __init__(self, dim: int = 16):
        self.dim = dim
        self.mean_ = None
        self.components_ = None

    def fit(self, images: np.ndarray) -> "PcaFeatureExtractor":
        X = images.reshape(images.shape[0], -1).astype(float)
        self.mean_ = X.mean(axis=0)
        _, _, vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        self.components_ = vt[:min(self.dim, vt.shape[0])]
        return self

    def transform(self, images: np.ndarray) -> np.ndarray:
        X = images.reshape(images.shape[0], -1).astype(float)
        return (X - self.mean_) @ self.components_.T


def frechet_distance(feat_a: np.ndarray, feat_b: np.ndarray) -> float:
    mu_a, mu_b = feat_a.mean(axis=0), feat_b.mean(axis=0)
    cov_a = np.cov(feat_a, rowvar=False) + 1e-8 * np.eye(feat_a.shape[1])
    cov_b = np.cov(feat_b, rowvar=False) + 1e-8 * np.eye(feat_b.shape[1])
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * covmean))


def fid_score(extractor: PcaFeatureExtractor, real: np.ndarray,
              generated: np.ndarray) -> float:
    return frechet_distance(extractor.transform(real),
                            extractor.transform(generated))
