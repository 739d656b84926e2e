"""Distribution and consistency metrics: Frechet distance over toy features,
inception-style score, R-precision retrieval, and layout agreement.

The feature extractor backing the Frechet distance is a fixed random-weight
conv map ("toy-FID"): scores are comparable only within this artifact, never
against pretrained-network numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .ssm import SemMatrix
from .tensor import ShapeError

_PSD_TOL = 1e-8


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Mean and unbiased covariance of (n, d) features; requires n >= d + 1."""
    f = np.asarray(features, dtype=np.float64)
    n, d = f.shape
    if n < d + 1:
        raise DataError(f"need at least d+1={d + 1} samples for a full covariance, got {n}")
    mu = f.mean(axis=0)
    c = f - mu
    return GaussianStats(mu, (c.T @ c) / (n - 1))


class StatsAccumulator:
    """Streaming mean/scatter accumulator; merge() matches single-pass stats."""

    def __init__(self, d: int):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))

    def update(self, batch: np.ndarray) -> None:
        for x in np.asarray(batch, dtype=np.float64):
            self.n += 1
            delta = x - self.mean
            self.mean += delta / self.n
            self.m2 += np.outer(delta, x - self.mean)

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        out = StatsAccumulator(self.mean.size)
        out.n = self.n + other.n
        if out.n == 0:
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * (other.n / out.n)
        out.m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.n * other.n / out.n)
        return out

    def finalize(self) -> GaussianStats:
        if self.n < self.mean.size + 1:
            raise DataError(f"accumulated {self.n} samples, need {self.mean.size + 1}")
        return GaussianStats(self.mean.copy(), self.m2 / (self.n - 1))


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in (-1e-8, 0) are clamped to 0; anything more negative is a
    data error.
    """
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < -_PSD_TOL:
        raise DataError(f"matrix is not PSD within tolerance (min eigenvalue {vals.min()})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def newton_schulz_sqrt(m: np.ndarray, iters: int = 60) -> np.ndarray:
    """Iterative PSD matrix square root; independent oracle for _sqrt_psd."""
    sym = 0.5 * (m + m.T)
    norm = np.linalg.norm(sym)
    if norm == 0.0:
        return np.zeros_like(sym)
    y = sym / norm
    z = np.eye(sym.shape[0])
    for _ in range(iters):
        t = 0.5 * (3.0 * np.eye(sym.shape[0]) - z @ y)
        y = y @ t
        z = t @ z
    return y * np.sqrt(norm)


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}).

    The cross term uses tr((Sa Sb)^{1/2}) = tr((sqrt(Sa) Sb sqrt(Sa))^{1/2}),
    keeping the eigendecomposition on a symmetric matrix.
    """
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ShapeError(f"stat dims differ: {a.mu.shape} vs {b.mu.shape}")
    sqa = _sqrt_psd(a.sigma)
    cross = sqa @ (0.5 * (b.sigma + b.sigma.T)) @ sqa
    vals = np.linalg.eigvalsh(0.5 * (cross + cross.T))
    if vals.min() < -_PSD_TOL * max(1.0, np.abs(vals).max()):
        raise DataError(f"cross matrix not PSD (min eigenvalue {vals.min()})")
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mu - b.mu
    return float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_sqrt)


def inception_score(probs: np.ndarray) -> float:
    """exp of the mean KL divergence between per-row and marginal distributions."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise DataError(f"need (n, C) probabilities, got {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise DataError("rows must be probability distributions (sum 1 within 1e-6)")
    marginal = p.mean(axis=0)
    ratio = np.divide(p, marginal, out=np.ones_like(p), where=p > 0)
    kl = np.where(p > 0, p * np.log(ratio), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def r_precision(query_embs, candidate_embs, true_index, r: int) -> float:
    """Percent of queries whose true candidate wins top-1 cosine similarity.

    ``candidate_embs`` is (n, R, d) with the true candidate of query i at
    ``true_index[i]``; similarity ties resolve to the lowest candidate index.
    """
    q = np.asarray(query_embs, dtype=np.float64)
    c = np.asarray(candidate_embs, dtype=np.float64)
    idx = np.asarray(true_index, dtype=np.int64)
    if r > c.shape[1]:
        raise ConfigError(f"R={r} exceeds candidate pool {c.shape[1]}")
    c = c[:, :r, :]
    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    cn = c / np.maximum(np.linalg.norm(c, axis=2, keepdims=True), 1e-12)
    sims = np.einsum("nd,nrd->nr", qn, cn)
    top = sims.argmax(axis=1)  # first max on ties
    return float((top == idx).mean() * 100.0)


def layout_agreement(theta, theta_oracle) -> float:
    """Fraction of subregions whose argmax word matches the oracle's."""
    a = theta.theta.data if isinstance(theta, SemMatrix) else np.asarray(theta)
    b = theta_oracle.theta.data if isinstance(theta_oracle, SemMatrix) else np.asarray(theta_oracle)
    if a.shape != b.shape:
        raise ShapeError(f"layout_agreement: shapes {a.shape} vs {b.shape}")
    return float((a.argmax(axis=0) == b.argmax(axis=0)).mean())


class ToyFeatureExtractor:
    """Fixed seeded random-weight conv feature map for toy-FID and toy-IS."""

    def __init__(self, seed: int = 0xF1D, channels: int = 16, classes: int = 10):
        rng = np.random.default_rng(seed)
        c = channels
        self.w1 = rng.normal(scale=0.4, size=(c, 3, 3, 3))
        self.b1 = np.zeros(c)
        self.w2 = rng.normal(scale=0.25, size=(c, c, 3, 3))
        self.b2 = np.zeros(c)
        self.proj = rng.normal(scale=1.0, size=(2 * c, classes))
        self.dim = 2 * c
        self.classes = classes

    def features(self, img: np.ndarray) -> np.ndarray:
        """(3, s, s) image in [-1, 1] -> (2*channels,) feature vector."""
        h = kernels.conv3x3_fwd(np.asarray(img, dtype=np.float64), self.w1, self.b1)
        h = np.where(h >= 0, h, 0.2 * h)
        h = kernels.meanpool2_fwd(h)
        h = kernels.conv3x3_fwd(h, self.w2, self.b2)
        h = np.where(h >= 0, h, 0.2 * h)
        return np.concatenate([h.mean(axis=(1, 2)), h.max(axis=(1, 2))])

    def class_probs(self, img: np.ndarray) -> np.ndarray:
        """Softmax over a fixed random projection of the features."""
        z = self.features(img) @ self.proj
        z -= z.max()
        e = np.exp(z)
        return e / e.sum()
