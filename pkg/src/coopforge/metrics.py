"""Evaluation metrics for translated sample sets.

Everything here is pure and gradient-free: inputs are plain arrays (or
translators called in eval mode), outputs are floats or small result
records. Feature extraction goes through an explicit `FeatureMap`, so
every reported number names the map it was computed under; distances
from different maps are not comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import cycle_loss
from .rng import PURPOSE_METRIC, stream
from .tensor import Tensor

__all__ = [
    "FeatureMap",
    "ModeCoverage",
    "cycle_error",
    "default_feature_map",
    "dipd_proxy",
    "frechet_distance",
    "mode_coverage",
    "psnr",
]

_RIDGE = 1e-6
_PSNR_CAP_DB = 100.0
_KINDS = ("identity", "projection", "avgpool")


@dataclass(frozen=True)
class FeatureMap:
    """Deterministic map from raw samples to flat feature vectors.

    kind "identity" flattens samples as-is, "projection" applies a fixed
    seeded Gaussian projection down to `dim` features, and "avgpool"
    averages non-overlapping `patch` x `patch` blocks of image batches.
    Comparisons are only meaningful when both sides go through the same
    map instance.
    """

    kind: str
    dim: int = 0
    patch: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.kind == "projection" and self.dim < 1:
            raise ValueError("projection feature map needs dim >= 1")
        if self.kind == "avgpool" and self.patch < 1:
            raise ValueError("avgpool feature map needs patch >= 1")

    def apply(self, samples) -> np.ndarray:
        """Map a batch (n, ...) to float64 features (n, d)."""
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim < 2 or arr.shape[0] == 0:
            raise ValueError(f"expected a non-empty sample batch, got shape {arr.shape}")
        if self.kind == "avgpool":
            if arr.ndim != 4:
                raise ValueError(f"avgpool expects (n, c, h, w) batches, got {arr.shape}")
            n, c, h, w = arr.shape
            p = self.patch
            if h % p or w % p:
                raise ValueError(f"image {h}x{w} is not divisible by patch {p}")
            pooled = arr.reshape(n, c, h // p, p, w // p, p).mean(axis=(3, 5))
            return pooled.reshape(n, -1)
        flat = arr.reshape(arr.shape[0], -1)
        if self.kind == "identity":
            return flat
        return flat @ self._projection(flat.shape[1])

    def _projection(self, in_dim: int) -> np.ndarray:
        # Keyed by both dims so the same seed serves inputs of any size.
        gen = stream(self.seed, PURPOSE_METRIC, a=in_dim, b=self.dim)
        w = gen.standard_normal((in_dim, self.dim), dtype=np.float64)
        return w / np.sqrt(in_dim)


def default_feature_map(sample_shape: tuple[int, ...]) -> FeatureMap:
    """Identity for low-dimensional points, seeded 16-dim projection for images."""
    if len(sample_shape) == 1:
        return FeatureMap("identity")
    return FeatureMap("projection", dim=16, seed=0)


def frechet_distance(set_a, set_b, fm: FeatureMap) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}) with 1/(n-1)
    covariances. Both covariances carry a 1e-6 ridge (applied before the
    square root and kept in the trace terms, so identical sets score 0);
    the root's trace comes from the symmetric eigendecomposition of the
    symmetrized product with negative eigenvalues clipped at zero.
    """
    fa = fm.apply(set_a)
    fb = fm.apply(set_b)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature widths differ: {fa.shape[1]} vs {fb.shape[1]}")
    d = fa.shape[1]
    for side, f in (("first", fa), ("second", fb)):
        if f.shape[0] < d + 1:
            raise ValueError(
                f"{side} set has {f.shape[0]} samples; {d}-dim features need at least {d + 1}"
            )
    mu_gap = fa.mean(axis=0) - fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False).reshape(d, d) + _RIDGE * np.eye(d)
    cov_b = np.cov(fb, rowvar=False).reshape(d, d) + _RIDGE * np.eye(d)
    prod = cov_a @ cov_b
    evals = np.linalg.eigvalsh(0.5 * (prod + prod.T))
    root_trace = np.sqrt(np.clip(evals, 0.0, None)).sum()
    value = mu_gap @ mu_gap + np.trace(cov_a) + np.trace(cov_b) - 2.0 * root_trace
    return max(float(value), 0.0)


def psnr(a, b, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs hit the 100 dB cap."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("cannot score empty arrays")
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return _PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def dipd_proxy(source, translated, fm: FeatureMap) -> float:
    """L2 distance between unit-normalized features of one sample pair.

    A stand-in for learned perceptual distances: no pretrained network is
    involved, so values are comparable only under the same feature map.
    """
    x = np.asarray(source, dtype=np.float64)
    y = np.asarray(translated, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    units = []
    for f in (fm.apply(x[None])[0], fm.apply(y[None])[0]):
        norm = float(np.linalg.norm(f))
        if norm == 0.0:
            raise ValueError("zero-norm feature; normalized distance is undefined")
        units.append(f / norm)
    return float(np.linalg.norm(units[0] - units[1]))


@dataclass(frozen=True, eq=False)
class ModeCoverage:
    """Fraction of samples captured by each known generator mode."""

    fractions: np.ndarray
    uncaptured: float


def mode_coverage(samples, mode_centers, capture_radius: float) -> ModeCoverage:
    """Assign each sample to its nearest center; count it if within radius.

    Every sample lands in exactly one bucket (nearest mode, or uncaptured),
    so the fractions plus the uncaptured share account for the whole set.
    """
    pts = np.asarray(samples, dtype=np.float64)
    centers = np.asarray(mode_centers, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) sample array, got {pts.shape}")
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError(f"expected (m, d) mode centers, got {centers.shape}")
    if centers.shape[1] != pts.shape[1]:
        raise ValueError(f"centers are {centers.shape[1]}-dim but samples are {pts.shape[1]}-dim")
    if not capture_radius > 0:
        raise ValueError("capture_radius must be positive")
    dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    nearest = dist.argmin(axis=1)
    captured = dist[np.arange(len(pts)), nearest] <= capture_radius
    counts = np.bincount(nearest[captured], minlength=len(centers))
    fractions = counts.astype(np.float64) / len(pts)
    uncaptured = float(np.count_nonzero(~captured)) / len(pts)
    return ModeCoverage(fractions=fractions, uncaptured=uncaptured)


def cycle_error(g_xy, g_yx, set_x, set_y) -> float:
    """Mean L1 round-trip reconstruction error over both directions.

    Evaluated outside any recording graph, so no gradients accrue.
    """
    xs = np.asarray(set_x)
    ys = np.asarray(set_y)
    if xs.shape[0] == 0 or ys.shape[0] == 0:
        raise ValueError("cycle error needs non-empty sets on both sides")
    return float(cycle_loss(g_xy, g_yx, Tensor(xs), Tensor(ys)).data)
