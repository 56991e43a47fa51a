"""Seeded UMAP-style dimensionality reduction for retrieved-chunk embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

SMOOTH_TOLERANCE = 1e-5
SMOOTH_ITERATIONS = 64
MIN_SIGMA_SCALE = 1e-3
NEGATIVE_SAMPLE_RATE = 5
GRAD_CLIP = 4.0


@dataclass(frozen=True)
class ReducerParams:
    """Knobs for the reducer. n_neighbors=None means max(2, floor(sqrt(n))) at fit time."""

    target_dim: int = 10
    n_neighbors: int | None = None
    min_dist: float = 0.1
    n_epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.target_dim < 1:
            raise ValueError(f"target_dim must be >= 1, got {self.target_dim}")
        if self.n_neighbors is not None and self.n_neighbors < 2:
            raise ValueError(f"n_neighbors must be >= 2, got {self.n_neighbors}")
        if self.min_dist < 0:
            raise ValueError(f"min_dist must be >= 0, got {self.min_dist}")
        if self.n_epochs < 1:
            raise ValueError(f"n_epochs must be >= 1, got {self.n_epochs}")


def _cosine_distances(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1)
    norms = np.where(norms == 0.0, 1.0, norms)
    unit = points / norms[:, None]
    dist = 1.0 - unit @ unit.T
    return np.clip(dist, 0.0, 2.0)

def _smooth_knn_sigmas(knn_dists: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Per-point bandwidths via the usual binary search.

    sigma_i is chosen so the smoothed neighbourhood weights sum to log2(k),
    which keeps effective connectivity comparable across dense and sparse
    regions. rho_i (distance to the nearest neighbour) anchors local
    connectivity: the nearest neighbour always gets weight 1.
    """
    n, k = knn_dists.shape
    target = math.log2(k)
    sigmas = np.empty(n)
    for i in range(n):
        lo, hi, mid = 0.0, np.inf, 1.0
        shifted = np.maximum(knn_dists[i] - rho[i], 0.0)
        for _ in range(SMOOTH_ITERATIONS):
            psum = float(np.exp(-shifted / mid).sum())
            if abs(psum - target) < SMOOTH_TOLERANCE:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        mean_dist = float(knn_dists[i].mean())
        sigmas[i] = max(mid, MIN_SIGMA_SCALE * mean_dist) if mean_dist > 0 else mid
    return sigmas


def _fuzzy_graph(points: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Symmetric fuzzy k-NN graph over cosine distance (probabilistic union)."""
    n = points.shape[0]
    dist = _cosine_distances(points)
    np.fill_diagonal(dist, np.inf)
    knn_idx = np.argsort(dist, axis=1, kind="stable")[:, :n_neighbors]
    knn_dists = np.take_along_axis(dist, knn_idx, axis=1)
    rho = knn_dists[:, 0]
    sigmas = _smooth_knn_sigmas(knn_dists, rho)

    weights = np.zeros((n, n))
    w = np.exp(-np.maximum(knn_dists - rho[:, None], 0.0) / sigmas[:, None])
    rows = np.repeat(np.arange(n), n_neighbors)
    weights[rows, knn_idx.ravel()] = w.ravel()
    graph = weights + weights.T - weights * weights.T
    np.fill_diagonal(graph, 0.0)
    return graph


def _fit_output_curve(min_dist: float) -> tuple[float, float]:
    """Fit the a, b of the low-dimensional similarity curve 1/(1 + a d^(2b)).

    Matches the piecewise target that is 1 inside min_dist and decays
    exponentially beyond it, the usual translation of min_dist into the
    differentiable attractive/repulsive kernel.
    """
    xv = np.linspace(0.0, 3.0, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist)))

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    (a, b), _ = curve_fit(curve, xv, yv, p0=(1.0, 1.0), maxfev=10_000)
    return float(a), float(b)


def _optimize_layout(
    graph: np.ndarray, out_dim: int, n_epochs: int, min_dist: float, rng: np.random.Generator
) -> np.ndarray:
    n = graph.shape[0]
    a, b = _fit_output_curve(min_dist)
    heads, tails = np.nonzero(graph)
    edge_w = graph[heads, tails]
    if len(heads) == 0:
        return rng.uniform(-10.0, 10.0, size=(n, out_dim))

    y = rng.uniform(-10.0, 10.0, size=(n, out_dim))
    for epoch in range(n_epochs):
        alpha = 1.0 - epoch / n_epochs

        # Attraction along every directed edge, scaled by membership weight.
        diff = y[heads] - y[tails]
        d2 = np.einsum("ij,ij->i", diff, diff)
        pos = np.zeros_like(d2)
        nz = d2 > 0.0
        d2b = np.power(d2[nz], b)
        pos[nz] = (-2.0 * a * b * d2b / d2[nz]) / (a * d2b + 1.0)
        grad = np.clip((edge_w * pos)[:, None] * diff, -GRAD_CLIP, GRAD_CLIP)
        np.add.at(y, heads, alpha * grad)

        # Negative-sampling repulsion: push each head away from random points.
        neg_targets = rng.integers(0, n, size=len(heads) * NEGATIVE_SAMPLE_RATE)
        neg_heads = np.repeat(heads, NEGATIVE_SAMPLE_RATE)
        keep = neg_targets != neg_heads
        neg_heads, neg_targets = neg_heads[keep], neg_targets[keep]
        diff = y[neg_heads] - y[neg_targets]
        d2 = np.einsum("ij,ij->i", diff, diff)
        rep = (2.0 * b) / ((1e-3 + d2) * (a * np.power(d2, b) + 1.0))
        grad = np.clip(rep[:, None] * diff, -GRAD_CLIP, GRAD_CLIP)
        np.add.at(y, neg_heads, alpha * grad)
    return y


def reduce_umap(points: np.ndarray, params: ReducerParams | None = None) -> np.ndarray:
    """Reduce points to at most params.target_dim dimensions.

    Small inputs (n_points <= target_dim + 2) pass through unchanged, since
    a manifold estimate over so few points is noise. Otherwise the output
    dimension is min(target_dim, input_dim, n_points - 2). Fixed seed and
    inputs give bitwise-identical output.
    """
    params = params or ReducerParams()
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"points must be 2-d, got shape {x.shape}")
    n, input_dim = x.shape
    if n == 0:
        raise ValueError("cannot reduce zero points")
    if n <= params.target_dim + 2:
        return x.copy()

    out_dim = min(params.target_dim, input_dim, n - 2)
    n_neighbors = params.n_neighbors if params.n_neighbors is not None else max(2, math.isqrt(n))
    n_neighbors = min(n_neighbors, n - 1)

    graph = _fuzzy_graph(x, n_neighbors)
    rng = np.random.default_rng(params.seed)
    return _optimize_layout(graph, out_dim, params.n_epochs, params.min_dist, rng)
