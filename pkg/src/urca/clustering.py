"""Diagonal-covariance Gaussian mixtures with BIC selection, and chunk grouping on top."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from urca.embedding import EmbeddingVector
from urca.reduction import ReducerParams, reduce_umap
from urca.retrieval import ScoredChunk

MAX_EM_ITERATIONS = 200
RELATIVE_LL_TOLERANCE = 1e-6
VARIANCE_FLOOR = 1e-6


@dataclass
class GmmModel:
    n_components: int
    weights: np.ndarray     # (c,)
    means: np.ndarray       # (c, d)
    variances: np.ndarray   # (c, d), floored at VARIANCE_FLOOR
    log_likelihood: float   # total over points, for the returned parameters
    ll_trace: tuple[float, ...]
    bic: float
    converged: bool


@dataclass(frozen=True)
class Cluster:
    id: int
    members: tuple[ScoredChunk, ...]
    mean_query_similarity: float


def _log_component_densities(points: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    # (n, c): log N(x_i | mean_c, diag(var_c))
    diff = points[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    log_norm = np.sum(np.log(2.0 * np.pi * variances), axis=1)
    return -0.5 * (log_norm[None, :] + quad)


def _e_step(
    points: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> tuple[np.ndarray, float]:
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    log_joint = log_weights[None, :] + _log_component_densities(points, means, variances)
    log_norm = logsumexp(log_joint, axis=1)
    resp = np.exp(log_joint - log_norm[:, None])
    return resp, float(log_norm.sum())


def _m_step(points: np.ndarray, resp: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = points.shape[0]
    counts = resp.sum(axis=0)
    weights = counts / n
    safe = np.maximum(counts, 1e-12)[:, None]
    means = (resp.T @ points) / safe
    variances = (resp.T @ (points * points)) / safe - means * means
    # Flooring keeps collapsed components finite; since the per-component
    # objective is unimodal in the variance, clamping is still the exact
    # constrained M-step, so the likelihood trace stays non-decreasing.
    variances = np.maximum(variances, VARIANCE_FLOOR)
    return weights, means, variances


def _kmeanspp_centers(points: np.ndarray, n_components: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < n_components:
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def n_free_parameters(n_components: int, dim: int) -> int:
    # means + diagonal variances per component, plus the simplex of weights
    return n_components * (2 * dim) + (n_components - 1)


def bic_score(log_likelihood: float, n_components: int, n_points: int, dim: int) -> float:
    return n_free_parameters(n_components, dim) * np.log(n_points) - 2.0 * log_likelihood


def fit_gmm(points: np.ndarray, n_components: int, seed: int = 0) -> GmmModel:
    """EM fit of a diagonal-covariance Gaussian mixture.

    Initialized from k-means++-style centers drawn with the given seed and a
    hard nearest-center assignment. Converges when the relative change in
    total log-likelihood drops below RELATIVE_LL_TOLERANCE, or after
    MAX_EM_ITERATIONS. The trace holds the log-likelihood at every E-step,
    and the stored log_likelihood always matches the returned parameters.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"points must be a non-empty 2-d array, got shape {x.shape}")
    n = x.shape[0]
    if not 1 <= n_components <= n:
        raise ValueError(f"n_components must be in [1, {n}], got {n_components}")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(x, n_components, rng)
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    hard = np.argmin(d2, axis=1)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), hard] = 1.0
    weights, means, variances = _m_step(x, resp)

    trace: list[float] = []
    ll_prev: float | None = None
    converged = False
    for _ in range(MAX_EM_ITERATIONS):
        resp, ll = _e_step(x, weights, means, variances)
        trace.append(ll)
        if ll_prev is not None and abs(ll - ll_prev) / max(abs(ll_prev), 1e-12) < RELATIVE_LL_TOLERANCE:
            converged = True
            break
        weights, means, variances = _m_step(x, resp)
        ll_prev = ll
    else:
        # ran out of iterations right after an M-step: evaluate those params
        _, ll = _e_step(x, weights, means, variances)
        trace.append(ll)

    log_likelihood = trace[-1]
    return GmmModel(
        n_components=n_components,
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=log_likelihood,
        ll_trace=tuple(trace),
        bic=float(bic_score(log_likelihood, n_components, n, x.shape[1])),
        converged=converged,
    )


def gmm_responsibilities(model: GmmModel, points: np.ndarray) -> np.ndarray:
    """Posterior component responsibilities, one row per point."""
    x = np.asarray(points, dtype=np.float64)
    resp, _ = _e_step(x, model.weights, model.means, model.variances)
    return resp


def select_components_bic(points: np.ndarray, max_components: int, seed: int = 0) -> GmmModel:
    """Fit 1..min(max_components, n_points) components and keep the lowest BIC.

    Ties go to the smaller model: a tied larger fit buys no likelihood.
    """
    x = np.asarray(points, dtype=np.float64)
    if max_components < 1:
        raise ValueError(f"max_components must be >= 1, got {max_components}")
    best: GmmModel | None = None
    for c in range(1, min(max_components, x.shape[0]) + 1):
        model = fit_gmm(x, c, seed)
        if best is None or model.bic < best.bic:
            best = model
    assert best is not None
    return best


def assign_members(responsibilities: np.ndarray, threshold: float) -> dict[int, list[int]]:
    """Soft assignment: each point joins components with responsibility >= threshold.

    Every point additionally joins its argmax component (ties to the lowest
    index), so nothing is dropped even when no responsibility clears the
    threshold.
    """
    argmax = np.argmax(responsibilities, axis=1)
    out: dict[int, list[int]] = {}
    for i in range(responsibilities.shape[0]):
        components = set(np.nonzero(responsibilities[i] >= threshold)[0].tolist())
        components.add(int(argmax[i]))
        for comp in sorted(components):
            out.setdefault(comp, []).append(i)
    return out


def cluster_chunks(
    scored: list[ScoredChunk],
    vectors: list[EmbeddingVector],
    reducer: ReducerParams | None = None,
    max_components: int = 8,
    assign_threshold: float = 0.1,
    seed: int = 0,
) -> list[Cluster]:
    """Reduce chunk vectors, pick a mixture by BIC, and group chunks softly.

    Every chunk joins each component whose responsibility reaches
    assign_threshold, and always joins its argmax component (ties to the
    lowest index), so no chunk is dropped. Empty components vanish and the
    survivors are renumbered 0..n-1 by descending mean query similarity.
    """
    if not scored:
        raise ValueError("cannot cluster zero chunks")
    if len(vectors) != len(scored):
        raise ValueError(f"got {len(scored)} chunks but {len(vectors)} vectors")
    if not 0.0 <= assign_threshold <= 1.0:
        raise ValueError(f"assign_threshold must be in [0, 1], got {assign_threshold}")

    x = np.stack([v.as_array() for v in vectors])
    params = reducer or ReducerParams(seed=seed)
    reduced = reduce_umap(x, params)
    cap = max(1, min(max_components, len(scored) // 2))
    model = select_components_bic(reduced, cap, seed)
    resp = gmm_responsibilities(model, reduced)
    member_rows = assign_members(resp, assign_threshold)

    provisional = []
    for comp in sorted(member_rows):
        rows = member_rows[comp]
        mean_sim = float(np.mean([scored[i].score for i in rows]))
        provisional.append((comp, rows, mean_sim))
    provisional.sort(key=lambda item: (-item[2], item[0]))

    return [
        Cluster(id=new_id, members=tuple(scored[i] for i in rows), mean_query_similarity=mean_sim)
        for new_id, (_, rows, mean_sim) in enumerate(provisional)
    ]


def group_contiguous(scored: list[ScoredChunk], n_groups: int, seed: int = 0) -> list[Cluster]:
    """Naive replacement for cluster_chunks: seeded shuffle, then contiguous slices.

    Slice sizes differ by at most one, with the remainder going to the
    earliest groups.
    """
    if n_groups < 1:
        raise ValueError(f"n_groups must be >= 1, got {n_groups}")
    if n_groups > len(scored):
        raise ValueError(f"n_groups={n_groups} exceeds the {len(scored)} chunks available")
    perm = np.random.default_rng(seed).permutation(len(scored))
    shuffled = [scored[int(i)] for i in perm]

    base, extra = divmod(len(scored), n_groups)
    clusters = []
    start = 0
    for group in range(n_groups):
        size = base + (1 if group < extra else 0)
        members = tuple(shuffled[start:start + size])
        start += size
        mean_sim = float(np.mean([m.score for m in members]))
        clusters.append(Cluster(id=group, members=members, mean_query_similarity=mean_sim))
    return clusters
