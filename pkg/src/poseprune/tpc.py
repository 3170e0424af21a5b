"""Temporal token pruning: density-peaks selection and baseline strategies.

All selectors return frame indexes in strictly ascending order. Ties are
always resolved toward the lower frame index, so every strategy is a pure
deterministic function of its input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import default_knn
from .errors import ConfigError, ShapeError


@dataclass
class ClusterResult:
    selected: np.ndarray  # (f,) ascending frame indexes of the cluster centres
    density: np.ndarray  # (F,)
    delta: np.ndarray  # (F,)
    score: np.ndarray  # (F,) density * delta
    labels: np.ndarray  # (F,) centre index each frame is assigned to


def spatial_pool(tokens):
    """Average the joint axis away: (..., F, J, C) -> (..., F, C)."""
    tokens = np.asarray(tokens)
    if tokens.ndim < 3 or tokens.shape[-2] < 1:
        raise ShapeError(f"expected (..., F, J, C) tokens, got {tokens.shape}")
    return tokens.mean(axis=-2)


def pairwise_sq_dists(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((len(x), len(x)))
    for i in range(len(x)):
        diff = x - x[i]
        out[i] = (diff * diff).sum(axis=1)
    return out


def local_density(pooled, k):
    """exp(-mean squared distance to the k nearest other tokens)."""
    pooled = np.asarray(pooled, dtype=np.float64)
    frames = len(pooled)
    if not 1 <= k < frames:
        raise ConfigError(f"knn k={k} must satisfy 1 <= k < F={frames}")
    d2 = pairwise_sq_dists(pooled)
    np.fill_diagonal(d2, np.inf)
    nearest = np.sort(d2, axis=1)[:, :k]
    return np.exp(-nearest.sum(axis=1) / k)


def density_rank(density):
    """Position of each token in descending-density order (index breaks ties)."""
    density = np.asarray(density)
    order = np.lexsort((np.arange(len(density)), -density))
    rank = np.empty(len(density), dtype=np.int64)
    rank[order] = np.arange(len(density))
    return rank


def min_distance_delta(pooled, density):
    """Distance to the nearest token of higher density.

    The densest token (after index tie-breaking) gets its largest distance
    to any other token instead.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    density = np.asarray(density, dtype=np.float64)
    if density.shape != (len(pooled),):
        raise ShapeError(f"density shape {density.shape} vs {len(pooled)} tokens")
    dist = np.sqrt(pairwise_sq_dists(pooled))
    rank = density_rank(density)
    higher = rank[None, :] < rank[:, None]
    nearest_higher = np.where(higher, dist, np.inf).min(axis=1)
    return np.where(higher.any(axis=1), nearest_higher, dist.max(axis=1))


def top_indexes(scores, f):
    """Indexes of the f largest scores (lower index wins ties), ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= f <= len(scores):
        raise ConfigError(f"cannot select f={f} of {len(scores)} tokens")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:f])


def cluster_tokens(pooled, f, k=None):
    """Density-peaks clustering over pooled frame features."""
    pooled = np.asarray(pooled, dtype=np.float64)
    frames = len(pooled)
    if not 1 <= f <= frames:
        raise ConfigError(f"cannot select f={f} of F={frames} tokens")
    if frames == 1:
        one = np.ones(1)
        return ClusterResult(np.zeros(1, dtype=np.int64), one, np.zeros(1), np.zeros(1),
                             np.zeros(1, dtype=np.int64))
    k = default_knn(frames) if k is None else k
    density = local_density(pooled, k)
    delta = min_distance_delta(pooled, density)
    score = density * delta
    centers = top_indexes(score, f)

    dist = np.sqrt(pairwise_sq_dists(pooled))
    rank = density_rank(density)
    labels = np.empty(frames, dtype=np.int64)
    for i in range(frames):
        # nearest centre that is denser than i; any centre if none is
        cand = centers[rank[centers] < rank[i]]
        if cand.size == 0:
            cand = centers
        labels[i] = cand[np.argmin(dist[i, cand])]
    labels[centers] = centers
    return ClusterResult(centers, density, delta, score, labels)


def select_tpc(tokens, f, k=None):
    """Keep the f cluster-centre frames of an (F, J, C) token grid.

    Returns the pruned (f, J, C) grid in ascending frame order and the full
    clustering diagnostics.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 3:
        raise ShapeError(f"expected (F, J, C) tokens, got {tokens.shape}")
    result = cluster_tokens(spatial_pool(tokens), f, k)
    return tokens[result.selected], result


def select_uniform(frames, f):
    """Evenly spaced frames round(i (F-1)/(f-1)); the centre frame when f = 1."""
    if not 1 <= f <= frames:
        raise ConfigError(f"cannot select f={f} of F={frames} frames")
    if f == 1:
        return np.array([frames // 2], dtype=np.int64)
    i = np.arange(f, dtype=np.int64)
    # round-half-up in exact integer arithmetic
    return (2 * i * (frames - 1) + (f - 1)) // (2 * (f - 1))


def select_by_attention(attn_scores, f, frames=None):
    attn_scores = np.asarray(attn_scores, dtype=np.float64)
    if attn_scores.ndim != 1 or (frames is not None and len(attn_scores) != frames):
        raise ShapeError(f"attention scores shape {attn_scores.shape} vs F={frames}")
    return top_indexes(attn_scores, f)


def motion_scores(poses2d):
    """Mean joint displacement from the previous frame; frame 0 scores 0."""
    poses2d = np.asarray(poses2d, dtype=np.float64)
    if poses2d.ndim != 3:
        raise ShapeError(f"expected (F, J, 2) poses, got {poses2d.shape}")
    motion = np.zeros(len(poses2d))
    step = np.linalg.norm(np.diff(poses2d, axis=0), axis=-1)
    motion[1:] = step.mean(axis=1)
    return motion


def select_by_motion(poses2d, f):
    return top_indexes(motion_scores(poses2d), f)


def frame_noise(selected, detected2d, gt2d):
    """Mean 2D joint error of the detector, restricted to the selected frames."""
    detected2d = np.asarray(detected2d, dtype=np.float64)
    gt2d = np.asarray(gt2d, dtype=np.float64)
    if detected2d.shape != gt2d.shape or detected2d.ndim != 3:
        raise ShapeError(f"2D pose shapes differ: {detected2d.shape} vs {gt2d.shape}")
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0 or selected.min() < 0 or selected.max() >= len(gt2d):
        raise ShapeError(f"selected frames out of range for F={len(gt2d)}")
    err = np.linalg.norm(detected2d[selected] - gt2d[selected], axis=-1)
    return float(err.mean())
