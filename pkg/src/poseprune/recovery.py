"""Restoring full temporal resolution from a pruned token grid.

``recover_tra`` is a single cross-attention layer whose queries are a
learnable, zero-initialised token bank; the interpolation variants are
parameter-free baselines expressed as an (F, f) blending matrix so that the
same matrix serves the forward and (transposed) backward pass.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, attention, attention_backward, matmul, matmul_backward


class TraParams:
    """Query bank (f' x C, zeros at init) plus bias-free Q/K/V/O projections."""

    def __init__(self, recovered, channels, heads=8, rng=None):
        if channels % heads:
            raise ShapeError(f"channels {channels} not divisible by {heads} heads")
        rng = np.random.default_rng(0) if rng is None else rng
        std = math.sqrt(1.0 / channels)
        self.heads = heads
        self.queries = Tensor(np.zeros((recovered, channels)))
        self.wq = Tensor(rng.standard_normal((channels, channels)) * std)
        self.wk = Tensor(rng.standard_normal((channels, channels)) * std)
        self.wv = Tensor(rng.standard_normal((channels, channels)) * std)
        self.wo = Tensor(rng.standard_normal((channels, channels)) * std)

    @property
    def recovered(self):
        return self.queries.shape[0]

    @property
    def channels(self):
        return self.queries.shape[1]

    def parameters(self):
        return [self.queries, self.wq, self.wk, self.wv, self.wo]

    def count(self):
        return sum(p.size for p in self.parameters())


def mca(queries, keys_values, params):
    """Multi-head cross-attention: O(Attention(q Wq, kv Wk, kv Wv)) Wo."""
    queries = np.asarray(queries)
    keys_values = np.asarray(keys_values)
    c = params.channels
    if queries.shape[-1] != c or keys_values.shape[-1] != c:
        raise ShapeError(f"mca expects {c} channels, got {queries.shape} / {keys_values.shape}")
    q, cq = matmul(queries, params.wq.data)
    k, ck = matmul(keys_values, params.wk.data)
    v, cv = matmul(keys_values, params.wv.data)
    a, ca = attention(q, k, v, params.heads)
    out, co = matmul(a, params.wo.data)
    return out, (cq, ck, cv, ca, co)


def mca_backward(dout, cache, params):
    """Accumulate projection gradients; return (d_queries, d_keys_values)."""
    cq, ck, cv, ca, co = cache
    da, dwo = matmul_backward(dout, co)
    dq, dk, dv = attention_backward(da, ca)
    dqueries, dwq = matmul_backward(dq, cq)
    dkv_k, dwk = matmul_backward(dk, ck)
    dkv_v, dwv = matmul_backward(dv, cv)
    params.wq.accumulate(dwq)
    params.wk.accumulate(dwk)
    params.wv.accumulate(dwv)
    params.wo.accumulate(dwo)
    return dqueries, dkv_k + dkv_v


def recover_tra(selected, params):
    """(..., f, J, C) -> (..., f', J, C); each joint attends to its own f tokens.

    The recovered slab for joint j is ``x' + MCA(x', x_j, x_j)`` with one
    query bank ``x'`` shared by every joint.
    """
    selected = np.asarray(selected)
    if selected.ndim < 3:
        raise ShapeError(f"expected (..., f, J, C) tokens, got {selected.shape}")
    if params.recovered < selected.shape[-3]:
        warnings.warn(
            f"recovering {params.recovered} tokens from {selected.shape[-3]} selected ones",
            stacklevel=2,
        )
    kv = np.swapaxes(selected, -2, -3)  # (..., J, f, C)
    queries = params.queries.data
    attn, cache = mca(queries, kv, params)
    return np.swapaxes(queries + attn, -2, -3), cache


def recover_tra_backward(dout, cache, params):
    dslab = np.swapaxes(dout, -2, -3)  # (..., J, f', C)
    dqueries, dkv = mca_backward(dslab, cache, params)
    # residual path; sum over joints and batch since the bank is shared
    params.queries.accumulate(dqueries + dslab.reshape(-1, *params.queries.shape).sum(axis=0))
    return np.swapaxes(dkv, -2, -3)


def _check_selection(selected_indexes, frames):
    idx = np.asarray(selected_indexes, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("selection must be a non-empty index list")
    if np.any(np.diff(idx) <= 0):
        raise ShapeError("selection must be strictly ascending")
    if idx[0] < 0 or idx[-1] >= frames:
        raise ShapeError(f"selection out of range for F={frames}")
    return idx


def recovery_matrix(selected_indexes, frames, mode):
    """(F, f) weights mapping selected tokens onto every frame."""
    idx = _check_selection(selected_indexes, frames)
    t = np.arange(frames)
    weights = np.zeros((frames, idx.size))
    if mode == "nearest":
        # argmin returns the first minimum, i.e. the earlier index on ties
        weights[t, np.argmin(np.abs(t[:, None] - idx[None, :]), axis=1)] = 1.0
    elif mode == "linear":
        if idx.size < 2:
            raise ConfigError("linear recovery needs at least 2 selected tokens")
        right = np.clip(np.searchsorted(idx, t, side="left"), 1, idx.size - 1)
        left = right - 1
        frac = np.clip((t - idx[left]) / (idx[right] - idx[left]), 0.0, 1.0)
        weights[t, left] = 1.0 - frac
        weights[t, right] += frac
    else:
        raise ConfigError(f"unknown interpolation mode {mode!r}")
    return weights


def _apply(weights, selected):
    selected = np.asarray(selected)
    if selected.shape[0] != weights.shape[1]:
        raise ShapeError(f"{selected.shape[0]} tokens vs {weights.shape[1]} selected indexes")
    flat = selected.reshape(selected.shape[0], -1)
    out = weights.astype(selected.dtype) @ flat
    return out.reshape(weights.shape[0], *selected.shape[1:])


def recover_nearest(selected, selected_indexes, frames):
    """Each frame copies the selected token nearest in time (earlier on ties)."""
    return _apply(recovery_matrix(selected_indexes, frames, "nearest"), selected)


def recover_linear(selected, selected_indexes, frames):
    """Channel-wise linear blend between neighbouring selected frames."""
    return _apply(recovery_matrix(selected_indexes, frames, "linear"), selected)
