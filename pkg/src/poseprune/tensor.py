"""Dense tensor primitives with explicit adjoints.

Every differentiable op is a pair: ``op(...) -> (out, cache)`` and
``op_backward(dout, cache) -> grads``. Activations are plain ndarrays;
learnable state lives in :class:`Tensor`, which owns a gradient buffer.
Ops keep the dtype of their inputs, so the same code runs in float32 for
training and in float64 when gradients are being checked.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import NumericalError, ShapeError

DTYPE = np.float32
LN_EPS = 1e-5


class Tensor:
    """A named-less parameter: row-major data plus an optional gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=DTYPE):
        arr = np.atleast_1d(np.array(data, dtype=dtype))
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g):
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- matmul ---------------------------------------------------------------

def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b, (a, b)


def matmul_backward(dout, cache):
    a, b = cache
    da = dout @ np.swapaxes(b, -1, -2)
    if b.ndim == 2:
        # weight-style right operand: fold all leading dims into one GEMM
        db = a.reshape(-1, a.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    else:
        db = np.swapaxes(a, -1, -2) @ dout
    return unbroadcast(da, a.shape), unbroadcast(db, b.shape)


# -- softmax --------------------------------------------------------------

def softmax_rows(x):
    """Softmax over the last axis, stabilised by row-max subtraction.

    Rows containing NaN come out as NaN; no attempt is made to repair them.
    """
    x = np.asarray(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax needs at least one column")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y):
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


# -- layer norm -----------------------------------------------------------

def layer_norm(x, gain, shift, eps=LN_EPS):
    x = np.asarray(x)
    if gain.shape[-1] != x.shape[-1] or shift.shape[-1] != x.shape[-1]:
        raise ShapeError(f"layer_norm affine params {gain.shape}/{shift.shape} vs input {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + shift, (xhat, inv_std, gain)


def layer_norm_backward(dy, cache):
    xhat, inv_std, gain = cache
    n = xhat.shape[-1]
    flat_dy = dy.reshape(-1, n)
    dgain = (flat_dy * xhat.reshape(-1, n)).sum(axis=0)
    dshift = flat_dy.sum(axis=0)
    dxhat = dy * gain
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dshift


# -- gelu (tanh approximation) --------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


# -- multi-head scaled dot-product attention ------------------------------

def split_heads(x, heads):
    *lead, n, c = x.shape
    return x.reshape(*lead, n, heads, c // heads).swapaxes(-2, -3)


def merge_heads(x):
    *lead, h, n, d = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * d)


def attention(q, k, v, heads):
    """Softmax(QK^T / sqrt(d)) V per head over the token axis (-2).

    ``q`` may broadcast against ``k``/``v`` in the leading dimensions, which
    is how a single learnable query bank attends to many key sets.
    """
    c = q.shape[-1]
    if c % heads:
        raise ShapeError(f"channel dim {c} not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[-1] != c:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scale = 1.0 / math.sqrt(c // heads)
    probs = softmax_rows((qh @ kh.swapaxes(-1, -2)) * scale)
    out = merge_heads(probs @ vh)
    return out, (qh, kh, vh, probs, scale, q.shape, k.shape, heads)


def attention_backward(dout, cache):
    qh, kh, vh, probs, scale, q_shape, k_shape, heads = cache
    dh = split_heads(dout, heads)
    dprobs = dh @ vh.swapaxes(-1, -2)
    dv = probs.swapaxes(-1, -2) @ dh
    dlogits = softmax_backward(dprobs, probs) * scale
    dq = dlogits @ kh
    dk = dlogits.swapaxes(-1, -2) @ qh
    return (
        unbroadcast(merge_heads(dq), q_shape),
        unbroadcast(merge_heads(dk), k_shape),
        unbroadcast(merge_heads(dv), k_shape),
    )


# -- layers ---------------------------------------------------------------

class Linear:
    def __init__(self, d_in, d_out, rng, bias=True, std=None):
        std = math.sqrt(1.0 / d_in) if std is None else std
        self.weight = Tensor(rng.standard_normal((d_in, d_out)) * std)
        self.bias = Tensor(np.zeros(d_out)) if bias else None

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x):
        out, cache = matmul(x, self.weight.data)
        if self.bias is not None:
            out = out + self.bias.data
        return out, cache

    def backward(self, dout, cache):
        dx, dw = matmul_backward(dout, cache)
        self.weight.accumulate(dw)
        if self.bias is not None:
            self.bias.accumulate(dout.reshape(-1, dout.shape[-1]).sum(axis=0))
        return dx


class LayerNorm:
    def __init__(self, dim):
        self.gain = Tensor(np.ones(dim))
        self.shift = Tensor(np.zeros(dim))

    def parameters(self):
        return [self.gain, self.shift]

    def forward(self, x):
        return layer_norm(x, self.gain.data, self.shift.data)

    def backward(self, dout, cache):
        dx, dgain, dshift = layer_norm_backward(dout, cache)
        self.gain.accumulate(dgain)
        self.shift.accumulate(dshift)
        return dx


class SelfAttention:
    """Multi-head self-attention with biased Q/K/V/O projections."""

    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def parameters(self):
        return [p for lin in (self.q, self.k, self.v, self.o) for p in lin.parameters()]

    def forward(self, x):
        q, cq = self.q.forward(x)
        k, ck = self.k.forward(x)
        v, cv = self.v.forward(x)
        a, ca = attention(q, k, v, self.heads)
        out, co = self.o.forward(a)
        return out, (cq, ck, cv, ca, co)

    @staticmethod
    def probs(cache):
        """Attention maps (..., heads, n_q, n_k) held in a forward cache."""
        return cache[3][3]

    def backward(self, dout, cache):
        cq, ck, cv, ca, co = cache
        da = self.o.backward(dout, co)
        dq, dk, dv = attention_backward(da, ca)
        return self.q.backward(dq, cq) + self.k.backward(dk, ck) + self.v.backward(dv, cv)


class FeedForward:
    def __init__(self, dim, expansion, rng):
        self.fc1 = Linear(dim, dim * expansion, rng)
        self.fc2 = Linear(dim * expansion, dim, rng)

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        a, cg = gelu(h)
        out, c2 = self.fc2.forward(a)
        return out, (c1, cg, c2)

    def backward(self, dout, cache):
        c1, cg, c2 = cache
        return self.fc1.backward(gelu_backward(self.fc2.backward(dout, c2), cg), c1)


class TransformerLayer:
    """Pre-norm attention + feed-forward, attending over axis -2."""

    def __init__(self, dim, heads, rng, expansion=2):
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, expansion, rng)

    def parameters(self):
        return (
            self.norm1.parameters() + self.attn.parameters()
            + self.norm2.parameters() + self.ffn.parameters()
        )

    def forward(self, x):
        n1, c1 = self.norm1.forward(x)
        a, ca = self.attn.forward(n1)
        h = x + a
        n2, c2 = self.norm2.forward(h)
        f, cf = self.ffn.forward(n2)
        return h + f, (c1, ca, c2, cf)

    def backward(self, dout, cache):
        c1, ca, c2, cf = cache
        dh = dout + self.norm2.backward(self.ffn.backward(dout, cf), c2)
        return dh + self.norm1.backward(self.attn.backward(dh, ca), c1)


# -- gradient checking ----------------------------------------------------

@contextlib.contextmanager
def float64_shadow(params):
    """Temporarily promote parameters to float64; restore the originals after."""
    saved = [(p.data, p.grad) for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None
        yield
    finally:
        for p, (data, grad) in zip(params, saved):
            p.data, p.grad = data, grad


def grad_check(f, params, step=1e-6, max_entries=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f()`` must return the scalar loss and accumulate analytic gradients into
    each parameter's ``grad``. The check runs with every parameter promoted
    to float64. Error per entry is ``|g - n| / max(1, |n|)``. With
    ``max_entries`` only a random subset of entries per parameter is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    with float64_shadow(params):
        for p in params:
            p.zero_grad()
        loss = f()
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} in gradient check")
        analytic = [p.grad.copy() for p in params]
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up = f()
                flat[i] = orig - step
                down = f()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericalError("non-finite loss during finite differences")
                num = (up - down) / (2 * step)
                err = abs(g.reshape(-1)[i] - num) / max(1.0, abs(num))
                worst = max(worst, err)
    return worst
