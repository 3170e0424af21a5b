"""A small spatio-temporal pose-lifting transformer with pruning hooks.

Tokens are laid out as (B, F, J, C). Each block runs self-attention over the
J joints of every frame, then over the frames of every joint. Pruning keeps a
subset of frames after block ``n``; the seq2seq pipeline then recovers all
frames before the regression head, while seq2frame regresses only the centre
frame (whose token is re-attached to the kept set if pruning dropped it).
"""
from __future__ import annotations

import struct

import numpy as np

from . import tpc
from .config import PIPELINES, PRUNE_STRATEGIES, RECOVER_STRATEGIES, ModelConfig
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .recovery import TraParams, recover_tra, recover_tra_backward, recovery_matrix
from .tensor import LayerNorm, Linear, SelfAttention, Tensor, TransformerLayer

MAGIC = b"PPM1"
_HEADER_FIELDS = (
    "frames", "joints", "channels", "blocks", "heads", "prune_after", "tokens",
    "recovered", "knn", "tra_heads", "pipeline", "prune_strategy", "recover_strategy",
)


class HostBlock:
    def __init__(self, dim, heads, rng):
        self.spatial = TransformerLayer(dim, heads, rng)
        self.temporal = TransformerLayer(dim, heads, rng)

    def parameters(self):
        return self.spatial.parameters() + self.temporal.parameters()

    def forward(self, x):
        x, cs = self.spatial.forward(x)
        y, ct = self.temporal.forward(np.swapaxes(x, -2, -3))
        return np.swapaxes(y, -2, -3), (cs, ct)

    def backward(self, dout, cache):
        cs, ct = cache
        dx = np.swapaxes(self.temporal.backward(np.swapaxes(dout, -2, -3), ct), -2, -3)
        return self.spatial.backward(dx, cs)

    @staticmethod
    def temporal_probs(cache):
        """Temporal attention maps (B, J, heads, F, F) from a forward cache."""
        return SelfAttention.probs(cache[1][1])


def received_attention(probs):
    """Column mean of temporal attention, averaged over heads and joints.

    ``probs`` is (J, heads, F, F); the result is an F-vector summing to 1.
    """
    return probs.mean(axis=-2).reshape(-1, probs.shape[-1]).mean(axis=0)


def mpjpe_loss(pred, gt):
    """Mean joint Euclidean error and its gradient with respect to ``pred``."""
    diff = pred - gt
    dist = np.sqrt((diff * diff).sum(axis=-1, keepdims=True))
    count = dist.size
    loss = float(dist.sum()) / count
    grad = diff / np.maximum(dist, 1e-12) / count
    return loss, grad


class HostModel:
    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c = cfg.channels
        self.embedding = Linear(2, c, rng)
        self.temporal_pos = Tensor(rng.standard_normal((cfg.frames, c)) * 0.1)
        self.joint_pos = Tensor(rng.standard_normal((cfg.joints, c)) * 0.1)
        self.blocks = [HostBlock(c, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.norm = LayerNorm(c)
        self.head = Linear(c, 3, rng, std=0.1 / np.sqrt(c))
        self.tra = TraParams(cfg.f_prime, c, cfg.tra_heads, rng) if cfg.uses_tra else None

    def parameters(self):
        params = self.embedding.parameters() + [self.temporal_pos, self.joint_pos]
        for block in self.blocks:
            params += block.parameters()
        params += self.norm.parameters() + self.head.parameters()
        if self.tra is not None:
            params += self.tra.parameters()
        return params

    def count_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    @property
    def dtype(self):
        return self.embedding.weight.data.dtype

    # -- stages -----------------------------------------------------------

    def embed(self, poses2d):
        """(B, F, J, 2) -> (B, F, J, C): linear lift plus frame/joint positions."""
        poses2d = np.asarray(poses2d, dtype=self.dtype)
        cfg = self.cfg
        if poses2d.shape[-3:] != (cfg.frames, cfg.joints, 2):
            raise ShapeError(f"poses {poses2d.shape} do not match F={cfg.frames}, J={cfg.joints}")
        x, cache = self.embedding.forward(poses2d)
        return x + self.temporal_pos.data[:, None, :] + self.joint_pos.data[None, :, :], cache

    def embed_backward(self, dout, cache):
        self.temporal_pos.accumulate(dout.sum(axis=(0, 2)))
        self.joint_pos.accumulate(dout.sum(axis=(0, 1)))
        self.embedding.backward(dout, cache)

    def select(self, tokens, poses2d, block_cache):
        """Per-sample ascending frame indexes to keep, plus TPC diagnostics."""
        cfg = self.cfg
        frames, f = cfg.frames, cfg.tokens
        chosen, diagnostics = [], []
        for b in range(tokens.shape[0]):
            if cfg.prune_strategy == "tpc":
                res = tpc.cluster_tokens(tpc.spatial_pool(tokens[b]), f, cfg.k if frames > 1 else None)
                idx = res.selected
                diagnostics.append(res)
            elif cfg.prune_strategy == "uniform":
                idx = tpc.select_uniform(frames, f)
            elif cfg.prune_strategy == "attention":
                scores = received_attention(HostBlock.temporal_probs(block_cache)[b])
                idx = tpc.select_by_attention(scores, f, frames)
            else:
                idx = tpc.select_by_motion(poses2d[b], f)
            chosen.append(idx)
        return chosen, diagnostics

    def _trunk(self, poses2d, prune, center_first):
        cfg = self.cfg
        x, embed_cache = self.embed(poses2d)
        caches, keep, selected, diagnostics = [], None, None, []
        for i, block in enumerate(self.blocks, 1):
            x, c = block.forward(x)
            caches.append(c)
            if prune and i == cfg.prune_after:
                selected, diagnostics = self.select(x, poses2d, c)
                keep = selected
                if center_first:
                    center = cfg.frames // 2
                    keep = [s if center in s else np.concatenate(([center], s)) for s in selected]
                keep = np.stack(keep)
                x = np.stack([x[b, keep[b]] for b in range(len(keep))])
        return x, {
            "embed": embed_cache, "blocks": caches, "keep": keep,
            "selected": selected, "diagnostics": diagnostics,
        }

    def _trunk_backward(self, dx, cache):
        cfg = self.cfg
        keep = cache["keep"]
        for i in range(len(self.blocks), 0, -1):
            if keep is not None and i == cfg.prune_after:
                full = np.zeros((dx.shape[0], cfg.frames) + dx.shape[2:], dtype=dx.dtype)
                for b in range(len(keep)):
                    full[b, keep[b]] = dx[b]
                dx = full
            dx = self.blocks[i - 1].backward(dx, cache["blocks"][i - 1])
        self.embed_backward(dx, cache["embed"])

    # -- pipelines --------------------------------------------------------

    def forward(self, poses2d, prune=True):
        """Run the configured pipeline on (B, F, J, 2) or (F, J, 2) input.

        Returns (prediction, cache); prediction is (B, F', J, 3) for seq2seq
        and (B, 1, J, 3) for seq2frame (leading B dropped for unbatched input).
        """
        poses2d = np.asarray(poses2d)
        single = poses2d.ndim == 3
        batch = poses2d[None] if single else poses2d
        if self.cfg.pipeline == "seq2seq":
            out, cache = self._forward_seq2seq(batch, prune)
        else:
            parts = [self._forward_seq2frame(batch[b:b + 1], prune) for b in range(len(batch))]
            out = np.concatenate([p[0] for p in parts])
            cache = {"samples": [p[1] for p in parts]}
        cache["single"] = single
        return (out[0] if single else out), cache

    def backward(self, dout, cache):
        """Accumulate parameter gradients for the loss gradient ``dout``."""
        if cache["single"]:
            dout = dout[None]
        if self.cfg.pipeline == "seq2seq":
            self._backward_seq2seq(dout, cache)
        else:
            for b, c in enumerate(cache["samples"]):
                self._backward_seq2frame(dout[b:b + 1], c)

    def predict(self, poses2d, prune=True):
        return self.forward(poses2d, prune)[0]

    def _forward_seq2seq(self, poses2d, prune):
        x, cache = self._trunk(poses2d, prune, center_first=False)
        cache["recover"] = None
        if cache["keep"] is not None:
            if self.cfg.recover_strategy == "tra":
                x, cache["recover"] = recover_tra(x, self.tra)
            else:
                mats = np.stack([
                    recovery_matrix(s, self.cfg.frames, self.cfg.recover_strategy)
                    for s in cache["selected"]
                ]).astype(x.dtype)
                x = np.einsum("btf,bfjc->btjc", mats, x)
                cache["recover"] = mats
        x, cache["norm"] = self.norm.forward(x)
        out, cache["head"] = self.head.forward(x)
        return out, cache

    def _backward_seq2seq(self, dout, cache):
        dx = self.norm.backward(self.head.backward(dout, cache["head"]), cache["norm"])
        if cache["keep"] is not None:
            if self.cfg.recover_strategy == "tra":
                dx = recover_tra_backward(dx, cache["recover"], self.tra)
            else:
                dx = np.einsum("btf,btjc->bfjc", cache["recover"], dx)
        self._trunk_backward(dx, cache)

    def _forward_seq2frame(self, poses2d, prune):
        x, cache = self._trunk(poses2d, prune, center_first=True)
        center = self.cfg.frames // 2
        pos = center if cache["keep"] is None else int(np.flatnonzero(cache["keep"][0] == center)[0])
        cache["pos"], cache["width"] = pos, x.shape[1]
        x, cache["norm"] = self.norm.forward(x[:, pos:pos + 1])
        out, cache["head"] = self.head.forward(x)
        return out, cache

    def _backward_seq2frame(self, dout, cache):
        dc = self.norm.backward(self.head.backward(dout, cache["head"]), cache["norm"])
        dx = np.zeros((dc.shape[0], cache["width"]) + dc.shape[2:], dtype=dc.dtype)
        dx[:, cache["pos"]] = dc[:, 0]
        self._trunk_backward(dx, cache)

    # -- inspection -------------------------------------------------------

    def temporal_attention_scores(self, poses2d, block):
        """Received-attention saliency per frame from block ``block`` (1-based)."""
        cfg = self.cfg
        limit = cfg.prune_after if cfg.prunes else cfg.blocks
        if not 1 <= block <= limit:
            raise ConfigError(f"block {block} outside 1..{limit}")
        x, _ = self.embed(np.asarray(poses2d)[None])
        for b in self.blocks[:block]:
            x, c = b.forward(x)
        return received_attention(HostBlock.temporal_probs(c)[0])

    # -- training ---------------------------------------------------------

    def train_step(self, poses2d, poses3d, lr):
        """One plain gradient-descent step on mean MPJPE; returns the pre-step loss."""
        pred, cache = self.forward(poses2d)
        gt = np.asarray(poses3d, dtype=self.dtype)
        if self.cfg.pipeline == "seq2frame":
            center = self.cfg.frames // 2
            gt = gt[..., center:center + 1, :, :]
        loss, grad = mpjpe_loss(pred, gt)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite training loss {loss}")
        self.zero_grad()
        self.backward(grad, cache)
        for p in self.parameters():
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError("non-finite gradient")
            p.data -= np.asarray(lr * p.grad, dtype=p.data.dtype)
        return loss


def forward_seq2seq(model, poses2d, prune=True):
    if model.cfg.pipeline != "seq2seq":
        raise ConfigError("model is configured for seq2frame")
    return model.predict(poses2d, prune)


def forward_seq2frame(model, poses2d, prune=True):
    if model.cfg.pipeline != "seq2frame":
        raise ConfigError("model is configured for seq2seq")
    return model.predict(poses2d, prune)


# -- serialization --------------------------------------------------------

def _header_values(cfg):
    return (
        cfg.frames, cfg.joints, cfg.channels, cfg.blocks, cfg.heads, cfg.prune_after, cfg.tokens,
        0 if cfg.recovered is None else cfg.recovered,
        0 if cfg.knn is None else cfg.knn,
        cfg.tra_heads,
        PIPELINES.index(cfg.pipeline),
        PRUNE_STRATEGIES.index(cfg.prune_strategy),
        RECOVER_STRATEGIES.index(cfg.recover_strategy),
    )


def model_to_bytes(model):
    head = MAGIC + struct.pack(f"<{len(_HEADER_FIELDS)}i", *_header_values(model.cfg))
    body = b"".join(p.data.astype("<f4").tobytes() for p in model.parameters())
    return head + body


def model_from_bytes(blob):
    n = len(_HEADER_FIELDS)
    if len(blob) < 4 + 4 * n or blob[:4] != MAGIC:
        raise DataError("not a model file (bad magic or truncated header)")
    vals = dict(zip(_HEADER_FIELDS, struct.unpack_from(f"<{n}i", blob, 4)))
    try:
        cfg = ModelConfig(
            **{k: vals[k] for k in _HEADER_FIELDS[:7]},
            recovered=vals["recovered"] or None,
            knn=vals["knn"] or None,
            tra_heads=vals["tra_heads"],
            pipeline=PIPELINES[vals["pipeline"]],
            prune_strategy=PRUNE_STRATEGIES[vals["prune_strategy"]],
            recover_strategy=RECOVER_STRATEGIES[vals["recover_strategy"]],
        )
    except (IndexError, ConfigError) as exc:
        raise DataError(f"invalid model header: {exc}") from exc
    model = HostModel(cfg)
    offset = 4 + 4 * n
    for p in model.parameters():
        nbytes = 4 * p.size
        if offset + nbytes > len(blob):
            raise DataError("model file truncated")
        p.data = np.frombuffer(blob, dtype="<f4", count=p.size, offset=offset).astype(np.float32).reshape(p.shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"model file has {len(blob) - offset} trailing bytes")
    return model
