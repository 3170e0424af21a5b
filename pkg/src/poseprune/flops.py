"""Analytic FLOP and parameter accounting for the host model.

Costs follow the usual transformer block estimate without MAC doubling:
a (N x a) @ (a x b) product costs N*a*b. For N tokens of width D, attention
costs 4ND^2 + 2N^2 D (four projections, scores, weighted sum) and a 2x
feed-forward costs 4ND^2.

Spatial attention runs once per frame over J tokens; temporal attention runs
once per joint over the current frame count. Selection itself (pooling and
the density-peaks scores) is not counted. Interpolation recovery is counted
as free; cross-attention recovery is charged in full.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig


def msa_flops(tokens, dim):
    return 4 * tokens * dim * dim + 2 * tokens * tokens * dim


def ffn_flops(tokens, dim, expansion=2):
    return 2 * tokens * dim * (expansion * dim)


def block_flops(tokens, dim):
    """8 N D^2 + 2 N^2 D for one attention + feed-forward block."""
    return msa_flops(tokens, dim) + ffn_flops(tokens, dim)


def tra_flops(recovered, selected, dim):
    """One cross-attention over f' queries and f keys (per joint)."""
    projections = 2 * recovered * dim * dim + 2 * selected * dim * dim
    return projections + 2 * recovered * selected * dim


@dataclass
class BlockCost:
    frames: int
    spatial_msa: int
    spatial_ffn: int
    temporal_msa: int
    temporal_ffn: int

    @property
    def total(self):
        return self.spatial_msa + self.spatial_ffn + self.temporal_msa + self.temporal_ffn


@dataclass
class StageCosts:
    embed: int
    blocks: list = field(default_factory=list)
    recovery: int = 0
    head: int = 0

    @property
    def total(self):
        return self.embed + sum(b.total for b in self.blocks) + self.recovery + self.head


@dataclass
class FlopsReport:
    config: dict
    baseline: StageCosts
    pruned: StageCosts
    host_params: int
    tra_params: int

    @property
    def baseline_total(self):
        return self.baseline.total

    @property
    def pruned_total(self):
        return self.pruned.total

    @property
    def reduction(self):
        return 1.0 - self.pruned_total / self.baseline_total

    def as_record(self):
        return {
            "config": self.config,
            "baseline_flops": self.baseline_total,
            "pruned_flops": self.pruned_total,
            "reduction": self.reduction,
            "host_params": self.host_params,
            "tra_params": self.tra_params,
            "baseline_stages": _stage_record(self.baseline),
            "pruned_stages": _stage_record(self.pruned),
        }


def _stage_record(stages):
    return {
        "embed": stages.embed,
        "blocks": [dict(asdict(b), total=b.total) for b in stages.blocks],
        "recovery": stages.recovery,
        "head": stages.head,
        "total": stages.total,
    }


def stage_costs(cfg: ModelConfig, pruned):
    """Per-stage costs of one forward pass over a single F-frame window.

    For seq2frame the pruned stages carry f + 1 tokens: the centre frame is
    counted as re-attached (the worst case of the dedup rule).
    """
    F, J, C = cfg.frames, cfg.joints, cfg.channels
    kept = cfg.tokens + (1 if cfg.pipeline == "seq2frame" and cfg.prunes else 0)
    kept = min(kept, F)
    costs = StageCosts(embed=F * J * 2 * C)
    for i in range(1, cfg.blocks + 1):
        n = kept if pruned and i > cfg.prune_after else F
        costs.blocks.append(BlockCost(
            frames=n,
            spatial_msa=n * msa_flops(J, C),
            spatial_ffn=n * ffn_flops(J, C),
            temporal_msa=J * msa_flops(n, C),
            temporal_ffn=J * ffn_flops(n, C),
        ))
    if cfg.pipeline == "seq2seq":
        out_frames = cfg.f_prime if pruned else F
        if pruned and cfg.recover_strategy == "tra":
            costs.recovery = J * tra_flops(cfg.f_prime, cfg.tokens, C)
        costs.head = out_frames * J * C * 3
    else:
        costs.head = J * C * 3
    return costs


def param_count(cfg: ModelConfig):
    """(host, tra) parameter totals; pruning itself adds none."""
    F, J, C = cfg.frames, cfg.joints, cfg.channels
    embed = 2 * C + C + F * C + J * C
    layer = 2 * C + (4 * C * C + 4 * C) + 2 * C + (2 * C * C + 2 * C) + (2 * C * C + C)
    head = 2 * C + 3 * C + 3
    host = embed + cfg.blocks * 2 * layer + head
    tra = cfg.f_prime * C + 4 * C * C if cfg.uses_tra else 0
    return host, tra


def model_flops(cfg: ModelConfig, pruned=True):
    """Baseline (unpruned host) vs. configured costs for ``cfg``."""
    host, tra = param_count(cfg)
    return FlopsReport(
        config=cfg.as_dict(),
        baseline=stage_costs(cfg, pruned=False),
        pruned=stage_costs(cfg, pruned=pruned),
        host_params=host,
        tra_params=tra,
    )


def sweep_reduction(cfg: ModelConfig, n_values, f_values):
    """Reduction ratios on an (n, f) grid; rows follow ``n_values``."""
    grid = np.empty((len(n_values), len(f_values)))
    for a, n in enumerate(n_values):
        for b, f in enumerate(f_values):
            grid[a, b] = model_flops(cfg.replace(prune_after=n, tokens=f)).reduction
    return grid
