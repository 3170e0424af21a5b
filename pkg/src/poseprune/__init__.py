"""Temporal token pruning and recovery for video pose-lifting transformers."""
from .config import MIXSTE_LIKE, MOTIONBERT_LIKE, TOY, ModelConfig
from .flops import block_flops, model_flops, param_count, sweep_reduction
from .host import HostModel, forward_seq2frame, forward_seq2seq
from .recovery import TraParams, mca, recover_linear, recover_nearest, recover_tra
from .tpc import (
    ClusterResult,
    cluster_tokens,
    frame_noise,
    local_density,
    min_distance_delta,
    select_by_attention,
    select_by_motion,
    select_tpc,
    select_uniform,
    spatial_pool,
)

__version__ = "0.1.0"

__all__ = [
    "MIXSTE_LIKE",
    "MOTIONBERT_LIKE",
    "TOY",
    "ModelConfig",
    "block_flops",
    "model_flops",
    "param_count",
    "sweep_reduction",
    "HostModel",
    "forward_seq2frame",
    "forward_seq2seq",
    "TraParams",
    "mca",
    "recover_linear",
    "recover_nearest",
    "recover_tra",
    "ClusterResult",
    "cluster_tokens",
    "frame_noise",
    "local_density",
    "min_distance_delta",
    "select_by_attention",
    "select_by_motion",
    "select_tpc",
    "select_uniform",
    "spatial_pool",
]
