"""Model and pruning configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

PIPELINES = ("seq2seq", "seq2frame")
PRUNE_STRATEGIES = ("tpc", "uniform", "attention", "motion")
RECOVER_STRATEGIES = ("tra", "nearest", "linear")


def default_knn(frames):
    """Neighbour count for the density estimate: max(2, F // 10), kept below F."""
    return max(1, min(max(2, frames // 10), frames - 1))


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 243
    joints: int = 17
    channels: int = 512
    blocks: int = 8
    heads: int = 8
    prune_after: int = 3
    tokens: int = 81
    recovered: int | None = None  # f'; None means "same as frames"
    knn: int | None = None  # None means default_knn(frames)
    tra_heads: int = 8
    pipeline: str = "seq2seq"
    prune_strategy: str = "tpc"
    recover_strategy: str = "tra"

    def __post_init__(self):
        self.validate()

    @property
    def f_prime(self):
        return self.frames if self.recovered is None else self.recovered

    @property
    def k(self):
        return default_knn(self.frames) if self.knn is None else self.knn

    @property
    def prunes(self):
        return self.tokens < self.frames

    @property
    def uses_tra(self):
        return self.pipeline == "seq2seq" and self.recover_strategy == "tra"

    def validate(self):
        for name in ("frames", "joints", "channels", "blocks", "heads", "tokens", "tra_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}")
        if self.prune_strategy not in PRUNE_STRATEGIES:
            raise ConfigError(f"prune strategy must be one of {PRUNE_STRATEGIES}")
        if self.recover_strategy not in RECOVER_STRATEGIES:
            raise ConfigError(f"recover strategy must be one of {RECOVER_STRATEGIES}")
        if self.tokens > self.frames:
            raise ConfigError(f"tokens f={self.tokens} exceeds frames F={self.frames}")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.uses_tra and self.channels % self.tra_heads:
            raise ConfigError(f"channels {self.channels} not divisible by TRA heads {self.tra_heads}")
        if self.prunes:
            if not 1 <= self.prune_after < self.blocks:
                raise ConfigError(f"prune_after n={self.prune_after} must satisfy 1 <= n < L={self.blocks}")
        elif not 0 <= self.prune_after <= self.blocks:
            raise ConfigError(f"prune_after n={self.prune_after} out of range")
        if self.recovered is not None and self.recovered < 1:
            raise ConfigError("recovered token count must be >= 1")
        if self.knn is not None and self.prune_strategy == "tpc" and self.prunes:
            if not 1 <= self.knn < self.frames:
                raise ConfigError(f"knn k={self.knn} must satisfy 1 <= k < F={self.frames}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)


MIXSTE_LIKE = ModelConfig()
MOTIONBERT_LIKE = ModelConfig(channels=256, blocks=5, prune_after=1)
TOY = ModelConfig(
    frames=27, joints=17, channels=32, blocks=2, heads=4, prune_after=1, tokens=9, tra_heads=4,
)
