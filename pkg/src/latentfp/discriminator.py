"""Conditional discriminator over (latent, candidate) image pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from latentfp.errors import ShapeError
from latentfp.nn import ops
from latentfp.nn.layers import BatchNorm, Block, Conv, Network
from latentfp.nn.tensor import Tensor


@dataclass(frozen=True)
class DiscriminatorConfig:
    """``downsample_blocks`` leading blocks use stride 2, the rest stride 1.

    ``None`` means every block downsamples, which needs inputs of at least
    ``2 ** n_blocks`` pixels per side.
    """

    n_blocks: int = 7
    base_channels: int = 16
    max_channels: int = 128
    leaky_slope: float = 0.2
    downsample_blocks: int | None = None
    seed: int = 1

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.downsample_blocks is not None and not 0 <= self.downsample_blocks <= self.n_blocks:
            raise ValueError("downsample_blocks must lie in [0, n_blocks]")

    @property
    def strided(self) -> int:
        return self.n_blocks if self.downsample_blocks is None else self.downsample_blocks

    def channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, self.max_channels) for i in range(self.n_blocks)]

    @classmethod
    def for_window(cls, window: int, **kw) -> "DiscriminatorConfig":
        """Largest stride schedule that keeps the last feature map at >= 4x4."""
        n_blocks = kw.pop("n_blocks", 7)
        strided = max(0, min(n_blocks, int(np.log2(window)) - 2))
        return cls(n_blocks=n_blocks, downsample_blocks=strided, **kw)


class DiscBlock(Block):
    def __init__(self, rng, in_ch: int, out_ch: int, stride: int, norm: bool):
        self.conv = Conv(rng, in_ch, out_ch, 3, stride=stride, bias=not norm)
        if norm:
            self.bn = BatchNorm(out_ch)


class Discriminator(Network):
    def __init__(self, config: DiscriminatorConfig | None = None):
        self.config = config or DiscriminatorConfig()
        rng = np.random.default_rng(self.config.seed)
        ch = self.config.channels()
        self.blocks = [
            DiscBlock(rng, 2 if i == 0 else ch[i - 1], ch[i], 2 if i < self.config.strided else 1, norm=i > 0)
            for i in range(self.config.n_blocks)
        ]
        self.score = Conv(rng, ch[-1], 1, k=1)

    def __call__(self, latent: Tensor, candidate: Tensor, trace: list | None = None) -> Tensor:
        return discriminator_forward(latent, candidate, self, trace)


def make_pair(latent: Tensor, candidate: Tensor) -> Tensor:
    """Stack conditioning latent (channel 0) and candidate (channel 1)."""
    if latent.shape != candidate.shape or latent.shape[1] != 1:
        raise ShapeError(f"pair planes must be matching single-channel tensors, got {latent.shape} and {candidate.shape}")
    return ops.concat_channels([latent, candidate])


def discriminator_forward(latent: Tensor, candidate: Tensor, disc: Discriminator,
                          trace: list | None = None) -> Tensor:
    """Probability that ``candidate`` is the real enhancement of ``latent``; shape (B, 1, 1, 1)."""
    x = make_pair(latent, candidate)
    need = 2 ** disc.config.strided
    if min(x.shape[2:]) < need:
        raise ShapeError(f"discriminator input {x.shape[2]}x{x.shape[3]} is smaller than {need}x{need}")
    slope = disc.config.leaky_slope
    for i, blk in enumerate(disc.blocks):
        x = blk.conv(x)
        if hasattr(blk, "bn"):
            x = blk.bn(x)
        x = ops.leaky_relu(x, slope)
        if trace is not None:
            trace.append((f"block{i}", x.shape))
    return ops.sigmoid(disc.score(ops.global_avg_pool(x)))
