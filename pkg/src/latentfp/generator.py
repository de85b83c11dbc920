"""Encoder-decoder enhancement generator.

Shape walk for depth 4 on an ``H x W`` input (channels ``c0..c3``)::

    stem        s_0 = l(x)                          c0 @ H
    enc 0       E_0 = pool(l(l(s_0)))               c0 @ H/2
    enc k=1..3  s_k = l(E_{k-1})                    ck @ H/2^k
                E_k = pool(relu(main(s_k) + res(E_{k-1})))   ck @ H/2^(k+1)
    dec k=3..0  I_k = s_k + l(up(D))                ck @ H/2^k
                D_k = relu(A(up(D)) + B(I_k))
    head        out = sigmoid(f1x1(l(D_0)))         1 @ H

``l`` is conv3x3 -> batch norm -> relu. Every 3x3 conv uses stride 1, padding 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from latentfp.errors import ShapeError
from latentfp.nn import ops
from latentfp.nn.layers import Block, Conv, ConvBN, Network
from latentfp.nn.tensor import Tensor


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 4
    base_channels: int = 16
    channel_schedule: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.channel_schedule is not None and len(self.channel_schedule) != self.depth:
            raise ValueError(f"channel_schedule needs {self.depth} entries")

    def channels(self) -> list[int]:
        if self.channel_schedule is not None:
            return list(self.channel_schedule)
        return [self.base_channels * 2 ** k for k in range(self.depth)]

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this."""
        return 2 ** self.depth


class EncoderBlock(Block):
    def __init__(self, rng, in_ch: int, out_ch: int):
        self.skip = ConvBN(rng, in_ch, out_ch)
        self.main1 = ConvBN(rng, out_ch, out_ch, relu=False)
        self.main2 = ConvBN(rng, out_ch, out_ch, relu=False)
        self.res1 = ConvBN(rng, in_ch, out_ch)
        self.res2 = ConvBN(rng, out_ch, out_ch)
        self.res3 = Conv(rng, out_ch, out_ch)

    def __call__(self, prev: Tensor) -> tuple[Tensor, Tensor]:
        return encoder_block(prev, self)


class DecoderBlock(Block):
    def __init__(self, rng, in_ch: int, out_ch: int):
        self.up = ConvBN(rng, in_ch, out_ch)
        self.a1 = ConvBN(rng, in_ch, out_ch)
        self.a2 = ConvBN(rng, out_ch, out_ch)
        self.a3 = Conv(rng, out_ch, out_ch)
        self.b1 = ConvBN(rng, out_ch, out_ch, relu=False)
        self.b2 = ConvBN(rng, out_ch, out_ch, relu=False)

    def __call__(self, prev: Tensor, skip: Tensor) -> Tensor:
        return decoder_block(prev, skip, self)


def encoder_block(prev: Tensor, blk: EncoderBlock) -> tuple[Tensor, Tensor]:
    """Returns ``(E_k, s_k)``; ``E_k`` is half the resolution of ``prev``."""
    if prev.shape[2] % 2 or prev.shape[3] % 2:
        raise ShapeError(f"encoder block needs even spatial dims, got {prev.shape}")
    skip = blk.skip(prev)
    main = blk.main2(blk.main1(skip))
    res = blk.res3(blk.res2(blk.res1(prev)))
    return ops.max_pool2(ops.relu(ops.add(main, res))), skip


def decoder_block(prev: Tensor, skip: Tensor, blk: DecoderBlock) -> Tensor:
    up = ops.upsample2(prev)
    if up.shape[2:] != skip.shape[2:] or blk.up.conv.params.out_channels != skip.shape[1]:
        raise ShapeError(f"decoder: upsampled {up.shape} does not fit skip {skip.shape}")
    merged = ops.add(skip, blk.up(up))
    a = blk.a3(blk.a2(blk.a1(up)))
    b = blk.b2(blk.b1(merged))
    return ops.relu(ops.add(a, b))


class Generator(Network):
    def __init__(self, config: GeneratorConfig | None = None):
        self.config = config or GeneratorConfig()
        rng = np.random.default_rng(self.config.seed)
        ch = self.config.channels()
        self.stem = ConvBN(rng, 1, ch[0])
        self.enc0_a = ConvBN(rng, ch[0], ch[0])
        self.enc0_b = ConvBN(rng, ch[0], ch[0])
        self.encoders = [EncoderBlock(rng, ch[k - 1], ch[k]) for k in range(1, self.config.depth)]
        # decoders[k] restores level k; the deepest one reads E_{depth-1}
        self.decoders = [
            DecoderBlock(rng, ch[min(k + 1, self.config.depth - 1)], ch[k]) for k in range(self.config.depth)
        ]
        self.head = ConvBN(rng, ch[0], ch[0])
        self.out = Conv(rng, ch[0], 1, k=1)

    def check_input(self, shape: tuple[int, ...]) -> None:
        if len(shape) != 4 or shape[1] != 1:
            raise ShapeError(f"generator expects (batch, 1, H, W), got {shape}")
        m = self.config.multiple
        if shape[2] % m or shape[3] % m:
            raise ShapeError(f"generator input {shape[2]}x{shape[3]} is not divisible by {m}")

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        return generator_forward(x, self, trace)

    def summary(self, height: int = 192, width: int = 192) -> str:
        """Per-layer parameter counts and the activation shape walk."""
        from latentfp.nn.tensor import no_grad

        trace: list[tuple[str, tuple[int, ...]]] = []
        was_training = [bn.training for bn in self.batch_norms()]
        self.eval()
        with no_grad():
            generator_forward(Tensor(np.zeros((1, 1, height, width))), self, trace)
        for bn, mode in zip(self.batch_norms(), was_training):
            bn.training = mode
        lines = [f"Generator depth={self.config.depth} channels={self.config.channels()}"]
        for name, mod in self.modules():
            shapes = ", ".join(f"{p}{tuple(t.shape)}" for p, t in mod.named_tensors())
            n = sum(t.size for _, t in mod.named_tensors())
            lines.append(f"  {name:<24} {n:>8}  {shapes}")
        lines.append("activations:")
        lines.extend(f"  {label:<12} {shape}" for label, shape in trace)
        lines.append(f"total parameters: {self.parameter_count()}")
        return "\n".join(lines)


def generator_forward(x: Tensor, gen: Generator, trace: list | None = None) -> Tensor:
    gen.check_input(x.shape)

    def note(label, t):
        if trace is not None:
            trace.append((label, t.shape))
        return t

    skips = [note("s0", gen.stem(x))]
    e = note("E0", ops.max_pool2(gen.enc0_b(gen.enc0_a(skips[0]))))
    for k, blk in enumerate(gen.encoders, start=1):
        e, s = blk(e)
        skips.append(note(f"s{k}", s))
        note(f"E{k}", e)
    d = e
    for k in reversed(range(gen.config.depth)):
        d = note(f"D{k}", gen.decoders[k](d, skips[k]))
    return note("out", ops.sigmoid(gen.out(gen.head(d))))


def parameter_count(config: GeneratorConfig) -> int:
    """Closed-form parameter count (matches ``Generator(config).parameter_count()``)."""
    ch = config.channels()
    conv_bn = lambda i, o: 9 * i * o + 2 * o  # noqa: E731
    conv_b = lambda i, o, k=3: k * k * i * o + o  # noqa: E731
    total = conv_bn(1, ch[0]) + 2 * conv_bn(ch[0], ch[0])
    for k in range(1, config.depth):
        i, o = ch[k - 1], ch[k]
        total += conv_bn(i, o) + 2 * conv_bn(o, o) + conv_bn(i, o) + conv_bn(o, o) + conv_b(o, o)
    for k in range(config.depth):
        i, o = ch[min(k + 1, config.depth - 1)], ch[k]
        total += conv_bn(i, o) + conv_bn(i, o) + conv_bn(o, o) + conv_b(o, o) + 2 * conv_bn(o, o)
    total += conv_bn(ch[0], ch[0]) + conv_b(ch[0], 1, 1)
    return total


__all__ = [
    "DecoderBlock", "EncoderBlock", "Generator", "GeneratorConfig",
    "decoder_block", "encoder_block", "generator_forward", "parameter_count",
]
