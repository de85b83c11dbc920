"""Finite-difference checks over every engine op and miniature networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from latentfp.discriminator import Discriminator, DiscriminatorConfig
from latentfp.generator import DecoderBlock, EncoderBlock, Generator, GeneratorConfig, decoder_block, encoder_block
from latentfp.nn import ops
from latentfp.nn.gradcheck import check_gradients
from latentfp.nn.layers import BatchNorm, Conv, layer_l
from latentfp.nn.tensor import Tensor


@dataclass
class CaseResult:
    case: str
    seed: int
    max_rel_error: float
    checked: int
    skipped_kinks: int


def _t(rng, *shape, low=None, high=None) -> Tensor:
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _case_unary(op, shape=(2, 3, 6, 6), **kw) -> Case:
    def build(rng):
        x = _t(rng, *shape, **kw)
        w = Tensor(rng.normal(size=op(Tensor(x.data)).shape))
        return (lambda: ops.sum_(ops.mul(op(x), w))), [x]
    return build


def _case_binary(op) -> Case:
    def build(rng):
        a, b = _t(rng, 2, 3, 5, 5), _t(rng, 2, 3, 5, 5)
        w = Tensor(rng.normal(size=a.shape))
        return (lambda: ops.sum_(ops.mul(op(a, b), w))), [a, b]
    return build


def _case_conv(k: int, stride: int, bias: bool) -> Case:
    def build(rng):
        conv = Conv(rng, 3, 4, k=k, stride=stride, bias=bias)
        x = _t(rng, 2, 3, 7, 7)
        w = Tensor(rng.normal(size=conv(Tensor(x.data)).shape))
        return (lambda: ops.sum_(ops.mul(conv(x), w))), [x] + conv.params.tensors()
    return build


def _case_batch_norm(rng):
    bn = BatchNorm(3)
    bn.params.gamma.data[:] = rng.uniform(0.5, 1.5, size=3)
    bn.params.beta.data[:] = rng.normal(size=3)
    x = _t(rng, 2, 3, 4, 4)
    w = Tensor(rng.normal(size=x.shape))
    return (lambda: ops.sum_(ops.mul(bn(x), w))), [x, bn.params.gamma, bn.params.beta]


def _case_concat(rng):
    a, b = _t(rng, 2, 1, 4, 4), _t(rng, 2, 2, 4, 4)
    w = Tensor(rng.normal(size=(2, 3, 4, 4)))
    return (lambda: ops.sum_(ops.mul(ops.concat_channels([a, b]), w))), [a, b]


def _case_l1(rng):
    a, b = _t(rng, 2, 1, 5, 5), _t(rng, 2, 1, 5, 5)
    return (lambda: ops.l1_loss(a, b)), [a, b]


def _case_bce(rng):
    p = _t(rng, 3, 1, 2, 2, low=0.05, high=0.95)
    target = float(rng.uniform())
    return (lambda: ops.bce_loss(p, target)), [p]


def _case_layer_l(rng):
    conv = Conv(rng, 2, 3, bias=False)
    bn = BatchNorm(3)
    x = _t(rng, 1, 2, 8, 8)
    w = Tensor(rng.normal(size=(1, 3, 8, 8)))
    params = [x, conv.params.kernel, bn.params.gamma, bn.params.beta]
    return (lambda: ops.sum_(ops.mul(layer_l(x, conv.params, bn.params), w))), params


def _case_encoder(rng):
    blk = EncoderBlock(rng, 2, 3)
    x = _t(rng, 1, 2, 8, 8)
    w1 = Tensor(rng.normal(size=(1, 3, 4, 4)))
    w2 = Tensor(rng.normal(size=(1, 3, 8, 8)))

    def loss():
        e, s = encoder_block(x, blk)
        return ops.add(ops.sum_(ops.mul(e, w1)), ops.sum_(ops.mul(s, w2)))

    return loss, [x] + _block_tensors(blk)


def _case_decoder(rng):
    blk = DecoderBlock(rng, 3, 2)
    d = _t(rng, 1, 3, 4, 4)
    s = _t(rng, 1, 2, 8, 8)
    w = Tensor(rng.normal(size=(1, 2, 8, 8)))
    return (lambda: ops.sum_(ops.mul(decoder_block(d, s, blk), w))), [d, s] + _block_tensors(blk)


def _block_tensors(blk) -> list[Tensor]:
    out = []
    for val in vars(blk).values():
        for sub in (getattr(val, "conv", None), getattr(val, "bn", None), val):
            if isinstance(sub, (Conv, BatchNorm)):
                out.extend(t for _, t in sub.named_tensors())
    return out


def _case_generator(rng):
    gen = Generator(GeneratorConfig(depth=2, base_channels=2, seed=int(rng.integers(2 ** 31))))
    x = Tensor(rng.uniform(size=(2, 1, 8, 8)))
    target = Tensor(rng.uniform(size=(2, 1, 8, 8)))
    return (lambda: ops.l1_loss(gen(x), target)), gen.parameters()


def _case_generator_full_depth(rng):
    gen = Generator(GeneratorConfig(depth=4, base_channels=2, seed=int(rng.integers(2 ** 31))))
    x = Tensor(rng.uniform(size=(1, 1, 16, 16)))
    target = Tensor(rng.uniform(size=(1, 1, 16, 16)))
    return (lambda: ops.l1_loss(gen(x), target)), gen.parameters()


def _case_discriminator(rng):
    cfg = DiscriminatorConfig(n_blocks=2, base_channels=2, seed=int(rng.integers(2 ** 31)))
    disc = Discriminator(cfg)
    a = Tensor(rng.uniform(size=(2, 1, 16, 16)))
    b = Tensor(rng.uniform(size=(2, 1, 16, 16)))
    return (lambda: ops.bce_loss(disc(a, b), 1.0)), disc.parameters()


CASES: dict[str, Case] = {
    "conv2d_k3_s1": _case_conv(3, 1, True),
    "conv2d_k3_s2": _case_conv(3, 2, True),
    "conv2d_k1": _case_conv(1, 1, True),
    "batch_norm": _case_batch_norm,
    "relu": _case_unary(ops.relu),
    "leaky_relu": _case_unary(lambda x: ops.leaky_relu(x, 0.2)),
    "sigmoid": _case_unary(ops.sigmoid),
    "max_pool2": _case_unary(ops.max_pool2),
    "upsample2": _case_unary(ops.upsample2, shape=(2, 3, 3, 3)),
    "global_avg_pool": _case_unary(ops.global_avg_pool),
    "concat_channels": _case_concat,
    "add": _case_binary(ops.add),
    "sub": _case_binary(ops.sub),
    "mul": _case_binary(ops.mul),
    "scale": _case_unary(lambda x: ops.scale(x, -1.7)),
    "abs": _case_unary(ops.abs_),
    "sum": _case_unary(ops.sum_),
    "mean": _case_unary(ops.mean),
    "l1_loss": _case_l1,
    "bce_loss": _case_bce,
    "layer_l": _case_layer_l,
    "encoder_block": _case_encoder,
    "decoder_block": _case_decoder,
    "generator_mini": _case_generator,
    "generator_depth4": _case_generator_full_depth,
    "discriminator_mini": _case_discriminator,
}


# Cases whose every forward pass is expensive sample fewer entries per tensor.
ENTRY_CAP = {"generator_depth4": 2}


def run_case(name: str, seed: int, max_entries: int | None = 8) -> CaseResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    loss_fn, params = CASES[name](rng)
    cap = ENTRY_CAP.get(name)
    if cap is not None:
        max_entries = cap if max_entries is None else min(max_entries, cap)
    results = check_gradients(loss_fn, params, max_entries=max_entries, rng=rng)
    return CaseResult(
        name,
        seed,
        max(r.max_rel_error for r in results),
        sum(r.checked for r in results),
        sum(r.skipped_kinks for r in results),
    )


def run_suite(seeds: range | list[int] = range(20), cases: list[str] | None = None,
              max_entries: int | None = 8) -> list[CaseResult]:
    return [run_case(name, s, max_entries) for name in (cases or list(CASES)) for s in seeds]
