"""Parameter containers shared by the generator and discriminator."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from latentfp.errors import ShapeError
from latentfp.nn import ops
from latentfp.nn.tensor import Tensor


def he_kernel(rng: np.random.Generator, out_ch: int, in_ch: int, k: int) -> Tensor:
    std = np.sqrt(2.0 / (in_ch * k * k))
    return Tensor(rng.normal(0.0, std, size=(out_ch, in_ch, k, k)), requires_grad=True)


class Conv:
    """``f^{k x k}``; ``bias=False`` where a batch norm follows (the norm cancels any bias)."""

    def __init__(self, rng, in_ch: int, out_ch: int, k: int = 3, stride: int = 1, bias: bool = True):
        b = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None
        self.params = ops.ConvParams(he_kernel(rng, out_ch, in_ch, k), b, stride=stride, padding=k // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.params)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield "kernel", self.params.kernel
        if self.params.bias is not None:
            yield "bias", self.params.bias


class BatchNorm:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.params = ops.BatchNormParams(
            Tensor(np.ones(channels), requires_grad=True),
            Tensor(np.zeros(channels), requires_grad=True),
            epsilon=eps,
            momentum=momentum,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.params)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield "gamma", self.params.gamma
        yield "beta", self.params.beta


class ConvBN:
    """Convolution then batch norm; ``relu=True`` gives the ``l^{3x3}`` layer."""

    def __init__(self, rng, in_ch: int, out_ch: int, relu: bool = True, stride: int = 1):
        self.conv = Conv(rng, in_ch, out_ch, 3, stride=stride, bias=False)
        self.bn = BatchNorm(out_ch)
        self.relu = relu

    def __call__(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return ops.relu(y) if self.relu else y


def layer_l(x: Tensor, conv: ops.ConvParams, bn: ops.BatchNormParams) -> Tensor:
    """relu(batch_norm(conv(x)))."""
    return ops.relu(ops.batch_norm(ops.conv2d(x, conv), bn))


class Network:
    """Attribute-tree parameter registry with state export/import.

    Subclasses assign ``Conv``/``BatchNorm``/``ConvBN`` objects (or lists of
    objects holding them) as attributes; names follow the attribute path.
    """

    def _walk(self, obj=None, prefix: str = ""):
        obj = self if obj is None else obj
        items = obj.items() if isinstance(obj, dict) else vars(obj).items()
        for key, val in items:
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, (Conv, BatchNorm)):
                yield name, val
            elif isinstance(val, (ConvBN, Block)):
                yield from self._walk(val, name + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    yield from self._walk(item, f"{name}.{i}.")

    def modules(self) -> Iterator[tuple[str, Conv | BatchNorm]]:
        yield from self._walk()

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for mname, mod in self.modules():
            for pname, t in mod.named_tensors():
                out[f"{mname}.{pname}"] = t
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def batch_norms(self) -> list[ops.BatchNormParams]:
        return [m.params for _, m in self.modules() if isinstance(m, BatchNorm)]

    def train(self, mode: bool = True) -> "Network":
        for bn in self.batch_norms():
            bn.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.data.copy() for k, t in self.named_parameters().items()}
        for mname, mod in self.modules():
            if isinstance(mod, BatchNorm):
                state[f"{mname}.running_mean"] = mod.params.running_mean.copy()
                state[f"{mname}.running_var"] = mod.params.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        bns = {n: m.params for n, m in self.modules() if isinstance(m, BatchNorm)}
        expected = set(params) | {f"{n}.{s}" for n in bns for s in ("running_mean", "running_var")}
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise ShapeError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")

        def _fit(name, arr, shape):
            if arr.size != int(np.prod(shape)):
                raise ShapeError(f"{name}: stored shape {arr.shape} cannot fill {shape}")
            return np.asarray(arr, dtype=np.float64).reshape(shape).copy()

        for name, t in params.items():
            t.data = _fit(name, state[name], t.shape)
            t.zero_grad()
        for name, bn in bns.items():
            bn.running_mean = _fit(name, state[f"{name}.running_mean"], (bn.channels,))
            bn.running_var = _fit(name, state[f"{name}.running_var"], (bn.channels,))


class Block:
    """Marker base for composite sub-blocks walked by :class:`Network`."""
