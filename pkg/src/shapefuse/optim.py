"""Named parameters, deterministic initializers, and SGD with momentum."""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class Parameter:
    """A named trainable tensor.

    Names are dotted paths ("point.edge0.weight") and must be unique within
    a model; they key checkpoint files and freeze masks.
    """

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: Tensor):
        if not value.requires_grad:
            raise ContractError(f"parameter {name} must require gradients")
        self.name = name
        self.value = value

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape})"


def init_param(name: str, shape, kind: str, seed: int, sigma: float = 0.02) -> Parameter:
    """Create a parameter deterministically from (name, shape, kind, seed).

    The RNG stream is derived from the seed plus a CRC of the name, so the
    same (config, seed) pair gives bit-identical buffers regardless of
    construction order.
    """
    shape = tuple(int(s) for s in shape)
    if kind == "zeros":
        data = np.zeros(shape)
    elif kind == "ones":
        data = np.ones(shape)
    elif kind == "gaussian":
        ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
        rng = np.random.Generator(np.random.PCG64(ss))
        data = rng.normal(0.0, sigma, size=shape)
    else:
        raise ContractError(f"unknown init kind '{kind}'")
    return Parameter(name, Tensor(data, requires_grad=True))


class SGD:
    """SGD with momentum; weight decay folds into the velocity.

    Update rule (in place):
        v <- momentum * v + grad + weight_decay * value
        value <- value - lr * v
    Gradients are zeroed after each step.
    """

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names handed to SGD")
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.value.grad is None:
                raise ContractError(f"parameter {p.name} has no gradient")
            v = self.velocity[p.name]
            v *= self.momentum
            v += p.value.grad
            if self.weight_decay != 0.0:
                v += self.weight_decay * p.value.data
            p.value.data -= lr * v
            p.value.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.value.grad = None
