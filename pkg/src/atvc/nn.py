"""Parameter-holding layers built on the tensor engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Linear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, std: float | None = None):
        scale = std if std is not None else float(np.sqrt(2.0 / d_in))
        self.w = Tensor(rng.normal(0.0, scale, size=(d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Conv2d:
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 1,
                 padding: int = 0, transpose: bool = False, std: float | None = None):
        fan_in = c_in * k * k
        scale = std if std is not None else float(np.sqrt(2.0 / fan_in))
        shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
        self.w = Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.transpose = transpose

    def __call__(self, x: Tensor) -> Tensor:
        if self.transpose:
            return T.conv_transpose2d(x, self.w, self.b, self.stride, self.padding)
        return T.conv2d(x, self.w, self.b, self.stride, self.padding)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    """Normalization with learned gain and bias over the last axis."""

    def __init__(self, dim: int):
        self.g = Tensor(np.ones(dim), requires_grad=True)
        self.b = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x) * self.g + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.g": self.g, f"{prefix}.b": self.b}


class Embedding:
    def __init__(self, rng, rows: int, dim: int, std: float = 0.02):
        self.table = Tensor(rng.normal(0.0, std, size=(rows, dim)), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.table, ids)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}
