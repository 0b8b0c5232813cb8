"""Small neural-net building blocks on top of the autodiff tensor."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Linear:
    """Affine map y = x W + b over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias=True):
        scale = 1.0 / np.sqrt(d_in)
        self.w = Tensor(rng.uniform(-scale, scale, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class LayerNorm:
    """Layer normalization over the last axis with learnable affine."""

    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, eps=self.eps) * self.gamma + self.beta

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class BatchNorm1d:
    """Batch normalization over the channel axis of (B, C, T) tensors.

    Batch statistics are used while ``training`` is True and folded into
    running estimates (momentum 0.1); inference uses the frozen running
    statistics only, as the split edge runtime requires.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise T.ShapeError(f"batch_norm expects (B, C, T), got {x.shape}")
        if self.training:
            mu = x.mean(axis=(0, 2), keepdims=True)
            xc = x - mu
            var = T.tmean(T.square(xc), axis=(0, 2), keepdims=True)
            inv = T.div(1.0, T.sqrt(var + self.eps))
            xn = xc * inv
            n = x.shape[0] * x.shape[2]
            unbias = n / max(n - 1, 1)
            self.running_mean += self.momentum * (
                mu.data.reshape(-1) - self.running_mean
            )
            self.running_var += self.momentum * (
                var.data.reshape(-1) * unbias - self.running_var
            )
        else:
            mu = self.running_mean.reshape(1, -1, 1)
            inv = 1.0 / np.sqrt(self.running_var.reshape(1, -1, 1) + self.eps)
            xn = (x - mu) * inv
        g = self.gamma.reshape(1, -1, 1)
        b = self.beta.reshape(1, -1, 1)
        return xn * g + b

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.running_mean": self.running_mean,
            f"{prefix}.running_var": self.running_var,
        }

    def load_state(self, prefix: str, tensors: dict[str, np.ndarray]):
        self.running_mean = tensors[f"{prefix}.running_mean"].copy()
        self.running_var = tensors[f"{prefix}.running_var"].copy()
