"""Edge feature extractor.

Three depthwise-separable conv layers (denoise + compress), three dilated
conv layers with dilations 1, 2, 4 (multi-scale features), and a final
separable transition layer that lands on the target (length, width).  All
convolutions use ceil-mode symmetric zero padding, which is what makes a
3000-step window come out at length 188 under four stride-2 layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm1d
from .tensor import Tensor


@dataclass
class ConvSpec:
    kernel: int
    stride: int
    out_channels: int


@dataclass
class BackboneConfig:
    in_channels: int
    dsc: list[ConvSpec]
    ac_kernel: int
    ac_channels: list[int]
    final: ConvSpec

    @property
    def out_dim(self) -> int:
        return self.final.out_channels

    def output_length(self, t: int) -> int:
        for spec in self.dsc:
            t = math.ceil(t / spec.stride)
        t = math.ceil(t / self.final.stride)
        return t


def paper_backbone(in_channels: int = 270, d: int = 64) -> BackboneConfig:
    return BackboneConfig(
        in_channels=in_channels,
        dsc=[ConvSpec(5, 2, 32), ConvSpec(5, 2, 48), ConvSpec(5, 2, 64)],
        ac_kernel=5,
        ac_channels=[64, 64, 64],
        final=ConvSpec(5, 2, d),
    )


def desk_backbone(in_channels: int = 32, d: int = 32) -> BackboneConfig:
    return BackboneConfig(
        in_channels=in_channels,
        dsc=[ConvSpec(5, 2, 32), ConvSpec(5, 2, 32), ConvSpec(5, 2, 32)],
        ac_kernel=3,
        ac_channels=[32, 32, 32],
        final=ConvSpec(5, 2, d),
    )


def _ceil_pad(t: int, kernel: int, stride: int, dilation: int = 1) -> tuple[int, int]:
    """Symmetric zero padding so output length is ceil(t / stride)."""
    t_out = math.ceil(t / stride)
    needed = (t_out - 1) * stride + (kernel - 1) * dilation + 1
    total = max(0, needed - t)
    return total // 2, total - total // 2


class DscLayer:
    """Depthwise conv (stride s) + 1x1 pointwise mix, then BN + ReLU."""

    def __init__(self, c_in: int, spec: ConvSpec, rng: np.random.Generator):
        k, c_out = spec.kernel, spec.out_channels
        self.spec = spec
        self.c_in = c_in
        self.depthwise = Tensor(
            rng.normal(0, 1.0 / np.sqrt(k), (c_in, 1, k)), requires_grad=True
        )
        self.pointwise = Tensor(
            rng.normal(0, 1.0 / np.sqrt(c_in), (c_out, c_in, 1)), requires_grad=True
        )
        self.bn = BatchNorm1d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        pad = _ceil_pad(x.shape[2], self.spec.kernel, self.spec.stride)
        d = T.conv1d(
            x, self.depthwise, stride=self.spec.stride, groups=self.c_in, padding=pad
        )
        j = T.conv1d(d, self.pointwise)
        return T.relu(self.bn(j))

    def parameters(self, prefix):
        out = {f"{prefix}.depthwise": self.depthwise, f"{prefix}.pointwise": self.pointwise}
        out.update(self.bn.parameters(f"{prefix}.bn"))
        return out


class AcLayer:
    """Full dilated conv, stride 1, same-length padding, then BN + ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int, rng):
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        self.kernel = kernel
        self.dilation = dilation
        self.weight = Tensor(
            rng.normal(0, 1.0 / np.sqrt(kernel * c_in), (c_out, c_in, kernel)),
            requires_grad=True,
        )
        self.bn = BatchNorm1d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        total = (self.kernel - 1) * self.dilation
        pad = (total // 2, total - total // 2)
        y = T.conv1d(x, self.weight, dilation=self.dilation, padding=pad)
        return T.relu(self.bn(y))

    def parameters(self, prefix):
        out = {f"{prefix}.weight": self.weight}
        out.update(self.bn.parameters(f"{prefix}.bn"))
        return out


class Backbone:
    """Maps amplitude input (B, T, C) to compressed features (B, l, d)."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.dsc_layers = []
        c = cfg.in_channels
        for spec in cfg.dsc:
            self.dsc_layers.append(DscLayer(c, spec, rng))
            c = spec.out_channels
        self.ac_layers = []
        for i, c_out in enumerate(cfg.ac_channels):
            self.ac_layers.append(AcLayer(c, c_out, cfg.ac_kernel, 2**i, rng))
            c = c_out
        self.final = DscLayer(c, cfg.final, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if not np.isfinite(x.data).all():
            raise ValueError("backbone input contains non-finite values")
        h = x.transpose(0, 2, 1)  # (B, C, T)
        for layer in self.dsc_layers:
            h = layer(h)
        for layer in self.ac_layers:
            h = layer(h)
        h = self.final(h)
        # parameter-free norm pins the feature scale so downstream codebooks
        # track directions instead of chasing a growing magnitude
        return T.layer_norm(h.transpose(0, 2, 1))  # (B, l, d)

    def set_training(self, training: bool):
        for layer in [*self.dsc_layers, *self.ac_layers, self.final]:
            layer.bn.training = training

    def parameters(self, prefix="backbone"):
        out = {}
        for i, layer in enumerate(self.dsc_layers):
            out.update(layer.parameters(f"{prefix}.dsc{i}"))
        for i, layer in enumerate(self.ac_layers):
            out.update(layer.parameters(f"{prefix}.ac{i}"))
        out.update(self.final.parameters(f"{prefix}.final"))
        return out

    def state(self, prefix="backbone"):
        out = {}
        for i, layer in enumerate(self.dsc_layers):
            out.update(layer.bn.state(f"{prefix}.dsc{i}.bn"))
        for i, layer in enumerate(self.ac_layers):
            out.update(layer.bn.state(f"{prefix}.ac{i}.bn"))
        out.update(self.final.bn.state(f"{prefix}.final.bn"))
        return out

    def load_state(self, prefix, tensors):
        for i, layer in enumerate(self.dsc_layers):
            layer.bn.load_state(f"{prefix}.dsc{i}.bn", tensors)
        for i, layer in enumerate(self.ac_layers):
            layer.bn.load_state(f"{prefix}.ac{i}.bn", tensors)
        self.final.bn.load_state(f"{prefix}.final.bn", tensors)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())


def separable_param_count(kernel: int, c_in: int, c_out: int) -> tuple[int, int]:
    """(separable, standard) conv parameter counts for one layer, no bias."""
    return kernel * c_in + c_in * c_out, kernel * c_in * c_out
