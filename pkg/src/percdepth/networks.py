"""Generator and critic architectures.

The generator is a ResNet18-style encoder with a skip-connected nearest
neighbor upsampling decoder and a tanh output head.  The critic is a plain
convolutional patch scorer (kernel 4, LeakyReLU 0.2, linear head, no
normalization layers, as required for per-sample gradient penalties).

Every layer carries the name used in the architecture tables so that
``inspect-net`` can print the full table and tests can compare it row by row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

INSTANCE_NORM_EPS = 1e-5
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture table."""

    name: str
    kind: str
    kernel: int = 0
    stride: int = 0
    channels: int = 0
    inputs: tuple = ()
    activation: str = ""


@dataclass(frozen=True)
class NetScale:
    """Desk-scale knob: shrinks every channel count and the input size."""

    width_multiplier: float = 1.0
    input_size: int = 256

    def __post_init__(self):
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ValueError("width_multiplier must lie in (0, 1]")
        if self.input_size % 32 != 0:
            raise ValueError(
                f"input_size must be divisible by 32, got {self.input_size}"
            )

    def ch(self, channels: int) -> int:
        return max(1, round(channels * self.width_multiplier))


def _same_pad(x: torch.Tensor, kernel: int, stride: int) -> torch.Tensor:
    # TF-style "same" padding so that out = ceil(in / stride) for any kernel.
    pads = []
    for dim in (-1, -2):
        size = x.shape[dim]
        total = max((math.ceil(size / stride) - 1) * stride + kernel - size, 0)
        pads += [total // 2, total - total // 2]
    return F.pad(x, pads)


class SameConv(nn.Conv2d):
    """Conv2d with same-padding semantics (handles even kernels)."""

    def __init__(self, in_ch, out_ch, kernel, stride, bias=True):
        super().__init__(in_ch, out_ch, kernel, stride, padding=0, bias=bias)
        self._k = kernel
        self._s = stride

    def forward(self, x):
        return super().forward(_same_pad(x, self._k, self._s))


class ConvNorm(nn.Module):
    """Same-padded convolution followed by affine instance normalization."""

    def __init__(self, in_ch, out_ch, kernel, stride):
        super().__init__()
        self.conv = SameConv(in_ch, out_ch, kernel, stride)
        self.norm = nn.InstanceNorm2d(out_ch, eps=INSTANCE_NORM_EPS, affine=True)

    def forward(self, x):
        return self.norm(self.conv(x))


_ACTIVATIONS = {
    "ReLU": F.relu,
    "ELU": F.elu,
    "tanh": torch.tanh,
    "LReLU": lambda x: F.leaky_relu(x, LEAKY_SLOPE),
    "linear": lambda x: x,
}


class ResidualBlock(nn.Module):
    """conv-norm + ReLU, conv-norm on the main path; 1x1 conv-norm skip; add;
    ReLU.  The stride applies to the first convolution and the skip."""

    def __init__(self, in_ch, kernel, stride, out_ch):
        super().__init__()
        self.con1 = ConvNorm(in_ch, out_ch, kernel, stride)
        self.con2 = ConvNorm(out_ch, out_ch, kernel, 1)
        self.skip = ConvNorm(in_ch, out_ch, 1, stride)

    def forward(self, x):
        main = self.con2(F.relu(self.con1(x)))
        return F.relu(main + self.skip(x))


# (name, kernel, stride, channels) of the encoder residual blocks.
_RES_BLOCKS = [
    ("res1", 3, 1, 64),
    ("res2", 3, 1, 64),
    ("res3", 3, 2, 128),
    ("res4", 3, 1, 128),
    ("res5", 3, 2, 256),
    ("res6", 3, 1, 256),
    ("res7", 3, 2, 512),
    ("res8", 3, 1, 512),
]

# Decoder stages: (upsample name, conv name, conv channels, skip source).
_DECODER = [
    ("ups1", "con2", 512, ("cct1", "con3", 512, "res6")),
    ("ups2", "con4", 256, ("cct2", "con5", 256, "res4")),
    ("ups3", "con6", 128, ("cct3", "con7", 128, "res2")),
    ("ups4", "con8", 64, ("cct4", "con9", 64, "con1")),
    ("ups5", "con10", 32, None),
]

_SKIP_CHANNELS = {"res6": 256, "res4": 128, "res2": 64, "con1": 64}


class ResNetGenerator(nn.Module):
    """RGB-to-depth (out_channels=1) or depth-to-RGB (out_channels=3)
    generator with a tanh head; outputs are bounded in [-1, 1]."""

    def __init__(self, scale: NetScale = NetScale(), out_channels: int = 1):
        super().__init__()
        if out_channels not in (1, 3):
            raise ValueError("out_channels must be 1 (depth) or 3 (RGB)")
        self.scale = scale
        self.out_channels = out_channels
        self.in_channels = 3 if out_channels == 1 else 1
        ch = scale.ch

        self.con1 = ConvNorm(self.in_channels, ch(64), 7, 2)
        in_ch = ch(64)
        for name, k, s, c in _RES_BLOCKS:
            self.add_module(name, ResidualBlock(in_ch, k, s, ch(c)))
            in_ch = ch(c)
        for ups_name, conv_name, c, skip in _DECODER:
            self.add_module(conv_name, ConvNorm(in_ch, ch(c), 3, 1))
            in_ch = ch(c)
            if skip is not None:
                _, post_name, post_c, src = skip
                self.add_module(
                    post_name, ConvNorm(in_ch + ch(_SKIP_CHANNELS[src]), ch(post_c), 3, 1)
                )
                in_ch = ch(post_c)
        self.con11 = ConvNorm(in_ch, ch(32), 3, 1)
        self.out = SameConv(ch(32), out_channels, 3, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        acts = {}
        h = acts["con1"] = F.relu(self.con1(x))
        h = F.max_pool2d(_same_pad(h, 3, 2), 3, stride=2)
        for name, *_ in _RES_BLOCKS:
            h = acts[name] = getattr(self, name)(h)
        for ups_name, conv_name, _, skip in _DECODER:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = F.elu(getattr(self, conv_name)(h))
            if skip is not None:
                _, post_name, _, src = skip
                h = torch.cat([h, acts[src]], dim=1)
                h = F.elu(getattr(self, post_name)(h))
        h = F.elu(self.con11(h))
        return torch.tanh(self.out(h))

    def layer_table(self) -> list[LayerSpec]:
        ch = self.scale.ch
        rows = [
            LayerSpec("con1", "conv-norm", 7, 2, ch(64), ("I",), "ReLU"),
            LayerSpec("max1", "maxpool 3x3", 3, 2, ch(64), ("con1",), ""),
        ]
        prev = "max1"
        for name, k, s, c in _RES_BLOCKS:
            rows.append(LayerSpec(name, "res-block", k, s, ch(c), (prev,), "ReLU"))
            prev = name
        for ups_name, conv_name, c, skip in _DECODER:
            ups_ch = rows[-1].channels
            rows.append(LayerSpec(ups_name, "upsampling", 0, 2, ups_ch, (prev,), ""))
            rows.append(
                LayerSpec(conv_name, "conv-norm", 3, 1, ch(c), (ups_name,), "ELU")
            )
            prev = conv_name
            if skip is not None:
                cct_name, post_name, post_c, src = skip
                cat_ch = ch(c) + ch(_SKIP_CHANNELS[src])
                rows.append(
                    LayerSpec(cct_name, "concatenate", 0, 0, cat_ch, (prev, src), "")
                )
                rows.append(
                    LayerSpec(post_name, "conv-norm", 3, 1, ch(post_c), (cct_name,), "ELU")
                )
                prev = post_name
        rows.append(LayerSpec("con11", "conv-norm", 3, 1, ch(32), (prev,), "ELU"))
        rows.append(
            LayerSpec("O", "convolution", 3, 1, self.out_channels, ("con11",), "tanh")
        )
        return rows


# (name, stride, channels) of the critic convolutions; kernel is always 4.
_CRITIC_CONVS = [
    ("con1", 1, 16),
    ("con2", 1, 16),
    ("con3", 2, 32),
    ("con4", 1, 32),
    ("con5", 2, 64),
    ("con6", 1, 64),
    ("con7", 2, 128),
    ("con8", 1, 128),
    ("con9", 2, 256),
    ("con10", 1, 256),
    ("con11", 2, 512),
    ("con12", 1, 512),
]

FEATURE_LAYER = "con12"


class PatchCritic(nn.Module):
    """Patch-scoring critic: 13 same-padded kernel-4 convolutions, LeakyReLU
    0.2 everywhere except the linear single-channel head, no normalization."""

    def __init__(self, scale: NetScale = NetScale(), in_channels: int = 1):
        super().__init__()
        if in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 (depth) or 3 (RGB)")
        self.scale = scale
        self.in_channels = in_channels
        ch = scale.ch
        prev = in_channels
        for name, s, c in _CRITIC_CONVS:
            self.add_module(name, SameConv(prev, ch(c), 4, s))
            prev = ch(c)
        self.out = SameConv(prev, 1, 4, 1)

    def _run(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        h = x
        for name, *_ in _CRITIC_CONVS:
            h = F.leaky_relu(getattr(self, name)(h), LEAKY_SLOPE)
        return h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self._run(x))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Second-to-last layer activation (post-LeakyReLU con12)."""
        return self._run(x)

    def layer_table(self) -> list[LayerSpec]:
        ch = self.scale.ch
        rows = []
        prev = "I"
        for name, s, c in _CRITIC_CONVS:
            rows.append(LayerSpec(name, "convolution", 4, s, ch(c), (prev,), "LReLU"))
            prev = name
        rows.append(LayerSpec("O", "convolution", 4, 1, 1, (prev,), "linear"))
        return rows


def build_generator(scale: NetScale = NetScale(), out_channels: int = 1) -> ResNetGenerator:
    return ResNetGenerator(scale, out_channels)


def build_critic(scale: NetScale = NetScale(), in_channels: int = 1) -> PatchCritic:
    return PatchCritic(scale, in_channels)


def param_count(net: nn.Module) -> int:
    """Exact number of trainable scalars."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def format_layer_table(rows: list[LayerSpec]) -> str:
    header = f"{'name':<6} {'type':<12} {'k':>2} {'s':>2} {'channels':>8} {'input':<12} activation"
    lines = [header, "-" * len(header)]
    for r in rows:
        k = str(r.kernel) if r.kernel else ""
        s = str(r.stride) if r.stride else ""
        lines.append(
            f"{r.name:<6} {r.kind:<12} {k:>2} {s:>2} {r.channels:>8} "
            f"{','.join(r.inputs):<12} {r.activation}"
        )
    return "\n".join(lines)
