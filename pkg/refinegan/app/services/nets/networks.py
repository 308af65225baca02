"""Generator, discriminator and refinement networks.

All public entry points take and return channel-last arrays
``(N, H, W, C)``; the modules work on ``(N, C, H, W)`` internally.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ...errors import NetConfigError, ShapeMismatchError
from ...schemas import NetConfig
from .. import pbn
from .layers import (
    PatientBatchNorm,
    SliceBiLSTM,
    critic_block,
    decoder_conv,
    encoder_block,
)

logger = logging.getLogger(__name__)

NetKind = Literal["generator", "discriminator", "refinement"]

# Per-layer (mu, sigma2) keyed by module name.
PatientStats = dict[str, tuple[np.ndarray, np.ndarray]]


class UNet(nn.Module):
    """Strided-conv encoder, resize-conv decoder and mirrored skip concatenation."""

    def __init__(
        self,
        config: NetConfig,
        in_channels: int,
        out_channels: int,
        head: Literal["softmax", "sigmoid"],
        recurrent: bool,
        extra_channels: int = 0,
        epsilon: float = pbn.DEFAULT_EPSILON,
    ) -> None:
        super().__init__()
        mode = config.norm_mode
        self.head_kind = head
        self.input_norm = (
            PatientBatchNorm(in_channels, epsilon, mode) if config.input_norm else None
        )
        stem = in_channels + extra_channels
        widths = [config.base_filters * 2**level for level in range(config.depth)]

        self.encoder = nn.ModuleList()
        previous = stem
        for width in widths:
            self.encoder.append(encoder_block(previous, width, epsilon, mode))
            previous = width

        self.bottleneck = SliceBiLSTM(widths[-1]) if recurrent else None

        self.decoder = nn.ModuleList()
        current = widths[-1]
        for level in reversed(range(config.depth)):
            skip = widths[level - 1] if level > 0 else stem
            out = widths[level - 1] if level > 0 else config.base_filters
            self.decoder.append(decoder_conv(current + skip, out, epsilon, mode))
            current = out

        self.head = nn.Conv2d(current, out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor, extra: torch.Tensor | None = None) -> torch.Tensor:
        if self.input_norm is not None:
            x = self.input_norm(x)
        if extra is not None:
            x = torch.cat([x, extra], dim=1)

        skips = [x]
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        if self.bottleneck is not None:
            x = self.bottleneck(x)

        # skips[level] matches the resolution of the upsampled decoder input.
        for step, block in enumerate(self.decoder):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = torch.cat([x, skips[len(self.decoder) - 1 - step]], dim=1)
            x = block(x)

        logits = self.head(x)
        if self.head_kind == "softmax":
            return torch.softmax(logits, dim=1)
        return torch.sigmoid(logits)


class PixelDiscriminator(nn.Module):
    """Full-resolution critic: one real/fake probability per pixel."""

    def __init__(
        self,
        config: NetConfig,
        in_channels: int,
        epsilon: float = pbn.DEFAULT_EPSILON,
    ) -> None:
        super().__init__()
        mode = config.norm_mode
        self.input_norm = (
            PatientBatchNorm(in_channels, epsilon, mode) if config.input_norm else None
        )
        widths = [
            config.base_filters * 2 ** (config.depth - 1 - level)
            for level in range(config.depth)
        ]
        blocks = []
        previous = in_channels
        for width in widths:
            blocks.append(critic_block(previous, width, epsilon, mode))
            previous = width
        self.blocks = nn.Sequential(*blocks)
        self.recurrent = SliceBiLSTM(previous) if config.recurrent else None
        self.head = nn.Conv2d(previous, 1, kernel_size=1)

    def forward(self, x: torch.Tensor, extra: torch.Tensor | None = None) -> torch.Tensor:
        if self.input_norm is not None:
            x = self.input_norm(x)
        x = self.blocks(x)
        if self.recurrent is not None:
            x = self.recurrent(x)
        return torch.sigmoid(self.head(x))


@dataclass(slots=True)
class NetHandle:
    """A network together with the configuration that built it."""

    kind: NetKind
    config: NetConfig
    module: nn.Module
    epsilon: float = pbn.DEFAULT_EPSILON

    @property
    def parameter_count(self) -> int:
        return sum(param.numel() for param in self.module.parameters())

    @property
    def input_channels(self) -> int:
        """Channel count expected by :func:`forward` (noise excluded)."""

        if self.kind == "generator":
            return self.config.in_channels
        return self.config.in_channels + self.config.class_count

    @property
    def output_channels(self) -> int:
        if self.kind == "generator":
            return self.config.class_count
        if self.kind == "discriminator":
            return 1
        return 2 * self.config.class_count

    def norm_layers(self) -> list[tuple[str, PatientBatchNorm]]:
        return [
            (name, layer)
            for name, layer in self.module.named_modules()
            if isinstance(layer, PatientBatchNorm)
        ]

    def named_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return list(self.module.named_parameters())


def _check_config(config: NetConfig) -> None:
    factor = 2**config.depth
    if config.height % factor or config.width % factor:
        raise NetConfigError(
            f"spatial size {config.height}x{config.width} is not divisible by "
            f"2^depth = {factor}"
        )


def _seeded_build(config: NetConfig, factory) -> nn.Module:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return factory()


def build_generator(config: NetConfig, epsilon: float = pbn.DEFAULT_EPSILON) -> NetHandle:
    _check_config(config)
    module = _seeded_build(
        config,
        lambda: UNet(
            config,
            in_channels=config.in_channels,
            out_channels=config.class_count,
            head="softmax",
            recurrent=config.recurrent,
            extra_channels=1 if config.noise_input else 0,
            epsilon=epsilon,
        ),
    )
    return NetHandle(kind="generator", config=config, module=module, epsilon=epsilon)


def build_discriminator(
    config: NetConfig, epsilon: float = pbn.DEFAULT_EPSILON
) -> NetHandle:
    """Pixel-level conditional critic over ``image ++ segmentation`` channels."""

    _check_config(config)
    module = _seeded_build(
        config,
        lambda: PixelDiscriminator(
            config,
            in_channels=config.in_channels + config.class_count,
            epsilon=epsilon,
        ),
    )
    return NetHandle(kind="discriminator", config=config, module=module, epsilon=epsilon)


def build_refinement(config: NetConfig, epsilon: float = pbn.DEFAULT_EPSILON) -> NetHandle:
    """UNet over ``image ++ generator probabilities`` predicting (fp, fn) per class."""

    _check_config(config)
    module = _seeded_build(
        config,
        lambda: UNet(
            config,
            in_channels=config.in_channels + config.class_count,
            out_channels=2 * config.class_count,
            head="sigmoid",
            recurrent=True,
            epsilon=epsilon,
        ),
    )
    return NetHandle(kind="refinement", config=config, module=module, epsilon=epsilon)


BUILDERS = {
    "generator": build_generator,
    "discriminator": build_discriminator,
    "refinement": build_refinement,
}


def build_net(kind: NetKind, config: NetConfig, epsilon: float = pbn.DEFAULT_EPSILON) -> NetHandle:
    return BUILDERS[kind](config, epsilon)


def _to_tensor(batch: np.ndarray | torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch
    return torch.as_tensor(np.ascontiguousarray(batch), dtype=dtype)


def _module_dtype(module: nn.Module) -> torch.dtype:
    for param in module.parameters():
        return param.dtype
    return torch.float32


def apply_stats(net: NetHandle, stats: PatientStats | None) -> None:
    """Switch every norm layer to fixed statistics (or back to batch mode)."""

    for name, layer in net.norm_layers():
        if stats is None:
            layer.reset()
        else:
            layer.fix(*stats[name])


def running_stats(net: NetHandle) -> PatientStats:
    """Running averages of a ``norm_mode="running"`` network."""

    return {name: layer.running_stats() for name, layer in net.norm_layers()}


def forward(
    net: NetHandle,
    batch: np.ndarray | torch.Tensor,
    stats: PatientStats | None = None,
    noise: np.ndarray | torch.Tensor | None = None,
) -> np.ndarray | torch.Tensor:
    """Run ``net`` on a channel-last batch ``(N, H, W, C_in)``.

    Without ``stats`` every norm layer uses the statistics of ``batch``
    itself; with ``stats`` the given per-patient statistics are used.
    NumPy input yields a NumPy result computed without autograd; tensor
    input yields a tensor on the autograd graph.
    """

    config = net.config
    as_numpy = not isinstance(batch, torch.Tensor)
    dtype = _module_dtype(net.module)
    x = _to_tensor(batch, dtype)
    expected = (config.height, config.width, net.input_channels)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ShapeMismatchError(
            f"{net.kind} expects (N, {expected[0]}, {expected[1]}, {expected[2]}), "
            f"got {tuple(x.shape)}"
        )

    extra = None
    if net.kind == "generator" and config.noise_input:
        if noise is None:
            noise = torch.randn(x.shape[0], config.height, config.width, 1, dtype=dtype)
        extra = _to_tensor(noise, dtype).permute(0, 3, 1, 2)

    apply_stats(net, stats)
    try:
        if as_numpy:
            with torch.no_grad():
                out = net.module(x.permute(0, 3, 1, 2), extra)
        else:
            out = net.module(x.permute(0, 3, 1, 2), extra)
    finally:
        if stats is not None:
            apply_stats(net, None)
    out = out.permute(0, 2, 3, 1)
    if as_numpy:
        return out.detach().cpu().numpy()
    return out


def backward(net: NetHandle, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradients of ``loss`` for every trainable parameter (zeros when unused)."""

    named = [
        (name, param)
        for name, param in net.module.named_parameters()
        if param.requires_grad
    ]
    if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
        return {name: torch.zeros_like(param) for name, param in named}
    grads = torch.autograd.grad(
        loss, [param for _, param in named], allow_unused=True
    )
    return {
        name: torch.zeros_like(param) if grad is None else grad
        for (name, param), grad in zip(named, grads)
    }


def collect_patient_stats(
    net: NetHandle,
    slices: np.ndarray,
    chunk: int = 32,
    noise: np.ndarray | None = None,
) -> PatientStats:
    """Whole-patient statistics for every norm layer, in forward order.

    Layer ``k`` is measured on a pass where layers before it already use
    their pooled patient statistics, so the result is exactly what a
    forward over the full patient with fixed statistics would see.
    """

    dtype = _module_dtype(net.module)
    layers = net.norm_layers()
    stats: PatientStats = {}
    step = max(1, chunk)
    with torch.no_grad():
        for name, layer in layers:
            for other_name, other in layers:
                if other_name in stats:
                    other.fix(*stats[other_name])
                else:
                    other.reset()
            layer.start_collect()
            for start in range(0, slices.shape[0], step):
                part = _to_tensor(slices[start : start + step], dtype)
                extra = None
                if net.kind == "generator" and net.config.noise_input:
                    if noise is None:
                        shape = (part.shape[0], 1, *part.shape[1:3])
                        extra = torch.zeros(shape, dtype=dtype)
                    else:
                        extra = _to_tensor(noise[start : start + step], dtype)
                        extra = extra.permute(0, 3, 1, 2)
                net.module(part.permute(0, 3, 1, 2), extra)
            assert layer.accumulator is not None
            stats[name] = layer.accumulator.result()
    apply_stats(net, None)
    return stats


__all__ = [
    "NetKind",
    "PatientStats",
    "UNet",
    "PixelDiscriminator",
    "NetHandle",
    "build_generator",
    "build_discriminator",
    "build_refinement",
    "build_net",
    "apply_stats",
    "running_stats",
    "forward",
    "backward",
    "collect_patient_stats",
]
