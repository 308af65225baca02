"""Building blocks shared by the generator, discriminator and refinement nets.

Tensors inside the networks are ``(N, C, H, W)`` where ``N`` runs over the
slices of one patient batch in acquisition order.
"""
from __future__ import annotations

from typing import Literal

import numpy as np
import torch
from torch import nn

from ...errors import DegenerateBatchError
from .. import pbn

BNMode = Literal["batch", "fixed", "collect"]


class PatientBatchNorm(nn.Module):
    """Batch normalization whose statistics come from one patient batch.

    Modes:

    * ``batch``   statistics of the incoming batch (training).
    * ``fixed``   statistics injected with :meth:`fix` (predict time).
    * ``collect`` batch statistics, while pooling the input moments into an
      accumulator so whole-patient statistics can be read back.

    With ``norm_mode="running"`` the layer also keeps exponential running
    averages during training, which :meth:`running_stats` exposes.
    """

    def __init__(
        self,
        channels: int,
        epsilon: float = pbn.DEFAULT_EPSILON,
        norm_mode: str = "patient",
        momentum: float = 0.1,
    ) -> None:
        super().__init__()
        if not epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.channels = channels
        self.epsilon = epsilon
        self.norm_mode = norm_mode
        self.momentum = momentum
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))
        self.mode: BNMode = "batch"
        self._fixed: tuple[torch.Tensor, torch.Tensor] | None = None
        self.accumulator: pbn.MomentAccumulator | None = None

    def fix(self, mu: np.ndarray | torch.Tensor, sigma2: np.ndarray | torch.Tensor) -> None:
        self._fixed = (
            torch.as_tensor(np.asarray(mu), dtype=self.gamma.dtype),
            torch.as_tensor(np.asarray(sigma2), dtype=self.gamma.dtype),
        )
        self.mode = "fixed"

    def start_collect(self) -> None:
        self.accumulator = pbn.MomentAccumulator(channel_axis=1)
        self.mode = "collect"

    def reset(self) -> None:
        self.mode = "batch"
        self._fixed = None
        self.accumulator = None

    def running_stats(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.running_mean.detach().cpu().numpy().astype(np.float64),
            self.running_var.detach().cpu().numpy().astype(np.float64),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "fixed":
            if self._fixed is None:
                raise DegenerateBatchError("fixed mode without injected statistics")
            mu, sigma2 = self._fixed
            mu = mu.to(x.dtype)
            sigma2 = sigma2.to(x.dtype)
        else:
            if self.mode == "collect" and self.accumulator is not None:
                self.accumulator.update(x)
            mu, sigma2 = pbn.bn_stats(x, channel_axis=1)
            if self.norm_mode == "running" and self.training and self.mode == "batch":
                with torch.no_grad():
                    self.running_mean.mul_(1 - self.momentum).add_(
                        self.momentum * mu.detach().to(self.running_mean.dtype)
                    )
                    self.running_var.mul_(1 - self.momentum).add_(
                        self.momentum * sigma2.detach().to(self.running_var.dtype)
                    )
        return pbn.normalize(x, self.gamma, self.beta, mu, sigma2, self.epsilon, channel_axis=1)


class SliceBiLSTM(nn.Module):
    """Bidirectional LSTM over the slice axis, run independently per pixel.

    Input and output are ``(N, C, h, w)``; every pixel location is one
    sequence of length ``N``. Each direction has ``C // 2`` hidden units and
    a linear projection maps the concatenated states back to ``C``.
    """

    def __init__(self, channels: int) -> None:
        super().__init__()
        hidden = max(1, channels // 2)
        self.channels = channels
        self.hidden = hidden
        self.lstm = nn.LSTM(
            input_size=channels,
            hidden_size=hidden,
            batch_first=True,
            bidirectional=True,
        )
        self.proj = nn.Linear(2 * hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        sequences = x.permute(2, 3, 0, 1).reshape(h * w, n, c)
        states, _ = self.lstm(sequences)
        out = self.proj(states)
        return out.reshape(h, w, n, c).permute(2, 3, 0, 1).contiguous()

    @torch.no_grad()
    def swap_directions(self) -> None:
        """Exchange forward and backward sub-layers (and their projection columns)."""

        for name in ("weight_ih_l0", "weight_hh_l0", "bias_ih_l0", "bias_hh_l0"):
            forward = getattr(self.lstm, name)
            backward = getattr(self.lstm, f"{name}_reverse")
            saved = forward.detach().clone()
            forward.copy_(backward)
            backward.copy_(saved)
        weight = self.proj.weight
        front = weight[:, : self.hidden].clone()
        weight[:, : self.hidden] = weight[:, self.hidden :]
        weight[:, self.hidden :] = front


def encoder_block(
    in_channels: int, out_channels: int, epsilon: float, norm_mode: str
) -> nn.Sequential:
    """5x5 stride-2 convolution, patient-wise BN, leaky ReLU."""

    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=5, stride=2, padding=2),
        PatientBatchNorm(out_channels, epsilon, norm_mode),
        nn.LeakyReLU(0.2),
    )


def decoder_conv(
    in_channels: int, out_channels: int, epsilon: float, norm_mode: str
) -> nn.Sequential:
    """3x3 stride-1 convolution, patient-wise BN, ReLU."""

    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=1),
        PatientBatchNorm(out_channels, epsilon, norm_mode),
        nn.ReLU(),
    )


def critic_block(
    in_channels: int, out_channels: int, epsilon: float, norm_mode: str
) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=1),
        PatientBatchNorm(out_channels, epsilon, norm_mode),
        nn.LeakyReLU(0.2),
    )


__all__ = [
    "BNMode",
    "PatientBatchNorm",
    "SliceBiLSTM",
    "encoder_block",
    "decoder_conv",
    "critic_block",
]
