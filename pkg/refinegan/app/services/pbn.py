"""Patient-wise mini-batch normalization.

Batches never mix patients or acquisition planes, and the normalization
statistics of a batch are the per-channel mean and population variance
over every pixel of every slice in it. At predict time the same
statistics are computed over the whole patient/plane instead of running
averages.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from ..errors import DegenerateBatchError, EmptyDatasetError, ShapeMismatchError
from ..models import (
    AcquisitionPlane,
    PatientRecord,
    Volume,
    extract_slices,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5

ArrayLike = np.ndarray | torch.Tensor


@dataclass(frozen=True, slots=True)
class BatchRef:
    """Contiguous slice range ``[start, stop)`` of one patient along one plane."""

    patient_id: str
    plane: AcquisitionPlane
    start: int
    stop: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.stop:
            raise ValueError(f"invalid slice range [{self.start}, {self.stop})")

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, slots=True)
class BatchPlan:
    batches: tuple[BatchRef, ...]
    images_per_batch: int

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


@dataclass(frozen=True, slots=True)
class BNParams:
    """Learned per-channel scale and shift with a positive epsilon."""

    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        gamma = np.asarray(self.gamma, dtype=np.float64).reshape(-1)
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if gamma.shape != beta.shape:
            raise ShapeMismatchError(f"gamma {gamma.shape} and beta {beta.shape} differ")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(beta))):
            raise ValueError("gamma and beta must be finite")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def identity(cls, channels: int, epsilon: float = DEFAULT_EPSILON) -> "BNParams":
        return cls(gamma=np.ones(channels), beta=np.zeros(channels), epsilon=epsilon)


def build_batch_plan(
    records: Sequence[PatientRecord],
    images_per_batch: int = 128,
    planes: Iterable[AcquisitionPlane | str] = (AcquisitionPlane.AXIAL,),
    shuffle_seed: int | None = None,
) -> BatchPlan:
    """Split every patient/plane into contiguous slice batches.

    ``images_per_batch`` counts slices times channels, so a 4-channel
    volume gets ``images_per_batch // 4`` slices per batch. Shuffling
    permutes patients only.
    """

    if not records:
        raise EmptyDatasetError("cannot plan batches for an empty dataset")
    if images_per_batch < 1:
        raise ValueError("images_per_batch must be >= 1")
    plane_list = [AcquisitionPlane.parse(plane) for plane in planes]
    order = list(range(len(records)))
    if shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        order = [int(index) for index in rng.permutation(order)]

    batches: list[BatchRef] = []
    for index in order:
        record = records[index]
        per_batch = max(1, images_per_batch // record.volume.channels)
        for plane in plane_list:
            count = record.volume.shape[AcquisitionPlane.parse(plane).axis]
            for start in range(0, count, per_batch):
                batches.append(
                    BatchRef(
                        patient_id=record.patient_id,
                        plane=plane,
                        start=start,
                        stop=min(start + per_batch, count),
                    )
                )

    plan = BatchPlan(batches=tuple(batches), images_per_batch=images_per_batch)
    logger.info(
        "BATCH_PLAN %s",
        json.dumps(
            {
                "patients": len(records),
                "planes": [plane.value for plane in plane_list],
                "batches": len(plan),
                "images_per_batch": images_per_batch,
                "shuffle_seed": shuffle_seed,
            }
        ),
    )
    return plan


def _reduce_axes(ndim: int, channel_axis: int) -> tuple[int, ...]:
    channel_axis %= ndim
    return tuple(axis for axis in range(ndim) if axis != channel_axis)


def _broadcast_shape(ndim: int, channel_axis: int, channels: int) -> list[int]:
    shape = [1] * ndim
    shape[channel_axis % ndim] = channels
    return shape


def bn_stats(batch: ArrayLike, channel_axis: int = -1) -> tuple[ArrayLike, ArrayLike]:
    """Per-channel mean and population variance over all other axes.

    NumPy inputs are reduced in float64; torch inputs stay on the autograd
    graph.
    """

    ndim = batch.ndim
    axes = _reduce_axes(ndim, channel_axis)
    channels = batch.shape[channel_axis]
    count = int(np.prod(batch.shape)) // max(channels, 1)
    if count < 2:
        raise DegenerateBatchError(
            f"need at least 2 values per channel, got {count}"
        )
    if isinstance(batch, torch.Tensor):
        mu = batch.mean(dim=axes)
        sigma2 = batch.var(dim=axes, unbiased=False)
        return mu, sigma2
    values = np.asarray(batch, dtype=np.float64)
    mu = values.mean(axis=axes)
    sigma2 = values.var(axis=axes)
    return mu, sigma2


def bn_forward(
    batch: ArrayLike,
    params: BNParams,
    mu: ArrayLike,
    sigma2: ArrayLike,
    channel_axis: int = -1,
    epsilon: float | None = None,
) -> ArrayLike:
    """``gamma * (x - mu) / sqrt(sigma2 + eps) + beta`` per channel.

    ``epsilon`` overrides ``params.epsilon``; zero is accepted here for
    exact arithmetic checks.
    """

    eps = params.epsilon if epsilon is None else float(epsilon)
    if isinstance(batch, torch.Tensor):
        gamma = torch.as_tensor(params.gamma, dtype=batch.dtype)
        beta = torch.as_tensor(params.beta, dtype=batch.dtype)
        return normalize(batch, gamma, beta, mu, sigma2, eps, channel_axis)
    values = np.asarray(batch, dtype=np.float64)
    return normalize(
        values,
        params.gamma,
        params.beta,
        np.asarray(mu, dtype=np.float64),
        np.asarray(sigma2, dtype=np.float64),
        eps,
        channel_axis,
    )


def normalize(
    batch: ArrayLike,
    gamma: ArrayLike,
    beta: ArrayLike,
    mu: ArrayLike,
    sigma2: ArrayLike,
    epsilon: float,
    channel_axis: int = -1,
) -> ArrayLike:
    """Raw normalization kernel shared by :func:`bn_forward` and the torch layers."""

    shape = _broadcast_shape(batch.ndim, channel_axis, batch.shape[channel_axis])
    if isinstance(batch, torch.Tensor):
        mu = torch.as_tensor(mu, dtype=batch.dtype)
        sigma2 = torch.as_tensor(sigma2, dtype=batch.dtype)
        scale = gamma.reshape(shape) / torch.sqrt(sigma2.reshape(shape) + epsilon)
        return (batch - mu.reshape(shape)) * scale + beta.reshape(shape)
    scale = gamma.reshape(shape) / np.sqrt(sigma2.reshape(shape) + epsilon)
    return (batch - mu.reshape(shape)) * scale + beta.reshape(shape)


@dataclass(slots=True)
class MomentAccumulator:
    """Pools per-channel moments across chunks (Chan et al. parallel update)."""

    count: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None
    channel_axis: int = field(default=-1)

    def update(self, chunk: ArrayLike) -> None:
        if isinstance(chunk, torch.Tensor):
            chunk = chunk.detach().cpu().numpy()
        values = np.asarray(chunk, dtype=np.float64)
        channels = values.shape[self.channel_axis]
        values = np.moveaxis(values, self.channel_axis, -1).reshape(-1, channels)
        n_b = values.shape[0]
        if n_b == 0:
            return
        mean_b = values.mean(axis=0)
        m2_b = ((values - mean_b) ** 2).sum(axis=0)
        if self.mean is None or self.m2 is None:
            self.count, self.mean, self.m2 = n_b, mean_b, m2_b
            return
        total = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self.m2 = self.m2 + m2_b + delta**2 * (self.count * n_b / total)
        self.count = total

    def result(self) -> tuple[np.ndarray, np.ndarray]:
        if self.mean is None or self.m2 is None or self.count < 2:
            raise DegenerateBatchError(
                f"need at least 2 values per channel, got {self.count}"
            )
        return self.mean.copy(), self.m2 / self.count


def bn_inference_stats(
    patient: PatientRecord | Volume,
    plane: AcquisitionPlane | str = AcquisitionPlane.AXIAL,
    chunk: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel statistics over every slice of one patient along ``plane``."""

    volume = patient.volume if isinstance(patient, PatientRecord) else patient
    slices = extract_slices(volume, plane).slices
    accumulator = MomentAccumulator()
    for start in range(0, slices.shape[0], max(1, chunk)):
        accumulator.update(slices[start : start + chunk])
    return accumulator.result()


__all__ = [
    "DEFAULT_EPSILON",
    "BatchRef",
    "BatchPlan",
    "BNParams",
    "build_batch_plan",
    "bn_stats",
    "bn_forward",
    "normalize",
    "MomentAccumulator",
    "bn_inference_stats",
]
