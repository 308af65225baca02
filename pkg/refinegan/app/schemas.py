"""Pydantic schemas for experiment configuration."""
from __future__ import annotations

import math
from typing import Annotated, Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from .models import AcquisitionPlane

NormMode = Literal["patient", "running"]
OptimizerKind = Literal["rmsprop", "adadelta"]
IntensityMode = Literal["zscore", "hu_window", "none"]

# Per-kind optimizer constants filled in when a key is omitted.
OPTIMIZER_DEFAULTS: dict[str, dict[str, float]] = {
    "rmsprop": {"lr": 1e-3, "rho": 0.9, "eps": 1e-8},
    "adadelta": {"lr": 1.0, "rho": 0.95, "eps": 1e-6},
}


class _Frozen(BaseModel):
    model_config = {"frozen": True, "extra": "forbid"}


class NetConfig(_Frozen):
    """Architecture description shared by the three networks."""

    height: Annotated[int, Field(ge=1)] = 32
    width: Annotated[int, Field(ge=1)] = 32
    in_channels: Annotated[int, Field(ge=1)] = 2
    class_count: Annotated[int, Field(ge=1)] = 2
    depth: Annotated[int, Field(ge=2)] = 3
    base_filters: Annotated[int, Field(ge=4)] = 8
    recurrent: bool = False
    noise_input: bool = False
    seed: int = 7
    norm_mode: NormMode = "patient"
    input_norm: bool = True


class OptimizerSpec(_Frozen):
    kind: OptimizerKind = "rmsprop"
    lr: Annotated[float, Field(gt=0)] = 1e-3
    rho: Annotated[float, Field(gt=0, lt=1)] = 0.9
    eps: Annotated[float, Field(gt=0)] = 1e-8

    @model_validator(mode="before")
    @classmethod
    def _fill_kind_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        kind = data.get("kind", "rmsprop")
        defaults = OPTIMIZER_DEFAULTS.get(str(kind))
        if defaults is None:
            return data
        return {**defaults, **data}


class LossWeights(_Frozen):
    lambda_l1: Annotated[float, Field(ge=0)] = 1.0

    @field_validator("lambda_l1")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("lambda_l1 must be finite")
        return value


class AugmentParams(_Frozen):
    """Random geometric and intensity augmentation applied to training slices."""

    crop_enabled: bool = False
    crop_fraction: Annotated[float, Field(gt=0, le=1)] = 0.9
    scale_enabled: bool = False
    scale_min: Annotated[float, Field(ge=0.8, le=1.2)] = 0.9
    scale_max: Annotated[float, Field(ge=0.8, le=1.2)] = 1.1
    rotation_enabled: bool = False
    rotation_deg: Annotated[float, Field(ge=0, le=10)] = 10.0
    noise_enabled: bool = False
    noise_sigma: Annotated[float, Field(ge=0)] = 0.05
    image_order: Annotated[int, Field(ge=0, le=3)] = 1

    @field_validator("noise_sigma")
    @classmethod
    def _finite_sigma(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("noise_sigma must be finite")
        return value

    @model_validator(mode="after")
    def _ordered_scale(self) -> "AugmentParams":
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        return self

    @property
    def any_enabled(self) -> bool:
        return (
            self.crop_enabled
            or self.scale_enabled
            or self.rotation_enabled
            or self.noise_enabled
        )


class PreprocessConfig(_Frozen):
    intensity: IntensityMode = "zscore"
    hist_equalize: bool = False
    hu_lo: float = -100.0
    hu_hi: float = 400.0
    equalize_bins: Annotated[int, Field(ge=2)] = 256

    @model_validator(mode="after")
    def _window_order(self) -> "PreprocessConfig":
        if self.hu_lo >= self.hu_hi:
            raise ValueError("hu_lo must be below hu_hi")
        return self


class SynthSpec(_Frozen):
    """Parameters of the synthetic imbalanced dataset."""

    n_patients: Annotated[int, Field(ge=1)] = 10
    slices: Annotated[int, Field(ge=1)] = 16
    height: Annotated[int, Field(ge=4)] = 32
    width: Annotated[int, Field(ge=4)] = 32
    channels: Annotated[int, Field(ge=1)] = 2
    class_count: Annotated[int, Field(ge=2)] = 2
    lesion_fraction: Annotated[float, Field(gt=0, lt=0.5)] = 0.02
    contrast: Annotated[float, Field(gt=0)] = 3.0
    smoothing: Annotated[float, Field(ge=0)] = 2.0
    seed: int = 7

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.slices, self.height, self.width)


class RunConfig(_Frozen):
    """Everything needed to replay one experiment deterministically."""

    seed: int = 7
    epochs: Annotated[int, Field(ge=0, le=100)] = 100
    refine_epochs: Annotated[int, Field(ge=0, le=100)] = 100
    images_per_batch: Annotated[int, Field(ge=1)] = 128
    planes: tuple[AcquisitionPlane, ...] = (AcquisitionPlane.AXIAL,)
    d_steps_per_g_step: Annotated[int, Field(ge=1)] = 1
    norm_epsilon: Annotated[float, Field(gt=0)] = 1e-5
    loss: LossWeights = LossWeights()
    generator: NetConfig = NetConfig()
    discriminator: NetConfig = NetConfig()
    refinement: NetConfig = NetConfig(recurrent=True)
    g_optimizer: OptimizerSpec = OptimizerSpec(kind="adadelta")
    d_optimizer: OptimizerSpec = OptimizerSpec(kind="adadelta")
    r_optimizer: OptimizerSpec = OptimizerSpec()
    preprocess: PreprocessConfig = PreprocessConfig()
    augment: AugmentParams = AugmentParams()
    synth: SynthSpec = SynthSpec()
    data_dir: str = "data"
    out_dir: str = "runs"
    tta_samples: Annotated[int, Field(ge=0)] = 0
    log_every: Annotated[int, Field(ge=1)] = 10

    @property
    def slices_per_batch(self) -> int:
        """Slices in one training batch, also the predict-time sequence length."""

        return max(1, self.images_per_batch // self.generator.in_channels)

    @field_validator("planes", mode="before")
    @classmethod
    def _split_planes(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [item for item in value.split(",") if item.strip()]
        if isinstance(value, (list, tuple)):
            value = tuple(AcquisitionPlane.parse(item) for item in value)
            if not value:
                raise ValueError("at least one plane is required")
            if len(set(value)) != len(value):
                raise ValueError("planes must not repeat")
        return value

    @model_validator(mode="before")
    @classmethod
    def _derive_networks(cls, data: Any) -> Any:
        """Derive discriminator, refinement and optimizer defaults from the generator."""

        if not isinstance(data, dict):
            return data
        data = dict(data)
        generator = data.get("generator") or {}
        if isinstance(generator, NetConfig):
            generator = generator.model_dump()
        data["generator"] = generator
        for key, forced in (
            ("discriminator", {}),
            ("refinement", {"recurrent": True, "noise_input": False}),
        ):
            given = data.get(key)
            if isinstance(given, NetConfig):
                continue
            data[key] = {**generator, **(given or {}), **forced}
        cgan_kind = "rmsprop" if generator.get("recurrent") else "adadelta"
        for key, kind in (
            ("g_optimizer", cgan_kind),
            ("d_optimizer", cgan_kind),
            ("r_optimizer", "rmsprop"),
        ):
            given = data.get(key)
            if isinstance(given, OptimizerSpec):
                continue
            data[key] = {"kind": kind, **(given or {})}
        return data


__all__ = [
    "NormMode",
    "OptimizerKind",
    "IntensityMode",
    "OPTIMIZER_DEFAULTS",
    "NetConfig",
    "OptimizerSpec",
    "LossWeights",
    "AugmentParams",
    "PreprocessConfig",
    "SynthSpec",
    "RunConfig",
]
