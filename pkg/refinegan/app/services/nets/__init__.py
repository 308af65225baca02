"""Generator, discriminator and refinement networks with checkpoint I/O."""
from __future__ import annotations

from .checkpoint import FORMAT_VERSION, load_checkpoint, read_checkpoint, save_checkpoint
from .layers import PatientBatchNorm, SliceBiLSTM
from .networks import (
    NetHandle,
    NetKind,
    PatientStats,
    apply_stats,
    backward,
    build_discriminator,
    build_generator,
    build_net,
    build_refinement,
    collect_patient_stats,
    forward,
    running_stats,
)

__all__ = [
    "FORMAT_VERSION",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "PatientBatchNorm",
    "SliceBiLSTM",
    "NetHandle",
    "NetKind",
    "PatientStats",
    "apply_stats",
    "backward",
    "build_discriminator",
    "build_generator",
    "build_net",
    "build_refinement",
    "collect_patient_stats",
    "forward",
    "running_stats",
]
