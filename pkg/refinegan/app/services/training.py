"""Two-stage training: the adversarial cGAN, then the refinement network.

Each batch of the adversarial stage runs ``d_steps_per_g_step``
discriminator updates followed by one generator update. The refinement
stage keeps the generator frozen and fits the refinement net to the error
masks of the generator's binarized output.
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import islice
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
import torch

from ..config import get_settings
from ..errors import DivergenceError, EmptyDatasetError, ShapeMismatchError, UsageError
from ..models import PatientRecord, extract_label_slices, extract_slices, one_hot_array
from ..schemas import RunConfig
from . import losses
from .nets import (
    NetHandle,
    build_discriminator,
    build_generator,
    build_refinement,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .optimizers import SpecOptimizer
from .pbn import BatchRef, build_batch_plan
from .preprocess import augment, preprocess_volume
from .report.data import LossRecord, RefineRecord, write_loss_trace, write_refine_trace

logger = logging.getLogger(__name__)

GENERATOR_CHECKPOINT = "generator.pt"
DISCRIMINATOR_CHECKPOINT = "discriminator.pt"
REFINEMENT_CHECKPOINT = "refinement.pt"
CGAN_TRACE = "cgan_loss.csv"
REFINE_TRACE = "refine_loss.csv"

Batch = tuple[np.ndarray, np.ndarray]


@dataclass(slots=True)
class CganResult:
    generator: NetHandle
    discriminator: NetHandle
    records: list[LossRecord]
    generator_path: Path
    discriminator_path: Path
    trace_path: Path


@dataclass(slots=True)
class RefineResult:
    refinement: NetHandle
    records: list[RefineRecord]
    refinement_path: Path
    trace_path: Path


@dataclass(slots=True)
class _Divergence:
    """Raises on the first non-finite loss and logs the offending step."""

    stage: str

    def check(self, step: int, **values: float) -> None:
        bad = {name: value for name, value in values.items() if not math.isfinite(value)}
        if bad:
            logger.error(
                "DIVERGENCE %s",
                json.dumps({"stage": self.stage, "step": step, "losses": repr(bad)}),
            )
            raise DivergenceError(f"{self.stage} diverged at step {step}: {sorted(bad)}")


def configure_torch(seed: int) -> None:
    """Seed torch and apply the process thread/determinism settings."""

    settings = get_settings()
    torch.set_num_threads(settings.threads)
    torch.use_deterministic_algorithms(settings.deterministic)
    torch.manual_seed(seed)


def batch_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def prepare_records(
    records: Sequence[PatientRecord], cfg: RunConfig
) -> dict[str, PatientRecord]:
    """Apply the intensity pipeline once per patient."""

    if not records:
        raise EmptyDatasetError("no training patients")
    prepared = {}
    for record in records:
        if record.truth is None:
            raise UsageError(f"patient {record.patient_id} has no ground truth")
        prepared[record.patient_id] = PatientRecord(
            patient_id=record.patient_id,
            volume=preprocess_volume(record.volume, cfg.preprocess),
            truth=record.truth,
        )
    return prepared


def materialize_batch(
    ref: BatchRef,
    records: Mapping[str, PatientRecord],
    cfg: RunConfig,
    seed: int,
) -> Batch:
    """Cut one batch out of a prepared patient and augment it slice by slice.

    Returns channel-last ``(images, one_hot_truth)`` as float32.
    """

    record = records[ref.patient_id]
    assert record.truth is not None
    images = extract_slices(record.volume, ref.plane).slices[ref.start : ref.stop]
    labels = extract_label_slices(record.truth.as_labels(), ref.plane).slices[ref.start : ref.stop]
    expected = (cfg.generator.height, cfg.generator.width, cfg.generator.in_channels)
    if tuple(images.shape[1:]) != expected:
        raise ShapeMismatchError(
            f"{ref.plane.value} slices of {ref.patient_id} are {images.shape[1:]}, "
            f"generator expects {expected}"
        )
    if cfg.augment.any_enabled:
        children = np.random.SeedSequence(seed).spawn(images.shape[0])
        pairs = [
            augment(image, mask, cfg.augment, child)
            for image, mask, child in zip(images, labels, children)
        ]
        images = np.stack([image for image, _ in pairs])
        labels = np.stack([mask for _, mask in pairs])
    truth = one_hot_array(labels, cfg.generator.class_count)
    return images.astype(np.float32), truth.astype(np.float32)


def _prefetch(
    plan: Sequence[BatchRef],
    records: Mapping[str, PatientRecord],
    cfg: RunConfig,
    epoch: int,
    pool: ThreadPoolExecutor,
    window: int,
) -> Iterator[Batch]:
    """Materialize batches on worker threads, delivered in plan order.

    At most ``window`` batches are in flight or waiting beyond the one
    being consumed.
    """

    def _load(index: int) -> Batch:
        return materialize_batch(plan[index], records, cfg, batch_seed(cfg.seed, epoch, index))

    upcoming = iter(range(len(plan)))
    pending: deque[Future[Batch]] = deque(
        pool.submit(_load, index) for index in islice(upcoming, max(1, window))
    )
    while pending:
        batch = pending.popleft().result()
        for index in islice(upcoming, 1):
            pending.append(pool.submit(_load, index))
        yield batch


def _noise(net: NetHandle, images: torch.Tensor, seed: int) -> torch.Tensor | None:
    if not net.config.noise_input:
        return None
    generator = torch.Generator().manual_seed(seed)
    shape = (images.shape[0], images.shape[1], images.shape[2], 1)
    return torch.randn(shape, generator=generator, dtype=images.dtype)


def _check_pair(cfg: RunConfig) -> None:
    gen, disc, ref = cfg.generator, cfg.discriminator, cfg.refinement
    for name, other in (("discriminator", disc), ("refinement", ref)):
        if (other.height, other.width, other.in_channels, other.class_count) != (
            gen.height,
            gen.width,
            gen.in_channels,
            gen.class_count,
        ):
            raise UsageError(f"{name} input geometry must match the generator")


def train_cgan(
    records: Sequence[PatientRecord],
    cfg: RunConfig,
    out_dir: str | Path,
    on_step: Callable[[LossRecord], None] | None = None,
) -> CganResult:
    """Alternating discriminator/generator training with per-epoch checkpoints."""

    _check_pair(cfg)
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    configure_torch(cfg.seed)
    prepared = prepare_records(records, cfg)
    ordered = [prepared[record.patient_id] for record in records]

    generator = build_generator(cfg.generator, cfg.norm_epsilon)
    discriminator = build_discriminator(cfg.discriminator, cfg.norm_epsilon)
    opt_g = SpecOptimizer(generator.module.parameters(), cfg.g_optimizer)
    opt_d = SpecOptimizer(discriminator.module.parameters(), cfg.d_optimizer)
    generator.module.train()
    discriminator.module.train()

    guard = _Divergence("cgan")
    history: list[LossRecord] = []
    g_path = target / GENERATOR_CHECKPOINT
    d_path = target / DISCRIMINATOR_CHECKPOINT
    step = 0
    threads = max(1, get_settings().threads)
    window = threads + 1
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for epoch in range(cfg.epochs):
            plan = build_batch_plan(
                ordered, cfg.images_per_batch, cfg.planes, shuffle_seed=cfg.seed + epoch
            )
            for index, (images_np, truth_np) in enumerate(
                _prefetch(plan.batches, prepared, cfg, epoch, pool, window)
            ):
                images = torch.from_numpy(images_np)
                truth = torch.from_numpy(truth_np)
                noise = _noise(generator, images, batch_seed(cfg.seed + 1, epoch, index))

                # eval keeps batch statistics but leaves running averages to the G step
                generator.module.eval()
                for _ in range(cfg.d_steps_per_g_step):
                    with torch.no_grad():
                        fake = forward(generator, images, noise=noise)
                    d_real = forward(discriminator, torch.cat([images, truth], dim=-1))
                    d_fake = forward(discriminator, torch.cat([images, fake], dim=-1))
                    loss_d = losses.d_loss(d_real, d_fake)
                    guard.check(step, d_loss=float(loss_d))
                    opt_d.zero_grad(set_to_none=True)
                    loss_d.backward()
                    opt_d.step()
                generator.module.train()

                fake = forward(generator, images, noise=noise)
                d_fake = forward(discriminator, torch.cat([images, fake], dim=-1))
                adv = losses.g_adv_loss(d_fake)
                l1 = losses.l1_loss(fake, truth)
                total = losses.seg_loss(adv, l1, cfg.loss)
                guard.check(step, g_adv=float(adv), l1=float(l1), total=float(total))
                opt_g.zero_grad(set_to_none=True)
                total.backward()
                opt_g.step()

                record = LossRecord(
                    step=step,
                    epoch=epoch,
                    d_loss=float(loss_d),
                    g_adv=float(adv),
                    l1=float(l1),
                    total=float(total),
                )
                history.append(record)
                if on_step is not None:
                    on_step(record)
                if step % cfg.log_every == 0:
                    logger.info("TRAIN_STEP %s", json.dumps(asdict(record)))
                step += 1

            save_checkpoint(generator, g_path, cfg.seed, epoch + 1)
            save_checkpoint(discriminator, d_path, cfg.seed, epoch + 1)
            logger.info(
                "EPOCH_DONE %s",
                json.dumps({"stage": "cgan", "epoch": epoch, "steps": step}),
            )

    if cfg.epochs == 0:
        save_checkpoint(generator, g_path, cfg.seed, 0)
        save_checkpoint(discriminator, d_path, cfg.seed, 0)
    trace = write_loss_trace(history, target / CGAN_TRACE)
    return CganResult(
        generator=generator,
        discriminator=discriminator,
        records=history,
        generator_path=g_path,
        discriminator_path=d_path,
        trace_path=trace,
    )


def fit_refinement(
    generator: NetHandle,
    records: Sequence[PatientRecord],
    cfg: RunConfig,
    out_dir: str | Path,
) -> RefineResult:
    """Train the refinement net against a frozen generator."""

    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    configure_torch(cfg.seed)
    prepared = prepare_records(records, cfg)
    ordered = [prepared[record.patient_id] for record in records]

    for param in generator.module.parameters():
        param.requires_grad_(False)
    generator.module.eval()

    refinement = build_refinement(cfg.refinement, cfg.norm_epsilon)
    optimizer = SpecOptimizer(refinement.module.parameters(), cfg.r_optimizer)
    refinement.module.train()

    guard = _Divergence("refinement")
    history: list[RefineRecord] = []
    r_path = target / REFINEMENT_CHECKPOINT
    step = 0
    threads = max(1, get_settings().threads)
    window = threads + 1
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for epoch in range(cfg.refine_epochs):
            plan = build_batch_plan(
                ordered, cfg.images_per_batch, cfg.planes, shuffle_seed=cfg.seed + epoch
            )
            for index, (images_np, truth_np) in enumerate(
                _prefetch(plan.batches, prepared, cfg, epoch, pool, window)
            ):
                images = torch.from_numpy(images_np)
                noise = _noise(generator, images, batch_seed(cfg.seed + 1, epoch, index))
                with torch.no_grad():
                    probs = forward(generator, images, noise=noise)
                targets = losses.error_mask_targets(truth_np, probs.numpy())
                masks = forward(refinement, torch.cat([images, probs.to(images.dtype)], dim=-1))
                bce_fp, bce_fn = losses.refinement_bce_parts(masks, targets)
                total = (bce_fp + bce_fn) / 2.0
                guard.check(step, bce_fp=float(bce_fp), bce_fn=float(bce_fn))
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                optimizer.step()

                record = RefineRecord(
                    step=step,
                    epoch=epoch,
                    bce_fp=float(bce_fp),
                    bce_fn=float(bce_fn),
                    total=float(total),
                )
                history.append(record)
                if step % cfg.log_every == 0:
                    logger.info("REFINE_STEP %s", json.dumps(asdict(record)))
                step += 1

            save_checkpoint(refinement, r_path, cfg.seed, epoch + 1)
            logger.info(
                "EPOCH_DONE %s",
                json.dumps({"stage": "refinement", "epoch": epoch, "steps": step}),
            )

    if cfg.refine_epochs == 0:
        save_checkpoint(refinement, r_path, cfg.seed, 0)
    trace = write_refine_trace(history, target / REFINE_TRACE)
    return RefineResult(
        refinement=refinement,
        records=history,
        refinement_path=r_path,
        trace_path=trace,
    )


def train_refinement(
    cgan_checkpoint: str | Path,
    records: Sequence[PatientRecord],
    cfg: RunConfig,
    out_dir: str | Path,
) -> RefineResult:
    """Load the cGAN generator (config must match ``cfg.generator``) and fit refinement."""

    _check_pair(cfg)
    generator, _ = load_checkpoint(cgan_checkpoint, kind="generator", expected=cfg.generator)
    return fit_refinement(generator, records, cfg, out_dir)


__all__ = [
    "GENERATOR_CHECKPOINT",
    "DISCRIMINATOR_CHECKPOINT",
    "REFINEMENT_CHECKPOINT",
    "CGAN_TRACE",
    "REFINE_TRACE",
    "CganResult",
    "RefineResult",
    "configure_torch",
    "batch_seed",
    "prepare_records",
    "materialize_batch",
    "train_cgan",
    "fit_refinement",
    "train_refinement",
]
