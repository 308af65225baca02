# refinegan/app/main.py
"""Command-line entry point: synth, train, refine, predict, evaluate, report."""
from __future__ import annotations

import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Sequence

import click

from .config import get_settings
from .errors import DataError, RefineGANError, UsageError
from .models import AcquisitionPlane, SegMap
from .schemas import RunConfig
from .services import metrics as metric_service
from .services.inference import predict as predict_volume
from .services.nets import load_checkpoint
from .services.mvol import read_mvol, write_mvol
from .services.report import (
    MetricRow,
    build_summary_md,
    read_loss_trace,
    read_metric_csv,
    read_refine_trace,
    write_metric_csv,
)
from .services.run_config import RESOLVED_NAME, config_keys, dump_run_config, load_run_config
from .services.synth import gen_dataset, load_dataset
from .services.training import (
    CGAN_TRACE,
    GENERATOR_CHECKPOINT,
    REFINE_TRACE,
    train_cgan,
    train_refinement,
)

logger = logging.getLogger(__name__)

PREDICTIONS_DIR = "predictions"
PRED_SUFFIX = "_pred.mvol"
METRICS_CSV = "metrics.csv"
REPORT_MD = "report.md"
LOSS_PLOT = "loss_curves.png"

PLANES = [plane.value for plane in AcquisitionPlane]


def _keys_epilog() -> str:
    lines = ["\b", "Configuration keys (flat 'key = value' file, defaults shown):"]
    lines += [f"  {key} = {value}" for key, value in config_keys()]
    return "\n".join(lines)


def _run_options(func: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="Flat key = value run configuration."),
        click.option("--seed", type=int, default=None, help="Master seed (overrides config)."),
        click.option("--data", "data_dir", default=None, help="Dataset directory."),
        click.option("--out", "out_dir", default=None, help="Output directory."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _resolve(
    config_path: str | None,
    seed: int | None,
    data_dir: str | None,
    out_dir: str | None,
    **extra: Any,
) -> RunConfig:
    overrides = {"seed": seed, "data_dir": data_dir, "out_dir": out_dir, **extra}
    return load_run_config(config_path, overrides)


def _echo_config(cfg: RunConfig, directory: str | Path) -> Path:
    target = Path(directory) / RESOLVED_NAME
    dump_run_config(cfg, target)
    return target


def _emit(event: str, payload: dict[str, Any]) -> None:
    logger.info("%s %s", event, json.dumps(payload))
    click.echo(json.dumps(payload, sort_keys=True))


@click.group(epilog=_keys_epilog(), context_settings={"help_option_names": ["-h", "--help"]})
def cli() -> None:
    """Adversarial segmentation with a false-positive / false-negative refinement stage."""


@cli.command()
@_run_options
def synth(config_path, seed, data_dir, out_dir) -> None:
    """Write a synthetic imbalanced dataset."""

    cfg = _resolve(config_path, None, data_dir, out_dir, **{"synth.seed": seed})
    entries = gen_dataset(cfg.synth, cfg.data_dir)
    _echo_config(cfg, cfg.data_dir)
    _emit("SYNTH_DONE", {"data": cfg.data_dir, "patients": len(entries)})


@cli.command()
@_run_options
@click.option("--plane", type=click.Choice(PLANES), default=None,
              help="Train on a single plane instead of the configured ones.")
def train(config_path, seed, data_dir, out_dir, plane) -> None:
    """Train the cGAN generator and discriminator."""

    cfg = _resolve(config_path, seed, data_dir, out_dir, planes=plane)
    records = load_dataset(cfg.data_dir, "train")
    _echo_config(cfg, cfg.out_dir)
    result = train_cgan(records, cfg, cfg.out_dir)
    _emit(
        "TRAIN_DONE",
        {
            "generator": str(result.generator_path),
            "discriminator": str(result.discriminator_path),
            "trace": str(result.trace_path),
            "steps": len(result.records),
        },
    )


@cli.command()
@_run_options
@click.option("--plane", type=click.Choice(PLANES), default=None)
@click.option("--checkpoint", "checkpoint", default=None,
              help="cGAN generator checkpoint (default: <out>/generator.pt).")
def refine(config_path, seed, data_dir, out_dir, plane, checkpoint) -> None:
    """Train the refinement network against a frozen cGAN generator."""

    cfg = _resolve(config_path, seed, data_dir, out_dir, planes=plane)
    checkpoint = checkpoint or str(Path(cfg.out_dir) / GENERATOR_CHECKPOINT)
    records = load_dataset(cfg.data_dir, "train")
    _echo_config(cfg, cfg.out_dir)
    result = train_refinement(checkpoint, records, cfg, cfg.out_dir)
    _emit(
        "REFINE_DONE",
        {
            "refinement": str(result.refinement_path),
            "trace": str(result.trace_path),
            "steps": len(result.records),
        },
    )


@cli.command()
@_run_options
@click.option("--plane", type=click.Choice(PLANES), default=None,
              help="Acquisition plane to segment along (default: first configured plane).")
@click.option("--checkpoint", "checkpoint", default=None,
              help="cGAN generator checkpoint (default: <out>/generator.pt).")
@click.option("--refine-checkpoint", "refine_checkpoint", default=None,
              help="Refinement checkpoint; omit for cGAN-only output.")
@click.option("--split", type=click.Choice(["train", "val", "all"]), default="val")
def predict(config_path, seed, data_dir, out_dir, plane, checkpoint, refine_checkpoint, split) -> None:
    """Segment every patient of a dataset split and write MVOL label maps."""

    cfg = _resolve(config_path, seed, data_dir, out_dir)
    checkpoint = checkpoint or str(Path(cfg.out_dir) / GENERATOR_CHECKPOINT)
    chosen = AcquisitionPlane.parse(plane) if plane else cfg.planes[0]
    records = load_dataset(cfg.data_dir, None if split == "all" else split)
    target = Path(cfg.out_dir) / PREDICTIONS_DIR
    _echo_config(cfg, cfg.out_dir)
    generator, _ = load_checkpoint(checkpoint, kind="generator")
    refinement = None
    if refine_checkpoint is not None:
        refinement, _ = load_checkpoint(refine_checkpoint, kind="refinement")
    written = []
    for record in records:
        names = record.truth.class_names if record.truth is not None else ()
        segmap = predict_volume(
            generator,
            record.volume,
            chosen,
            refinement=refinement,
            preprocess=cfg.preprocess,
            tta_samples=cfg.tta_samples,
            noise_sigma=cfg.augment.noise_sigma,
            chunk=cfg.slices_per_batch,
            seed=cfg.seed,
            class_names=names,
        )
        written.append(str(write_mvol(segmap, target / f"{record.patient_id}{PRED_SUFFIX}")))
    _emit(
        "PREDICTIONS_WRITTEN",
        {"dir": str(target), "count": len(written), "refined": refine_checkpoint is not None},
    )


@cli.command()
@_run_options
@click.option("--predictions", "predictions_dir", default=None,
              help="Directory of <patient>_pred.mvol files (default: <out>/predictions).")
@click.option("--split", type=click.Choice(["train", "val", "all"]), default="val")
@click.option("--regions", type=click.Choice(["classes", "brats"]), default="classes",
              help="Per-class regions or the nested WT/TC/ET composites.")
def evaluate(config_path, seed, data_dir, out_dir, predictions_dir, split, regions) -> None:
    """Score predictions against ground truth and write a metric CSV."""

    cfg = _resolve(config_path, seed, data_dir, out_dir)
    source = Path(predictions_dir) if predictions_dir else Path(cfg.out_dir) / PREDICTIONS_DIR
    records = load_dataset(cfg.data_dir, None if split == "all" else split)
    _echo_config(cfg, cfg.out_dir)
    rows: list[MetricRow] = []
    for record in records:
        if record.truth is None:
            raise DataError(f"patient {record.patient_id} has no ground truth")
        pred = read_mvol(source / f"{record.patient_id}{PRED_SUFFIX}")
        if not isinstance(pred, SegMap):
            raise DataError(f"prediction for {record.patient_id} is not a label map")
        class_spec = metric_service.brats_regions() if regions == "brats" else None
        for report in metric_service.evaluate(pred, record.truth, record.volume.spacing, class_spec):
            rows.append(MetricRow(patient_id=record.patient_id, report=report))
    path = write_metric_csv(rows, Path(cfg.out_dir) / METRICS_CSV)
    _emit("METRICS_WRITTEN", {"path": str(path), "rows": len(rows)})


@cli.command()
@_run_options
def report(config_path, seed, data_dir, out_dir) -> None:
    """Render loss curves and metric tables from the CSVs of a run directory."""

    from .services.report.plots import render_loss_curves

    cfg = _resolve(config_path, seed, data_dir, out_dir)
    root = Path(cfg.out_dir)
    _echo_config(cfg, root)

    def _maybe(reader, name: str):
        path = root / name
        if not path.exists():
            logger.warning("report input missing: %s", path)
            return []
        return reader(path)

    losses = _maybe(read_loss_trace, CGAN_TRACE)
    refine_records = _maybe(read_refine_trace, REFINE_TRACE)
    metric_rows = _maybe(read_metric_csv, METRICS_CSV)
    plot_name = None
    if losses or refine_records:
        render_loss_curves(losses, root / LOSS_PLOT, refine_records)
        plot_name = LOSS_PLOT
    text = build_summary_md(
        losses,
        metric_rows,
        refine_records,
        generated_at=datetime.now(),
        plot_name=plot_name,
    )
    target = root / REPORT_MD
    target.write_text(text + "\n", encoding="utf-8")
    _emit("REPORT_WRITTEN", {"path": str(target), "plot": plot_name})


def _configure_logging() -> None:
    settings = get_settings()
    logging.basicConfig(
        level=settings.log_level_value,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def run(argv: Sequence[str] | None = None) -> int:
    """Run one command and return its process exit code."""

    try:
        _configure_logging()
        result = cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return UsageError.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted.", err=True)
        return UsageError.exit_code
    except RefineGANError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

