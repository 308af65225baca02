import sys
from datetime import datetime
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))


def _make_report(region="lesion", dice=0.5, hd95=None):
    from refinegan.app.services.metrics import MetricReport

    return MetricReport(
        region=region,
        dice=dice,
        iou=dice / (2 - dice),
        voe=1 - dice / (2 - dice),
        rvd=None,
        sensitivity=0.8,
        specificity=0.99,
        fnr=0.2,
        fpr=0.01,
        hd95=hd95,
    )


def _make_losses(epochs=2, per_epoch=3):
    from refinegan.app.services.report import LossRecord

    return [
        LossRecord(
            step=epoch * per_epoch + index,
            epoch=epoch,
            d_loss=1.3,
            g_adv=0.7,
            l1=0.1 * (index + 1),
            total=0.7 + 0.1 * (index + 1),
        )
        for epoch in range(epochs)
        for index in range(per_epoch)
    ]


def test_metric_csv_round_trip_keeps_missing_values(tmp_path):
    from refinegan.app.services.report import MetricRow, read_metric_csv, write_metric_csv

    rows = [
        MetricRow(patient_id="p0", report=_make_report(hd95=2.5)),
        MetricRow(patient_id="p1", report=_make_report(dice=0.0)),
    ]

    path = write_metric_csv(rows, tmp_path / "metrics.csv")

    assert read_metric_csv(path) == rows
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("patient_id,region,dice,iou,voe,rvd")


def test_trace_reader_rejects_foreign_columns(tmp_path):
    from refinegan.app.errors import DataError
    from refinegan.app.services.report import read_loss_trace

    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")

    with pytest.raises(DataError):
        read_loss_trace(path)
    with pytest.raises(DataError):
        read_loss_trace(tmp_path / "missing.csv")


def test_epoch_losses_group_by_epoch():
    from refinegan.app.services.report import epoch_losses

    summary = epoch_losses(_make_losses())

    assert [item.epoch for item in summary] == [0, 1]
    assert summary[0].steps == 3
    assert summary[0].mean_total == pytest.approx(0.9)
    assert summary[0].last_total == pytest.approx(1.0)


def test_summarize_metrics_skips_undefined_values():
    from refinegan.app.services.report import MetricRow, summarize_metrics

    rows = [
        MetricRow(patient_id="p0", report=_make_report(dice=0.4, hd95=3.0)),
        MetricRow(patient_id="p1", report=_make_report(dice=0.8)),
    ]

    (summary,) = summarize_metrics(rows)

    assert summary.patients == 2
    assert summary.means["dice"] == pytest.approx(0.6)
    assert summary.stds["dice"] == pytest.approx(0.2)
    assert summary.means["hd95"] == pytest.approx(3.0)
    assert summary.stds["hd95"] == 0.0
    assert summary.means["rvd"] is None


def test_summary_markdown_lists_losses_and_metrics():
    from refinegan.app.services.report import MetricRow, RefineRecord, build_summary_md

    refine = [RefineRecord(step=0, epoch=0, bce_fp=0.6, bce_fn=0.8, total=0.7)]
    rows = [MetricRow(patient_id="p0", report=_make_report(hd95=1.0))]

    text = build_summary_md(
        _make_losses(),
        rows,
        refine,
        generated_at=datetime(2024, 5, 1, 12, 30),
        plot_name="loss_curves.png",
    )

    assert text.startswith("# refinegan report\n**Generated**: 2024-05-01 12:30")
    assert "## cGAN training" in text
    assert "## Refinement training" in text
    assert "![loss curves](loss_curves.png)" in text
    assert "| lesion | 1 | 0.5000 ± 0.0000 |" in text
    assert "| 1 | 3 | 0.9000 | 1.0000 |" in text


def test_summary_markdown_without_inputs():
    from refinegan.app.services.report import build_summary_md

    text = build_summary_md([], [])

    assert text == "# refinegan report\n\nNo loss traces or metric files were found."


def test_metrics_only_summary_has_no_training_sections():
    from refinegan.app.services.report import MetricRow, build_summary_md

    text = build_summary_md([], [MetricRow(patient_id="p0", report=_make_report())])

    assert "## cGAN training" not in text
    assert "— |" in text


def test_loss_curves_are_written_as_png(tmp_path):
    from refinegan.app.services.report import RefineRecord
    from refinegan.app.services.report.plots import render_loss_curves

    refine = [RefineRecord(step=index, epoch=0, bce_fp=0.5, bce_fn=0.4, total=0.45) for index in range(4)]

    path = render_loss_curves(_make_losses(), tmp_path / "plots" / "loss.png", refine)

    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
