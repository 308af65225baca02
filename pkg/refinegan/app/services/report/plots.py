"""Loss-curve figures rendered from trace CSVs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data import LossRecord, RefineRecord


def render_loss_curves(
    losses: Sequence[LossRecord],
    path: str | Path,
    refine: Sequence[RefineRecord] = (),
) -> Path:
    """Plot cGAN losses (and refinement BCE when given) against step."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    panels = 2 if refine else 1
    fig, axes = plt.subplots(1, panels, figsize=(6 * panels, 4), squeeze=False)
    ax = axes[0][0]
    steps = [record.step for record in losses]
    for name in ("d_loss", "g_adv", "l1", "total"):
        ax.plot(steps, [getattr(record, name) for record in losses], label=name)
    ax.set_title("cGAN")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if losses:
        ax.legend()
    if refine:
        ax = axes[0][1]
        steps = [record.step for record in refine]
        for name in ("bce_fp", "bce_fn", "total"):
            ax.plot(steps, [getattr(record, name) for record in refine], label=name)
        ax.set_title("refinement")
        ax.set_xlabel("step")
        ax.legend()
    fig.tight_layout()
    fig.savefig(target, dpi=100)
    plt.close(fig)
    return target


__all__ = ["render_loss_curves"]
