"""Matplotlib rendering of FROC curves with bootstrap bands."""
from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation.froc import BootstrapBand, FrocCurve  # noqa: E402

RC = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


@contextmanager
def report_style():
    with plt.rc_context(RC):
        yield


@dataclass
class FrocEntry:
    label: str
    curve: FrocCurve
    band: BootstrapBand | None = None
    ap_mean: float | None = None


def plot_froc(entries: list[FrocEntry], path: str | os.PathLike, title: str | None = None) -> None:
    """One curve (bootstrap mean when available) and shaded band per model."""
    with report_style():
        fig, ax = plt.subplots(figsize=(5.0, 4.0))
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for k, e in enumerate(entries):
            color = colors[k % len(colors)]
            label = e.label if e.ap_mean is None else f"{e.label} (AP@[.05:.50]={e.ap_mean:.3f})"
            if e.band is not None and not np.all(np.isnan(e.band.sens_mean)):
                order = np.argsort(e.band.fppi_mean, kind="stable")
                ax.plot(e.band.fppi_mean[order], e.band.sens_mean[order], color=color, label=label, marker="o", ms=2.5)
                ax.fill_between(
                    e.band.fppi_mean[order], e.band.sens_lower[order], e.band.sens_upper[order],
                    color=color, alpha=0.2, linewidth=0,
                )
            else:
                ax.plot(e.curve.fppi, e.curve.sensitivity, color=color, label=label, marker="o", ms=2.5)
        ax.set_xlabel("False positives per image")
        ax.set_ylabel("Sensitivity")
        ax.set_ylim(0, 1.02)
        ax.set_xlim(left=0)
        if title:
            ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right")
        fig.savefig(path)
        plt.close(fig)
