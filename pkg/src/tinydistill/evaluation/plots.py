from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_PNG_META = {"Software": None}

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def plot_grid(rows: Sequence[dict], label_key: str, task_columns: Sequence[str], path,
              title: str = "") -> Path:
    """Grouped bars of per-task accuracy, one group per grid row."""
    path = Path(path)
    labels = [str(r[label_key]) for r in rows]
    cols = list(task_columns) + ["acc_avg"]
    x = np.arange(len(rows))
    width = 0.8 / max(1, len(cols))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(rows) + 2), 3.2))
        for j, col in enumerate(cols):
            vals = [float(r.get(col, float("nan"))) for r in rows]
            ax.bar(x + (j - (len(cols) - 1) / 2) * width, vals, width,
                   label=col.removeprefix("acc_"), hatch="//" if col == "acc_avg" else None)
        ax.set_xticks(x, labels, rotation=20 if max(map(len, labels)) > 8 else 0, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("exact match")
        ax.set_title(title)
        ax.legend(ncol=min(len(cols), 4), fontsize=7)
        fig.tight_layout()
        fig.savefig(path, dpi=110, metadata=_PNG_META)
        plt.close(fig)
    return path


def plot_losses(steps: Sequence[dict], path, keys: Sequence[str] = ("l_ce", "l_kd", "l_total"),
                refresh_at: Sequence[int] = ()) -> Path:
    """Training curves from a step log; dashed lines mark refreshes."""
    path = Path(path)
    xs = [s["step"] for s in steps]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for k in keys:
            if steps and k in steps[0]:
                ax.plot(xs, [s[k] for s in steps], lw=1, label=k)
        for r in refresh_at:
            ax.axvline(r, color="k", ls="--", lw=0.7)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=110, metadata=_PNG_META)
        plt.close(fig)
    return path
