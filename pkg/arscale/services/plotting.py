# arscale/services/plotting.py
# Log-log scatter of estimation error against beta/gamma with the gamma/beta
# reference line, written as a standalone SVG.

import io
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from arscale.core.errors import InsufficientDataError  # noqa: E402
from arscale.core.models import ResultRecord, ResultTable  # noqa: E402
from arscale.services.scaling import X_AXES, results_frame  # noqa: E402
from arscale.storage.files import atomic_write_bytes  # noqa: E402

logger = logging.getLogger(__name__)

SERIES_KEYS = {
    "pdN": ("p", "d", "N"),
    "p_student": ("p_student",),
    "lambda": ("lambda",),
}

X_LABELS = {
    "beta/gamma": r"$\beta/\gamma$",
    "beta_tilde/gamma": r"$\tilde{\beta}/\gamma$",
}

# Fixed salt and no Date metadata keep repeated renders byte-identical
SVG_RC = {
    "svg.hashsalt": "arscale",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.5),
    "font.size": 9,
}


def _label(keys: Sequence[str], values) -> str:
    values = values if isinstance(values, tuple) else (values,)
    return ", ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in zip(keys, values))


def render_svg(
    table: Union[ResultTable, Iterable[ResultRecord]],
    x: str = "beta/gamma",
    series: str = "pdN",
    title: Optional[str] = None,
) -> bytes:
    if x not in X_AXES:
        raise ValueError(f"x must be one of {X_AXES}, got '{x}'")
    if series not in SERIES_KEYS:
        raise ValueError(f"series must be one of {sorted(SERIES_KEYS)}, got '{series}'")
    frame = results_frame(table)
    if frame.empty:
        raise InsufficientDataError("nothing to plot: no usable records")

    keys = list(SERIES_KEYS[series])
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots()
        colors = plt.get_cmap("viridis")
        groups = list(frame.groupby(keys, sort=True, dropna=False))
        for index, (values, group) in enumerate(groups):
            group = group.sort_values(x)
            color = colors(index / max(1, len(groups) - 1))
            ax.loglog(group[x], group["error_frob_sq"], "o", ms=4, color=color, label=_label(keys, values))

        xs = np.geomspace(frame[x].min(), frame[x].max(), 50)
        ax.loglog(xs, 1.0 / xs, "k--", lw=1.0, label=r"$\gamma/\beta$")

        ax.set_xlabel(X_LABELS[x])
        ax.set_ylabel(r"$\|\hat{A} - A^\star\|_F^2$")
        if title:
            ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=7, loc="best")
        fig.tight_layout()

        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buffer.getvalue()


def export_plot(table: Union[ResultTable, Iterable[ResultRecord]], path: Union[str, Path],
                x: str = "beta/gamma", series: str = "pdN", title: Optional[str] = None) -> Path:
    target = atomic_write_bytes(path, render_svg(table, x=x, series=series, title=title))
    logger.info(f"✅ Plot written to {target}")
    return target
