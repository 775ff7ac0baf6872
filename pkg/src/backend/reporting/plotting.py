"""
Plotting

Static SVG plots of result tables. Output bytes depend only on the table and
the plot spec: the SVG id salt is fixed, the date stamp is dropped and text
is written as paths.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

SVG_RC = {
    "svg.hashsalt": "bclab",
    "svg.fonttype": "path",
    "path.simplify": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


@dataclass
class PlotSpec:
    """What to draw from a table"""
    x: str
    y: Union[str, Sequence[str]]
    title: str = ""
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    logx: bool = False
    logy: bool = False
    fit_slope: bool = False
    model: Optional[Callable[[np.ndarray], np.ndarray]] = None
    model_label: str = "model"
    scatter: bool = False

    @property
    def columns(self) -> List[str]:
        return [self.y] if isinstance(self.y, str) else list(self.y)


def _finite(x: np.ndarray, y: np.ndarray, spec: PlotSpec) -> np.ndarray:
    ok = np.isfinite(x) & np.isfinite(y)
    if spec.logx:
        ok &= x > 0
    if spec.logy:
        ok &= y > 0
    return ok


def fitted_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log y against log x"""
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


def emit_plot(table: Sequence[Dict], spec: PlotSpec, path: Union[str, Path]) -> Path:
    """Write one SVG; an empty table is an error"""
    if not table:
        raise ValueError(f"Cannot plot an empty table ({spec.title or spec.x})")
    path = Path(path)
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        x_all = np.array([float(row.get(spec.x, np.nan)) for row in table])
        drawn = 0
        for name in spec.columns:
            y_all = np.array([float(row.get(name, np.nan)) for row in table])
            ok = _finite(x_all, y_all, spec)
            x, y = x_all[ok], y_all[ok]
            if not len(x):
                continue
            order = np.argsort(x)
            style = "o" if spec.scatter or len(x) == 1 else "o-"
            label = name
            if spec.fit_slope and len(x) >= 2 and spec.logx and spec.logy:
                label = f"{name} (slope {fitted_slope(x, y):.2f})"
            ax.plot(x[order], y[order], style, label=label)
            drawn += len(x)
        if spec.model is not None and drawn >= 2:
            xs = x_all[np.isfinite(x_all)]
            if spec.logx:
                xs = xs[xs > 0]
                grid = np.geomspace(xs.min(), xs.max(), 200)
            else:
                grid = np.linspace(xs.min(), xs.max(), 200)
            ax.plot(grid, spec.model(grid), "--", label=spec.model_label)
        if spec.logx:
            ax.set_xscale("log")
        if spec.logy:
            ax.set_yscale("log")
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel or ", ".join(spec.columns))
        if spec.title:
            ax.set_title(spec.title)
        if drawn:
            ax.legend()
        else:
            logger.warning(f"No finite points to plot for '{spec.title or spec.x}'")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info(f"Wrote plot {path}")
    return path
