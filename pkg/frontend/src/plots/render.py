"""Rendering backends for crossing, collapse, and phase-diagram figures.

All functions are pure with respect to matplotlib state: they apply the
package style inside a context manager, draw onto a fresh figure, write
both ``.svg`` and ``.png``, close the figure, and return a small metadata
dict describing what was drawn.  Output is byte-deterministic for fixed
inputs (fixed SVG hash salt, no embedded timestamps).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import (
    PlotsError,
    curve_arrays,
    load_analysis,
    load_sweep_summaries,
    summary_quantity,
)

STYLE_PATH = Path(__file__).parent / "style" / "plots.mplstyle"

_MARKERS = ("o", "s", "D", "^", "v", "P", "X", "*")


def _save_both(fig, stem: str | Path) -> tuple[str, str]:
    """Write ``stem.svg`` and ``stem.png`` deterministically."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    svg = stem.with_suffix(".svg")
    png = stem.with_suffix(".png")
    fig.savefig(svg, format="svg", metadata={"Date": None})
    fig.savefig(png, format="png")
    return str(svg), str(png)


def crossing_marker(doc: dict) -> tuple[float, float]:
    """Extract the crossing location and its uncertainty from an analysis.

    Preference order: the precision-weighted mean of all pairwise crossings
    that were actually found; otherwise the collapse fit's critical point.
    The returned band is the weighted-mean standard error, widened to the
    scatter of the individual crossings when that is larger.
    """
    found = [
        (float(c["x"]), float(c["sigma_x"]))
        for c in doc.get("crossings", [])
        if c.get("found")
    ]
    if found:
        xs = np.array([f[0] for f in found])
        sigmas = np.array([max(f[1], 0.0) for f in found])
        if np.any(sigmas <= 0):
            mean = float(xs.mean())
            band = float(xs.std(ddof=1)) if len(xs) > 1 else 0.0
        else:
            weights = 1.0 / sigmas**2
            mean = float(np.sum(weights * xs) / np.sum(weights))
            band = float(np.sqrt(1.0 / np.sum(weights)))
            if len(xs) > 1:
                band = max(band, float(xs.std(ddof=1)))
        return mean, band
    collapse = doc.get("collapse")
    if collapse:
        errs = collapse.get("bootstrap_errors") or [0.0, 0.0]
        return float(collapse["x_c"]), float(errs[0])
    raise PlotsError(
        "analysis contains no crossing information: no pairwise crossing "
        "was found and no collapse fit is present"
    )


def plot_crossing(
    analysis_path: str | Path,
    out_stem: str | Path,
    *,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
) -> dict:
    """Ratio curves for every size with the estimated crossing marked."""
    doc = load_analysis(analysis_path)
    curves = curve_arrays(doc)
    if len(curves) < 2:
        raise PlotsError(
            f"crossing figure needs curves for at least 2 lattice sizes, "
            f"got {len(curves)}"
        )
    marker_x, band = crossing_marker(doc)
    xlabel = xlabel or doc.get("inputs", {}).get("x", "x")
    ylabel = ylabel or doc.get("inputs", {}).get("quantity", "R")

    with plt.style.context(str(STYLE_PATH)):
        fig, ax = plt.subplots()
        for idx, (L, xs, vals, errs) in enumerate(curves):
            ax.errorbar(
                xs,
                vals,
                yerr=errs,
                marker=_MARKERS[idx % len(_MARKERS)],
                label=f"L = {L}",
            )
        if band > 0:
            ax.axvspan(marker_x - band, marker_x + band, alpha=0.18, zorder=0)
        ax.axvline(marker_x, linestyle="--", linewidth=1.0, zorder=1)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title or f"crossing at {marker_x:.4f} ± {band:.4f}")
        ax.legend()
        svg, png = _save_both(fig, out_stem)
        plt.close(fig)

    return {
        "svg": svg,
        "png": png,
        "marker": {"x": marker_x, "band": band},
        "sizes": [c[0] for c in curves],
    }


def residual_spread(
    curves: list[tuple[int, list[float], list[float], list[float]]],
    x_c: float,
    nu: float,
) -> float:
    """RMS mismatch between scaled curves, the collapse-quality metric.

    Each curve's abscissae are rescaled to ``u = (x - x_c) * L**(1/nu)``.
    Every point is compared against the linear interpolation of every other
    size's scaled curve over the overlapping ``u`` range; the RMS of all
    those absolute differences is returned.  A perfect collapse gives 0.
    """
    if nu == 0:
        raise PlotsError("nu must be nonzero to scale collapse curves")
    scaled = []
    for L, xs, vals, _errs in curves:
        u = (np.asarray(xs, dtype=float) - x_c) * float(L) ** (1.0 / nu)
        order = np.argsort(u)
        scaled.append((L, u[order], np.asarray(vals, dtype=float)[order]))
    residuals: list[np.ndarray] = []
    for i, (L_i, u_i, v_i) in enumerate(scaled):
        for j, (L_j, u_j, v_j) in enumerate(scaled):
            if i == j or L_i == L_j or len(u_j) < 2:
                continue
            mask = (u_i >= u_j[0]) & (u_i <= u_j[-1])
            if not mask.any():
                continue
            interp = np.interp(u_i[mask], u_j, v_j)
            residuals.append(np.abs(v_i[mask] - interp))
    if not residuals:
        raise PlotsError(
            "scaled curves share no overlapping range; cannot measure "
            "collapse spread"
        )
    pooled = np.concatenate(residuals)
    return float(np.sqrt(np.mean(pooled**2)))


def plot_collapse(
    analysis_path: str | Path,
    out_stem: str | Path,
    *,
    nu: float | None = None,
    x_c: float | None = None,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
) -> dict:
    """Scaling collapse: curves replotted against ``(x - x_c) * L^(1/nu)``.

    ``nu`` and ``x_c`` default to the analysis document's collapse fit;
    passing either overrides the fit (useful for exploring by hand or when
    the document carries no fit).
    """
    doc = load_analysis(analysis_path)
    curves = curve_arrays(doc)
    if len(curves) < 2:
        raise PlotsError(
            f"collapse figure needs curves for at least 2 lattice sizes, "
            f"got {len(curves)}"
        )
    collapse = doc.get("collapse")
    if nu is None or x_c is None:
        if not collapse:
            raise PlotsError(
                "analysis has no collapse fit; pass both nu and x_c "
                "to plot a collapse anyway"
            )
        if nu is None:
            nu = float(collapse["nu"])
        if x_c is None:
            x_c = float(collapse["x_c"])
    nu = float(nu)
    x_c = float(x_c)
    spread = residual_spread(curves, x_c, nu)
    xlabel = xlabel or "(x - x_c) L^(1/nu)"
    ylabel = ylabel or doc.get("inputs", {}).get("quantity", "R")

    with plt.style.context(str(STYLE_PATH)):
        fig, ax = plt.subplots()
        for idx, (L, xs, vals, errs) in enumerate(curves):
            u = (np.asarray(xs, dtype=float) - x_c) * float(L) ** (1.0 / nu)
            ax.errorbar(
                u,
                vals,
                yerr=errs,
                marker=_MARKERS[idx % len(_MARKERS)],
                linestyle="none",
                label=f"L = {L}",
            )
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(
            title
            or f"collapse: x_c = {x_c:.4f}, nu = {nu:.3f}, spread = {spread:.4f}"
        )
        ax.annotate(
            f"RMS spread {spread:.4f}",
            xy=(0.02, 0.02),
            xycoords="axes fraction",
        )
        ax.legend()
        svg, png = _save_both(fig, out_stem)
        plt.close(fig)

    return {
        "svg": svg,
        "png": png,
        "nu": nu,
        "x_c": x_c,
        "spread": spread,
        "sizes": [c[0] for c in curves],
    }


def plot_phase_diagram(
    sweep_dir: str | Path,
    out_stem: str | Path,
    *,
    quantity: str = "R1",
    xlabel: str = "J",
    ylabel: str = "p",
    title: str = "",
) -> dict:
    """Scatter of a named estimate over the (J, p) plane of a sweep."""
    summaries = load_sweep_summaries(sweep_dir)
    js, ps, values = [], [], []
    for doc in summaries:
        params = doc["params"]
        where = "{}/summary (J={}, p={})".format(
            sweep_dir, params["J"], params["p"]
        )
        value, _err = summary_quantity(doc, quantity, where=where)
        js.append(float(params["J"]))
        ps.append(float(params["p"]))
        values.append(value)

    with plt.style.context(str(STYLE_PATH)):
        fig, ax = plt.subplots()
        scatter = ax.scatter(js, ps, c=values, s=160, edgecolors="black")
        fig.colorbar(scatter, ax=ax, label=quantity)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title or f"{quantity} over the sweep grid")
        svg, png = _save_both(fig, out_stem)
        plt.close(fig)

    return {"svg": svg, "png": png, "n_points": len(values), "quantity": quantity}
