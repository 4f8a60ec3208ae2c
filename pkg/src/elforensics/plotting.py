"""SVG figures for fingerprints, cumulative curves and displacement curves."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402
from scipy.ndimage import uniform_filter  # noqa: E402

from .fingerprint import CumulativeCurve, Fingerprint  # noqa: E402
from .ingest import ForensicsError  # noqa: E402
from .rigging import AcceptanceRegion, DisplacementCurve  # noqa: E402

STYLE = {
    "svg.hashsalt": "elforensics",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
GROUP_COLORS = {"small": "tab:red", "large": "tab:blue"}

AXIS_LABELS = {
    "raw": ("vote share v", "turnout t"),
    "standardized": ("standardized vote $Z_v$", "standardized turnout $Z_t$"),
}


def _save(fig, path):
    # the hash salt is read at save time; it fixes the generated element ids
    with plt.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "elforensics"})
    plt.close(fig)
    return path


def fingerprint_heatmap(fp: Fingerprint, cmap="Blues"):
    """Figure with one rectangle per non-empty cell (gid ``cell-i-j``)."""
    if fp.total == 0:
        raise ForensicsError("fingerprint has no stations inside its range")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        ex, ey = fp.edges()
        norm = matplotlib.colors.Normalize(0, fp.cells.max())
        colormap = plt.get_cmap(cmap)
        for i, j in zip(*np.nonzero(fp.cells)):
            ax.add_patch(Rectangle((ex[i], ey[j]), ex[i + 1] - ex[i], ey[j + 1] - ey[j],
                                   facecolor=colormap(0.15 + 0.85 * norm(fp.cells[i, j])),
                                   edgecolor="none", gid=f"cell-{i}-{j}"))
        ax.set_xlim(*fp.range_x)
        ax.set_ylim(*fp.range_y)
        xl, yl = AXIS_LABELS.get(fp.axes, ("x", "y"))
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        fig.colorbar(matplotlib.cm.ScalarMappable(norm, colormap), ax=ax, label="stations")
        fig.tight_layout()
    return fig


def fingerprint_contours(groups, levels=(0.2, 0.4, 0.6, 0.8)):
    """Iso-density lines per station group from 3x3-box-smoothed histograms.

    ``groups`` maps a label ('small', 'large', ...) to a Fingerprint; levels are
    fractions of each group's smoothed maximum. Smoothing only affects the drawing.
    """
    if not groups:
        raise ForensicsError("no fingerprints to contour")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.6))
        for k, (label, fp) in enumerate(groups.items()):
            if fp.total == 0:
                raise ForensicsError(f"fingerprint {label!r} is empty")
            ex, ey = fp.edges()
            cx, cy = (ex[:-1] + ex[1:]) / 2, (ey[:-1] + ey[1:]) / 2
            dens = uniform_filter(fp.cells.astype(float), size=3, mode="constant")
            dens /= dens.max()
            color = GROUP_COLORS.get(label, f"C{k}")
            cs = ax.contour(cx, cy, dens.T, levels=list(levels), colors=color, linewidths=0.9)
            cs.set_gid(f"contour-{label}")
            ax.plot([], [], color=color, label=label)
        first = next(iter(groups.values()))
        ax.set_xlim(*first.range_x)
        ax.set_ylim(*first.range_y)
        xl, yl = AXIS_LABELS.get(first.axes, ("x", "y"))
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        ax.legend(frameon=False)
        fig.tight_layout()
    return fig


def cumulative_figure(curve: CumulativeCurve):
    if len(curve.x) == 0:
        raise ForensicsError("empty cumulative curve")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        ax.axhline(0.5, color="0.6", lw=0.8, ls="--", gid="half-line")
        line, = ax.plot(curve.x, curve.y, color="tab:blue", lw=1.2)
        line.set_gid("cumulative")
        if curve.mode == "size":
            ax.set_xlabel("station rank by electorate (largest first)")
        else:
            ax.set_xlabel("turnout t")
        ax.set_ylabel("cumulative vote share")
        fig.tight_layout()
    return fig


def displacement_figure(curves, region: AcceptanceRegion | None = None, references=()):
    """delta(p) for one or more curves, with the acceptance band shaded (gid ``acceptance-band``)."""
    curves = [curves] if isinstance(curves, DisplacementCurve) else list(curves)
    if not curves:
        raise ForensicsError("no displacement curves")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        if region is not None:
            band = ax.fill_between(region.p, region.lower, region.upper, color="0.85", lw=0,
                                   label=f"{region.confidence:.0%} acceptance region")
            band.set_gid("acceptance-band")
        for r in references:
            ax.plot(r.p, r.delta, color="0.5", lw=0.6, ls=":")
        for k, c in enumerate(curves):
            line, = ax.plot(c.p, c.delta, color="tab:purple" if k == 0 else f"C{k}", lw=1.4,
                            label=c.label or None)
            line.set_gid(f"delta-{k}")
        ax.axhline(0, color="0.6", lw=0.6)
        ax.set_xlabel("size percentile p")
        ax.set_ylabel(r"displacement $\delta(p)$")
        if region is not None or any(c.label for c in curves):
            ax.legend(frameon=False)
        fig.tight_layout()
    return fig


def emit_plot(artifact, kind, path, **kw):
    """Render ``artifact`` as an SVG file.

    Fingerprints take ``heatmap`` or ``contour`` (a dict of fingerprints is
    contoured group by group); curves take ``line``. A displacement curve may
    be passed as ``(curve, region)``.
    """
    if kind == "heatmap":
        if not isinstance(artifact, Fingerprint):
            raise ForensicsError("heatmap needs a fingerprint")
        fig = fingerprint_heatmap(artifact, **kw)
    elif kind == "contour":
        if isinstance(artifact, Fingerprint):
            artifact = {"all": artifact}
        if not (isinstance(artifact, dict) and all(isinstance(v, Fingerprint) for v in artifact.values())):
            raise ForensicsError("contour needs fingerprints")
        fig = fingerprint_contours(artifact, **kw)
    elif kind == "line":
        if isinstance(artifact, CumulativeCurve):
            fig = cumulative_figure(artifact)
        elif isinstance(artifact, DisplacementCurve):
            fig = displacement_figure(artifact, **kw)
        elif isinstance(artifact, tuple) and isinstance(artifact[0], DisplacementCurve):
            fig = displacement_figure(artifact[0], artifact[1], **kw)
        else:
            raise ForensicsError("line plot needs a cumulative or displacement curve")
    else:
        raise ForensicsError(f"unknown plot kind {kind!r}")
    return _save(fig, path)
