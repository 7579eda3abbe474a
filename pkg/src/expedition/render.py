"""Top-down maps: a hand-written SVG for the deterministic artifact, matplotlib for reports."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .plume import Box

SIZE = 800  # pixels per side of the map area
MARGIN = 20
BACKGROUND = 255  # gray level of an empty (p = 0) cell and of the canvas


def _gray(p):
    """p in [0, 1] -> gray level; 0 maps to the background, 1 to black."""
    return int(round(BACKGROUND * (1.0 - float(np.clip(p, 0.0, 1.0)))))


def render_svg(trace, grid=None, z_slice: int = 0, t_slice: int = 0, out=None, *,
               box: Box | None = None, vent=None) -> str:
    """Render the path (and optionally one forecast slice) as an SVG document.

    ``trace`` is an EpisodeTrace; ``vent`` an optional (x, y) marker.  The map
    extent is the grid footprint when a grid is given, else ``box`` (default
    operating box).  Returns the document and writes it to ``out`` if given.
    """
    if len(trace) == 0:
        raise InvalidArgumentError("trace must be nonempty")
    if grid is not None:
        nt, nz, ny, nx = grid.spec.shape
        if not 0 <= z_slice < nz:
            raise InvalidArgumentError(f"z_slice {z_slice} outside [0, {nz})")
        if not 0 <= t_slice < nt:
            raise InvalidArgumentError(f"t_slice {t_slice} outside [0, {nt})")
        s = grid.spec
        x0, x1, y0, y1 = s.x0, s.x0 + s.nx * s.dx, s.y0, s.y0 + s.ny * s.dy
    else:
        b = box or Box()
        x0, x1, y0, y1 = b.xmin, b.xmax, b.ymin, b.ymax
    scale = SIZE / max(x1 - x0, y1 - y0)

    def px(x, y):
        # SVG y grows downward; north is up
        return MARGIN + (x - x0) * scale, MARGIN + (y1 - y) * scale

    w = MARGIN * 2 + (x1 - x0) * scale
    h = MARGIN * 2 + (y1 - y0) * scale
    bg = f"rgb({BACKGROUND},{BACKGROUND},{BACKGROUND})"
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2f}" height="{h:.2f}" '
        f'viewBox="0 0 {w:.2f} {h:.2f}">',
        f'<rect x="0" y="0" width="{w:.2f}" height="{h:.2f}" fill="{bg}"/>',
    ]
    if grid is not None:
        s = grid.spec
        cw, ch = s.dx * scale, s.dy * scale
        lines.append('<g id="forecast" stroke="none">')
        sl = grid.values[t_slice, z_slice]
        for iy in range(s.ny):
            for ix in range(s.nx):
                g = _gray(sl[iy, ix])
                cx, cy = px(s.x0 + ix * s.dx, s.y0 + (iy + 1) * s.dy)
                lines.append(f'<rect x="{cx:.2f}" y="{cy:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                             f'fill="rgb({g},{g},{g})"/>')
        lines.append("</g>")
    lines.append(f'<rect x="{MARGIN}" y="{MARGIN}" width="{(x1 - x0) * scale:.2f}" '
                 f'height="{(y1 - y0) * scale:.2f}" fill="none" stroke="black" stroke-width="1"/>')
    P = trace.positions()
    pts = " ".join("{:.2f},{:.2f}".format(*px(x, y)) for x, y in P[:, :2])
    lines.append(f'<polyline id="path" points="{pts}" fill="none" stroke="rgb(0,90,200)" stroke-width="1.5"/>')
    sx, sy = px(*P[0, :2])
    ex, ey = px(*P[-1, :2])
    lines.append(f'<circle id="start" cx="{sx:.2f}" cy="{sy:.2f}" r="5" fill="rgb(0,160,0)"/>')
    lines.append(f'<rect id="end" x="{ex - 5:.2f}" y="{ey - 5:.2f}" width="10" height="10" fill="rgb(200,0,0)"/>')
    if vent is not None:
        vx, vy = px(*vent)
        lines.append(f'<path id="vent" d="M {vx - 7:.2f} {vy - 7:.2f} L {vx + 7:.2f} {vy + 7:.2f} '
                     f'M {vx - 7:.2f} {vy + 7:.2f} L {vx + 7:.2f} {vy - 7:.2f}" stroke="black" stroke-width="2"/>')
    lines.append("</svg>")
    doc = "\n".join(lines) + "\n"
    if out is not None:
        Path(out).write_text(doc)
    return doc


# --- matplotlib report figures ---------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_episode(trace, out, title=""):
    """Readings and step reward over time."""
    plt = _pyplot()
    t = trace.times() / 3600.0
    fig, (a0, a1) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    a0.plot(t, [r.reactive for r in trace.rows], lw=0.8, label="reactive")
    a0.plot(t, [r.turbidity for r in trace.rows], lw=0.8, label="turbidity")
    a0.set_ylabel("reading")
    a0.legend(loc="upper right", fontsize=8)
    a1.plot(t, [r.reward for r in trace.rows], lw=0.8, color="k")
    a1.set_ylabel("step reward")
    a1.set_xlabel("time (h)")
    if title:
        a0.set_title(title)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_bench(regrets: dict, out):
    """Box plot of final max-seek regret per policy."""
    plt = _pyplot()
    names = list(regrets)
    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 4))
    ax.boxplot([regrets[n] for n in names])
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.set_ylabel("final max-seek regret")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_forecast(grid, out):
    """Per-level in-plume probability, maximized over time slices."""
    plt = _pyplot()
    s = grid.spec
    P = grid.values.max(axis=0)
    levels = [iz for iz in range(s.nz) if P[iz].max() > 0] or [0]
    n = min(len(levels), 4)
    pick = [levels[int(round(i))] for i in np.linspace(0, len(levels) - 1, n)]
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    ext = (s.x0, s.x0 + s.nx * s.dx, s.y0, s.y0 + s.ny * s.dy)
    for ax, iz in zip(axes[0], pick):
        im = ax.imshow(P[iz], origin="lower", extent=ext, vmin=0, vmax=1, cmap="Greys")
        ax.set_title(f"z = {s.z0 + (iz + 0.5) * s.dz:.0f} m", fontsize=9)
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8, label="P(in plume)")
    fig.savefig(out, dpi=110)
    plt.close(fig)
