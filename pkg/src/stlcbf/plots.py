"""Figure rendering for simulation runs (written next to the CSV log)."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Circle

from .formulas import Affine, Ball, Negated, PredicateDef, SmoothAnd

__all__ = ["render_run"]


def _draw_shape(ax, name, shape, style):
    if isinstance(shape, Ball):
        ax.add_patch(
            Circle(shape.center, shape.radius, fill=True, alpha=0.25, **style)
        )
        ax.annotate(name, shape.center, ha="center", va="center", fontsize=8)
    elif isinstance(shape, Affine):
        # boundary a.x + b = 0 clipped to the current axes
        a = np.asarray(shape.a)
        if len(a) != 2 or not np.any(a):
            return
        x0, x1 = ax.get_xlim()
        if abs(a[1]) > abs(a[0]):
            xs = np.array([x0, x1])
            ys = -(shape.b + a[0] * xs) / a[1]
        else:
            y0, y1 = ax.get_ylim()
            ys = np.array([y0, y1])
            xs = -(shape.b + a[1] * ys) / a[0]
        ax.plot(xs, ys, lw=1.0, ls="--", **{k: v for k, v in style.items() if k == "color"})
    elif isinstance(shape, Negated):
        _draw_shape(ax, name, shape.inner.shape, style)
    elif isinstance(shape, SmoothAnd):
        for part in shape.parts:
            _draw_shape(ax, name, part.shape, style)


def render_run(run, path) -> None:
    """Plane view with predicate regions plus barrier/funnel time series."""
    log = run.log
    table: dict[str, PredicateDef] = run.table

    fig, (ax_plane, ax_ts) = plt.subplots(1, 2, figsize=(11, 4.6))

    # plane: regions named in the original formula, then the trajectory
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    named = [n for n in table if not n.startswith(("not_", "and_"))]
    pts = log.x[:, :2]
    pad = 1.0
    ax_plane.set_xlim(pts[:, 0].min() - pad, pts[:, 0].max() + pad)
    ax_plane.set_ylim(pts[:, 1].min() - pad, pts[:, 1].max() + pad)
    for i, name in enumerate(named):
        _draw_shape(ax_plane, name, table[name].shape, {"color": colors[i % len(colors)]})
    ax_plane.plot(pts[:, 0], pts[:, 1], "k-", lw=1.2, label="trajectory")
    ax_plane.plot(pts[0, 0], pts[0, 1], "ko", ms=5)
    ax_plane.set_aspect("equal", adjustable="datalim")
    ax_plane.set_xlabel("x")
    ax_plane.set_ylabel("y")
    ax_plane.legend(loc="best", fontsize=8)

    finite = np.isfinite(log.hhat)
    ax_ts.plot(log.t[finite], log.hhat[finite], label=r"reconstructed barrier")
    ax_ts.plot(log.t[finite], log.e[finite], label="reconstruction error e")
    ax_ts.plot(log.t, log.rho, "--", label=r"funnel $\rho$")
    ax_ts.axhline(0.0, color="k", lw=0.6)
    ax_ts.set_xlabel("t [s]")
    ax_ts.legend(loc="best", fontsize=8)

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
