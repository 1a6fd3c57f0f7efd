"""Figure rendering for run and comparison reports.

Every report path that writes delimited output also renders the matching
matplotlib figures next to it: gap/pressure traces, sensor displacements
and the NCP iteration counts, plus overlay figures for comparisons.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (6.4, 4.0)
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["font.size"] = 9


def read_csv(path) -> dict[str, np.ndarray]:
    """Parse a trajectory/report CSV into named float columns."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns, header names {len(header)}")
    return {name: data[:, i] for i, name in enumerate(header)}


def _sensor_columns(cols: dict[str, np.ndarray]) -> list[str]:
    return sorted({c[:-3] for c in cols if c.startswith("s") and c.endswith(("_ux", "_uy"))})


def render_run_figures(csv_path, outdir=None) -> list[Path]:
    """Render gap/pressure, sensor and iteration figures for one trajectory."""
    csv_path = Path(csv_path)
    outdir = Path(outdir) if outdir else csv_path.parent
    stem = csv_path.stem
    cols = read_csv(csv_path)
    t = cols["t"]
    written = []

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.2))
    ax1.plot(t, cols["gap"], color="tab:blue")
    ax1.set_ylabel("gap $g_{CN}$")
    ax2.plot(t, cols["pressure"], color="tab:red")
    ax2.set_ylabel("pressure $p_{CN}$")
    ax2.set_xlabel("t")
    fig.suptitle(f"{stem}: contact sensor complementarity")
    path = outdir / f"{stem}_gap_pressure.png"
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    sensors = _sensor_columns(cols)
    if sensors:
        fig, axes = plt.subplots(len(sensors), 1, sharex=True,
                                 figsize=(6.4, 2.6 * len(sensors)), squeeze=False)
        for ax, s in zip(axes[:, 0], sensors):
            ax.plot(t, cols[f"{s}_ux"], label="$u_x$")
            ax.plot(t, cols[f"{s}_uy"], label="$u_y$", linestyle="--")
            ax.set_ylabel(s)
            ax.legend(loc="best")
        axes[-1, 0].set_xlabel("t")
        fig.suptitle(f"{stem}: sensor displacements")
        path = outdir / f"{stem}_sensors.png"
        fig.savefig(path, dpi=140, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots()
    ax.step(t, cols["ncp_iterations"], where="mid", color="tab:green")
    ax.set_xlabel("t")
    ax.set_ylabel("fixed-point iterations")
    ax.set_title(f"{stem}: NCP iterations per step")
    path = outdir / f"{stem}_iterations.png"
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def render_compare_figures(csv_a, csv_b, outdir, stem: str) -> list[Path]:
    """Overlay the two trajectories on shared columns and plot the residuals."""
    outdir = Path(outdir)
    a = read_csv(csv_a)
    b = read_csv(csv_b)
    name_a, name_b = Path(csv_a).stem, Path(csv_b).stem
    t = a["t"]
    written = []

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.2))
    ax1.plot(t, a["gap"], label=name_a)
    ax1.plot(t, b["gap"], linestyle="--", label=name_b)
    ax1.set_ylabel("gap $g_{CN}$")
    ax1.legend(loc="best")
    ax2.plot(t, a["pressure"], label=name_a)
    ax2.plot(t, b["pressure"], linestyle="--", label=name_b)
    ax2.set_ylabel("pressure $p_{CN}$")
    ax2.set_xlabel("t")
    path = outdir / f"{stem}_gap_pressure.png"
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    shared = [c for c in a if c in b and c not in ("t", "ncp_iterations", "pairing_version")]
    fig, ax = plt.subplots()
    for c in shared:
        ax.plot(t, np.abs(a[c] - b[c]), label=c)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("|difference|")
    ax.set_title(f"{name_a} vs {name_b}")
    ax.legend(loc="best", fontsize=7)
    path = outdir / f"{stem}_residuals.png"
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written
