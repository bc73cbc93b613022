"""Figure rendering from soibag run logs.

Every plotted quantity comes straight from a log record; the renderer never
recomputes pipeline math.  Each plot kind requires specific record kinds and
raises MissingRecords naming the first absent one.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Polygon

from .errors import MissingRecords, UnknownPlotKind, VizError

PLOT_KINDS = ("extraction", "generation", "path", "tracking")


@dataclass(frozen=True)
class PlotJob:
    """One rendering job: a log file, a plot kind, and an output path."""

    log_path: str
    kind: str
    out_path: str
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise UnknownPlotKind(
                f"unknown plot kind '{self.kind}'; expected one of {PLOT_KINDS}"
            )


def load_records(path):
    """Parse a line-delimited record log into a list of dicts."""
    path = Path(path)
    if not path.exists():
        raise VizError(f"log file not found: {path}")
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise VizError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            if not isinstance(rec, dict) or "kind" not in rec:
                raise VizError(f"{path}:{lineno}: record lacks a 'kind' field")
            records.append(rec)
    return records


def _require(records, kind):
    found = [r for r in records if r["kind"] == kind]
    if not found:
        raise MissingRecords(kind)
    return found


def _style(style, key, default):
    return style.get(key, default) if style else default


def _extraction_figure(records, style):
    rec = _require(records, "extraction")[0]
    cloud = np.asarray(rec["cloud"])
    soi = np.asarray(rec["soi"])
    truth = np.asarray(rec["truth"])

    fig, ax = plt.subplots(figsize=_style(style, "figsize", (5.5, 5.0)))
    ax.scatter(cloud[:, 0], cloud[:, 1], s=2, c="0.75", label="cloud")
    closed_truth = np.vstack([truth, truth[:1]])
    ax.plot(closed_truth[:, 0], closed_truth[:, 1], "k--", lw=1.0, label="true rim")
    closed_soi = np.vstack([soi, soi[:1]])
    (line,) = ax.plot(
        closed_soi[:, 0], closed_soi[:, 1], "o-", c="tab:red", ms=3, lw=1.2,
        label="extracted SOI",
    )
    line.set_gid("extraction-soi")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(_style(style, "title", f"SOI extraction (rmse {rec['rmse'] * 1000:.1f} mm)"))
    return fig


def _generation_figure(records, style):
    rec = _require(records, "generation")[0]
    vertices = np.asarray(rec["vertices"])
    soi = np.asarray(rec["soi"])
    goal = np.asarray(rec["goal_soi"])
    report = rec.get("constraint_report", {})

    fig, ax = plt.subplots(figsize=_style(style, "figsize", (5.5, 5.0)))
    ax.add_patch(
        Polygon(vertices[:, :2], closed=True, facecolor="0.85", edgecolor="0.4",
                label="object base")
    )
    closed_soi = np.vstack([soi, soi[:1]])
    (line,) = ax.plot(
        closed_soi[:, 0], closed_soi[:, 1], "-", c="tab:blue", lw=1.5,
        label="bagging rim",
    )
    line.set_gid("generation-ellipse")
    closed_goal = np.vstack([goal, goal[:1]])
    ax.plot(closed_goal[:, 0], closed_goal[:, 1], "--", c="tab:green", lw=1.2,
            label="goal rim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.relim()
    ax.autoscale_view()
    ax.legend(loc="upper right", fontsize=8)
    title = _style(style, "title", None)
    if title is None and report:
        title = (
            f"bagging ellipse (C1 {report['c1_max']:.3f}, "
            f"C2 {report['c2'] * 1000:.1f} mm)"
        )
    ax.set_title(title or "bagging ellipse")
    return fig


def _ellipse_points(ellipse, n=60):
    c = np.asarray(ellipse["c"])
    u = np.asarray(ellipse["u"])
    v = np.asarray(ellipse["v"])
    t = np.linspace(0.0, 2.0 * np.pi, n)
    return (
        c[None]
        + ellipse["rho_u"] * np.cos(t)[:, None] * u[None]
        + ellipse["rho_v"] * np.sin(t)[:, None] * v[None]
    )


def _box_wireframe(ax, lo, hi):
    lo, hi = np.asarray(lo), np.asarray(hi)
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
         for z in (lo[2], hi[2])]
    )
    edges = [(0, 1), (0, 2), (0, 4), (1, 3), (1, 5), (2, 3), (2, 6),
             (3, 7), (4, 5), (4, 6), (5, 7), (6, 7)]
    for a, b in edges:
        ax.plot(*zip(corners[a], corners[b]), c="0.3", lw=0.8)


def _path_figure(records, style):
    nodes = _require(records, "path_node")
    obstacles = [r for r in records if r["kind"] == "obstacles"]

    fig = plt.figure(figsize=_style(style, "figsize", (6.0, 5.5)))
    ax = fig.add_subplot(projection="3d")
    cmap = plt.get_cmap(_style(style, "cmap", "viridis"))
    denom = max(len(nodes) - 1, 1)
    for i, rec in enumerate(nodes):
        pts = _ellipse_points(rec["ellipse"])
        (line,) = ax.plot(
            pts[:, 0], pts[:, 1], pts[:, 2], c=cmap(i / denom), lw=1.2
        )
        line.set_gid("path-ellipse")
    for rec in obstacles:
        for box in rec["boxes"]:
            _box_wireframe(ax, box["lo"], box["hi"])
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_zlabel("z (m)")
    ax.set_title(_style(style, "title", f"planned path ({len(nodes)} nodes)"))
    return fig


def _tracking_figure(records, style):
    steps = _require(records, "servo_step")
    t = [r["step"] for r in steps]
    mean = [r["mean_error"] for r in steps]
    peak = [r["max_error"] for r in steps]

    fig, ax = plt.subplots(figsize=_style(style, "figsize", (6.0, 4.0)))
    (line,) = ax.plot(t, mean, c="tab:blue", lw=1.4, label="mean error")
    line.set_gid("tracking-mean")
    ax.plot(t, peak, c="tab:orange", lw=1.0, label="max error")
    # mark subgoal switches
    switches = [
        t[i]
        for i in range(1, len(steps))
        if steps[i]["subgoal_index"] != steps[i - 1]["subgoal_index"]
    ]
    for s in switches:
        ax.axvline(s, c="0.8", lw=0.8, zorder=0)
    ax.set_xlabel("step")
    ax.set_ylabel("tracking error (m)")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(_style(style, "title", "closed-loop tracking error"))
    return fig


_BUILDERS = {
    "extraction": _extraction_figure,
    "generation": _generation_figure,
    "path": _path_figure,
    "tracking": _tracking_figure,
}


def build_figure(kind, records, style=None):
    """Build the matplotlib figure for a plot kind from parsed records."""
    if kind not in _BUILDERS:
        raise UnknownPlotKind(f"unknown plot kind '{kind}'")
    return _BUILDERS[kind](records, style or {})


def render(job):
    """Render a plot job to its output image file; returns the output path."""
    records = load_records(job.log_path)
    fig = build_figure(job.kind, records, job.style)
    out = Path(job.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(out, dpi=_style(job.style, "dpi", 150))
    finally:
        plt.close(fig)
    return out
