"""Acceptance test for the viz component: one pass/fail summary line."""

import json
from pathlib import Path

from soibag_viz import PlotJob, build_figure, load_records, render

DATA = Path(__file__).parent / "data"
LOG = DATA / "run.log.jsonl"
REPORT = DATA / "report.json"


def test_criterion_9_viz_fidelity(tmp_path):
    rendered = {}
    for kind in ("extraction", "generation", "path", "tracking"):
        out = render(PlotJob(str(LOG), kind, str(tmp_path / f"{kind}.png")))
        rendered[kind] = out.exists() and out.stat().st_size > 0

    records = load_records(LOG)
    n_nodes = sum(r["kind"] == "path_node" for r in records)
    fig = build_figure("path", records)
    n_ellipses = sum(
        a.get_gid() == "path-ellipse" for a in fig.axes[0].lines
    )

    report = json.loads(REPORT.read_text())
    fig = build_figure("tracking", records)
    (mean_line,) = [a for a in fig.axes[0].lines
                    if a.get_gid() == "tracking-mean"]
    final_matches = mean_line.get_ydata()[-1] == report["final_mean_error"]

    ok = all(rendered.values()) and n_ellipses == n_nodes and final_matches
    verdict = "PASS" if ok else "FAIL"
    print(
        f"[{verdict}] criterion 9 (viz fidelity): rendered "
        f"{sorted(k for k, v in rendered.items() if v)}, path ellipses "
        f"{n_ellipses} == log nodes {n_nodes}, tracking final value matches "
        f"report {final_matches}"
    )
    assert ok
