"""End-to-end demo: run a bundled scenario, then render all four figures.

Usage: python demos/run_and_plot.py [scenario.yaml] [out_dir]
Requires the soibag-viz package for the figure step; without it the demo
stops after printing the run report.
"""

import json
import sys
from pathlib import Path

from soibag.harness import load_scenario, run_pipeline

ROOT = Path(__file__).resolve().parent.parent


def main():
    scenario_path = sys.argv[1] if len(sys.argv) > 1 else ROOT / "scenarios/coffee_box.yaml"
    out_dir = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("demo_out")

    scenario = load_scenario(scenario_path)
    report = run_pipeline(scenario, out_dir=out_dir)
    print(json.dumps(report.to_dict(), indent=2))
    if not report.success:
        return 1

    try:
        from soibag_viz import PlotJob, render
    except ImportError:
        print("soibag-viz not installed; skipping figures")
        return 0

    log = out_dir / "run.log.jsonl"
    for kind in ("extraction", "generation", "path", "tracking"):
        out = render(PlotJob(str(log), kind, str(out_dir / f"{kind}.png")))
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
