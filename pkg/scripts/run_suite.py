"""Run the figure experiments for one profile and plot them.

    python scripts/run_suite.py [--out results] [--workers N] [--only rmse_fig2,bo_fig5]
                                [--profile desk|paper]

Experiment ``configs/<profile>_figN.json`` lands in ``<out>/<profile>_figN`` with results.csv,
history.jsonl, config_resolved.json and an SVG.
"""

import argparse
import sys
import time
from pathlib import Path

from bamld.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = {"rmse_fig2": "fig2", "rmse_fig3": "fig3", "clusters_fig4": "fig4", "bo_fig5": "fig5"}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", help="comma-separated experiment names")
    ap.add_argument("--profile", default="desk", choices=("desk", "paper"))
    args = ap.parse_args()

    names = list(CONFIGS) if args.only is None else args.only.split(",")
    for name in names:
        cfg = ROOT / "configs" / f"{args.profile}_{CONFIGS[name]}.json"
        t0 = time.time()
        code = cli(["-v", "run", "--config", str(cfg), "--out", str(Path(args.out) / cfg.stem),
                    "--workers", str(args.workers)])
        print(f"{name}: exit {code} in {time.time() - t0:.0f}s", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
