"""Print seed-averaged curves (mean and standard error) from results CSVs.

    python scripts/summarize.py results/desk_fig2/results.csv [more.csv ...]
"""

import sys

from bamld.plotting import KINDS, PlotError, aggregate, read_rows


def summarize(path: str) -> None:
    rows = read_rows(path)
    experiments = sorted({r[0] for r in rows})
    for exp in experiments:
        kind = KINDS.get(exp)
        if kind is None:
            continue
        try:
            curves = aggregate(rows, kind)
        except PlotError as exc:
            print(f"{path}: {exc}")
            continue
        print(f"== {exp} ({kind.metric} by {kind.xlabel}) from {path}")
        steps = curves[0].steps
        print(f"{'method':>12} " + " ".join(f"{int(s):>13}" for s in steps))
        for c in curves:
            cells = " ".join(f"{m:7.3f}+-{se:5.3f}" for m, se in zip(c.mean, c.stderr))
            print(f"{c.method:>12} {cells}")


def main(argv) -> int:
    if not argv:
        print(__doc__.strip())
        return 1
    for path in argv:
        summarize(path)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
