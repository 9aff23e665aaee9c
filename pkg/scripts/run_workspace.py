"""Sample workspace clouds and write one CSV per routing.

    python3 scripts/run_workspace.py --routings IV VI --grid 0:0.08:200 --outdir clouds
"""

import argparse
import logging
from pathlib import Path

from ccr.model import reference_spec, stock_routing
from ccr.workspace import parse_grid, reachability_radius, sample_workspace

log = logging.getLogger(__name__)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--routings", nargs="+", default=["IV", "VI"])
    ap.add_argument("--solver", choices=("fourbar", "cosserat"), default="fourbar")
    ap.add_argument("--grid", default="0:0.08:200")
    ap.add_argument("--outdir", default="clouds")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = reference_spec()
    grid = parse_grid(args.grid)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.routings:
        cloud = sample_workspace(stock_routing(name, spec), spec, args.solver, grid)
        dest = out / f"workspace_{name}_{args.solver}.csv"
        dest.write_text(cloud.to_csv())
        r_max = max((float((t**2).sum() ** 0.5) for t in cloud.tips), default=0.0)
        log.info(
            "%s: %d points, %d failed, %.1f s, max |tip| %.4f m (ball %.4f m) -> %s",
            name, len(cloud.samples), cloud.n_failed, cloud.wall_time_s,
            r_max, reachability_radius(spec), dest,
        )


if __name__ == "__main__":
    main()
