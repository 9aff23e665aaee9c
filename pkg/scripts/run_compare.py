"""Cross-model comparison for every stock routing at one load.

    python3 scripts/run_compare.py --tension-g 400 --out compare.json
"""

import argparse
import json
import logging

from ccr.model import STOCK_ROUTINGS, grams_to_newtons, reference_spec, stock_routing
from ccr.workspace import compare_models

log = logging.getLogger(__name__)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tension-g", type=float, default=400.0)
    ap.add_argument("--out", help="optional JSON dump of all reports")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = reference_spec()
    tau = grams_to_newtons(args.tension_g)
    reports = []
    print(f"{'routing':>7} {'delta %':>8} {'max err mm':>10} {'% of L':>7}")
    for name in STOCK_ROUTINGS:
        rep = compare_models(stock_routing(name, spec), spec, tau)
        reports.append(rep.to_dict())
        print(f"{name:>7} {100 * rep.delta:8.3f} {1e3 * rep.max_error_m:10.3f} {rep.max_error_pct:7.2f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(reports, f, indent=2)
        log.info("wrote %s", args.out)


if __name__ == "__main__":
    main()
