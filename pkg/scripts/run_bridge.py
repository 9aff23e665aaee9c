"""Tension to cable-shortening curve of the Cosserat model for each routing.

    python3 scripts/run_bridge.py --max-g 600 --count 7
"""

import argparse

import numpy as np

from ccr.model import STOCK_ROUTINGS, grams_to_newtons, reference_spec, stock_routing
from ccr.workspace import tension_to_delta


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-g", type=float, default=600.0)
    ap.add_argument("--count", type=int, default=7)
    args = ap.parse_args()

    spec = reference_spec()
    loads = np.linspace(0, args.max_g, args.count)
    print("load_g," + ",".join(f"delta_pct_{n}" for n in STOCK_ROUTINGS))
    routings = [stock_routing(n, spec) for n in STOCK_ROUTINGS]
    for g in loads:
        tau = grams_to_newtons(g)
        row = [100 * tension_to_delta(r, spec, tau) for r in routings]
        print(f"{g:g}," + ",".join(f"{d:.4f}" for d in row))


if __name__ == "__main__":
    main()
