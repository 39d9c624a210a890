"""Build time and accumulated interpolation error of nested fold tables.

    python scripts/fold_errors.py [alpha] [xmax] [levels]
"""

import sys
import time

from subexp2 import pareto
from subexp2.conv import Folds


def main(argv):
    alpha = float(argv[0]) if argv else 2.0
    xmax = float(argv[1]) if len(argv) > 1 else 300.0
    levels = int(argv[2]) if len(argv) > 2 else 18
    folds = Folds(pareto(alpha))
    print("n,nodes,seconds,range,interp_error")
    for n in range(2, levels + 1):
        t0 = time.perf_counter()
        tab = folds.table(n, xmax)
        dt = time.perf_counter() - t0
        print(f"{n},{len(tab.v)},{dt:.2f},{tab.xmax:g},{tab.interp_error:.3e}", flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
