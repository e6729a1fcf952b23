"""Feasible barrier-gain interval per joint as the robust-margin weight nu varies."""
import sys

import numpy as np

from safeimp import harness, safety


def main(nus=(10.0, 20.0, 40.0, 80.0)):
    base = harness.preset("nominal")
    lim = base.limits()
    for nu in nus:
        cfg = safety.SafetyConfig(**{**base.data["safety"], "nu": nu})
        rows = safety.feasibility_report(lim, cfg)
        cells = []
        for r in rows:
            iv = r["interval"]
            cells.append("empty" if iv is None else f"[{iv[0]:.2f},{iv[1]:.1f}]{'' if r['contains_gamma'] else '*'}")
        print(f"nu={nu:5.1f}  " + "  ".join(cells))
    print("* gamma outside the interval")


if __name__ == "__main__":
    main(tuple(float(v) for v in sys.argv[1:]) or (10.0, 20.0, 40.0, 80.0))
