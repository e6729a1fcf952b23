"""Run the four simulation studies and write traces, summaries and SVG panels.

usage: python scripts/reproduce_studies.py [--out-dir results] [--skip-sweep]
"""
import argparse
import json
import os

from safeimp import cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--skip-sweep", action="store_true")
    args = ap.parse_args()
    here = os.path.dirname(os.path.abspath(__file__))
    cfg = lambda name: os.path.join(here, "..", "configs", f"{name}.json")
    out = lambda sub: os.path.join(args.out_dir, sub)

    studies = [
        ("nominal", "proposed,nic"),
        ("bursting", "proposed,aworm"),
        ("infeasible", "proposed"),
    ]
    codes = {}
    for name, modes in studies:
        codes[name] = cli.main(["compare", cfg(name), "--modes", modes, "--out-dir", out(name)])
        for m in modes.split(","):
            cli.main(["plot", os.path.join(out(name), f"trace_{m}.csv")])
    if not args.skip_sweep:
        codes["sweep"] = cli.main(["sweep", cfg("sweep"), "--out-dir", out("sweep")])
    codes["feasibility"] = cli.main(["feasibility", cfg("nominal"), "--out-dir", out("feasibility")])
    print(json.dumps(codes))
    return max(codes.values())


if __name__ == "__main__":
    raise SystemExit(main())
