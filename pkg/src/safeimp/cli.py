"""Command line entry point: run, sweep, feasibility, compare, plot."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import harness, safety
from .errors import ConfigError, SafeImpError

EXIT_OK, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2


def _fail(code, kind, message):
    json.dump({"error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    return code


def load_config(source, args) -> harness.ScenarioConfig:
    """A JSON file path or the name of a built-in preset, with CLI overrides applied."""
    if os.path.exists(source):
        cfg = harness.ScenarioConfig.load(source)
    elif source in harness.PRESETS:
        cfg = harness.preset(source)
    else:
        raise ConfigError(f"config '{source}' is neither a file nor a preset")
    over = {}
    if getattr(args, "seed", None) is not None:
        over["mismatch"] = {"seed": args.seed}
    if getattr(args, "dt", None) is not None:
        over["dt"] = args.dt
    if getattr(args, "mode", None):
        over["mode"] = args.mode
    return cfg.replace(**over) if over else cfg


def cmd_run(args):
    cfg = load_config(args.config, args)
    tr = harness.run_scenario(cfg)
    harness.write_outputs(tr, args.out_dir)
    json.dump(tr.summary, sys.stdout, indent=1)
    sys.stdout.write("\n")
    if tr.fault:
        return _fail(EXIT_FAULT, "fault", tr.fault)
    return EXIT_OK


def cmd_compare(args):
    cfg = load_config(args.config, args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in ("proposed", "nic", "aworm"):
            raise ConfigError(f"unknown mode '{m}'")
    traces = harness.run_many([(cfg, m) for m in modes], args.workers)
    joint = {}
    for m, tr in zip(modes, traces):
        harness.write_outputs(tr, args.out_dir, stem=f"trace_{m}")
        joint[m] = tr.summary
    with open(os.path.join(args.out_dir, "compare_summary.json"), "w") as fh:
        json.dump(joint, fh, indent=1)
    json.dump(joint, sys.stdout, indent=1)
    sys.stdout.write("\n")
    faults = {m: tr.fault for m, tr in zip(modes, traces) if tr.fault}
    if faults:
        return _fail(EXIT_FAULT, "fault", json.dumps(faults))
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config, args)
    rows = harness.sweep_mismatch(cfg, args.levels, tuple(args.seeds), args.workers)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["level", "seed", "rms_imp_error", "fault"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    table = [{"level": lv, "mean_rms_imp_error": v} for lv, v in harness.sweep_table(rows)]
    with open(os.path.join(args.out_dir, "sweep_summary.json"), "w") as fh:
        json.dump(table, fh, indent=1)
    json.dump(table, sys.stdout, indent=1)
    sys.stdout.write("\n")
    faults = [r for r in rows if r["fault"]]
    if faults:
        return _fail(EXIT_FAULT, "fault", json.dumps(faults))
    return EXIT_OK


def cmd_feasibility(args):
    cfg = load_config(args.config, args)
    s = cfg.data["safety"]
    rows = safety.feasibility_report(cfg.limits(), safety.SafetyConfig(**s))
    report = {"all_contain_gamma": all(r["contains_gamma"] for r in rows), "joints": rows}
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "feasibility.json"), "w") as fh:
            json.dump(report, fh, indent=1)
    json.dump(report, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_plot(args):
    from .plot import plot_trace

    if not os.path.exists(args.trace):
        raise ConfigError(f"trace file {args.trace} not found")
    cfg_path = args.trace[:-4] + "_config.json" if args.trace.endswith(".csv") else None
    config = {}
    if cfg_path and os.path.exists(cfg_path):
        with open(cfg_path) as fh:
            config = json.load(fh)
    tr = harness.Trace.from_csv(args.trace, config)
    out = args.out or os.path.splitext(args.trace)[0] + ".svg"
    plot_trace(tr, out)
    print(out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="safeimp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("config", help="scenario JSON file or preset name")
        sp.add_argument("--seed", type=int, help="mismatch seed")
        sp.add_argument("--dt", type=float, help="integration step [s]")
        sp.add_argument("--out-dir", default=out_default)

    sp = sub.add_parser("run", help="simulate one scenario")
    common(sp)
    sp.add_argument("--mode", choices=["proposed", "nic", "aworm"])
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="simulate one scenario under several controllers")
    common(sp)
    sp.add_argument("--modes", default="proposed,nic,aworm")
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="RMS impedance error against model mismatch")
    common(sp)
    sp.add_argument("--levels", type=float, nargs="+",
                    default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("feasibility", help="per-joint barrier gain intervals")
    common(sp, out_default=None)
    sp.set_defaults(func=cmd_feasibility)

    sp = sub.add_parser("plot", help="render a trace CSV to SVG")
    sp.add_argument("trace")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except SafeImpError as exc:
        return _fail(EXIT_FAULT, "fault", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
