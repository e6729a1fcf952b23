"""Scenario definition, closed-loop simulation, traces and summary metrics."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import adapt, plant, rbd, safety
from .controller import Controller, ControllerConfig
from .errors import ConfigError, SafeImpError
from .impedance import DlsConfig, ImpedanceParams, task_error
from .optim import CommandQpConfig

SCHEMA_VERSION = 1
VIOLATION_TOL = 1e-6
SIGN_DEADBAND = 1e-3  # N·m per step; smaller torque increments do not count as reversals

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "name": "nominal",
    "robot": None,
    "mode": "proposed",
    "mismatch": {"level": 0.5, "seed": 0},
    "torque_limits": {"tau_max": [32.0] * 4 + [13.0] * 3, "tau_min": None},
    "joint_limits": {
        "kinds": ["velocity", "position", "velocity", "position", "velocity", "position", "velocity"],
        # q_max for velocity-only joints is unused
        "q_max_deg": [180.0, 126.0, 180.0, 147.0, 180.0, 117.0, 180.0],
        "qd_max_rpm": [17.0, 17.0, 17.0, 17.0, 25.0, 25.0, 25.0],
    },
    "impedance": {"M_d": [1.0] * 6, "B_d": [49.0] * 3 + [12.0] * 3, "K_d": [49.0] * 3 + [16.0] * 3},
    "dls": {"k_max": 0.01, "alpha_s": 50.0, "sigma_low": 0.01, "sigma_high": 0.05, "k_damp": 5.0},
    "safety": {"l": 6, "gamma_v": 10.0, "gamma_p": 10.0, "nu": 40.0, "beta": 35.0,
               "omega1_bar": 75.0, "alpha_o": 80.0},
    "adapt": {"gamma_theta": 100.0, "gamma_w": 50.0, "sigma_w": 0.0125, "eps_smc": 0.1,
              "kappa": adapt.SMC_KAPPA, "Theta": 50.0, "eps_proj": 5.0, "alpha_c": 70.0,
              "K_r": math.sqrt(250.0), "Lambda": math.sqrt(250.0)},
    "fls": {"centers": [-1.0, 0.0, 1.0], "width": 0.6, "fou_factor": 1.3, "xi_scale": 10.0,
            "tnorm": "min"},
    "qp": {"rho": 1000.0, "eps_s": 1e-6},
    "friction": {"f_c": [0.8] * 7, "f_s": [1.2] * 7, "f_v": [0.4] * 7, "v_s": [0.1] * 7,
                 "kappa_f": 25.0},
    "wrench": {"peak": [20.0, 20.0, -15.0, 0.0, 0.0, 0.0], "window": [5.0, 7.0], "width": None},
    "duration": 10.0,
    "dt": 0.01,
    "q0": [0.0, -1.0, 1.0, -0.5, 0.5, -1.2, 0.0],
    "qd0": [0.0] * 7,
    "z_d": None,
    "log_fmax": False,
    "sign_window": [5.0, 8.0],
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key '{k}'")
        if isinstance(base[k], dict) and isinstance(v, dict):
            for kk in v:
                if kk not in base[k]:
                    raise ConfigError(f"unknown config key '{k}.{kk}'")
            out[k] = {**base[k], **copy.deepcopy(v)}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _vec(v, n, name):
    a = np.broadcast_to(np.asarray(v, float), (n,)).copy() if np.ndim(v) == 0 else np.asarray(v, float)
    if a.shape != (n,):
        raise ConfigError(f"{name} must have {n} entries")
    return a


@dataclass
class ScenarioConfig:
    """Resolved scenario; ``data`` holds every parameter (defaults materialised)."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.validate()

    # -- construction -------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        version = d.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        return cls(_merge(DEFAULTS, d))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(d)
        robot = cfg.data["robot"]
        if robot and not os.path.isabs(robot):
            cfg.data["robot"] = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(path)), robot))
        return cfg

    def replace(self, **over) -> "ScenarioConfig":
        return ScenarioConfig(_merge(self.data, over))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def resolved(self) -> dict:
        d = self.to_dict()
        if d["z_d"] is None:
            p = self.z_d()
            d["z_d"] = {"position": p.position.tolist(), "quaternion": p.quaternion.tolist()}
        if d["torque_limits"]["tau_min"] is None:
            d["torque_limits"]["tau_min"] = (-np.asarray(d["torque_limits"]["tau_max"], float)).tolist()
        return d

    # -- typed views --------------------------------------------------------
    @property
    def n(self):
        return len(self.data["q0"])

    @property
    def steps(self):
        return int(round(self.data["duration"] / self.data["dt"]))

    def true_model(self):
        return rbd.load_model(self.data["robot"])

    def estimated_model(self, true_model=None):
        m = self.data["mismatch"]
        return rbd.perturb_model(true_model or self.true_model(), float(m["level"]), int(m["seed"]))

    def limits(self):
        j = self.data["joint_limits"]
        return safety.JointLimits.from_degrees_rpm(j["kinds"], j["q_max_deg"], j["qd_max_rpm"])

    def torque_limits(self):
        t = self.data["torque_limits"]
        tau_max = _vec(t["tau_max"], self.n, "tau_max")
        tau_min = -tau_max if t["tau_min"] is None else _vec(t["tau_min"], self.n, "tau_min")
        return tau_min, tau_max

    def friction(self):
        f = self.data["friction"]
        n = self.n
        return plant.FrictionParams(_vec(f["f_c"], n, "f_c"), _vec(f["f_s"], n, "f_s"),
                                    _vec(f["f_v"], n, "f_v"), _vec(f["v_s"], n, "v_s"), f["kappa_f"])

    def wrench(self):
        w = self.data["wrench"]
        return plant.WrenchProfile(w["peak"], tuple(w["window"]), w["width"])

    def z_d(self, model=None):
        z = self.data["z_d"]
        if z is None:
            return rbd.forward_kinematics(model or self.true_model(), np.asarray(self.data["q0"], float))
        return rbd.Pose(np.asarray(z["position"], float), np.asarray(z["quaternion"], float))

    def controller_config(self, model_hat, z_d=None, mode=None) -> ControllerConfig:
        d = self.data
        n = self.n
        tau_min, tau_max = self.torque_limits()
        imp = d["impedance"]
        dls = d["dls"]
        s = d["safety"]
        a = d["adapt"]
        return ControllerConfig(
            mode=mode or d["mode"],
            model_hat=model_hat,
            limits=self.limits(),
            tau_min=tau_min,
            tau_max=tau_max,
            z_d=z_d or self.z_d(),
            safety=safety.SafetyConfig(**s),
            impedance=ImpedanceParams(np.diag(imp["M_d"]), np.diag(imp["B_d"]), np.diag(imp["K_d"])),
            dls=DlsConfig(dls["k_max"], dls["alpha_s"], dls["sigma_low"], dls["sigma_high"],
                          np.diag(_vec(dls["k_damp"], n, "k_damp"))),
            gains=adapt.AdaptGains(n=n, alpha_o=s["alpha_o"], **a),
            fls=adapt.FlsConfig(n_joints=n, **{k: (tuple(v) if k == "centers" else v)
                                              for k, v in d["fls"].items()}),
            qp=CommandQpConfig(**d["qp"]),
            log_fmax=bool(d["log_fmax"]),
        )

    def validate(self):
        d = self.data
        if not d["dt"] > 0 or not d["duration"] > 0:
            raise ConfigError("dt and duration must be positive")
        if abs(d["duration"] / d["dt"] - self.steps) > 1e-9 * self.steps:
            raise ConfigError("duration must be a multiple of dt")
        n = self.n
        if len(d["qd0"]) != n:
            raise ConfigError("q0 and qd0 must have the same length")
        lvl = d["mismatch"]["level"]
        if not 0 <= lvl <= 0.9:
            raise ConfigError("mismatch level must lie in [0, 0.9]")
        lim = self.limits()
        if lim.n != n:
            raise ConfigError("joint limit table must have one entry per joint")
        self.torque_limits()
        h = safety.min_ncbf(np.asarray(d["q0"], float), np.asarray(d["qd0"], float), lim, d["safety"]["l"])
        if h < 0:
            raise ConfigError(f"initial state lies outside the safe set (min barrier {h:.3g})")
        if len(d["sign_window"]) != 2:
            raise ConfigError("sign_window must be [t0, t1]")


PRESETS = {
    "nominal": {},
    "sweep": {"name": "sweep"},
    "bursting": {"name": "bursting", "torque_limits": {"tau_max": [22.5] * 4 + [13.0] * 3}},
    "infeasible": {"name": "infeasible", "torque_limits": {"tau_max": [15.0] * 4 + [13.0] * 3},
                   "log_fmax": True},
}


def preset(name, **over) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'")
    cfg = ScenarioConfig.from_dict(PRESETS[name])
    return cfg.replace(**over) if over else cfg


# ---------------------------------------------------------------------------
# traces

def trace_columns(n):
    cols = ["t"]
    for prefix in ("q", "qd", "q_ref", "qd_ref", "q_imp", "qd_imp", "u", "s", "r", "r_imp", "qdd_cmd"):
        cols += [f"{prefix}_{i + 1}" for i in range(n)]
    cols += ["min_h", "min_h_v", "min_h_p", "F_h_norm", "F_max", "imp_err", "f_theta",
             "hard_feasible", "qp_iter", "qp_kkt"]
    return cols


UNITS = ("# units: t s; q,q_ref,q_imp rad; qd,qd_ref,qd_imp rad/s; u,s N*m; r,r_imp rad/s; "
         "qdd_cmd rad/s^2; F_h_norm,F_max N; imp_err m (position) stacked with quaternion "
         "vector part; min_h mixed (rad/s for velocity joints, dimensionless for position joints); "
         "hard_feasible 1/0/nan")


@dataclass
class Trace:
    columns: dict
    n: int
    config: dict
    fault: str | None = None
    summary: dict | None = None

    @property
    def rows(self):
        return len(self.columns["t"])

    def block(self, prefix):
        return np.column_stack([self.columns[f"{prefix}_{i + 1}"] for i in range(self.n)])

    def to_csv(self, path=None) -> str:
        cols = trace_columns(self.n)
        buf = io.StringIO()
        buf.write(UNITS + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        data = [self.columns[c] for c in cols]
        for k in range(self.rows):
            w.writerow([repr(float(col[k])) for col in data])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, config=None):
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
        arr = np.array(rows, float).reshape(len(rows), len(header))
        columns = {h: arr[:, i].copy() for i, h in enumerate(header)}
        n = sum(1 for h in header if h.startswith("q_") and h[2:].isdigit())
        return cls(columns, n, config or {})


def _record(buf, t, y, layout, diag, F_h, z_true, n):
    x_ref = y[layout["x_ref"]]
    vals = {"t": t}
    blocks = {
        "q": y[layout["q"]], "qd": y[layout["qd"]], "q_ref": x_ref[:n], "qd_ref": x_ref[n:],
        "q_imp": y[layout["q_imp"]], "qd_imp": y[layout["qd_imp"]], "u": diag.u, "s": diag.s_star,
        "r": diag.r, "r_imp": diag.r_imp, "qdd_cmd": diag.qdd_cmd,
    }
    for prefix, v in blocks.items():
        for i in range(n):
            vals[f"{prefix}_{i + 1}"] = float(v[i])
    vals.update(
        min_h=diag.min_h, min_h_v=diag.min_h_v, min_h_p=diag.min_h_p,
        F_h_norm=float(np.linalg.norm(F_h[:3])), F_max=diag.F_max,
        imp_err=float(np.linalg.norm(task_error(diag.z_imp, z_true))), f_theta=diag.f_theta,
        hard_feasible=math.nan if diag.hard_feasible is None else float(diag.hard_feasible),
        qp_iter=float(diag.qp_iterations), qp_kkt=float(diag.qp_kkt),
    )
    for k, v in vals.items():
        buf[k].append(v)


def run_scenario(cfg: ScenarioConfig, mode=None) -> Trace:
    """Simulate one scenario; faults stop the run and are recorded on the trace."""
    true_model = cfg.true_model()
    model_hat = cfg.estimated_model(true_model)
    z_d = cfg.z_d(true_model)
    ccfg = cfg.controller_config(model_hat, z_d, mode)
    ctrl = Controller(ccfg)
    L = ctrl.layout
    n = cfg.n
    fric = cfg.friction()
    wrench = cfg.wrench()
    dt = float(cfg.data["dt"])

    def derivative(t, y, record=False):
        F_h = plant.wrench_at(t, wrench)
        u, dyc, diag = ctrl.evaluate(y, F_h, diagnostics=record)
        qd, qdd = plant.plant_derivative(true_model, plant.JointState(y[L["q"]], y[L["qd"]]), u, F_h, fric)
        return np.concatenate([qd, qdd, dyc]), diag, F_h

    y = ctrl.initial_state(cfg.data["q0"], cfg.data["qd0"])
    cols = trace_columns(n)
    buf = {c: [] for c in cols}
    fault = None
    try:
        for k in range(cfg.steps):
            t = k * dt
            k1, diag, F_h = derivative(t, y, record=True)
            z_true = rbd.forward_kinematics(true_model, y[L["q"]])
            _record(buf, t, y, L, diag, F_h, z_true, n)
            y = plant.rk4_step(lambda tt, yy: derivative(tt, yy)[0], y, t, dt, names=L.label, k1=k1)
    except SafeImpError as exc:
        fault = f"{type(exc).__name__}: {exc}"
    resolved = cfg.resolved()
    resolved["mode"] = ccfg.mode
    trace = Trace({c: np.asarray(v, float) for c, v in buf.items()}, n, resolved, fault)
    trace.summary = compute_metrics(trace)
    trace.summary["qp_solves"] = ctrl.qp_solves
    trace.summary["qp_iterations"] = ctrl.qp_iterations
    return trace


# ---------------------------------------------------------------------------
# metrics

def sign_changes(x, deadband=SIGN_DEADBAND) -> int:
    """Reversals of direction in a sampled signal, ignoring increments below ``deadband``."""
    d = np.diff(np.asarray(x, float))
    d = d[np.abs(d) > deadband]
    if d.size < 2:
        return 0
    return int(np.count_nonzero(np.sign(d[1:]) != np.sign(d[:-1])))


def _intervals(t, mask):
    out = []
    start = None
    for ti, m in zip(t, mask):
        if m and start is None:
            start = ti
        if not m and start is not None:
            out.append([float(start), float(prev)])
            start = None
        prev = ti
    if start is not None:
        out.append([float(start), float(prev)])
    return out


def compute_metrics(trace: Trace, tau_min=None, tau_max=None, sign_window=None) -> dict:
    c = trace.columns
    n = trace.n
    t = np.asarray(c["t"], float)
    if t.size == 0:
        return {"rows": 0, "fault": trace.fault}
    cfgd = trace.config or {}
    if tau_max is None and cfgd:
        tl = cfgd["torque_limits"]
        tau_max = np.asarray(tl["tau_max"], float)
        tau_min = -tau_max if tl.get("tau_min") is None else np.asarray(tl["tau_min"], float)
    if sign_window is None:
        sign_window = cfgd.get("sign_window", [5.0, 8.0])
    u = trace.block("u")
    s = trace.block("s")
    r = trace.block("r")
    err = np.asarray(c["imp_err"], float)

    if tau_max is not None:
        over = np.maximum(u - tau_max, tau_min - u)
        worst = over.max(axis=1)
        viol_rows = worst > VIOLATION_TOL
        n_viol = int(viol_rows.sum())
        max_viol = float(max(worst.max(), 0.0))
        viol_joint = [int(v) for v in (over > VIOLATION_TOL).sum(axis=0)]
    else:
        viol_rows = np.zeros(t.size, bool)
        n_viol, max_viol, viol_joint = 0, 0.0, [0] * n

    s_inf = s.max(axis=1) if s.size else np.zeros(t.size)
    win = (t >= sign_window[0]) & (t <= sign_window[1])
    hard = np.asarray(c["hard_feasible"], float)
    certified = hard == 1.0
    fh = np.asarray(c["F_h_norm"], float)
    fmax = np.asarray(c["F_max"], float)
    infeasible = np.isfinite(fmax) & (fh > fmax)
    r_norm = np.linalg.norm(r, axis=1)
    du = np.abs(np.diff(u, axis=0)).max(axis=1) if t.size > 1 else np.zeros(0)

    def at(time):
        k = int(np.argmin(np.abs(t - time)))
        return float(r_norm[k])

    late = t >= t[-1] - 0.5
    return {
        "rows": int(t.size),
        "fault": trace.fault,
        "rms_imp_error": float(np.sqrt(np.mean(err ** 2))),
        "max_imp_error": float(err.max()),
        "min_h": float(np.min(c["min_h"])),
        "min_h_v": float(np.min(c["min_h_v"])),
        "min_h_p": float(np.min(c["min_h_p"])),
        "barrier_violations": int(np.count_nonzero(np.asarray(c["min_h"]) < 0)),
        "torque_violations": n_viol,
        "torque_violations_per_joint": viol_joint,
        "max_torque_violation": max_viol,
        "max_slack": float(s_inf.max()),
        "slack_active_steps": int(np.count_nonzero(s_inf > VIOLATION_TOL)),
        "certified_steps": int(certified.sum()),
        "certified_with_slack": int(np.count_nonzero(certified & (s_inf > VIOLATION_TOL))),
        "certified_with_violation": int(np.count_nonzero(certified & viol_rows)),
        "sign_changes": [sign_changes(u[win, i]) for i in range(n)],
        "max_torque_increment": float(du.max()) if du.size else 0.0,
        "max_r_norm": float(r_norm.max()),
        "r_norm_t7": at(7.0),
        "r_norm_late_max": float(r_norm[late].max()),
        "infeasible_steps": int(infeasible.sum()),
        "infeasible_with_slack": int(np.count_nonzero(infeasible & (s_inf > VIOLATION_TOL))),
        "infeasible_intervals": _intervals(t, infeasible),
        "min_F_max": float(np.nanmin(fmax)) if np.any(np.isfinite(fmax)) else None,
        "max_qp_kkt": float(np.max(c["qp_kkt"])),
        "max_f_theta": float(np.max(c["f_theta"])),
    }


# ---------------------------------------------------------------------------
# batch runs

def _run_job(args):
    data, mode = args
    tr = run_scenario(ScenarioConfig(data), mode)
    return tr


def run_many(jobs, workers=None):
    """Run (config, mode) jobs, in parallel when more than one worker is available."""
    payload = [(cfg.to_dict(), mode) for cfg, mode in jobs]
    workers = workers or min(len(payload), os.cpu_count() or 1)
    if workers <= 1 or len(payload) <= 1:
        return [_run_job(p) for p in payload]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_job, payload))


def sweep_mismatch(base: ScenarioConfig, levels, seeds=(0, 1, 2), workers=None):
    """RMS impedance error per (level, seed)."""
    levels = [float(v) for v in levels]
    if any(not 0 <= v <= 0.7 + 1e-12 for v in levels):
        raise ConfigError("sweep levels must lie in [0, 0.7]")
    jobs, keys = [], []
    for lv in levels:
        # an unperturbed model does not depend on the seed: simulate it once
        for sd in (seeds[:1] if lv == 0.0 else seeds):
            jobs.append((base.replace(mismatch={"level": lv, "seed": int(sd)}), None))
            keys.append((lv, int(sd)))
    traces = run_many(jobs, workers)
    rows = []
    for (lv, sd), tr in zip(keys, traces):
        for s in (seeds if lv == 0.0 else [sd]):
            rows.append({"level": lv, "seed": int(s), "rms_imp_error": tr.summary["rms_imp_error"],
                         "fault": tr.fault})
    return rows


def sweep_table(rows):
    """Mean RMS per level, in level order."""
    levels = sorted({r["level"] for r in rows})
    return [(lv, float(np.mean([r["rms_imp_error"] for r in rows if r["level"] == lv]))) for lv in levels]


def write_outputs(trace: Trace, out_dir, stem="trace"):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    trace.to_csv(csv_path)
    with open(os.path.join(out_dir, f"{stem}_summary.json"), "w") as fh:
        json.dump(trace.summary, fh, indent=1)
    with open(os.path.join(out_dir, f"{stem}_config.json"), "w") as fh:
        json.dump(trace.config, fh, indent=1)
    return csv_path
