"""Per-step assembly of the safe adaptive impedance controller and its baselines.

Modes
-----
``proposed``  adaptation driven by the reference-model error ``r``
``aworm``     identical pipeline, adaptation driven by the impedance error ``r_imp``
``nic``       nominal impedance control on the estimated model, no compensators, no QP

All controller states (impedance trajectory, FLS weights, SMC bound, observer
states, reference model) live in one flat vector next to the plant state so a
single RK4 step advances everything consistently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adapt, impedance, optim, rbd, safety
from .errors import ConfigError
from .impedance import DlsConfig, ImpedanceParams, ImpedanceTrajectory
from .optim import CommandQpConfig
from .safety import JointLimits, SafetyConfig

MODES = ("proposed", "nic", "aworm")


@dataclass(frozen=True)
class ControllerConfig:
    mode: str
    model_hat: rbd.RobotModel
    limits: JointLimits
    tau_min: np.ndarray
    tau_max: np.ndarray
    z_d: rbd.Pose
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    impedance: ImpedanceParams = field(default_factory=ImpedanceParams)
    dls: DlsConfig = field(default_factory=DlsConfig)
    gains: adapt.AdaptGains = field(default_factory=adapt.AdaptGains)
    fls: adapt.FlsConfig = field(default_factory=adapt.FlsConfig)
    qp: CommandQpConfig = field(default_factory=CommandQpConfig)
    log_fmax: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        n = self.model_hat.n
        tau_min = np.broadcast_to(np.asarray(self.tau_min, float), (n,)).copy()
        tau_max = np.broadcast_to(np.asarray(self.tau_max, float), (n,)).copy()
        if np.any(tau_min >= tau_max):
            raise ConfigError("torque limits need tau_min < tau_max")
        object.__setattr__(self, "tau_min", tau_min)
        object.__setattr__(self, "tau_max", tau_max)
        if self.limits.n != n or self.gains.n != n or self.fls.n_joints != n:
            raise ConfigError("limits, gains and FLS must match the robot's joint count")
        if self.dls.K_damp.shape != (n, n):
            raise ConfigError("null-space damping must be n x n")
        if not np.isclose(self.gains.alpha_o, self.safety.alpha_o):
            raise ConfigError("safety observer gain differs between safety and adaptation blocks")
        object.__setattr__(self, "_margin", safety.robust_margin(self.safety, self.limits))

    @property
    def n(self):
        return self.model_hat.n


class StateLayout:
    """Slices of the packed vector [q, qd, q_imp, qd_imp, theta, w_hat, ell_c, ell_o, x_ref]."""

    def __init__(self, n, n_params):
        self.n, self.n_params = n, n_params
        off = 0
        spans = {}
        for name, size in (("q", n), ("qd", n), ("q_imp", n), ("qd_imp", n), ("theta", n_params),
                           ("w_hat", n), ("ell_c", n), ("ell_o", n), ("x_ref", 2 * n)):
            spans[name] = slice(off, off + size)
            off += size
        self.spans = spans
        self.size = off

    def __getitem__(self, name):
        return self.spans[name]

    def label(self, idx):
        for name, sl in self.spans.items():
            if sl.start <= idx < sl.stop:
                return f"{name}[{idx - sl.start}]"
        return str(idx)


@dataclass
class ControllerState:
    adapt: adapt.AdaptState
    imp_traj: ImpedanceTrajectory
    warm_active: tuple = ()
    mode: str = "proposed"


@dataclass
class StepDiagnostics:
    u: np.ndarray
    qdd_cmd: np.ndarray
    qdd_nom: np.ndarray
    qdd_imp: np.ndarray
    qdd_s: np.ndarray
    s_star: np.ndarray
    r: np.ndarray
    r_imp: np.ndarray
    d_hat_c: np.ndarray
    d_hat_o: np.ndarray
    f_hat: np.ndarray
    tau_base: np.ndarray
    tau_h: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    min_h: float
    min_h_v: float
    min_h_p: float
    f_theta: float
    F_max: float = float("nan")
    hard_feasible: bool | None = None
    qp_iterations: int = 0
    qp_kkt: float = 0.0
    z_imp: rbd.Pose | None = None


def initial_state(cfg: ControllerConfig, q0, qd0) -> np.ndarray:
    """Packed initial vector: impedance trajectory at the plant state, learners at rest."""
    q0 = np.asarray(q0, float)
    qd0 = np.asarray(qd0, float)
    a0 = adapt.AdaptState.initial(q0, qd0, cfg.gains, cfg.fls)
    return np.concatenate([q0, qd0, q0, qd0, a0.pack()])


def unpack(cfg: ControllerConfig, layout: StateLayout, y) -> ControllerState:
    st = adapt.AdaptState(y[layout["theta"]], y[layout["w_hat"]], y[layout["ell_c"]],
                          y[layout["ell_o"]], y[layout["x_ref"]])
    return ControllerState(st, ImpedanceTrajectory(y[layout["q_imp"]], y[layout["qd_imp"]]),
                           mode=cfg.mode)


def nominal_accel(q, qd, traj: ImpedanceTrajectory, qdd_imp, gains: adapt.AdaptGains) -> np.ndarray:
    return qdd_imp + gains.K_v * (traj.qd_imp - qd) + gains.K_p * (traj.q_imp - q)


def base_torque_terms(tau_h, Cqd_hat, G_hat, M_hat, qdd_s, d_hat_c, f_hat) -> np.ndarray:
    return tau_h - Cqd_hat - G_hat - M_hat @ (qdd_s - d_hat_c - f_hat)


def base_torque(q, qd, F_h, model_hat, qdd_s, d_hat_c, f_hat) -> np.ndarray:
    t = rbd.dynamics_terms(model_hat, q, qd)
    return base_torque_terms(t.J.T @ np.asarray(F_h, float), t.C @ qd, t.G, t.M, qdd_s, d_hat_c, f_hat)


class Controller:
    """Evaluates torque and controller-state derivatives for one mode."""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.layout = StateLayout(cfg.n, cfg.fls.n_params)
        self.warm_active: tuple = ()
        self.qp_solves = 0
        self.qp_iterations = 0

    def initial_state(self, q0, qd0):
        return initial_state(self.cfg, q0, qd0)

    def evaluate(self, y, F_h, diagnostics=False):
        """Return (u, d/dt of controller states, diagnostics or None)."""
        cfg, L = self.cfg, self.layout
        q, qd = y[L["q"]], y[L["qd"]]
        traj = ImpedanceTrajectory(y[L["q_imp"]], y[L["qd_imp"]])
        g = cfg.gains

        pose_imp, J_imp, Jd_imp = rbd.kinematics(cfg.model_hat, traj.q_imp, traj.qd_imp)
        imp = impedance.impedance_step(cfg.z_d, traj, pose_imp, J_imp, Jd_imp, F_h,
                                       cfg.impedance, cfg.dls)
        qdd_nom = nominal_accel(q, qd, traj, imp.qdd_imp, g)
        dyn = rbd.dynamics_terms(cfg.model_hat, q, qd)
        tau_h = dyn.J.T @ F_h
        Cqd = dyn.C @ qd

        theta, w_hat = y[L["theta"]], y[L["w_hat"]]
        ell_c, ell_o, x_ref = y[L["ell_c"]], y[L["ell_o"]], y[L["x_ref"]]
        n = cfg.n
        e = x_ref[:n] - q
        ed = x_ref[n:] - qd
        r = adapt.filtered_error(e, ed, g.Lambda)
        r_imp = adapt.filtered_error(traj.q_imp - q, traj.qd_imp - qd, g.Lambda)

        # full-length buffer; the plant block is dropped on return
        dy = np.zeros(L.size)
        dy[L["q_imp"]] = traj.qd_imp
        dy[L["qd_imp"]] = imp.qdd_imp

        if cfg.mode == "nic":
            u = dyn.M @ qdd_nom + Cqd + dyn.G - tau_h
            dy[L["x_ref"]] = adapt.reference_model_derivative(x_ref, qdd_nom, q, qd, g)
            diag = None
            if diagnostics:
                zeros = np.zeros(n)
                hv, hp = safety.min_ncbf_by_family(q, qd, cfg.limits, cfg.safety.l)
                diag = StepDiagnostics(
                    u, qdd_nom, qdd_nom, imp.qdd_imp, zeros, zeros.copy(), r, r_imp, zeros, zeros,
                    zeros, dyn.M @ qdd_nom - u, tau_h, np.full(n, -np.inf), np.full(n, np.inf),
                    min(hv, hp), hv, hp, adapt.projection_function(theta, g), z_imp=pose_imp)
            return u, dy[2 * n:], diag

        qdd_s = adapt.smc_accel(r, w_hat, g)
        d_hat_c, d_hat_o = adapt.dob_outputs(ell_c, ell_o, qd, g)
        xi_bar = qdd_s - d_hat_c
        X = adapt.fls_inputs(q, qd, xi_bar, cfg.limits.qd_max, cfg.fls)
        zeta = adapt.it2_regressor(X, cfg.fls)
        f_hat = adapt.fls_output_blocks(zeta, theta)
        tau_base = base_torque_terms(tau_h, Cqd, dyn.G, dyn.M, qdd_s, d_hat_c, f_hat)

        lower, upper = safety.robust_bounds(q, qd, cfg.limits, cfg.safety, qdd_s, d_hat_o, cfg._margin)
        prob = optim.build_command_qp(qdd_nom, lower, upper, dyn.M, tau_base, cfg.tau_min, cfg.tau_max, cfg.qp)
        sol = optim.solve_qp(prob, warm_active=self.warm_active)
        if sol.status != optim.OPTIMAL:
            raise optim.SolverError(f"command QP returned status {sol.status}", **sol.residuals)
        self.warm_active = sol.active
        self.qp_solves += 1
        self.qp_iterations += sol.iterations
        qdd_cmd = sol.z[:n]
        s_star = sol.z[n:]
        u = dyn.M @ qdd_cmd - tau_base

        r_adapt = r_imp if cfg.mode == "aworm" else r
        dy[L["theta"]] = adapt.proj_update(theta, -adapt.regressor_times(zeta, r_adapt), g, cfg.fls.block)
        dy[L["w_hat"]] = adapt.w_update(w_hat, r_adapt, g)
        dl_c, dl_o = adapt.dob_state_derivatives(qdd_cmd, qdd_s, d_hat_o, g)
        dy[L["ell_c"]] = dl_c
        dy[L["ell_o"]] = dl_o
        dy[L["x_ref"]] = adapt.reference_model_derivative(x_ref, qdd_cmd, q, qd, g)

        diag = None
        if diagnostics:
            hv, hp = safety.min_ncbf_by_family(q, qd, cfg.limits, cfg.safety.l)
            hard = optim.hard_torque_feasible(lower, upper, dyn.M, tau_base, cfg.tau_min, cfg.tau_max)
            f_max = float("nan")
            if cfg.log_fmax:
                f_max = optim.wrench_feasibility(lower, upper, dyn.M, dyn.J, tau_base - tau_h,
                                                 cfg.tau_min, cfg.tau_max)
            diag = StepDiagnostics(
                u, qdd_cmd, qdd_nom, imp.qdd_imp, qdd_s, s_star, r, r_imp, d_hat_c, d_hat_o, f_hat,
                tau_base, tau_h, lower, upper, min(hv, hp), hv, hp,
                adapt.projection_function(theta, g), f_max, hard, sol.iterations, sol.kkt_residual,
                z_imp=pose_imp)
        return u, dy[2 * n:], diag


def proposed_step(ctrl: Controller, y, F_h):
    """(u, diagnostics, controller-state derivatives) for the proposed law."""
    if ctrl.cfg.mode != "proposed":
        raise ConfigError("controller is not in proposed mode")
    u, dy, diag = ctrl.evaluate(y, F_h, diagnostics=True)
    return u, diag, dy


def aworm_step(ctrl: Controller, y, F_h):
    if ctrl.cfg.mode != "aworm":
        raise ConfigError("controller is not in aworm mode")
    u, dy, diag = ctrl.evaluate(y, F_h, diagnostics=True)
    return u, diag, dy


def nic_step(ctrl: Controller, y, F_h):
    if ctrl.cfg.mode != "nic":
        raise ConfigError("controller is not in nic mode")
    u, _, diag = ctrl.evaluate(y, F_h, diagnostics=True)
    return u, diag
