"""Non-smooth barrier functions for joint position/velocity limits.

Velocity-only joints use ``h_v = min(qd_max - qd, qd_max + qd)``. Joints with
both limits use the composed barrier

    h_p = min(1 - R1(q/q_max)^l - R1(qd/qd_max),
              1 - R2(q/q_max)^l - R2(qd/qd_max)),

with ``R1 = max(0, .)`` and ``R2 = max(0, -.)``, which has relative degree one
in the joint acceleration. Both translate into a per-joint acceleration box
``alpha_A <= qdd <= alpha_B``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateBoxError

VELOCITY = "velocity"
POSITION = "position"


@dataclass(frozen=True)
class JointLimits:
    """Per-joint limits; ``q_max`` entries of velocity-only joints are ignored."""

    kinds: tuple
    q_max: np.ndarray
    qd_max: np.ndarray

    def __post_init__(self):
        kinds = tuple(self.kinds)
        if any(k not in (VELOCITY, POSITION) for k in kinds):
            raise ConfigError(f"joint kinds must be '{VELOCITY}' or '{POSITION}'")
        q_max = np.asarray(self.q_max, dtype=float)
        qd_max = np.asarray(self.qd_max, dtype=float)
        if not (len(kinds) == len(q_max) == len(qd_max)):
            raise ConfigError("limit arrays must have one entry per joint")
        pos = np.array([k == POSITION for k in kinds])
        if np.any(qd_max <= 0) or np.any(q_max[pos] <= 0):
            raise ConfigError("limits must be strictly positive")
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "q_max", np.where(pos, q_max, np.inf))
        object.__setattr__(self, "qd_max", qd_max)
        object.__setattr__(self, "pos_mask", pos)

    @property
    def n(self):
        return len(self.kinds)

    @property
    def J_v(self):
        return np.flatnonzero(~self.pos_mask)

    @property
    def J_p(self):
        return np.flatnonzero(self.pos_mask)

    @classmethod
    def from_degrees_rpm(cls, kinds, q_max_deg, qd_max_rpm):
        return cls(kinds, np.deg2rad(np.asarray(q_max_deg, float)),
                   np.asarray(qd_max_rpm, float) * 2.0 * np.pi / 60.0)


@dataclass(frozen=True)
class SafetyConfig:
    l: int = 6
    gamma_v: float = 10.0
    gamma_p: float = 10.0
    nu: float = 40.0
    beta: float = 35.0
    omega1_bar: float = 75.0
    alpha_o: float = 80.0

    def __post_init__(self):
        if self.l < 2 or self.l % 2:
            raise ConfigError("l must be an even integer >= 2")
        if not 0 < self.nu < 2 * self.alpha_o:
            raise ConfigError("need 0 < nu < 2 alpha_o")
        if not 0 < max(self.gamma_v, self.gamma_p) < 2 * self.alpha_o - self.nu:
            raise ConfigError("need 0 < max(gamma_v, gamma_p) < 2 alpha_o - nu")
        if min(self.gamma_v, self.gamma_p) <= 0 or self.beta <= 0 or self.omega1_bar < 0:
            raise ConfigError("gamma, beta must be positive and omega1_bar non-negative")


def _r1(x):
    return np.maximum(0.0, x)


def _r2(x):
    return np.maximum(0.0, -x)


def ncbf_velocity_parts(qd, qd_max):
    return qd_max - qd, qd_max + qd


def ncbf_velocity(qd, qd_max):
    h1, h2 = ncbf_velocity_parts(qd, qd_max)
    return np.minimum(h1, h2)


def ncbf_position_parts(q, qd, q_max, qd_max, l):
    rho = np.asarray(q, float) / q_max
    v = np.asarray(qd, float) / qd_max
    return 1.0 - _r1(rho) ** l - _r1(v), 1.0 - _r2(rho) ** l - _r2(v)


def ncbf_position(q, qd, q_max, qd_max, l):
    h1, h2 = ncbf_position_parts(q, qd, q_max, qd_max, l)
    return np.minimum(h1, h2)


def joint_barriers(q, qd, limits: JointLimits, l: int) -> np.ndarray:
    """Per-joint barrier value (velocity or composed position barrier)."""
    q = np.asarray(q, float)
    qd = np.asarray(qd, float)
    hv = ncbf_velocity(qd, limits.qd_max)
    q_max = np.where(limits.pos_mask, limits.q_max, 1.0)
    hp = ncbf_position(q, qd, q_max, limits.qd_max, l)
    return np.where(limits.pos_mask, hp, hv)


def min_ncbf(q, qd, limits: JointLimits, l: int) -> float:
    return float(np.min(joint_barriers(q, qd, limits, l)))


def min_ncbf_by_family(q, qd, limits: JointLimits, l: int):
    """(min over velocity-only joints, min over position joints); inf for an empty family."""
    h = joint_barriers(q, qd, limits, l)
    hv = h[~limits.pos_mask]
    hp = h[limits.pos_mask]
    return (float(hv.min()) if hv.size else math.inf, float(hp.min()) if hp.size else math.inf)


def accel_bounds(q, qd, limits: JointLimits, cfg: SafetyConfig):
    """Acceleration box ``(alpha_A, alpha_B)`` rendering the barriers invariant."""
    q = np.asarray(q, float)
    qd = np.asarray(qd, float)
    qd_max = limits.qd_max
    hv1, hv2 = ncbf_velocity_parts(qd, qd_max)
    a_v = -cfg.gamma_v * hv2
    b_v = cfg.gamma_v * hv1

    q_max = np.where(limits.pos_mask, limits.q_max, 1.0)
    l = cfg.l
    hp1, hp2 = ncbf_position_parts(q, qd, q_max, qd_max, l)
    rho = q / q_max
    drift = l * qd / q_max
    a_p = qd_max * (-drift * _r2(rho) ** (l - 1) - cfg.gamma_p * hp2)
    b_p = qd_max * (-drift * _r1(rho) ** (l - 1) + cfg.gamma_p * hp1)
    pos = limits.pos_mask
    return np.where(pos, a_p, a_v), np.where(pos, b_p, b_v)


def robust_margin(cfg: SafetyConfig, limits: JointLimits) -> np.ndarray:
    """Observer-based acceleration margin, per joint."""
    c1 = cfg.omega1_bar ** 2 / (2.0 * cfg.nu * cfg.beta)
    den_v = 4.0 * cfg.alpha_o - 2.0 * (cfg.nu + cfg.gamma_v)
    den_p = 4.0 * cfg.alpha_o - 2.0 * (cfg.nu + cfg.gamma_p)
    if den_v <= 0 or den_p <= 0:
        raise ConfigError("robust margin diverges: gamma too close to 2 alpha_o - nu")
    qd_max = limits.qd_max
    m_v = c1 + cfg.beta / den_v
    m_p = c1 * qd_max + (cfg.beta / qd_max) / den_p
    return np.where(limits.pos_mask, m_p, m_v)


def robust_bounds(q, qd, limits: JointLimits, cfg: SafetyConfig, qdd_s, d_hat_o, margin=None):
    """Robustified acceleration box; raises DegenerateBoxError if lower > upper."""
    a_A, a_B = accel_bounds(q, qd, limits, cfg)
    marg = robust_margin(cfg, limits) if margin is None else margin
    shift = -np.asarray(qdd_s, float) - np.asarray(d_hat_o, float)
    lower = a_A + shift + marg
    upper = a_B + shift - marg
    bad = np.flatnonzero(lower > upper)
    if bad.size:
        raise DegenerateBoxError(bad, lower, upper)
    return lower, upper


# ---------------------------------------------------------------------------
# tuning analysis

def curvature_constant(l: int) -> float:
    """K(l) = ((l-1)/(2l-1))^((l-1)/l) * l/(2l-1)."""
    return ((l - 1) / (2 * l - 1)) ** ((l - 1) / l) * (l / (2 * l - 1))


def gamma_quadratic(kind, qd_max, q_max, nu, beta, omega1_bar, alpha_o, l):
    """Coefficients (a, b, c) of ``a g^2 + b g + c < 0`` describing feasible gains."""
    c1 = omega1_bar ** 2 / (2.0 * nu * beta)
    c2 = beta / 2.0
    d0 = 2.0 * alpha_o - nu
    if kind == VELOCITY:
        return qd_max, -(qd_max * d0 + c1), c1 * d0 + c2
    c3 = l * qd_max ** 2 * curvature_constant(l) / q_max
    c1b = 2.0 * c1 * qd_max + c3
    return qd_max, -(qd_max * d0 + c1b), c1b * d0 + 2.0 * c2 / qd_max


def gamma_feasible_interval(kind, qd_max, q_max=None, *, nu, beta, omega1_bar, alpha_o, l=6):
    """Open interval of barrier rates keeping the robust box non-degenerate, or None."""
    a, b, c = gamma_quadratic(kind, qd_max, q_max, nu, beta, omega1_bar, alpha_o, l)
    disc = b * b - 4.0 * a * c
    if disc <= 0:
        return None
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    t = -0.5 * (b - sq) if b < 0 else -0.5 * (b + sq)
    r1, r2 = t / a, c / t
    lo, hi = min(r1, r2), max(r1, r2)
    if hi <= 0 or lo >= 2.0 * alpha_o - nu:
        return None
    return lo, hi


def box_width_condition(kind, gamma, qd_max, q_max, nu, beta, omega1_bar, alpha_o, l):
    """Slack of the non-degeneracy inequality (positive means satisfied)."""
    c1 = omega1_bar ** 2 / (2.0 * nu * beta)
    if kind == VELOCITY:
        marg = c1 + beta / (4 * alpha_o - 2 * (nu + gamma))
        return gamma * qd_max - marg
    marg = c1 * qd_max + (beta / qd_max) / (4 * alpha_o - 2 * (nu + gamma))
    return gamma * qd_max - 2.0 * marg - l * qd_max ** 2 / q_max * curvature_constant(l)


def feasibility_report(limits: JointLimits, cfg: SafetyConfig) -> list:
    rows = []
    for i, kind in enumerate(limits.kinds):
        gamma = cfg.gamma_p if kind == POSITION else cfg.gamma_v
        q_max = limits.q_max[i] if kind == POSITION else None
        iv = gamma_feasible_interval(kind, limits.qd_max[i], q_max, nu=cfg.nu, beta=cfg.beta,
                                     omega1_bar=cfg.omega1_bar, alpha_o=cfg.alpha_o, l=cfg.l)
        rows.append({
            "joint": i + 1,
            "kind": kind,
            "gamma": float(gamma),
            "interval": None if iv is None else [float(iv[0]), float(iv[1])],
            "contains_gamma": bool(iv is not None and iv[0] < gamma < iv[1]),
        })
    return rows
