"""Ground-truth plant: true dynamics, joint friction, interaction wrench, RK4."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rbd
from .errors import ConfigError, PlantFault

COND_LIMIT = 1e12


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qd = np.asarray(self.qd, dtype=float)
        if q.shape != qd.shape:
            raise ValueError("q and qd must have the same shape")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise PlantFault("joint state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)


@dataclass(frozen=True)
class FrictionParams:
    """Smooth Coulomb/Stribeck/viscous friction, one entry per joint."""

    f_c: np.ndarray
    f_s: np.ndarray
    f_v: np.ndarray
    v_s: np.ndarray
    kappa_f: float = 25.0

    def __post_init__(self):
        for name in ("f_c", "f_s", "f_v", "v_s"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.f_c < 0) or np.any(self.f_s < self.f_c):
            raise ConfigError("friction needs f_s >= f_c >= 0")
        if np.any(self.f_v < 0) or np.any(self.v_s <= 0) or not self.kappa_f > 0:
            raise ConfigError("friction needs f_v >= 0, v_s > 0, kappa_f > 0")

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), np.ones(n), 25.0)


@dataclass(frozen=True)
class WrenchProfile:
    """Half-sine pulse with a Gaussian envelope on [t0, t1]."""

    peak: np.ndarray
    window: tuple = (5.0, 7.0)
    width: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "peak", np.asarray(self.peak, dtype=float).reshape(6))
        t0, t1 = self.window
        if not t1 > t0:
            raise ConfigError("wrench window needs t1 > t0")
        object.__setattr__(self, "window", (float(t0), float(t1)))
        if self.width is None:
            object.__setattr__(self, "width", (t1 - t0) / 4.0)
        if not self.width > 0:
            raise ConfigError("envelope width must be positive")


def friction_torque(qd, p: FrictionParams) -> np.ndarray:
    qd = np.asarray(qd, dtype=float)
    stribeck = p.f_c + (p.f_s - p.f_c) * np.exp(-(qd / p.v_s) ** 2)
    return stribeck * np.tanh(p.kappa_f * qd) + p.f_v * qd


def wrench_at(t: float, w: WrenchProfile) -> np.ndarray:
    t0, t1 = w.window
    if t < t0 or t > t1:
        return np.zeros(6)
    mid = 0.5 * (t0 + t1)
    shape = np.sin(np.pi * (t - t0) / (t1 - t0)) * np.exp(-(((t - mid) / w.width) ** 2))
    return w.peak * shape


def joint_acceleration(M, C, G, qd, u, tau_h, tau_fric) -> np.ndarray:
    """Solve M qdd = u + tau_h - C qd - G - tau_fric."""
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        raise PlantFault(f"mass matrix is singular or indefinite (eigenvalues {ev[0]:.3e}..{ev[-1]:.3e})")
    rhs = u + tau_h - C @ qd - G - tau_fric
    return np.linalg.solve(M, rhs)


def plant_derivative(model, x: JointState, u, F_h, p: FrictionParams):
    """Return (qd, qdd) of the true manipulator under torque u and wrench F_h."""
    terms = rbd.dynamics_terms(model, x.q, x.qd)
    tau_h = terms.J.T @ np.asarray(F_h, dtype=float)
    qdd = joint_acceleration(terms.M, terms.C, terms.G, x.qd, np.asarray(u, dtype=float),
                             tau_h, friction_torque(x.qd, p))
    return x.qd.copy(), qdd


def rk4_step(derivative, state, t: float, dt: float, names=None, k1=None):
    """One classical Runge-Kutta step of ``state' = derivative(t, state)``.

    ``names`` optionally maps state indices to labels used in fault messages;
    ``k1`` may carry an already evaluated first stage.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)

    def f(tt, yy):
        dy = np.asarray(derivative(tt, yy), dtype=float)
        bad = ~np.isfinite(dy)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            label = names(idx) if callable(names) else (names[idx] if names is not None else idx)
            raise PlantFault(f"non-finite derivative at t={tt:.4f} in component {label}")
        return dy

    k1 = f(t, state) if k1 is None else k1
    k2 = f(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = f(t + dt, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
