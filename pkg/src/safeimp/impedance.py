"""Task-space impedance model and its joint-space realisation.

The impedance trajectory is generated in joint space: the task-space
impedance acceleration is mapped through an adaptively damped least-squares
(DLS) inverse after removing components along near-singular output
directions, with joint damping injected in the (approximate) null space.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rbd import Pose


def _spd(name, mat):
    mat = np.asarray(mat, dtype=float)
    if not np.allclose(mat, mat.T, atol=1e-12) or np.linalg.eigvalsh(mat).min() <= 0:
        raise ConfigError(f"{name} must be symmetric positive-definite")
    return mat


@dataclass(frozen=True)
class ImpedanceParams:
    M_d: np.ndarray = field(default_factory=lambda: np.eye(6))
    B_d: np.ndarray = field(default_factory=lambda: np.diag([49.0] * 3 + [12.0] * 3))
    K_d: np.ndarray = field(default_factory=lambda: np.diag([49.0] * 3 + [16.0] * 3))

    def __post_init__(self):
        for name in ("M_d", "B_d", "K_d"):
            object.__setattr__(self, name, _spd(name, getattr(self, name)))
        object.__setattr__(self, "_M_inv", np.linalg.inv(self.M_d))


@dataclass(frozen=True)
class DlsConfig:
    k_max: float = 0.01
    alpha_s: float = 50.0
    sigma_low: float = 0.01
    sigma_high: float = 0.05
    K_damp: np.ndarray = field(default_factory=lambda: 5.0 * np.eye(7))

    def __post_init__(self):
        if not 0 < self.sigma_low < self.sigma_high:
            raise ConfigError("DLS thresholds need 0 < sigma_low < sigma_high")
        if not (self.k_max > 0 and self.alpha_s > 0):
            raise ConfigError("DLS needs k_max > 0 and alpha_s > 0")
        object.__setattr__(self, "K_damp", _spd("K_damp", self.K_damp))


@dataclass(frozen=True)
class ImpedanceTrajectory:
    q_imp: np.ndarray
    qd_imp: np.ndarray
    z_imp: Pose | None = None
    zd_imp: np.ndarray | None = None


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(a):
    return np.array([a[0], -a[1], -a[2], -a[3]])


def task_error(z_d: Pose, z: Pose) -> np.ndarray:
    """Position difference stacked over the vector part of ``q_d * q^-1``."""
    qe = quat_mul(z_d.quaternion, quat_conj(z.quaternion))
    if qe[0] < 0:
        qe = -qe
    return np.concatenate([z_d.position - z.position, qe[1:]])


def impedance_accel(e_imp, ed_imp, F_h, p: ImpedanceParams) -> np.ndarray:
    """Second derivative of the virtual error ``z_d - z_imp``."""
    return p._M_inv @ (np.asarray(F_h, float) - p.B_d @ ed_imp - p.K_d @ e_imp)


def singularity_weights(sigmas, cfg: DlsConfig) -> np.ndarray:
    s = np.asarray(sigmas, dtype=float)
    lo, hi = cfg.sigma_low, cfg.sigma_high
    blend = 0.5 * (1.0 + np.cos(np.pi * (np.clip(s, lo, hi) - lo) / (hi - lo)))
    return np.where(s <= lo, 1.0, np.where(s >= hi, 0.0, blend))


def damping_factors(sigmas, cfg: DlsConfig) -> np.ndarray:
    """Per-direction damping ``k_max * 2 / (1 + exp(alpha_s * sigma))``."""
    x = np.minimum(cfg.alpha_s * np.asarray(sigmas, float), 700.0)
    return cfg.k_max * 2.0 / (1.0 + np.exp(x))


def _svd6(J):
    """Full 6x6 U, six singular values (zero-padded) and matching n x 6 V."""
    U, s, Vt = np.linalg.svd(J, full_matrices=True)
    n = J.shape[1]
    sig = np.zeros(6)
    sig[: len(s)] = s
    V = np.zeros((n, 6))
    k = min(6, n)
    V[:, :k] = Vt[:k].T
    return U, sig, V


def dls_inverse(J, cfg: DlsConfig) -> np.ndarray:
    U, sig, V = _svd6(np.asarray(J, float))
    return _dls_from_svd(U, sig, V, cfg)


def _dls_from_svd(U, sig, V, cfg):
    gain = sig / (sig ** 2 + damping_factors(sig, cfg))
    return (V * gain) @ U.T


def project_singular(zdd, U, w) -> np.ndarray:
    """Remove the weighted components of ``zdd`` along the columns of U."""
    zdd = np.asarray(zdd, float)
    return zdd - U @ (np.asarray(w, float) * (U.T @ zdd))


def impedance_joint_accel(traj: ImpedanceTrajectory, zdd_bar, J, Jdot, cfg: DlsConfig) -> np.ndarray:
    J = np.asarray(J, float)
    Jinv = dls_inverse(J, cfg)
    return _joint_accel(Jinv, J, Jdot, traj.qd_imp, zdd_bar, cfg)


def _joint_accel(Jinv, J, Jdot, qd_imp, zdd_bar, cfg):
    n = J.shape[1]
    null = np.eye(n) - Jinv @ J
    return Jinv @ (zdd_bar - Jdot @ qd_imp) - null @ (cfg.K_damp @ qd_imp)


@dataclass
class ImpedanceStep:
    qdd_imp: np.ndarray
    e_imp: np.ndarray
    ed_imp: np.ndarray
    zdd_imp: np.ndarray
    zdd_bar: np.ndarray
    sigmas: np.ndarray
    z_imp: Pose


def impedance_step(z_d: Pose, traj: ImpedanceTrajectory, pose_imp: Pose, J, Jdot, F_h,
                   p: ImpedanceParams, cfg: DlsConfig, zd_d=None, zdd_d=None) -> ImpedanceStep:
    """Full generator: impedance acceleration -> singular projection -> joint acceleration.

    ``pose_imp``, ``J`` and ``Jdot`` must be evaluated at ``traj.q_imp``.
    """
    zd_d = np.zeros(6) if zd_d is None else zd_d
    zdd_d = np.zeros(6) if zdd_d is None else zdd_d
    e = task_error(z_d, pose_imp)
    ed = zd_d - J @ traj.qd_imp
    edd = impedance_accel(e, ed, F_h, p)
    zdd = zdd_d - edd
    U, sig, V = _svd6(J)
    w = singularity_weights(sig, cfg)
    zdd_bar = project_singular(zdd, U, w)
    Jinv = _dls_from_svd(U, sig, V, cfg)
    qdd = _joint_accel(Jinv, J, Jdot, traj.qd_imp, zdd_bar, cfg)
    return ImpedanceStep(qdd, e, ed, zdd, zdd_bar, sig, pose_imp)
