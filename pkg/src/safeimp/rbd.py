"""Kinematics and rigid-body dynamics of serial revolute chains.

Links follow the classic Denavit-Hartenberg convention,
``T_i = Rz(q_i + theta_offset) Tz(d) Tx(a) Rx(alpha)``, with an optional
constant base transform in front of the chain. Link ``i`` is rigidly attached
to frame ``i``; its centre of mass and inertia are expressed in that frame.

The mass matrix is assembled from the link centre-of-mass Jacobians, its
partial derivatives are computed in closed form, and the Coriolis matrix is
built from the Christoffel symbols of M so that ``dM/dt - 2C`` is exactly
skew-symmetric.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ModelError

DATA_DIR = Path(__file__).resolve().parent / "data"
DEFAULT_ROBOT = DATA_DIR / "kinova_gen3.json"


@dataclass(frozen=True, eq=False)
class Link:
    a: float
    alpha: float
    d: float
    theta_offset: float
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3, about the COM, link frame
    armature: float = 0.0  # reflected rotor inertia about the joint axis

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float).reshape(3, 3))


@dataclass(frozen=True, eq=False)
class RobotModel:
    links: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    base: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "robot"

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float).reshape(4, 4))
        validate_model(self)
        lk = self.links
        object.__setattr__(self, "_dh", np.array([[l.a, l.alpha, l.d, l.theta_offset] for l in lk]))
        object.__setattr__(self, "_mass", np.array([l.mass for l in lk]))
        object.__setattr__(self, "_com", np.array([l.com for l in lk]))
        object.__setattr__(self, "_inertia", np.array([l.inertia for l in lk]))
        object.__setattr__(self, "_armature", np.array([l.armature for l in lk]))

    @property
    def n(self) -> int:
        return len(self.links)


@dataclass(frozen=True)
class Pose:
    """End-effector pose; quaternion is scalar-first (w, x, y, z)."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "quaternion", q / np.linalg.norm(q))


def validate_model(model: RobotModel) -> None:
    if len(model.links) < 1:
        raise ModelError("a chain needs at least one link")
    for i, link in enumerate(model.links):
        if not link.mass > 0:
            raise ModelError(f"link {i}: mass must be positive, got {link.mass}")
        inertia = link.inertia
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ModelError(f"link {i}: inertia is not symmetric")
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ModelError(f"link {i}: inertia is not positive-definite")
        if link.armature < 0:
            raise ModelError(f"link {i}: armature must be non-negative")
    if not np.all(np.isfinite(model.gravity)):
        raise ModelError("gravity must be finite")


# ---------------------------------------------------------------------------
# IO

def _inertia_from_list(vals):
    ixx, iyy, izz, ixy, ixz, iyz = vals
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]], dtype=float)


def _inertia_to_list(mat):
    return [mat[0, 0], mat[1, 1], mat[2, 2], mat[0, 1], mat[0, 2], mat[1, 2]]


def model_from_dict(data: dict) -> RobotModel:
    links = []
    for entry in data["links"]:
        a, alpha, d, offset = entry["dh"]
        links.append(Link(a=a, alpha=alpha, d=d, theta_offset=offset,
                          mass=entry["mass"], com=entry["com"],
                          inertia=_inertia_from_list(entry["inertia"]),
                          armature=entry.get("armature", 0.0)))
    base = np.array(data["base"], dtype=float) if "base" in data else np.eye(4)
    return RobotModel(links=tuple(links), gravity=data.get("gravity", [0.0, 0.0, -9.81]),
                      base=base, name=data.get("name", "robot"))


def model_to_dict(model: RobotModel) -> dict:
    return {
        "name": model.name,
        "gravity": model.gravity.tolist(),
        "base": model.base.tolist(),
        "links": [
            {"dh": [l.a, l.alpha, l.d, l.theta_offset], "mass": l.mass,
             "com": l.com.tolist(), "inertia": _inertia_to_list(l.inertia),
             "armature": l.armature}
            for l in model.links
        ],
    }


def load_model(path=None) -> RobotModel:
    """Load a robot description JSON file (default: the shipped 7-DOF arm)."""
    path = Path(path) if path is not None else DEFAULT_ROBOT
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# kinematics

def _cross(a, b):
    """Row-wise cross product with broadcasting (cheaper than np.cross for tiny arrays)."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _dh_transforms(model: RobotModel, q):
    """Cumulative transforms of frames 0..n in the world frame, shape (n+1, 4, 4)."""
    q = np.asarray(q, dtype=float)
    a, alpha, d, off = model._dh.T
    th = q + off
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(alpha), np.sin(alpha)
    n = model.n
    T = np.zeros((n, 4, 4))
    T[:, 0, 0] = ct
    T[:, 0, 1] = -st * ca
    T[:, 0, 2] = st * sa
    T[:, 0, 3] = a * ct
    T[:, 1, 0] = st
    T[:, 1, 1] = ct * ca
    T[:, 1, 2] = -ct * sa
    T[:, 1, 3] = a * st
    T[:, 2, 1] = sa
    T[:, 2, 2] = ca
    T[:, 2, 3] = d
    T[:, 3, 3] = 1.0
    out = np.empty((n + 1, 4, 4))
    out[0] = model.base
    for i in range(n):
        out[i + 1] = out[i] @ T[i]
    return out


class _Kin:
    """Per-configuration kinematic quantities shared by several outputs."""

    __slots__ = ("frames", "z", "o", "pe", "R", "pc")

    def __init__(self, model: RobotModel, q):
        F = _dh_transforms(model, q)
        self.frames = F
        self.z = F[:-1, :3, 2]  # joint axes (axis of joint j is z of frame j-1)
        self.o = F[:-1, :3, 3]  # points on the joint axes
        self.pe = F[-1, :3, 3]
        self.R = F[1:, :3, :3]  # link orientations
        self.pc = np.einsum("nij,nj->ni", self.R, model._com) + F[1:, :3, 3]


def quat_from_matrix(R) -> np.ndarray:
    """Scalar-first unit quaternion of a rotation matrix (Shepperd's method), w >= 0."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (R[0, 0], R[1, 1], R[2, 2])
    if tr >= max(diag):
        w = 0.5 * np.sqrt(1.0 + tr)
        f = 0.25 / w
        q = np.array([w, (R[2, 1] - R[1, 2]) * f, (R[0, 2] - R[2, 0]) * f, (R[1, 0] - R[0, 1]) * f])
    elif diag[0] >= diag[1] and diag[0] >= diag[2]:
        x = 0.5 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        f = 0.25 / x
        q = np.array([(R[2, 1] - R[1, 2]) * f, x, (R[0, 1] + R[1, 0]) * f, (R[0, 2] + R[2, 0]) * f])
    elif diag[1] >= diag[2]:
        y = 0.5 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        f = 0.25 / y
        q = np.array([(R[0, 2] - R[2, 0]) * f, (R[0, 1] + R[1, 0]) * f, y, (R[1, 2] + R[2, 1]) * f])
    else:
        zq = 0.5 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        f = 0.25 / zq
        q = np.array([(R[1, 0] - R[0, 1]) * f, (R[0, 2] + R[2, 0]) * f, (R[1, 2] + R[2, 1]) * f, zq])
    if q[0] < 0:
        q = -q
    return q / np.sqrt(q @ q)


def _pose(F) -> Pose:
    return Pose(F[:3, 3].copy(), quat_from_matrix(F[:3, :3]))


def forward_kinematics(model: RobotModel, q) -> Pose:
    return _pose(_dh_transforms(model, q)[-1])


def _ee_jacobian(kin: _Kin):
    Jv = _cross(kin.z, kin.pe - kin.o).T
    return np.vstack([Jv, kin.z.T])


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric 6xn Jacobian: linear velocity rows first, angular rows last."""
    return _ee_jacobian(_Kin(model, q))


def _ee_jacobian_dot(kin: _Kin, qd):
    z, o, pe = kin.z, kin.o, kin.pe
    n = len(qd)
    wz = z * qd[:, None]  # qd_k z_k
    # angular velocity of frame j-1 (sum over k < j)
    w_prev = np.cumsum(wz, axis=0) - wz
    Jv = _cross(z, pe - o)
    # velocity of the end-effector relative to axis point o_j: sum_{k>=j} qd_k z_k x (pe - o_k)
    contrib = _cross(wz, pe - o)
    tail = np.cumsum(contrib[::-1], axis=0)[::-1]
    dJv = _cross(w_prev, Jv) + _cross(z, tail)
    dJw = _cross(w_prev, z)
    out = np.empty((6, n))
    out[:3] = dJv.T
    out[3:] = dJw.T
    return out


def jacobian_dot(model: RobotModel, q, qd) -> np.ndarray:
    return _ee_jacobian_dot(_Kin(model, q), np.asarray(qd, dtype=float))


def kinematics(model: RobotModel, q, qd=None):
    """Return (pose, J, Jdot) in one pass; Jdot is None when qd is None."""
    kin = _Kin(model, q)
    J = _ee_jacobian(kin)
    Jd = None if qd is None else _ee_jacobian_dot(kin, np.asarray(qd, dtype=float))
    return _pose(kin.frames[-1]), J, Jd


# ---------------------------------------------------------------------------
# dynamics

def _skew(v):
    """Batched skew-symmetric matrices, v shape (..., 3)."""
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def _com_jacobians(model, kin):
    """Linear and angular COM Jacobians of every link, each shaped (n, 3, n)."""
    n = model.n
    mask = np.tril(np.ones((n, n)))  # [i, j] = 1 for j <= i
    # Jv[i, :, j] = z_j x (pc_i - o_j)
    rel = kin.pc[:, None, :] - kin.o[None, :, :]
    Jv = _cross(kin.z[None, :, :], rel) * mask[:, :, None]
    Jw = kin.z[None, :, :] * mask[:, :, None]
    return Jv.transpose(0, 2, 1), Jw.transpose(0, 2, 1), mask, rel


def _world_inertia(model, kin):
    return kin.R @ model._inertia @ kin.R.transpose(0, 2, 1)


def _mass_from_parts(model, Jv, Jw, Iw):
    mJv = Jv * model._mass[:, None, None]
    M = np.einsum("iaj,iak->jk", mJv, Jv)
    M += np.einsum("iaj,iak->jk", Jw, Iw @ Jw)
    M += np.diag(model._armature)
    return M


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    kin = _Kin(model, q)
    Jv, Jw, _, _ = _com_jacobians(model, kin)
    M = _mass_from_parts(model, Jv, Jw, _world_inertia(model, kin))
    return 0.5 * (M + M.T)


def _contract(D, B):
    """sum_{i,a} D[i, j, k, a] B[i, a, l] -> out[k, j, l]."""
    n = D.shape[0]
    out = D.transpose(2, 1, 0, 3).reshape(n * n, -1) @ B.reshape(-1, B.shape[-1])
    return out.reshape(n, n, -1)


def _mass_and_derivative(model, kin):
    """M(q) and dM[k] = dM/dq_k, shape (n, n, n)."""
    n = model.n
    Jv, Jw, mask, rel = _com_jacobians(model, kin)
    Iw = _world_inertia(model, kin)
    z = kin.z
    M = _mass_from_parts(model, Jv, Jw, Iw)

    k_lt_j = np.triu(np.ones((n, n)), 1)  # [k, j] = 1 for k < j
    lower_jk = k_lt_j.T  # [j, k] = 1 for k < j
    Jv_ij = Jv.transpose(0, 2, 1)  # (i, j, 3)
    # k < j <= i: d Jv_ij / dq_k = z_k x Jv_ij
    A = _cross(z[None, None, :, :], Jv_ij[:, :, None, :]) * lower_jk[None, :, :, None]
    # j <= k <= i: d Jv_ij / dq_k = z_j x (z_k x (pc_i - o_k))
    zk_rel = _cross(z[None, :, :], rel)  # (i, k, 3)
    B = _cross(z[None, :, None, :], zk_rel[:, None, :, :])
    B *= (1.0 - lower_jk)[None, :, :, None] * mask[:, None, :, None]
    dJv = (A + B) * mask[:, :, None, None]  # (i, j, k, 3)
    # d z_j / dq_k = z_k x z_j for k < j
    dz = _cross(z[None, :, :], z[:, None, :]) * lower_jk[:, :, None]  # (j, k, 3)
    dJw = dz[None] * mask[:, :, None, None]
    # d Iw_i / dq_k = [z_k] Iw_i - Iw_i [z_k] for k <= i
    Sk = _skew(z)
    dIw = (Sk[None] @ Iw[:, None]) - (Iw[:, None] @ Sk[None])
    dIw *= mask[:, :, None, None]

    t1 = _contract(dJv, Jv * model._mass[:, None, None])
    IJw = Iw @ Jw  # (i, 3, l)
    t2 = _contract(dJw, IJw)
    dM = t1 + t1.transpose(0, 2, 1) + t2 + t2.transpose(0, 2, 1)
    # Jw_i^T dIw_ik Jw_i
    Q = dIw @ Jw[:, None]  # (i, k, 3, l)
    dM += np.einsum("iaj,ikal->kjl", Jw, Q)
    return M, dM


def _christoffel(dM, qd):
    # C_kj = sum_i 1/2 (dM_kj/dq_i + dM_ki/dq_j - dM_ij/dq_k) qd_i
    t1 = np.einsum("ikj,i->kj", dM, qd)
    t2 = np.einsum("jki,i->kj", dM, qd)
    t3 = np.einsum("kij,i->kj", dM, qd)
    return 0.5 * (t1 + t2 - t3)


def coriolis_matrix(model: RobotModel, q, qd) -> np.ndarray:
    _, dM = _mass_and_derivative(model, _Kin(model, q))
    return _christoffel(dM, np.asarray(qd, dtype=float))


def mass_matrix_dot(model: RobotModel, q, qd) -> np.ndarray:
    _, dM = _mass_and_derivative(model, _Kin(model, q))
    return np.einsum("kij,k->ij", dM, np.asarray(qd, dtype=float))


def _gravity_from_parts(model, Jv):
    return -np.einsum("i,iaj,a->j", model._mass, Jv, model.gravity)


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    kin = _Kin(model, q)
    Jv, _, _, _ = _com_jacobians(model, kin)
    return _gravity_from_parts(model, Jv)


def potential_energy(model: RobotModel, q) -> float:
    kin = _Kin(model, q)
    return float(-np.sum(model._mass * (kin.pc @ model.gravity)))


@dataclass
class DynamicsTerms:
    M: np.ndarray
    C: np.ndarray
    G: np.ndarray
    J: np.ndarray
    pose: Pose


def dynamics_terms(model: RobotModel, q, qd) -> DynamicsTerms:
    """M, C, G and the end-effector Jacobian from a single kinematic pass."""
    qd = np.asarray(qd, dtype=float)
    kin = _Kin(model, q)
    M, dM = _mass_and_derivative(model, kin)
    Jv, _, _, _ = _com_jacobians(model, kin)
    C = _christoffel(dM, qd)
    G = _gravity_from_parts(model, Jv)
    return DynamicsTerms(M=0.5 * (M + M.T), C=C, G=G, J=_ee_jacobian(kin),
                         pose=_pose(kin.frames[-1]))


# ---------------------------------------------------------------------------
# parameter perturbation

def perturb_model(model: RobotModel, level: float, seed: int, max_tries: int = 100) -> RobotModel:
    """Scale every mass, COM component, principal inertia and armature by an
    independent factor drawn uniformly from [1 - level, 1 + level]."""
    if not 0.0 <= level <= 0.9:
        raise ModelError(f"perturbation level must lie in [0, 0.9], got {level}")
    if level == 0.0:
        return model
    rng = np.random.default_rng(seed)
    lo, hi = 1.0 - level, 1.0 + level
    links = []
    for link in model.links:
        mass = link.mass * rng.uniform(lo, hi)
        com = link.com * rng.uniform(lo, hi, size=3)
        for _ in range(max_tries):
            inertia = link.inertia.copy()
            inertia[np.diag_indices(3)] *= rng.uniform(lo, hi, size=3)
            if np.linalg.eigvalsh(inertia).min() > 0:
                break
        else:
            raise ModelError("could not draw a positive-definite inertia; lower the level")
        armature = link.armature * rng.uniform(lo, hi)
        links.append(replace(link, mass=mass, com=com, inertia=inertia, armature=armature))
    return RobotModel(links=tuple(links), gravity=model.gravity, base=model.base,
                      name=f"{model.name}+{level:g}@{seed}")
