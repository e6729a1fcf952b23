"""Online learning components.

* per-joint interval type-2 TSK fuzzy approximator (Nie-Tan type reduction)
* smooth projection and leakage update laws
* smooth sliding-mode compensator
* compensation/safety disturbance observers
* command-driven reference model
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SMC_KAPPA = 0.2785
N_INPUTS = 4


@dataclass(frozen=True)
class FlsConfig:
    n_joints: int = 7
    centers: tuple = (-1.0, 0.0, 1.0)
    width: float = 0.6
    fou_factor: float = 1.3
    xi_scale: float = 10.0
    tnorm: str = "min"

    def __post_init__(self):
        if self.width <= 0 or self.fou_factor < 1 or self.xi_scale <= 0:
            raise ConfigError("FLS needs width > 0, fou_factor >= 1, xi_scale > 0")
        if self.tnorm not in ("min", "product"):
            raise ConfigError("tnorm must be 'min' or 'product'")
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        combos = np.array(list(itertools.product(range(len(self.centers)), repeat=N_INPUTS)))
        object.__setattr__(self, "_combos", combos)

    @property
    def n_mf(self):
        return len(self.centers)

    @property
    def n_rules(self):
        return self.n_mf ** N_INPUTS

    @property
    def n_consequent(self):
        return N_INPUTS + 1

    @property
    def block(self):
        return self.n_rules * self.n_consequent

    @property
    def n_params(self):
        return self.block * self.n_joints


@dataclass(frozen=True)
class AdaptGains:
    n: int = 7
    gamma_theta: float = 100.0
    gamma_w: float = 50.0
    sigma_w: float = 0.0125
    eps_smc: float = 0.1
    kappa: float = SMC_KAPPA
    Theta: float = 50.0
    eps_proj: float = 5.0
    alpha_c: float = 70.0
    alpha_o: float = 80.0
    K_r: float = float(np.sqrt(250.0))
    Lambda: float = float(np.sqrt(250.0))

    def __post_init__(self):
        for name in ("gamma_theta", "gamma_w", "eps_smc", "K_r", "Lambda"):
            v = np.broadcast_to(np.asarray(getattr(self, name), float), (self.n,)).copy()
            if np.any(v <= 0):
                raise ConfigError(f"{name} must be positive")
            object.__setattr__(self, name, v)
        if not (self.sigma_w > 0 and self.Theta > 0 and self.eps_proj > 0):
            raise ConfigError("sigma_w, Theta and eps_proj must be positive")
        if not (self.alpha_c > 0 and self.alpha_o > 0 and self.kappa > 0):
            raise ConfigError("observer gains and kappa must be positive")

    @property
    def K_v(self):
        return self.Lambda + self.K_r

    @property
    def K_p(self):
        return self.K_r * self.Lambda


@dataclass
class AdaptState:
    theta: np.ndarray
    w_hat: np.ndarray
    ell_c: np.ndarray
    ell_o: np.ndarray
    x_ref: np.ndarray

    @classmethod
    def initial(cls, q0, qd0, gains: AdaptGains, fls: FlsConfig):
        q0 = np.asarray(q0, float)
        qd0 = np.asarray(qd0, float)
        n = q0.size
        return cls(np.zeros(fls.n_params), np.zeros(n), -gains.alpha_c * qd0,
                   -gains.alpha_o * qd0, np.concatenate([q0, qd0]))

    def pack(self):
        return np.concatenate([self.theta, self.w_hat, self.ell_c, self.ell_o, self.x_ref])

    @classmethod
    def unpack(cls, v, n, n_params):
        v = np.asarray(v, float)
        i = n_params
        return cls(v[:i], v[i:i + n], v[i + n:i + 2 * n], v[i + 2 * n:i + 3 * n], v[i + 3 * n:i + 5 * n])

    @staticmethod
    def size(n, n_params):
        return n_params + 5 * n


# ---------------------------------------------------------------------------
# fuzzy approximator

def fls_inputs(q, qd, xi_bar, qd_max, cfg: FlsConfig) -> np.ndarray:
    """Normalised per-joint inputs (sin q, cos q, qd/qd_max, xi_bar/xi_scale), shape (n, 4)."""
    q = np.asarray(q, float)
    return np.stack([np.sin(q), np.cos(q), np.asarray(qd, float) / qd_max,
                     np.asarray(xi_bar, float) / cfg.xi_scale], axis=-1)


def firing_strengths(X, cfg: FlsConfig, return_flag=False):
    """Normalised Nie-Tan rule strengths for each row of X, shape (n, M)."""
    X = np.atleast_2d(np.asarray(X, float))
    c = np.asarray(cfg.centers)
    d2 = (X[..., None] - c) ** 2
    lower = np.exp(-d2 / (2.0 * cfg.width ** 2))
    upper = np.exp(-d2 / (2.0 * (cfg.fou_factor * cfg.width) ** 2))
    idx = np.arange(N_INPUTS)
    lo = lower[:, idx, cfg._combos]
    up = upper[:, idx, cfg._combos]
    if cfg.tnorm == "min":
        f = 0.5 * (lo.min(axis=-1) + up.min(axis=-1))
    else:
        f = 0.5 * (lo.prod(axis=-1) + up.prod(axis=-1))
    total = f.sum(axis=-1, keepdims=True)
    degenerate = total[:, 0] < 1e-300
    f = np.where(degenerate[:, None], 1.0 / cfg.n_rules, f / np.where(degenerate[:, None], 1.0, total))
    return (f, degenerate) if return_flag else f


def it2_regressor(X, cfg: FlsConfig) -> np.ndarray:
    """Per-joint regressor blocks, shape (n, M * 5); a single 4-vector gives shape (M * 5,)."""
    X = np.asarray(X, float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    phi = firing_strengths(X2, cfg)
    basis = np.hstack([np.ones((X2.shape[0], 1)), X2])
    z = (phi[:, :, None] * basis[:, None, :]).reshape(X2.shape[0], -1)
    return z[0] if single else z


def regressor_matrix(blocks) -> np.ndarray:
    """Expand (n, B) blocks into the N x n block-diagonal regressor."""
    n, B = blocks.shape
    Z = np.zeros((n * B, n))
    for i in range(n):
        Z[i * B:(i + 1) * B, i] = blocks[i]
    return Z


def fls_output(zeta, theta) -> np.ndarray:
    """Approximator output from the full N x n regressor."""
    return np.asarray(zeta, float).T @ np.asarray(theta, float)


def fls_output_blocks(blocks, theta) -> np.ndarray:
    """Same as fls_output with the regressor in (n, B) block form."""
    blocks = np.asarray(blocks, float)
    return np.einsum("ib,ib->i", blocks, np.asarray(theta, float).reshape(blocks.shape))


def regressor_times(blocks, r) -> np.ndarray:
    """zeta @ r for block regressors."""
    return (np.asarray(blocks) * np.asarray(r)[:, None]).ravel()


# ---------------------------------------------------------------------------
# update laws

def projection_function(theta, gains: AdaptGains) -> float:
    T, e = gains.Theta, gains.eps_proj
    return float((theta @ theta - T * T) / (2.0 * e * T + e * e))


def proj_update(theta, y, gains: AdaptGains, n_per_joint=None) -> np.ndarray:
    """Smooth Gamma-projection keeping ||theta|| <= Theta + eps."""
    theta = np.asarray(theta, float)
    y = np.asarray(y, float)
    gam = np.repeat(gains.gamma_theta, n_per_joint or theta.size // gains.gamma_theta.size)
    gy = gam * y
    f = projection_function(theta, gains)
    T, e = gains.Theta, gains.eps_proj
    grad = 2.0 * theta / (2.0 * e * T + e * e)
    push = grad @ gy
    if f > 0 and push > 0:
        gg = gam * grad
        return gy - gg * (push / (grad @ gg)) * f
    return gy


def w_update(w_hat, r, gains: AdaptGains) -> np.ndarray:
    return gains.gamma_w * (np.abs(r) - gains.sigma_w * np.asarray(w_hat, float))


def smc_accel(r, w_hat, gains: AdaptGains) -> np.ndarray:
    w_hat = np.asarray(w_hat, float)
    return w_hat * np.tanh(gains.kappa * np.asarray(r, float) * w_hat / gains.eps_smc)


def dob_outputs(ell_c, ell_o, qd, gains: AdaptGains):
    qd = np.asarray(qd, float)
    return ell_c + gains.alpha_c * qd, ell_o + gains.alpha_o * qd


def dob_state_derivatives(qdd_cmd, qdd_s, d_hat_o, gains: AdaptGains):
    base = np.asarray(qdd_cmd, float) + np.asarray(qdd_s, float)
    return -gains.alpha_c * base, -gains.alpha_o * (base + d_hat_o)


def reference_model_derivative(x_ref, qdd_cmd, q, qd, gains: AdaptGains) -> np.ndarray:
    x_ref = np.asarray(x_ref, float)
    n = x_ref.size // 2
    q_ref, qd_ref = x_ref[:n], x_ref[n:]
    qdd_u = qdd_cmd + gains.K_v * (qd - qd_ref) + gains.K_p * (q - q_ref)
    return np.concatenate([qd_ref, qdd_u])


def filtered_error(e, ed, Lambda) -> np.ndarray:
    return np.asarray(ed, float) + np.asarray(Lambda, float) * np.asarray(e, float)


# ---------------------------------------------------------------------------

def dump_weights(path, state: AdaptState, fls: FlsConfig, gains: AdaptGains):
    """Write theta, w_hat and the membership layout to JSON."""
    doc = {
        "theta": state.theta.reshape(fls.n_joints, -1).tolist(),
        "w_hat": state.w_hat.tolist(),
        "theta_norm": float(np.linalg.norm(state.theta)),
        "projection_f": projection_function(state.theta, gains),
        "membership": {"centers": list(fls.centers), "width": fls.width,
                       "fou_factor": fls.fou_factor, "xi_scale": fls.xi_scale, "tnorm": fls.tnorm},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
    return doc
