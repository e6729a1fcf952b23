import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safeimp import impedance as imp
from safeimp import plant, rbd
from safeimp.errors import ConfigError
from safeimp.rbd import Pose

from conftest import Q0

CFG = imp.DlsConfig()


def quat_z(angle):
    return np.array([np.cos(angle / 2), 0, 0, np.sin(angle / 2)])


def test_task_error_identical():
    p = Pose([0.1, 0.2, 0.3], [0.5, 0.5, 0.5, 0.5])
    assert np.allclose(imp.task_error(p, p), 0, atol=1e-15)


def test_task_error_quarter_turn():
    e = imp.task_error(Pose([0, 0, 0], quat_z(np.pi / 2)), Pose([0, 0, 0], [1, 0, 0, 0]))
    assert np.allclose(e[3:], [0, 0, np.sin(np.pi / 4)], atol=1e-15)


def test_task_error_antipodal():
    q = np.array([0.3, -0.2, 0.9, 0.1])
    e = imp.task_error(Pose([1, 2, 3], q), Pose([1, 2, 3], -q))
    assert np.allclose(e, 0, atol=1e-15)


def test_task_error_position_rows():
    e = imp.task_error(Pose([1, 2, 3], [1, 0, 0, 0]), Pose([0.5, 2.5, 3], [1, 0, 0, 0]))
    assert np.allclose(e[:3], [0.5, -0.5, 0])


def test_quaternion_product_matches_rotation_composition():
    from scipy.spatial.transform import Rotation
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = Rotation.random(random_state=rng), Rotation.random(random_state=rng)
        wxyz = lambda r: np.roll(r.as_quat(), 1)
        ab = imp.quat_mul(wxyz(a), wxyz(b))
        ref = wxyz(a * b)
        assert min(np.abs(ab - ref).max(), np.abs(ab + ref).max()) < 1e-12


def test_impedance_accel_zero():
    assert np.all(imp.impedance_accel(np.zeros(6), np.zeros(6), np.zeros(6), imp.ImpedanceParams()) == 0)


def test_impedance_accel_linear_in_force(rng):
    p = imp.ImpedanceParams()
    e, ed, F = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
    base = imp.impedance_accel(e, ed, np.zeros(6), p)
    a1 = imp.impedance_accel(e, ed, F, p) - base
    a2 = imp.impedance_accel(e, ed, 2 * F, p) - base
    assert np.allclose(a2, 2 * a1, atol=1e-12)


def test_impedance_steady_state():
    p = imp.ImpedanceParams(M_d=np.eye(6), B_d=np.diag([49.0] * 3 + [12.0] * 3),
                            K_d=np.diag([49.0] * 3 + [16.0] * 3))
    F = np.array([20.0, 0, 0, 0, 0, 0])

    def f(t, y):
        return np.concatenate([y[6:], imp.impedance_accel(y[:6], y[6:], F, p)])

    y = np.zeros(12)
    for k in range(1500):
        y = plant.rk4_step(f, y, k * 0.01, 0.01)
    assert y[0] == pytest.approx(20 / 49, abs=1e-3)
    assert np.allclose(y[1:6], 0, atol=1e-12)


def test_params_must_be_spd():
    with pytest.raises(ConfigError):
        imp.ImpedanceParams(K_d=-np.eye(6))
    with pytest.raises(ConfigError):
        imp.DlsConfig(sigma_low=0.05, sigma_high=0.01)


def test_weight_boundaries():
    w = imp.singularity_weights([CFG.sigma_high, CFG.sigma_low, 0.5 * (CFG.sigma_low + CFG.sigma_high), 0.0, 3.0], CFG)
    assert np.allclose(w, [0, 1, 0.5, 1, 0], atol=1e-15)


def test_weights_monotone_and_continuous():
    s = np.linspace(0, 0.1, 20001)
    w = imp.singularity_weights(s, CFG)
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(np.diff(w) <= 0)
    assert np.abs(np.diff(w)).max() < 1e-2


def test_damping_factor_limits():
    k = imp.damping_factors([0.0, 10.0], CFG)
    assert k[0] == pytest.approx(CFG.k_max, rel=1e-15)
    assert k[1] < 1e-200


def test_dls_reconstruction():
    cfg = imp.DlsConfig(k_max=0.1, alpha_s=10.0)
    rng = np.random.default_rng(3)
    U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    V, _ = np.linalg.qr(rng.normal(size=(7, 7)))
    sig = np.array([2.0, 1, 1, 1, 1, 1])
    J = U @ np.hstack([np.diag(sig), np.zeros((6, 1))]) @ V.T
    Jinv = imp.dls_inverse(J, cfg)
    for _ in range(5):
        v = J.T @ rng.normal(size=6)
        assert np.linalg.norm(Jinv @ J @ v - v) <= 1e-3 * np.linalg.norm(v)


def test_dls_continuous_through_singularity():
    U = np.eye(6)
    V = np.eye(7)[:, :6]
    norms = []
    for s in np.logspace(-6, 0, 200):
        sig = np.array([1.0, 1, 1, 1, 1, s])
        J = (U * sig) @ V.T
        Jinv = imp.dls_inverse(J, CFG)
        k = imp.damping_factors(sig, CFG)
        bound = np.max(sig / (sig ** 2 + k))
        assert np.linalg.norm(Jinv, 2) <= bound * (1 + 1e-12)
        norms.append(np.linalg.norm(Jinv, 2))
    assert np.all(np.isfinite(norms))
    # no blow-up between neighbouring samples
    assert np.max(np.abs(np.diff(np.log(norms)))) < 0.2


def test_project_singular_cases(rng):
    U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    z = rng.normal(size=6)
    assert np.allclose(imp.project_singular(z, U, np.zeros(6)), z, atol=1e-15)
    assert np.allclose(imp.project_singular(z, U, np.ones(6)), 0, atol=1e-14)
    out = imp.project_singular(z, U, np.eye(6)[0])
    assert abs(U[:, 0] @ out) < 1e-12


def test_joint_accel_at_rest(model):
    _, J, Jd = rbd.kinematics(model, Q0, np.zeros(7))
    traj = imp.ImpedanceTrajectory(Q0, np.zeros(7))
    assert np.allclose(imp.impedance_joint_accel(traj, np.zeros(6), J, Jd, CFG), 0, atol=1e-15)


def test_null_space_term_in_kernel(model, rng):
    # residual is bounded by the largest sigma * k / (sigma^2 + k) leak
    for q in (Q0, np.array([0.94, -1.26, 1.74, -1.91, 0.27, 1.85, 1.06])):
        J = rbd.jacobian(model, q)
        Jinv = imp.dls_inverse(J, CFG)
        sig = np.linalg.svd(J, compute_uv=False)
        k = imp.damping_factors(sig, CFG)
        leak = np.max(sig * k / (sig ** 2 + k))
        for _ in range(10):
            v = CFG.K_damp @ rng.normal(size=7)
            null = (np.eye(7) - Jinv @ J) @ v
            assert np.linalg.norm(J @ null) <= leak * np.linalg.norm(v) * (1 + 1e-9)
    # well-conditioned pose: damping has vanished
    assert leak < 1e-5


def test_null_space_motion_decays(model):
    J = rbd.jacobian(model, Q0)
    v = np.linalg.svd(J)[2][-1]
    y = np.concatenate([Q0, 0.2 * v])

    def f(t, y):
        _, J, Jd = rbd.kinematics(model, y[:7], y[7:])
        traj = imp.ImpedanceTrajectory(y[:7], y[7:])
        return np.concatenate([y[7:], imp.impedance_joint_accel(traj, np.zeros(6), J, Jd, CFG)])

    for k in range(100):
        y = plant.rk4_step(f, y, k * 0.01, 0.01)
        assert np.linalg.norm(rbd.jacobian(model, y[:7]) @ y[7:]) < 1e-3
    assert np.linalg.norm(y[7:]) < 0.2 * np.exp(-4)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_generator_matches_composition(model, F):
    F = np.array(F) * 10
    p = imp.ImpedanceParams()
    q_imp = Q0 + 0.1
    qd_imp = np.full(7, 0.05)
    z_d = rbd.forward_kinematics(model, Q0)
    pose, J, Jd = rbd.kinematics(model, q_imp, qd_imp)
    traj = imp.ImpedanceTrajectory(q_imp, qd_imp)
    step = imp.impedance_step(z_d, traj, pose, J, Jd, F, p, CFG)
    e = imp.task_error(z_d, pose)
    zdd = -imp.impedance_accel(e, -J @ qd_imp, F, p)
    U, sig, _ = np.linalg.svd(J)
    zbar = imp.project_singular(zdd, U, imp.singularity_weights(sig, CFG))
    ref = imp.impedance_joint_accel(traj, zbar, J, Jd, CFG)
    assert np.allclose(step.qdd_imp, ref, atol=1e-10)
