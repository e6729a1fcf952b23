"""Acceptance criteria 1-12, one pass/fail line per criterion."""
import math

import numpy as np
import pytest

from safeimp import adapt, optim, plant, rbd, safety
from safeimp import harness

import conftest
from test_adapt import type1_regressor
from test_optim import (bisection_capacity, desk_instance, dual_projected_gradient, hard_rows,
                        random_command_instance, random_qp, satisfies_projection_kkt,
                        vertex_enumeration)
from test_rbd import random_states

TOL = 1e-6
SWEEP_LEVELS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
SWEEP_RMS_BOUND = 5e-2
BURST_FACTOR = 5.0
INCREMENT_FACTOR = 3.0


@pytest.fixture
def report(capsys):
    def emit(n, checks):
        """checks: list of (label, ok, detail)."""
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{lbl}={'ok' if good else 'FAIL'} ({d})" for lbl, good, d in checks)
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        conftest.ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        failed = [c[0] for c in checks if not c[1]]
        assert not failed, line

    return emit


def test_criterion_01_forward_invariance(scenarios, report):
    checks = []
    for name in ("nominal", "bursting", "infeasible"):
        tr = scenarios.get(name)
        sec = scenarios.seconds[(name, "proposed")]
        m = tr.summary
        checks.append((f"{name}.min_h", m["min_h"] >= -TOL and m["rows"] == 1000 and tr.fault is None,
                       f"min_h={m['min_h']:.4g}, rows={m['rows']}, fault={tr.fault}"))
        checks.append((f"{name}.runtime", sec < 60.0, f"{sec:.1f}s"))
    report(1, checks)


def test_criterion_02_torque_satisfaction_when_certified(scenarios, report):
    tr = scenarios.get("nominal")
    s = tr.block("s").max(axis=1)
    u = tr.block("u")
    tl = tr.config["torque_limits"]
    tmax, tmin = np.asarray(tl["tau_max"]), np.asarray(tl["tau_min"])
    cert = tr.columns["hard_feasible"] == 1.0
    over = np.maximum(u - tmax, tmin - u).max(axis=1)
    report(2, [
        ("certified_steps", cert.sum() > 0, f"{int(cert.sum())} of {tr.rows}"),
        ("slack", s[cert].max() <= TOL, f"max s*={s[cert].max():.3g}"),
        ("limits", over[cert].max() <= TOL, f"max excess={over[cert].max():.3g}"),
    ])


def test_criterion_03_exact_penalty(report):
    rng = np.random.default_rng(303)
    cfg = optim.CommandQpConfig(rho=1000.0, eps_s=1e-6)
    worst_z, worst_s, kkt_ok, count, tried = 0.0, 0.0, True, 0, 0
    while count < 200:
        tried += 1
        nom, lo, hi, M, tb, tmin, tmax = random_command_instance(rng, scale=rng.uniform(0.3, 1.5))
        if not optim.hard_torque_feasible(lo, hi, M, tb, tmin, tmax):
            continue
        soft = optim.solve_qp(optim.build_command_qp(nom, lo, hi, M, tb, tmin, tmax, cfg))
        G, g = hard_rows(lo, hi, M, tb, tmin, tmax)
        hard = optim.solve_qp(optim.QpProblem(np.eye(7), -nom, G, g))
        worst_z = max(worst_z, np.abs(soft.z[:7] - hard.z).max())
        worst_s = max(worst_s, np.abs(soft.z[7:]).max())
        kkt_ok &= satisfies_projection_kkt(hard.z, nom, G, g, tol=1e-6)
        count += 1
    report(3, [
        ("match", worst_z <= 1e-5, f"max |soft-hard|={worst_z:.2e} over {count} instances ({tried} drawn)"),
        ("slack", worst_s <= 1e-6, f"max s*={worst_s:.2e}"),
        ("hard_kkt", bool(kkt_ok), "NNLS multiplier check"),
    ])


def test_criterion_04_nic_violates_proposed_does_not(scenarios, report):
    nic = scenarios.get("nominal", "nic").summary
    prop = scenarios.get("nominal").summary
    report(4, [
        ("nic_barrier", nic["barrier_violations"] >= 1,
         f"{nic['barrier_violations']} steps, min_h={nic['min_h']:.4g}"),
        ("nic_torque", nic["torque_violations"] >= 1,
         f"{nic['torque_violations']} steps, max |u| excess={nic['max_torque_violation']:.3g}"),
        ("proposed_barrier", prop["barrier_violations"] == 0, f"{prop['barrier_violations']} steps"),
        ("proposed_torque", prop["torque_violations"] == 0, f"{prop['torque_violations']} steps"),
    ])


@pytest.fixture(scope="session")
def sweep_rows():
    return harness.sweep_mismatch(harness.preset("sweep"), SWEEP_LEVELS, seeds=(0, 1, 2))


def test_criterion_05_mismatch_sweep(sweep_rows, report):
    table = harness.sweep_table(sweep_rows)
    means = [v for _, v in table]
    faults = [r for r in sweep_rows if r["fault"]]
    report(5, [
        ("runs", not faults and len(sweep_rows) == 24, f"{len(sweep_rows)} runs, {len(faults)} faults"),
        ("trend", all(b >= a for a, b in zip(means, means[1:])),
         "means " + ", ".join(f"{lv:.1f}:{v:.5f}" for lv, v in table)),
        ("bound", means[-1] <= SWEEP_RMS_BOUND, f"RMS(70%)={means[-1]:.4g} <= {SWEEP_RMS_BOUND}"),
    ])


def test_criterion_06_bursting(scenarios, report):
    prop = scenarios.get("bursting")
    aw = scenarios.get("bursting", "aworm").summary
    p = prop.summary
    cert = prop.columns["hard_feasible"] == 1.0
    s = prop.block("s").max(axis=1)
    sp, sa = p["sign_changes"][1], aw["sign_changes"][1]
    report(6, [
        ("ratio", sa >= BURST_FACTOR * max(sp, 1), f"joint-2 sign changes aworm={sa}, proposed={sp}"),
        ("barrier", p["min_h"] >= -TOL, f"min_h={p['min_h']:.4g}"),
        ("certified_slack", s[cert].max() <= TOL and p["certified_with_violation"] == 0,
         f"max s* on certified steps={s[cert].max():.3g}"),
    ])


def test_criterion_07_infeasibility(scenarios, report):
    m = scenarios.get("infeasible").summary
    base = scenarios.get("nominal").summary
    ratio = m["max_torque_increment"] / base["max_torque_increment"]
    report(7, [
        ("infeasible_with_slack", m["infeasible_with_slack"] > 0,
         f"{m['infeasible_with_slack']} steps, intervals={m['infeasible_intervals']}"),
        ("barrier", m["min_h"] >= -TOL, f"min_h={m['min_h']:.4g}"),
        ("smoothness", ratio <= INCREMENT_FACTOR,
         f"max du={m['max_torque_increment']:.3g} vs {base['max_torque_increment']:.3g} (x{ratio:.2f})"),
    ])


def test_criterion_08_uub(scenarios, report):
    tr = scenarios.get("nominal")
    t = tr.columns["t"]
    rn = np.linalg.norm(tr.block("r"), axis=1)
    err = tr.columns["imp_err"]
    r7 = rn[np.argmin(np.abs(t - 7.0))]
    late = rn[t >= t[-1] - 0.5].max()
    report(8, [
        ("bounded", np.all(np.isfinite(rn)) and np.all(np.isfinite(err)) and rn.max() < 10 and err.max() < 1,
         f"max|r|={rn.max():.3g}, max imp err={err.max():.3g}"),
        ("decay", late < r7, f"max |r| over last 0.5 s={late:.3g} < |r(7s)|={r7:.3g}"),
    ])


def test_criterion_09_dynamics_oracles(model, report):
    eps = 1e-6
    sym = pd = skew = jac = grav = 0.0
    pd = np.inf
    for q, qd in random_states(50, seed=909):
        M = rbd.mass_matrix(model, q)
        sym = max(sym, np.abs(M - M.T).max())
        pd = min(pd, np.linalg.eigvalsh(M).min())
        Md = (rbd.mass_matrix(model, q + eps * qd) - rbd.mass_matrix(model, q - eps * qd)) / (2 * eps)
        N = Md - 2 * rbd.coriolis_matrix(model, q, qd)
        skew = max(skew, np.linalg.norm(N + N.T))
        Jfd = np.column_stack([(rbd.forward_kinematics(model, q + eps * e).position
                                - rbd.forward_kinematics(model, q - eps * e).position) / (2 * eps)
                               for e in np.eye(7)])
        jac = max(jac, np.abs(rbd.jacobian(model, q)[:3] - Jfd).max())
        G = rbd.gravity_vector(model, q)
        fd = np.array([(rbd.potential_energy(model, q + eps * e) - rbd.potential_energy(model, q - eps * e))
                       / (2 * eps) for e in np.eye(7)])
        grav = max(grav, np.linalg.norm(G - fd) / max(1.0, np.linalg.norm(G)))

    fr = plant.FrictionParams.zero(7)

    def f(t, y):
        qd, qdd = plant.plant_derivative(model, plant.JointState(y[:7], y[7:]), np.zeros(7), np.zeros(6), fr)
        return np.concatenate([qd, qdd])

    def energy(y):
        return 0.5 * y[7:] @ rbd.mass_matrix(model, y[:7]) @ y[7:] + rbd.potential_energy(model, y[:7])

    q, qd = random_states(1, seed=919)[0]
    y = np.concatenate([q, qd])
    H0 = energy(y)
    for k in range(1000):
        y = plant.rk4_step(f, y, k * 1e-3, 1e-3)
    drift = abs(energy(y) - H0) / abs(H0)
    report(9, [
        ("M_sym_pd", sym <= 1e-10 and pd > 0, f"asym={sym:.1e}, min eig={pd:.3g}"),
        ("skew", skew <= 1e-8, f"|N+N^T|={skew:.1e}"),
        ("jacobian_fd", jac <= 1e-6, f"{jac:.1e}"),
        ("gravity_grad", grav <= 1e-6, f"{grav:.1e}"),
        ("energy_drift", drift <= 1e-6, f"{drift:.1e} over 1000 steps"),
    ])


def test_criterion_10_solvers(scenarios, report):
    rng = np.random.default_rng(1010)
    probs = [random_qp(rng) for _ in range(200)]
    sols = [optim.solve_qp(p) for p in probs]
    lower = dual_projected_gradient(probs)
    kkt = max(max(s.residuals.values()) for s in sols)
    gap = max((p.objective(s.z) - lb) / max(1.0, abs(p.objective(s.z))) for p, s, lb in zip(probs, sols, lower))
    status = all(s.status == optim.OPTIMAL for s in sols)
    scen_kkt = max(scenarios.get(n).summary["max_qp_kkt"] for n in ("nominal", "bursting", "infeasible"))

    lp_err = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(1, 7))
        A = np.vstack([rng.normal(size=(m, d)), np.eye(d), -np.eye(d)])
        b = np.concatenate([rng.uniform(0.1, 2, m), rng.uniform(1, 3, 2 * d)])
        c = rng.normal(size=d)
        lp_err = max(lp_err, abs(optim.solve_lp(c, A, b).value - vertex_enumeration(c, A, b)))

    M, J, lo, hi, tb = desk_instance()
    tmax = np.array([8.0, 4.0])
    wrench_rel = 0.0
    for d in optim.FORCE_DIRECTIONS:
        lp = optim.wrench_capacity(d, lo, hi, M, J, tb, -tmax, tmax)
        ref = bisection_capacity(d, lo, hi, M, J, tb, -tmax, tmax)
        if ref > 9e3:
            wrench_rel = max(wrench_rel, 0.0 if lp == math.inf else 1.0)
        else:
            wrench_rel = max(wrench_rel, abs(lp - ref) / max(ref, 1e-12) if ref > 0 else abs(lp))
    report(10, [
        ("kkt_random", status and kkt <= 1e-8, f"max residual={kkt:.1e}"),
        ("kkt_closed_loop", scen_kkt <= 1e-8, f"max residual over scenario solves={scen_kkt:.1e}"),
        ("qp_oracle", gap <= 1e-6, f"max duality gap={gap:.1e} on 200 QPs"),
        ("lp_vertices", lp_err <= 1e-7, f"max |LP-vertex|={lp_err:.1e} on 100 LPs"),
        ("wrench_lp", wrench_rel <= 1e-2, f"max rel diff vs bisection={wrench_rel:.1e}"),
    ])


def test_criterion_11_learning_stack(report):
    rng = np.random.default_rng(1111)
    n = 405
    gains = adapt.AdaptGains(n=1, gamma_theta=1.0)
    th = np.zeros(n)
    worst = 0.0
    for k in range(3000):
        direction = th / np.linalg.norm(th) if k % 3 and np.linalg.norm(th) > 0 else rng.normal(size=n)
        y = 50.0 * direction + 20.0 * rng.normal(size=n)
        th = plant.rk4_step(lambda t, v: adapt.proj_update(v, y, gains), th, 0.0, 1e-3)
        worst = max(worst, np.linalg.norm(th))
    bound = gains.Theta + gains.eps_proj

    fou = 0.0
    for tnorm in ("min", "product"):
        cfg = adapt.FlsConfig(fou_factor=1.0, tnorm=tnorm)
        for x in rng.uniform(-1.5, 1.5, (50, 4)):
            ref = type1_regressor(list(x), cfg.centers, cfg.width, min if tnorm == "min" else None)
            fou = max(fou, np.abs(adapt.it2_regressor(x, cfg) - ref).max())

    k = adapt.SMC_KAPPA
    bound_ok = True
    for _ in range(1000):
        a, b, eps = rng.normal(0, 10), rng.uniform(0, 20), rng.uniform(1e-3, 5)
        gap = abs(a) * b - a * b * math.tanh(k * a * b / eps)
        bound_ok &= -1e-12 <= gap <= eps + 1e-12

    phi = adapt.firing_strengths(rng.uniform(-1.5, 1.5, (1000, 4)), adapt.FlsConfig())
    norm = np.abs(phi.sum(axis=1) - 1).max()
    report(11, [
        ("projection", worst <= bound + 1e-9, f"max |theta|={worst:.6g} <= {bound}"),
        ("nie_tan_type1", fou <= 1e-12, f"{fou:.1e}"),
        ("tanh_bound", bool(bound_ok), "1000 triples"),
        ("normalisation", norm <= 1e-12, f"{norm:.1e}"),
    ])


def test_criterion_12_tuning_analyzer(report):
    kw = dict(beta=35.0, omega1_bar=75.0, alpha_o=80.0, l=6)
    root_res, mid_ok, count = 0.0, True, 0
    for kind in ("velocity", "position"):
        for qd_max in (0.5, 1.78, 2.62):
            for nu in (10.0, 40.0, 100.0):
                iv = safety.gamma_feasible_interval(kind, qd_max, 2.2, nu=nu, **kw)
                if iv is None:
                    continue
                a, b, c = safety.gamma_quadratic(kind, qd_max, 2.2, nu=nu, **kw)
                for g in iv:
                    root_res = max(root_res, abs(a * g * g + b * g + c) / max(1.0, abs(b * g), abs(c)))
                mid_ok &= safety.box_width_condition(kind, 0.5 * (iv[0] + iv[1]), qd_max, 2.2, nu=nu, **kw) > 0
                count += 1
    K6 = safety.curvature_constant(6)
    direct = (5 / 11) ** (5 / 6) * (6 / 11)
    report(12, [
        ("roots", count > 0 and root_res <= 1e-9, f"max scaled residual={root_res:.1e} on {count} intervals"),
        ("midpoint", bool(mid_ok), "box width positive at interval midpoints"),
        ("K6", abs(K6 - 0.2828) <= 1e-4 and abs(K6 - direct) <= 1e-12, f"K(6)={K6:.6f}"),
    ])
