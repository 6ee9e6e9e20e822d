"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s``; the lines are also
collected into an "acceptance criteria" section of the pytest summary.
"""
import filecmp
import math
import time

import numpy as np

from flexadapt.cli import main
from flexadapt.config import load_preset
from flexadapt.dynamics import (AnalyticRegressor, FrictionModel, RobotModel, coriolis_matrix,
                                friction_torque, gravity_torque, integrate_reduced, mass_matrix,
                                step_rk4, RobotState, total_energy, true_parameters)
from flexadapt.network import (OutputLayer, TrainBatch, backprop, init_regressor, loss_mse_l2,
                               predict, retrain_online, train_offline)
from flexadapt.scenario import (ADAPTIVE, ADAPTIVE_RETRAIN, PD, compute_metrics, export_csv,
                                run_scenario)

MARGIN = 1.1     # "margins >= 10%": the larger value must be at least 1.1x the smaller


def chain_potential(model, q):
    """Independent planar-chain potential from explicit point heights."""
    U, phi, y = 0.0, 0.0, 0.0
    for i in range(model.n_joints):
        phi_i = phi + q[i]
        U += model.gravity * model.link_masses[i] * (y - model.com_offsets[i] * math.cos(phi_i))
        y -= model.link_lengths[i] * math.cos(phi_i)
        phi = phi_i
    return U + model.gravity * model.payload_mass * y


# --------------------------------------------------------------------------- 1

def test_criterion_1_dynamics_oracles(verdict):
    start = time.perf_counter()
    arm = RobotModel.two_link_arm(payload_mass=0.2)
    rng = np.random.default_rng(0)
    Q = rng.uniform(-math.pi, math.pi, (1000, 2))
    QD = rng.uniform(-3, 3, (1000, 2))
    X = rng.normal(size=(1000, 2))
    M = mass_matrix(arm, Q)
    sym = np.max(np.abs(M - np.swapaxes(M, 1, 2)))
    min_eig = np.min(np.linalg.eigvalsh(M))

    h = 1e-6
    grav_err = skew_err = 0.0
    G = gravity_torque(arm, Q)
    C = coriolis_matrix(arm, Q, QD)
    for q, qd, x, g, c in zip(Q, QD, X, G, C):
        grad = np.array([(chain_potential(arm, q + h * e) - chain_potential(arm, q - h * e)) / (2 * h)
                         for e in np.eye(2)])
        grav_err = max(grav_err, np.max(np.abs(g - grad)) / max(1.0, np.max(np.abs(grad))))
        Mdot = (mass_matrix(arm, q + h * qd) - mass_matrix(arm, q - h * qd)) / (2 * h)
        skew_err = max(skew_err, abs(x @ (Mdot - 2 * c) @ x))

    odd = True
    for fr in (FrictionModel.viscous_coulomb(0.1, 0.2), FrictionModel.stribeck(0.5, 0.5, 1.5, 0.2)):
        v = rng.uniform(-5, 5, 1000)
        odd &= bool(np.array_equal(friction_torque(fr, -v), -friction_torque(fr, v)))
        odd &= friction_torque(fr, 0.0) == 0.0
    elapsed = time.perf_counter() - start

    ok = (sym < 1e-12 and min_eig > 0 and grav_err < 1e-6 and skew_err < 1e-8 and odd
          and elapsed < 10.0)
    verdict(1, ok, f"sym {sym:.1e}, min eig {min_eig:.3f}, gravity rel err {grav_err:.1e}, "
                   f"x'(Mdot-2C)x {skew_err:.1e}, friction odd {odd}, {elapsed:.1f}s")


# --------------------------------------------------------------------------- 2

def test_criterion_2_integrator_accuracy(verdict):
    dt = 1e-3
    # small-angle pendulum against its linearization M q'' + (k_p + m g l) q = 0
    model = RobotModel.pendulum()
    A, w = 0.01, math.sqrt(50.0 + 9.81)
    state, lin_err = RobotState([A], [0.0]), 0.0
    for _ in range(1000):
        state = step_rk4(model, state, [0.0], dt)
        lin_err = max(lin_err, abs(state.theta[0] - A * math.cos(w * state.time)))

    # gravity-free damped pendulum: exactly linear, closed form at large amplitude
    damped = RobotModel.pendulum(gravity=0.0, friction=FrictionModel.viscous_coulomb(0.4, 0.0))
    w0, zeta = math.sqrt(50.0), 0.4 / (2 * math.sqrt(50.0))
    wd = w0 * math.sqrt(1 - zeta ** 2)
    state, osc_err = RobotState([0.5], [0.0]), 0.0
    for _ in range(1000):
        state = step_rk4(damped, state, [0.0], dt)
        t = state.time
        exact = 0.5 * math.exp(-zeta * w0 * t) * (math.cos(wd * t) + zeta * w0 / wd * math.sin(wd * t))
        osc_err = max(osc_err, abs(state.theta[0] - exact))

    # undamped pendulum energy over 10 s
    u = np.array([0.2])
    q0, qd0 = np.array([1.0]), np.array([0.0])
    E0 = total_energy(model, RobotState(q0, qd0, theta_m=u))
    q, qd, _ = integrate_reduced(model, q0, qd0, u, dt, steps=10_000)
    drift = abs(total_energy(model, RobotState(q, qd, theta_m=u)) - E0) / abs(E0)

    ok = lin_err < 1e-6 and osc_err < 1e-6 and drift < 1e-6
    verdict(2, ok, f"linearized max err {lin_err:.1e}, damped oscillator max err {osc_err:.1e}, "
                   f"energy drift {drift:.1e}")


# --------------------------------------------------------------------------- 3

def test_criterion_3_gradients_and_frozen_head(verdict, pendulum_trained, pendulum_data):
    worst = 0.0
    h = 1e-6
    for seed in range(6):
        rng = np.random.default_rng(seed)
        n = 1 + seed % 2
        hidden = [(), (int(rng.integers(2, 11)),), tuple(int(v) for v in rng.integers(2, 11, 2))][seed % 3]
        net, out = init_regressor(n, basis_dim=int(rng.integers(2, 6)), hidden=hidden,
                                  activation=("tanh", "relu")[seed % 2 if hidden else 0], seed=seed)
        out.a_hat = rng.normal(size=net.basis_dim)
        batch = TrainBatch(rng.normal(size=(9, 4 * n)), rng.normal(size=(9, n)))
        grads = backprop(net, out, batch, freeze_output=False, l2_lambda=1e-3)
        for arr, g in zip([*net.weights, *net.biases, out.a_hat], grads.as_list()):
            fd = np.empty_like(arr)
            for idx in np.ndindex(arr.shape):
                keep = arr[idx]
                arr[idx] = keep + h
                up = loss_mse_l2(predict(net, out, batch.inputs), batch.targets, net, 1e-3)
                arr[idx] = keep - h
                down = loss_mse_l2(predict(net, out, batch.inputs), batch.targets, net, 1e-3)
                arr[idx] = keep
                fd[idx] = (up - down) / (2 * h)
            worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))

    net, out, _ = pendulum_trained
    before = out.a_hat.tobytes()
    retrain_online(net, out, pendulum_data.subset(np.arange(600)), passes=5, seed=0)
    frozen = out.a_hat.tobytes() == before
    verdict(3, worst < 1e-5 and frozen, f"max relative gradient error {worst:.1e}, a_hat bitwise frozen {frozen}")


# --------------------------------------------------------------------------- 4

def test_criterion_4_exact_regressor_closed_loop(verdict):
    start = time.perf_counter()
    cfg = load_preset("pendulum_exact")
    sc = cfg.scenario()
    log = run_scenario(sc, ADAPTIVE, AnalyticRegressor(sc.model), OutputLayer(true_parameters(sc.model)),
                       true_params=true_parameters)
    elapsed = time.perf_counter() - start
    e_late = float(np.max(np.abs(log.e[log.time >= 5.0])))
    dV = float(np.max(np.diff(log.V)))
    ok = e_late < 1e-3 and dV <= 1e-6 and elapsed < 30.0
    verdict(4, ok, f"max |e| after 5 s {e_late:.2e} rad, max dV per tick {dV:.1e}, {elapsed:.1f}s "
                   f"at {sc.control_rate:g} Hz")


# --------------------------------------------------------------------------- 5

def test_criterion_5_friction_switch(verdict):
    start = time.perf_counter()
    cfg = load_preset("pendulum_friction")
    net, out, _ = cfg.train(cfg.collect(seed=0), seed=0)
    sc = cfg.scenario(seed=0)
    windows = [(3, 5), (10, 15), (40, 45)]
    plain = compute_metrics(run_scenario(sc, ADAPTIVE, net, out), windows).window_mean_abs[:, 0]
    retrain = compute_metrics(run_scenario(sc, ADAPTIVE_RETRAIN, net, out), windows).window_mean_abs[:, 0]
    elapsed = time.perf_counter() - start
    a, b, c, d = plain[0], plain[1], plain[2], retrain[2]
    ok = (b >= MARGIN * a and b >= MARGIN * c and c >= MARGIN * d and elapsed < 300.0)
    verdict(5, ok, f"mean |e| converged {a:.5f} < after switch {b:.5f} > adapted {c:.5f} "
                   f"> retrained {d:.5f} (baseline/retrain {c / d:.2f}x), {elapsed:.0f}s")


# --------------------------------------------------------------------------- 6

def test_criterion_6_payload(verdict, arm_trained):
    net, out, _ = arm_trained
    cfg = load_preset("arm_payload")
    sc = cfg.scenario(seed=0)
    plain = compute_metrics(run_scenario(sc, ADAPTIVE, net, out), cfg.windows).frobenius
    retrain = compute_metrics(run_scenario(sc, ADAPTIVE_RETRAIN, net, out), cfg.windows).frobenius
    ok = (plain[1] >= MARGIN * plain[0]                 # rise after attaching the payload
          and plain[1] >= MARGIN * plain[2]             # fall once adaptation is on
          and retrain[2] >= MARGIN * retrain[3]         # further fall after retraining
          and plain[3] >= MARGIN * retrain[3]           # ... that the adaptive-only run does not match
          and plain[4] >= MARGIN * retrain[4])
    verdict(6, ok, f"Frobenius no-retrain {np.round(plain, 3).tolist()}, "
                   f"retrain {np.round(retrain, 3).tolist()}")


# --------------------------------------------------------------------------- 7

def test_criterion_7_pd_vs_adaptive(verdict, arm_cfg, arm_trained):
    net, out, _ = arm_trained
    sc = arm_cfg.scenario(seed=0)
    pd = compute_metrics(run_scenario(sc, PD))
    ad = compute_metrics(run_scenario(sc, ADAPTIVE, net, out))
    ok = bool(np.all(ad.l2 < pd.l2) and np.all(ad.linf < pd.linf))
    verdict(7, ok, f"l2 PD {np.round(pd.l2, 3).tolist()} vs adaptive {np.round(ad.l2, 3).tolist()}; "
                   f"linf PD {np.round(pd.linf, 4).tolist()} vs adaptive {np.round(ad.linf, 4).tolist()}")


# --------------------------------------------------------------------------- 8

def test_criterion_8_offline_training(verdict, pendulum_cfg, pendulum_data):
    net, out = pendulum_cfg.init_network(seed=0)
    opts = pendulum_cfg.network_options()
    assert (opts["learning_rate"], opts["batch_size"], opts["split"], opts["epochs"]) == (1e-3, 256, 0.8, 5)
    runs = [train_offline(net, out, pendulum_data, seed=0) for _ in range(2)]
    hist = runs[0][2]
    same = (runs[0][2].test_mse == runs[1][2].test_mse
            and all(a.tobytes() == b.tobytes() for a, b in zip(runs[0][0].weights, runs[1][0].weights))
            and runs[0][1].a_hat.tobytes() == runs[1][1].a_hat.tobytes())
    ratio = hist.test_mse[-1] / hist.test_mse[0]
    ok = len(pendulum_data) == 6000 and ratio < 0.1 and same
    verdict(8, ok, f"held-out MSE {hist.test_mse[0]:.3e} -> {hist.test_mse[-1]:.3e} "
                   f"(ratio {ratio:.1e}) on {len(pendulum_data)} samples, bitwise reproducible {same}")


# --------------------------------------------------------------------------- 9

def test_criterion_9_determinism(verdict, tmp_path, arm_cfg, arm_trained):
    files = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        d.mkdir()
        assert main(["collect", "--config", "pendulum_friction", "--out", str(d / "data.csv"), "--seed", "7"]) == 0
        assert main(["train", "--config", "pendulum_friction", "--data", str(d / "data.csv"),
                     "--weights", str(d / "net.txt"), "--loss", str(d / "loss.csv"), "--seed", "7"]) == 0
        assert main(["run", "--config", "pendulum_friction", "--weights", str(d / "net.txt"),
                     "--out", str(d / "run.csv"), "--metrics", str(d / "metrics.csv"), "--seed", "7"]) == 0
        net, out, _ = arm_trained
        export_csv(run_scenario(arm_cfg.scenario(seed=7), ADAPTIVE, net, out), d / "arm.csv")
        files.append(d)
    names = ["data.csv", "net.txt", "loss.csv", "run.csv", "metrics.csv", "arm.csv"]
    match, mismatch, errors = filecmp.cmpfiles(files[0], files[1], names, shallow=False)
    verdict(9, match == names, f"{len(match)}/{len(names)} artifacts bitwise identical across two seeded runs"
                               + (f"; differing {mismatch + errors}" if mismatch or errors else ""))
