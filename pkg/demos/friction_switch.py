"""Pendulum friction switch at 5 s, adaptation from 15 s, retraining every 6 s after 21 s.

Prints the windowed mean |e| with and without retraining.
"""
from flexadapt import ADAPTIVE, ADAPTIVE_RETRAIN, compute_metrics, load_preset, run_scenario

cfg = load_preset("pendulum_friction")
data = cfg.collect(seed=0)
net, out, hist = cfg.train(data, seed=0)
print(f"{len(data)} samples, held-out MSE {hist.test_mse[0]:.3e} -> {hist.test_mse[-1]:.3e}")

sc = cfg.scenario(seed=0)
for name, ctrl in [("adaptive", ADAPTIVE), ("adaptive+retrain", ADAPTIVE_RETRAIN)]:
    rep = compute_metrics(run_scenario(sc, ctrl, net, out), cfg.windows)
    cells = "  ".join(f"[{a:g},{b:g}) {m:.5f}" for (a, b), m in zip(cfg.windows, rep.window_mean_abs[:, 0]))
    print(f"{name:17s} {cells}")
