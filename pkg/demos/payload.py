"""Two-link arm: 0.2 kg payload at 25 s, adaptation at 50 s, retraining from 75 s.

Reproduces the windowed Frobenius table for both controllers, and the PD
baseline comparison on the same trained network.
"""
import numpy as np

from flexadapt import ADAPTIVE, ADAPTIVE_RETRAIN, PD, compute_metrics, load_preset, run_scenario

bench = load_preset("arm_benchmark")
net, out, hist = bench.train(bench.collect(seed=0), seed=0)

sc = bench.scenario(seed=0)
pd = compute_metrics(run_scenario(sc, PD))
ad = compute_metrics(run_scenario(sc, ADAPTIVE, net, out))
print("joint   l2 PD   l2 adaptive   linf PD   linf adaptive")
for j in range(2):
    print(f"{j + 1:5d} {pd.l2[j]:7.3f} {ad.l2[j]:13.3f} {pd.linf[j]:9.4f} {ad.linf[j]:15.4f}")

cfg = load_preset("arm_payload")
sc = cfg.scenario(seed=0)
print("\nFrobenius norm per window " + " ".join(f"[{a:g},{b:g})" for a, b in cfg.windows))
for name, ctrl in [("adaptive", ADAPTIVE), ("adaptive+retrain", ADAPTIVE_RETRAIN)]:
    rep = compute_metrics(run_scenario(sc, ctrl, net, out), cfg.windows)
    print(f"{name:17s}", np.round(rep.frobenius, 3))
