"""Pendulum with the analytic regressor: tracking error and the Lyapunov trace.

Starts from a 30% parameter error so the adaptation law has something to do.
"""
import numpy as np

from flexadapt import ADAPTIVE, AnalyticRegressor, OutputLayer, load_preset, run_scenario, true_parameters

cfg = load_preset("pendulum_exact")
sc = cfg.scenario()
a_true = true_parameters(sc.model)

for label, a0 in [("true parameters", a_true), ("30% high", 1.3 * a_true)]:
    log = run_scenario(sc, ADAPTIVE, AnalyticRegressor(sc.model), OutputLayer(a0),
                       true_params=true_parameters)
    late = log.time >= 5.0
    print(f"{label:16s} max|e| after 5 s {np.max(np.abs(log.e[late])):.2e} rad   "
          f"max dV/tick {np.max(np.diff(log.V)):.1e}   final V {log.V[-1]:.3e}")
