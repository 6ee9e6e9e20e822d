"""Outer-loop tracking controllers that command the motor position theta_m.

The adaptive law is

    theta_m = Y(theta_r_dot, theta, theta_dot, theta_r_ddot) a_hat - K_s s - k sgn(s)
    a_hat_dot = -P Y^T s

with s = e_dot + Lambda e and e = theta - theta_d.  The ideal sgn is replaced by
tanh(s / phi) and the adaptation law is integrated with explicit Euler at the
control period.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import mass_matrix
from .network import OutputLayer, RegressorNet, forward_regressor


class ControllerFault(RuntimeError):
    pass


def _diag(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        if not np.allclose(x, np.diag(np.diag(x))):
            raise ValueError(f"{name} must be diagonal")
        x = np.diag(x)
    return np.array(np.broadcast_to(x, (n,)), dtype=float)


def as_matrix(P, N):
    """Adaptation-rate matrix from a scalar (P I), a diagonal, or a full matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 0:
        return float(P) * np.eye(N)
    if P.ndim == 1:
        return np.diag(P)
    return P


@dataclass
class Gains:
    Lambda: object = 3.0
    K_s: object = 0.1
    k_robust: float = 0.002
    P: object = 0.05
    K1: object = 0.2
    K2: object = 0.1
    phi: float = 0.01

    def __post_init__(self):
        if np.any(np.asarray(self.Lambda) <= 0) or np.any(np.asarray(self.K_s) <= 0):
            raise ValueError("Lambda and K_s must have positive diagonal entries")
        if self.k_robust < 0:
            raise ValueError("robust gain k must be non-negative")
        if not self.phi > 0:
            raise ValueError("boundary layer phi must be positive")
        P = np.asarray(self.P, dtype=float)
        if P.ndim < 2:
            if np.any(P <= 0):
                raise ValueError("P must be positive definite")
        else:
            if not np.allclose(P, P.T) or np.linalg.eigvalsh(P).min() <= 0:
                raise ValueError("P must be symmetric positive definite")

    def diag(self, name, n):
        return _diag(getattr(self, name), n, name)


@dataclass
class ReferenceState:
    theta_d: np.ndarray
    theta_d_dot: np.ndarray
    theta_d_ddot: np.ndarray
    theta_r_dot: np.ndarray
    theta_r_ddot: np.ndarray
    e: np.ndarray
    e_dot: np.ndarray
    s: np.ndarray

    @property
    def theta(self):
        return self.theta_d + self.e

    @property
    def theta_dot(self):
        return self.theta_d_dot + self.e_dot


def reference_signals(theta, theta_dot, theta_d, theta_d_dot, theta_d_ddot, Lambda) -> ReferenceState:
    vecs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in
            (theta, theta_dot, theta_d, theta_d_dot, theta_d_ddot)]
    n = vecs[0].size
    if any(v.shape != (n,) for v in vecs):
        raise ValueError("reference inputs must be vectors of equal length")
    theta, theta_dot, theta_d, theta_d_dot, theta_d_ddot = vecs
    lam = _diag(Lambda, n, "Lambda")
    e = theta - theta_d
    e_dot = theta_dot - theta_d_dot
    return ReferenceState(theta_d, theta_d_dot, theta_d_ddot,
                          theta_r_dot=theta_d_dot - lam * e,
                          theta_r_ddot=theta_d_ddot - lam * e_dot,
                          e=e, e_dot=e_dot, s=e_dot + lam * e)


def pd_control(ref: ReferenceState, K1, K2):
    """Baseline command theta_m = theta_d - K1 e - K2 e_dot."""
    n = ref.e.size
    return ref.theta_d - _diag(K1, n, "K1") * ref.e - _diag(K2, n, "K2") * ref.e_dot


def sgn_smoothed(s, phi):
    if not phi > 0:
        raise ValueError("phi must be positive")
    return np.tanh(np.asarray(s, dtype=float) / phi)


def regressor_input(ref: ReferenceState, theta, theta_dot):
    """Stack (theta_r_dot, theta, theta_dot, theta_r_ddot) as the network expects."""
    return np.concatenate([ref.theta_r_dot, np.atleast_1d(theta), np.atleast_1d(theta_dot),
                           ref.theta_r_ddot])


def evaluate_regressor(regressor, x):
    if isinstance(regressor, RegressorNet):
        return forward_regressor(regressor, x)
    return np.asarray(regressor(x), dtype=float)


@dataclass
class ControlOutput:
    theta_m: np.ndarray
    Y: np.ndarray
    x: np.ndarray


def adaptive_control(regressor, out: OutputLayer, ref: ReferenceState, theta, theta_dot,
                     gains: Gains) -> ControlOutput:
    """Neural adaptive command; the returned Y must be reused by adapt_output_layer."""
    n = ref.s.size
    x = regressor_input(ref, theta, theta_dot)
    Y = evaluate_regressor(regressor, x)
    theta_m = (Y @ out.a_hat
               - gains.diag("K_s", n) * ref.s
               - gains.k_robust * sgn_smoothed(ref.s, gains.phi))
    if not np.all(np.isfinite(theta_m)):
        raise ControllerFault("non-finite motor command")
    return ControlOutput(theta_m, Y, x)


def adapt_output_layer(out: OutputLayer, Y, s, P, dt) -> OutputLayer:
    """Euler step of a_hat_dot = -P Y^T s over one control period."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    a = out.a_hat - dt * (as_matrix(P, out.a_hat.size) @ (Y.T @ s))
    if not np.all(np.isfinite(a)):
        raise ControllerFault("output layer weights became non-finite")
    return OutputLayer(a)


def lyapunov_value(model, ref: ReferenceState, out: OutputLayer, true_a, gains: Gains) -> float:
    """V = 1/2 s^T M(theta) s + 1/2 k_p (a_hat - a)^T P^-1 (a_hat - a)."""
    a_err = out.a_hat - np.asarray(true_a, dtype=float)
    P = as_matrix(gains.P, a_err.size)
    try:
        cho = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise ValueError("P is singular or not positive definite") from exc
    z = np.linalg.solve(cho, a_err)
    M = mass_matrix(model, ref.theta)
    return float(0.5 * ref.s @ M @ ref.s + 0.5 * model.joint_stiffness * (z @ z))
