"""Flexible-joint planar manipulator dynamics.

The link side obeys

    M(theta) theta_ddot + C(theta, theta_dot) theta_dot + G(theta) + f(theta_dot)
        + k_p (theta - theta_m) = 0

and, in the full two-mass model, the motor side obeys

    J_m theta_m_ddot + k_p (theta_m - theta) = tau.

Links are planar, revolute, and measured from the downward vertical, so a
pendulum hangs at theta = 0.  Each link carries a point mass at its centre-of-mass
offset; an optional payload is a further point mass at the distal tip.

All functions accept a single configuration of shape ``(n,)`` or a batch of
shape ``(B, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
import math

import numpy as np


class DynamicsError(ValueError):
    """Invalid model, malformed input, or a diverged simulation."""


class FrictionKind(str, Enum):
    VISCOUS_COULOMB = "viscous_coulomb"
    STRIBECK = "stribeck"


@dataclass(frozen=True)
class FrictionModel:
    kind: FrictionKind = FrictionKind.VISCOUS_COULOMB
    viscous: float = 0.0
    coulomb: float = 0.0
    static: float = 0.0
    stribeck_velocity: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", FrictionKind(self.kind))
        if self.viscous < 0 or self.coulomb < 0:
            raise DynamicsError("friction coefficients must be non-negative")
        if self.kind is FrictionKind.STRIBECK:
            if self.static < self.coulomb:
                raise DynamicsError("Stribeck static level must be >= Coulomb level")
            if not self.stribeck_velocity > 0:
                raise DynamicsError("Stribeck velocity must be positive")

    @classmethod
    def viscous_coulomb(cls, viscous=0.0, coulomb=0.0):
        return cls(FrictionKind.VISCOUS_COULOMB, viscous, coulomb)

    @classmethod
    def stribeck(cls, viscous, coulomb, static, stribeck_velocity):
        return cls(FrictionKind.STRIBECK, viscous, coulomb, static, stribeck_velocity)


def friction_torque(fr: FrictionModel, theta_dot):
    """Friction torque opposing motion; odd in velocity with sgn(0) = 0."""
    v = np.asarray(theta_dot, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DynamicsError("non-finite velocity passed to friction model")
    level = fr.coulomb
    if fr.kind is FrictionKind.STRIBECK:
        level = fr.coulomb + (fr.static - fr.coulomb) * np.exp(-((v / fr.stribeck_velocity) ** 2))
    return fr.viscous * v + level * np.sign(v)


@dataclass(frozen=True)
class RobotModel:
    """Physical parameters of an n-joint planar flexible-joint chain.

    ``friction`` holds one FrictionModel per joint.  ``joint_stiffness`` is the
    scalar k_p shared by every joint; ``motor_inertia`` is the diagonal of J_m.
    """

    link_masses: tuple
    link_lengths: tuple
    com_offsets: tuple
    gravity: float = 9.81
    joint_stiffness: float = 50.0
    motor_inertia: tuple = None
    friction: tuple = None
    payload_mass: float = 0.0
    _points: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.link_masses))
        lengths = tuple(float(v) for v in np.atleast_1d(self.link_lengths))
        offsets = tuple(float(v) for v in np.atleast_1d(self.com_offsets))
        n = len(masses)
        if n == 0 or len(lengths) != n or len(offsets) != n:
            raise DynamicsError("link_masses, link_lengths and com_offsets must share length n >= 1")
        jm = self.motor_inertia
        jm = (0.01,) * n if jm is None else tuple(float(v) for v in np.broadcast_to(jm, (n,)))
        fr = self.friction
        if fr is None:
            fr = (FrictionModel(),) * n
        elif isinstance(fr, FrictionModel):
            fr = (fr,) * n
        else:
            fr = tuple(fr)
        if len(fr) != n:
            raise DynamicsError("need one friction model per joint")
        if min(masses) <= 0 or min(lengths) <= 0 or min(offsets) <= 0 or min(jm) <= 0:
            raise DynamicsError("masses, lengths, com offsets and motor inertias must be positive")
        if not self.joint_stiffness > 0:
            raise DynamicsError("joint stiffness must be positive")
        if self.payload_mass < 0:
            raise DynamicsError("payload mass must be non-negative")
        for name, value in (("link_masses", masses), ("link_lengths", lengths),
                            ("com_offsets", offsets), ("motor_inertia", jm), ("friction", fr)):
            object.__setattr__(self, name, value)

        # point masses as rows of per-link lever weights
        pts_m, pts_w = [], []
        for i in range(n):
            w = np.zeros(n)
            w[:i] = lengths[:i]
            w[i] = offsets[i]
            pts_m.append(masses[i])
            pts_w.append(w)
        if self.payload_mass > 0:
            pts_m.append(float(self.payload_mass))
            pts_w.append(np.array(lengths))
        object.__setattr__(self, "_points", (np.array(pts_m), np.array(pts_w)))

    @property
    def n_joints(self) -> int:
        return len(self.link_masses)

    def with_payload(self, mass: float) -> "RobotModel":
        return replace(self, payload_mass=float(mass))

    def with_friction(self, friction) -> "RobotModel":
        return replace(self, friction=friction)

    @classmethod
    def pendulum(cls, mass=1.0, length=1.0, **kw):
        return cls((mass,), (length,), (length,), **kw)

    @classmethod
    def two_link_arm(cls, masses=(2.0, 1.0), lengths=(1.0, 1.0), com_offsets=(0.5, 0.5), **kw):
        return cls(masses, lengths, com_offsets, **kw)


@dataclass
class RobotState:
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray = None
    theta_m: np.ndarray = None
    theta_m_dot: np.ndarray = None
    time: float = 0.0

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float).reshape(-1)
        n = self.theta.size
        self.theta_dot = _vec(self.theta_dot, n, "theta_dot")
        self.theta_ddot = np.zeros(n) if self.theta_ddot is None else _vec(self.theta_ddot, n, "theta_ddot")
        self.theta_m = self.theta.copy() if self.theta_m is None else _vec(self.theta_m, n, "theta_m")
        self.theta_m_dot = np.zeros(n) if self.theta_m_dot is None else _vec(self.theta_m_dot, n, "theta_m_dot")
        for name in ("theta", "theta_dot", "theta_ddot", "theta_m", "theta_m_dot"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DynamicsError(f"non-finite {name} at t={self.time:.4f}s")


def _vec(x, n, name):
    x = np.array(x, dtype=float).reshape(-1)
    if x.size != n:
        raise DynamicsError(f"{name} has length {x.size}, expected {n}")
    return x


def _check(model, *arrays):
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.ndim not in (1, 2) or a.shape[-1] != model.n_joints:
            raise DynamicsError(f"expected trailing dimension {model.n_joints}, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DynamicsError("non-finite joint vector")
        out.append(a)
    if len({a.shape for a in out}) > 1:
        raise DynamicsError("joint vectors have mismatched shapes")
    return out


def _kinematics(model, theta, second=False):
    """Point-mass Jacobians (and their derivative table) for a batch.

    Returns J with shape (B, P, n, 2): column k of point p's Jacobian.  With
    ``second`` also returns dJ with shape (B, P, n, n, 2) where dJ[..., a, l, :]
    is the derivative of column a with respect to theta_l.
    """
    masses, weights = model._points
    phi = np.cumsum(theta, axis=-1)                                 # (B, n)
    du = np.stack([np.cos(phi), np.sin(phi)], axis=-1)              # d/dphi of (sin, -cos)
    terms = weights[None, :, :, None] * du[:, None, :, :]           # (B, P, n, 2)
    J = np.flip(np.cumsum(np.flip(terms, 2), axis=2), 2)
    if not second:
        return J
    ddu = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
    tail = weights[None, :, :, None] * ddu[:, None, :, :]
    S = np.flip(np.cumsum(np.flip(tail, 2), axis=2), 2)
    n = model.n_joints
    idx = np.maximum.outer(np.arange(n), np.arange(n))
    return J, S[:, :, idx, :]


def _batch(x):
    x = np.asarray(x, dtype=float)
    return x[None] if x.ndim == 1 else x


def _unbatch(out, like):
    return out[0] if np.ndim(like) == 1 else out


def mass_matrix(model: RobotModel, theta):
    (theta,) = _check(model, theta)
    J = _kinematics(model, _batch(theta))
    M = np.einsum("p,bpaj,bpcj->bac", model._points[0], J, J)
    return _unbatch(M, theta)


def mass_matrix_derivatives(model: RobotModel, theta):
    """Partial derivatives dM/dtheta_l, returned with shape (..., l, n, n)."""
    (theta,) = _check(model, theta)
    J, dJ = _kinematics(model, _batch(theta), second=True)
    # dM[l, a, c] = sum_p m_p (dJ[a, l] . J[c] + J[a] . dJ[c, l])
    half = np.einsum("p,bpalj,bpcj->blac", model._points[0], dJ, J)
    dM = half + np.swapaxes(half, -1, -2)
    return _unbatch(dM, theta)


def coriolis_matrix(model: RobotModel, theta, theta_dot):
    """C(theta, theta_dot) from Christoffel symbols, so M_dot - 2C is skew."""
    theta, theta_dot = _check(model, theta, theta_dot)
    dM = mass_matrix_derivatives(model, _batch(theta))
    qd = _batch(theta_dot)
    # C[a, c] = 1/2 sum_l (dM_l[a, c] + dM_c[a, l] - dM_a[c, l]) qd_l
    C = 0.5 * (np.einsum("blac,bl->bac", dM, qd)
               + np.einsum("bcal,bl->bac", dM, qd)
               - np.einsum("bacl,bl->bac", dM, qd))
    return _unbatch(C, theta)


def gravity_torque(model: RobotModel, theta):
    """Gravity term G(theta) = dU/dtheta as it appears on the left-hand side."""
    (theta,) = _check(model, theta)
    J = _kinematics(model, _batch(theta))
    G = model.gravity * np.einsum("p,bpk->bk", model._points[0], J[..., 1])
    return _unbatch(G, theta)


def potential_energy(model: RobotModel, theta):
    (theta,) = _check(model, theta)
    masses, weights = model._points
    phi = np.cumsum(_batch(theta), axis=-1)
    height = -np.einsum("pj,bj->bp", weights, np.cos(phi))
    U = model.gravity * height @ masses
    return U[0] if np.ndim(theta) == 1 else U


def joint_friction(model: RobotModel, theta_dot):
    qd = np.asarray(theta_dot, dtype=float)
    fr = model.friction
    if all(f == fr[0] for f in fr):
        return friction_torque(fr[0], qd)
    return np.stack([friction_torque(f, qd[..., j]) for j, f in enumerate(fr)], axis=-1)


def _link_terms(model, theta, theta_dot):
    """M, C theta_dot, G and friction for a batch in one kinematics pass."""
    J, dJ = _kinematics(model, theta, second=True)
    m = model._points[0]
    M = np.einsum("p,bpaj,bpcj->bac", m, J, J)
    # (C qd)_a = sum_{c,l} Gamma_{a c l} qd_c qd_l = sum dM_l[a,c] qd_c qd_l - 1/2 dM_a[c,l] qd_c qd_l
    half = np.einsum("p,bpalj,bpcj->blac", m, dJ, J)
    dM = half + np.swapaxes(half, -1, -2)
    Cqd = (np.einsum("blac,bc,bl->ba", dM, theta_dot, theta_dot)
           - 0.5 * np.einsum("bacl,bc,bl->ba", dM, theta_dot, theta_dot))
    G = model.gravity * np.einsum("p,bpk->bk", m, J[..., 1])
    return M, Cqd, G, joint_friction(model, theta_dot)


def link_accel_reduced(model: RobotModel, state_or_theta, theta_dot=None, theta_m=None):
    """Link acceleration of the reduced model driven by motor position theta_m.

    Accepts either ``(model, state, theta_m)`` or ``(model, theta, theta_dot, theta_m)``.
    """
    if isinstance(state_or_theta, RobotState):
        theta_m = theta_dot if theta_m is None else theta_m
        theta, theta_dot = state_or_theta.theta, state_or_theta.theta_dot
    else:
        theta = state_or_theta
    theta, theta_dot, theta_m = _check(model, theta, theta_dot, theta_m)
    M, Cqd, G, f = _link_terms(model, _batch(theta), _batch(theta_dot))
    kp = model.joint_stiffness
    rhs = kp * _batch(theta_m) - Cqd - G - kp * _batch(theta) - f
    return _unbatch(_solve(M, rhs), theta)


def full_accel(model: RobotModel, state: RobotState, tau):
    """Return (theta_ddot, theta_m_ddot) of the two-mass model under motor torque tau."""
    theta, qd, qm, qmd, tau = _check(model, state.theta, state.theta_dot, state.theta_m,
                                     state.theta_m_dot, tau)
    return _full_accel(model, theta, qd, qm, qmd, tau)


def _full_accel(model, theta, qd, qm, qmd, tau):
    M, Cqd, G, f = _link_terms(model, _batch(theta), _batch(qd))
    kp = model.joint_stiffness
    spring = kp * (_batch(theta) - _batch(qm))
    qdd = _solve(M, -Cqd - G - f - spring)
    qmdd = (_batch(tau) + spring) / np.asarray(model.motor_inertia)
    return _unbatch(qdd, theta), _unbatch(qmdd, theta)


def _solve(M, rhs):
    if M.shape[-1] == 1:
        return rhs / M[..., 0]
    try:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise DynamicsError("singular mass matrix") from exc


def total_energy(model: RobotModel, state: RobotState, full=True):
    """Kinetic + gravitational + spring energy (motor kinetic energy if ``full``)."""
    M = mass_matrix(model, state.theta)
    E = 0.5 * state.theta_dot @ M @ state.theta_dot + potential_energy(model, state.theta)
    if full:
        d = state.theta - state.theta_m
        E += 0.5 * model.joint_stiffness * d @ d
        E += 0.5 * np.dot(model.motor_inertia, state.theta_m_dot ** 2)
    return float(E)


REDUCED = "reduced"
FULL = "full"


def _scalar_friction(fr):
    b, c = fr.viscous, fr.coulomb
    if fr.kind is FrictionKind.STRIBECK:
        extra, vs = fr.static - fr.coulomb, fr.stribeck_velocity

        def f(v):
            if v == 0.0:
                return 0.0
            level = c + extra * math.exp(-(v / vs) ** 2)
            return b * v + (level if v > 0 else -level)
    else:
        def f(v):
            if v == 0.0:
                return 0.0
            return b * v + (c if v > 0 else -c)
    return f


def reduced_accel_fn(model: RobotModel):
    """Closed-form link acceleration (theta, theta_dot, theta_m) -> theta_ddot.

    Uses scalar arithmetic for one- and two-joint chains, which dominate the cost
    of scenario runs; longer chains fall back to the generic batched routine.
    Inputs and outputs are plain sequences of floats.
    """
    n = model.n_joints
    kp, g = model.joint_stiffness, model.gravity
    masses, weights = model._points
    fric = [_scalar_friction(f) for f in model.friction]
    if n == 1:
        inertia = float(masses @ weights[:, 0] ** 2)
        mgl = g * float(masses @ weights[:, 0])
        f0 = fric[0]

        def acc(q, qd, u):
            return ((kp * (u[0] - q[0]) - mgl * math.sin(q[0]) - f0(qd[0])) / inertia,)
        return acc
    if n == 2:
        l1 = model.link_lengths[0]
        m1r1 = float(masses[0] * weights[0, 0])
        i1 = float(masses[0] * weights[0, 0] ** 2)
        distal_m = masses[1:]
        distal_d = weights[1:, 1]
        mu = float(distal_m.sum())
        alpha = float(distal_m @ distal_d ** 2)
        beta = float(distal_m @ distal_d)
        base11 = i1 + mu * l1 * l1 + alpha
        g1 = g * (m1r1 + mu * l1)
        gb = g * beta
        lb = l1 * beta
        fa, fb = fric

        def acc(q, qd, u):
            q1, q2 = q
            v1, v2 = qd
            c2, s2 = math.cos(q2), math.sin(q2)
            m11 = base11 + 2.0 * lb * c2
            m12 = alpha + lb * c2
            h = lb * s2
            s12 = math.sin(q1 + q2)
            r1 = kp * (u[0] - q1) + h * (2.0 * v1 * v2 + v2 * v2) - g1 * math.sin(q1) - gb * s12 - fa(v1)
            r2 = kp * (u[1] - q2) - h * v1 * v1 - gb * s12 - fb(v2)
            det = m11 * alpha - m12 * m12
            return ((alpha * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det)
        return acc

    def acc(q, qd, u):
        return tuple(link_accel_reduced(model, np.array(q), np.array(qd), np.array(u)))
    return acc


def integrate_reduced(model: RobotModel, theta, theta_dot, theta_m, dt, steps=1, accel=None):
    """RK4-integrate the reduced model for ``steps`` steps with theta_m held.

    Returns (theta, theta_dot, theta_ddot) as arrays; theta_ddot is evaluated at
    the final state under the held input.
    """
    acc = accel or reduced_accel_fn(model)
    u = tuple(float(v) for v in theta_m)
    q = tuple(float(v) for v in theta)
    v = tuple(float(x) for x in theta_dot)
    h, h2, h6 = dt, 0.5 * dt, dt / 6.0
    nan = (math.nan,) * len(q)
    try:
        for _ in range(steps):
            a1 = acc(q, v, u)
            qa = tuple(x + h2 * y for x, y in zip(q, v))
            va = tuple(x + h2 * y for x, y in zip(v, a1))
            a2 = acc(qa, va, u)
            qb = tuple(x + h2 * y for x, y in zip(q, va))
            vb = tuple(x + h2 * y for x, y in zip(v, a2))
            a3 = acc(qb, vb, u)
            qc = tuple(x + h * y for x, y in zip(q, vb))
            vc = tuple(x + h * y for x, y in zip(v, a3))
            a4 = acc(qc, vc, u)
            q = tuple(x + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                      for x, k1, k2, k3, k4 in zip(q, v, va, vb, vc))
            v = tuple(x + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                      for x, k1, k2, k3, k4 in zip(v, a1, a2, a3, a4))
            if not all(math.isfinite(x) for x in v + q):
                break
        qdd = acc(q, v, u) if all(math.isfinite(x) for x in v + q) else nan
    except (ValueError, OverflowError):
        # math.sin(inf) and friends: report the blow-up as non-finite state
        q = v = qdd = nan
    return np.array(q), np.array(v), np.array(qdd)


def step_rk4(model: RobotModel, state: RobotState, u, dt: float = 1e-3, mode: str = REDUCED,
             motor_pd=None) -> RobotState:
    """Advance one classical Runge-Kutta step with the input held constant.

    In reduced mode ``u`` is the motor position theta_m.  In full mode ``u`` is
    the motor torque, unless ``motor_pd=(kp, kd)`` is given, in which case ``u``
    is a motor position command tracked by tau = kp (u - theta_m) - kd theta_m_dot
    evaluated continuously inside the step.
    """
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    n = model.n_joints
    u = _vec(u, n, "input")
    t1 = state.time + dt

    if mode == REDUCED:
        q, qd, qdd = integrate_reduced(model, state.theta, state.theta_dot, u, dt)
        new = dict(theta=q, theta_dot=qd, theta_ddot=qdd, theta_m=u, theta_m_dot=np.zeros(n))
    elif mode == FULL:
        x = np.concatenate([state.theta, state.theta_dot, state.theta_m, state.theta_m_dot])

        def torque(x):
            if motor_pd is None:
                return u
            kp, kd = motor_pd
            return kp * (u - x[2 * n:3 * n]) - kd * x[3 * n:]

        def f(x):
            qdd, qmdd = _full_accel(model, x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:], torque(x))
            return np.concatenate([x[n:2 * n], qdd, x[3 * n:], qmdd])

        x1 = _rk4(f, x, dt)
        qdd = f(x1)[n:2 * n] if np.all(np.isfinite(x1)) else x1[:n]
        new = dict(theta=x1[:n], theta_dot=x1[n:2 * n], theta_ddot=qdd,
                   theta_m=x1[2 * n:3 * n], theta_m_dot=x1[3 * n:])
    else:
        raise DynamicsError(f"unknown integration mode {mode!r}")

    if not all(np.all(np.isfinite(v)) for v in new.values()):
        raise DynamicsError(f"simulation diverged at t={t1:.4f}s")
    return RobotState(time=t1, **new)


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def static_equilibrium(model: RobotModel, theta_m, iters=200, tol=1e-13):
    """Link position where gravity balances the spring for a fixed motor position."""
    theta_m = _vec(theta_m, model.n_joints, "theta_m")
    theta = theta_m.copy()
    for _ in range(iters):
        nxt = theta_m - gravity_torque(model, theta) / model.joint_stiffness
        if np.max(np.abs(nxt - theta)) < tol:
            return nxt
        theta = nxt
    return theta


def analytic_regressor(model: RobotModel, theta_dot_1, theta, theta_dot_2, theta_ddot):
    """Exact pendulum regressor Y and parameter vector a with Y a = k_p^-1 (...).

    Columns are (theta_ddot, sin theta, theta, theta_dot_1, sgn theta_dot_1); the
    friction columns assume a viscous + Coulomb model evaluated at theta_dot_1.
    """
    if model.n_joints != 1:
        raise NotImplementedError("analytic regressor is only available for the single pendulum")
    fr = model.friction[0]
    if fr.kind is not FrictionKind.VISCOUS_COULOMB:
        raise NotImplementedError("analytic regressor assumes viscous + Coulomb friction")
    v1, q, _, qdd = (float(np.asarray(x, dtype=float).reshape(-1)[0])
                     for x in (theta_dot_1, theta, theta_dot_2, theta_ddot))
    Y = np.array([[qdd, np.sin(q), q, v1, np.sign(v1)]])
    return Y, true_parameters(model)


def true_parameters(model: RobotModel):
    if model.n_joints != 1:
        raise NotImplementedError("analytic regressor is only available for the single pendulum")
    m, r, l = model.link_masses[0], model.com_offsets[0], model.link_lengths[0]
    ml2 = m * r ** 2 + model.payload_mass * l ** 2
    mgl = model.gravity * (m * r + model.payload_mass * l)
    fr = model.friction[0]
    kp = model.joint_stiffness
    return np.array([ml2, mgl, kp, fr.viscous, fr.coulomb]) / kp


class AnalyticRegressor:
    """Callable regressor with the same calling convention as RegressorNet."""

    def __init__(self, model: RobotModel):
        self.model = model
        self.basis_dim = 5
        self.n_joints = 1
        self.version = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return analytic_regressor(self.model, x[0], x[1], x[2], x[3])[0]
