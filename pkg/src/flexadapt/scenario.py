"""Excitation signals, data collection, scenario execution and tracking metrics."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import control as ctl
from .dynamics import (DynamicsError, FrictionModel, RobotModel, integrate_reduced,
                       reduced_accel_fn, static_equilibrium)
from .network import OutputLayer, RegressorNet, TrainBatch, retrain_online


class ScenarioError(ValueError):
    pass


# --------------------------------------------------------------------------- signals

@dataclass(frozen=True)
class Sinusoid:
    """theta(t) = offset + amplitude * sin(2 pi frequency t + phase)."""
    amplitude: float
    frequency: float
    phase: float = 0.0
    offset: float = 0.0

    def sample(self, t):
        w = 2.0 * math.pi * self.frequency
        arg = w * np.asarray(t, dtype=float) + self.phase
        return (self.offset + self.amplitude * np.sin(arg),
                self.amplitude * w * np.cos(arg),
                -self.amplitude * w * w * np.sin(arg))


def desired_state(trajectory, t):
    """Position, velocity and acceleration vectors of a per-joint sinusoid spec."""
    q, qd, qdd = zip(*(s.sample(t) for s in trajectory))
    return np.array(q, dtype=float), np.array(qd, dtype=float), np.array(qdd, dtype=float)


def schroeder_phases(n_harmonics):
    k = np.arange(1, n_harmonics + 1)
    return -np.pi * k * (k - 1) / n_harmonics


def gen_multisine(n_harmonics, base_freq, amplitude, duration, rate=100.0, phases=None):
    """Flat-spectrum multisine sampled at ``rate``, scaled to peak ``amplitude``.

    Uses Schroeder phases unless ``phases`` is given.  Returns (t, u).
    """
    if n_harmonics < 1:
        raise ScenarioError("need at least one harmonic")
    if not rate > 2.0 * n_harmonics * base_freq:
        raise ScenarioError(f"sample rate {rate} Hz violates Nyquist for "
                            f"{n_harmonics} harmonics of {base_freq} Hz")
    t = np.arange(int(round(duration * rate))) / rate
    ph = schroeder_phases(n_harmonics) if phases is None else np.asarray(phases, dtype=float)
    k = np.arange(1, n_harmonics + 1)
    raw = np.cos(2.0 * np.pi * base_freq * np.outer(t, k) + ph).sum(axis=1)
    return t, amplitude * raw / np.max(np.abs(raw))


def crest_factor(u):
    u = np.asarray(u, dtype=float)
    return float(np.max(np.abs(u)) / np.sqrt(np.mean(u * u)))


def gen_sinusoid_family(count, amplitude_range, freq_range, n_joints, length, seed=0,
                        limits=(-1.0, 1.0), rate=100.0, return_specs=False):
    """Seeded random joint-space sinusoids that stay inside a joint-limit box.

    Each trajectory is an (n_joints, length) array sampled at ``rate``; the
    offset is drawn so that offset +- amplitude lies within the limits.
    """
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (n_joints,)) for v in limits)
    a_lo, a_hi = amplitude_range
    f_lo, f_hi = freq_range
    if min(a_lo, f_lo) <= 0 or a_hi < a_lo or f_hi < f_lo:
        raise ScenarioError("amplitude and frequency ranges must be positive and ordered")
    if np.any(hi <= lo) or a_hi > np.min(hi - lo) / 2.0:
        raise ScenarioError("amplitude range does not fit inside the joint limits")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / rate
    trajs, specs = [], []
    for _ in range(count):
        amp = rng.uniform(a_lo, a_hi, n_joints)
        freq = rng.uniform(f_lo, f_hi, n_joints)
        phase = rng.uniform(0.0, 2.0 * np.pi, n_joints)
        offset = rng.uniform(lo + amp, hi - amp)
        spec = [Sinusoid(*p) for p in zip(amp, freq, phase, offset)]
        q = np.clip(desired_state(spec, t)[0], lo[:, None], hi[:, None])
        trajs.append(q)
        specs.append(spec)
    return (trajs, specs) if return_specs else trajs


def spline_acceleration(t, theta_dot):
    """Differentiate sampled velocities through a cubic spline."""
    return CubicSpline(t, theta_dot, axis=0).derivative()(t)


def collect_dataset(model: RobotModel, excitations, rate=100.0, sim_dt=1e-3) -> TrainBatch:
    """Drive the reduced model with motor-position excitations and record I/O.

    ``excitations`` is a list of (n_joints, T) or (T,) arrays of theta_m samples.
    Each run starts at rest in the static equilibrium of its first command.
    Inputs are rows (theta_dot, theta, theta_dot, theta_ddot) with theta_ddot from
    cubic-spline differentiation of the sampled velocity; targets are theta_m.
    """
    n = model.n_joints
    substeps = _substeps(rate, sim_dt)
    accel = reduced_accel_fn(model)
    inputs, targets = [], []
    for idx, exc in enumerate(excitations):
        u = np.asarray(exc, dtype=float).reshape(n, -1).T          # (T, n)
        T = len(u)
        q = static_equilibrium(model, u[0])
        qd = np.zeros(n)
        Q, QD = np.empty((T, n)), np.empty((T, n))
        for k in range(T):
            Q[k], QD[k] = q, qd
            q, qd, _ = integrate_reduced(model, q, qd, u[k], sim_dt, substeps, accel)
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
                raise DynamicsError(f"simulation diverged on excitation {idx} at sample {k}")
        QDD = spline_acceleration(np.arange(T) / rate, QD)
        inputs.append(np.hstack([QD, Q, QD, QDD]))
        targets.append(u)
    return TrainBatch(np.vstack(inputs), np.vstack(targets))


def _substeps(rate, sim_dt):
    ratio = 1.0 / (rate * sim_dt)
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * ratio:
        raise ScenarioError("control period must be an integer multiple of the integration step")
    return steps


# --------------------------------------------------------------------------- events

@dataclass(frozen=True)
class SwitchFriction:
    friction: FrictionModel


@dataclass(frozen=True)
class AttachPayload:
    mass: float

    def __post_init__(self):
        if self.mass < 0:
            raise ScenarioError("payload mass must be non-negative")


@dataclass(frozen=True)
class EnableAdaptation:
    pass


@dataclass(frozen=True)
class BeginBuffering:
    pass


@dataclass(frozen=True)
class RetrainNow:
    pass


@dataclass(frozen=True)
class Event:
    time: float
    actions: tuple

    def __init__(self, time, *actions):
        object.__setattr__(self, "time", float(time))
        object.__setattr__(self, "actions", tuple(actions))


def periodic_retraining(start, period, until):
    """RetrainNow events at start, start + period, ... strictly before ``until``."""
    out, t = [], start
    while t < until - 1e-9:
        out.append(Event(t, RetrainNow()))
        t += period
    return out


def merge_events(*groups):
    """Combine event lists, joining actions that share a time stamp."""
    by_time = {}
    for ev in (e for g in groups for e in g):
        by_time.setdefault(ev.time, []).extend(ev.actions)
    return [Event(t, *by_time[t]) for t in sorted(by_time)]


PD = "pd"
ADAPTIVE = "adaptive"
ADAPTIVE_RETRAIN = "adaptive_retrain"
CONTROLLERS = (PD, ADAPTIVE, ADAPTIVE_RETRAIN)


@dataclass
class Scenario:
    model: RobotModel
    trajectory: list                 # one Sinusoid per joint
    duration: float
    events: list = field(default_factory=list)
    gains: ctl.Gains = field(default_factory=ctl.Gains)
    control_rate: float = 100.0
    sim_dt: float = 1e-3
    retrain_period: float = 6.0
    retrain_passes: int = 50
    retrain_batch_size: int = 256
    retrain_learning_rate: float = 1e-3
    l2_lambda: float = 1e-4
    seed: int = 0
    theta0: object = None
    theta_dot0: object = None

    def validate(self):
        if len(self.trajectory) != self.model.n_joints:
            raise ScenarioError("need one desired sinusoid per joint")
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioError("event times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.duration):
            raise ScenarioError("event times must lie within [0, duration]")
        if self.control_rate * self.retrain_period < 100:
            raise ScenarioError("retraining must run at least 100x slower than the control loop")
        _substeps(self.control_rate, self.sim_dt)

    @property
    def buffer_capacity(self):
        return int(round(self.retrain_period * self.control_rate))


# --------------------------------------------------------------------------- run log

@dataclass
class RunLog:
    time: np.ndarray
    theta: np.ndarray
    theta_d: np.ndarray
    e: np.ndarray
    s: np.ndarray
    theta_m: np.ndarray
    norm_a_hat: np.ndarray
    net_version: np.ndarray
    V: np.ndarray = None

    @property
    def n_joints(self):
        return self.theta.shape[1]

    def __len__(self):
        return len(self.time)


def run_scenario(scenario: Scenario, controller=ADAPTIVE, net=None, out: OutputLayer = None,
                 true_params=None) -> RunLog:
    """Execute the control loop and return a per-tick log.

    ``net`` is a RegressorNet or any callable x -> Y; retraining requires a
    RegressorNet.  ``true_params(model)``, when given, supplies the exact
    parameter vector used to log the Lyapunov function V.
    """
    scenario.validate()
    if controller not in CONTROLLERS:
        raise ScenarioError(f"unknown controller {controller!r}")
    if controller != PD and (net is None or out is None):
        raise ScenarioError("adaptive control needs a regressor and an output layer")
    if controller == ADAPTIVE_RETRAIN and not isinstance(net, RegressorNet):
        raise ScenarioError("retraining needs a RegressorNet")

    model = scenario.model
    n = model.n_joints
    gains = scenario.gains
    rate = scenario.control_rate
    dt = 1.0 / rate
    substeps = _substeps(rate, scenario.sim_dt)
    ticks = int(round(scenario.duration * rate))
    accel = reduced_accel_fn(model)

    schedule = {}
    for ev in scenario.events:
        schedule.setdefault(int(round(ev.time * rate)), []).extend(ev.actions)

    q_start, qd_start, _ = desired_state(scenario.trajectory, 0.0)
    theta = np.array(q_start if scenario.theta0 is None else scenario.theta0, dtype=float)
    theta_dot = np.array(qd_start if scenario.theta_dot0 is None else scenario.theta_dot0, dtype=float)

    out = out.copy() if out is not None else None
    regressor = net
    version = getattr(net, "version", 0)
    adapting = buffering = False
    buffer = deque(maxlen=scenario.buffer_capacity)
    n_retrains = 0

    cols = {k: np.empty((ticks, n)) for k in ("theta", "theta_d", "e", "s", "theta_m")}
    time = np.arange(ticks) * dt
    norm_a = np.full(ticks, np.nan)
    versions = np.zeros(ticks, dtype=int)
    V = np.full(ticks, np.nan) if true_params is not None else None

    for k in range(ticks):
        t = time[k]
        for action in schedule.get(k, ()):
            if isinstance(action, SwitchFriction):
                model = model.with_friction(action.friction)
                accel = reduced_accel_fn(model)
            elif isinstance(action, AttachPayload):
                model = model.with_payload(action.mass)
                accel = reduced_accel_fn(model)
            elif isinstance(action, EnableAdaptation):
                adapting = controller != PD
            elif isinstance(action, BeginBuffering):
                buffering = controller == ADAPTIVE_RETRAIN
            elif isinstance(action, RetrainNow):
                if controller == ADAPTIVE_RETRAIN and len(buffer) > 3:
                    # runs between ticks; the new weights become the next snapshot
                    regressor = retrain_online(
                        regressor, out, buffer_to_batch(buffer, rate),
                        passes=scenario.retrain_passes, batch_size=scenario.retrain_batch_size,
                        learning_rate=scenario.retrain_learning_rate,
                        l2_lambda=scenario.l2_lambda, seed=scenario.seed + 1000 + n_retrains)
                    n_retrains += 1
                    version = regressor.version

        q_d, qd_d, qdd_d = desired_state(scenario.trajectory, t)
        ref = ctl.reference_signals(theta, theta_dot, q_d, qd_d, qdd_d, gains.Lambda)
        if controller == PD:
            theta_m = ctl.pd_control(ref, gains.K1, gains.K2)
        else:
            cmd = ctl.adaptive_control(regressor, out, ref, theta, theta_dot, gains)
            theta_m = cmd.theta_m
            if V is not None:
                V[k] = ctl.lyapunov_value(model, ref, out, true_params(model), gains)
            norm_a[k] = np.linalg.norm(out.a_hat)
            if adapting:
                out = ctl.adapt_output_layer(out, cmd.Y, ref.s, gains.P, dt)

        cols["theta"][k], cols["theta_d"][k], cols["e"][k] = theta, q_d, ref.e
        cols["s"][k], cols["theta_m"][k] = ref.s, theta_m
        versions[k] = version
        if buffering:
            buffer.append((t, theta.copy(), theta_dot.copy(), theta_m.copy()))

        theta, theta_dot, _ = integrate_reduced(model, theta, theta_dot, theta_m,
                                                scenario.sim_dt, substeps, accel)
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(theta_dot))):
            raise DynamicsError(f"simulation diverged at t={t + dt:.3f}s")

    return RunLog(time, cols["theta"], cols["theta_d"], cols["e"], cols["s"], cols["theta_m"],
                  norm_a, versions, V)


def buffer_to_batch(buffer, rate) -> TrainBatch:
    t = np.array([b[0] for b in buffer])
    q = np.array([b[1] for b in buffer])
    qd = np.array([b[2] for b in buffer])
    um = np.array([b[3] for b in buffer])
    if np.any(np.diff(t) <= 0):
        raise ScenarioError("buffer samples are not time ordered")
    qdd = spline_acceleration(t, qd)
    return TrainBatch(np.hstack([qd, q, qd, qdd]), um)


# --------------------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    l2: np.ndarray                 # per joint, over the whole run
    linf: np.ndarray
    windows: list                  # [(start, end), ...]
    frobenius: np.ndarray          # per window, all joints
    window_l2: np.ndarray          # (n_windows, n_joints)
    window_mean_abs: np.ndarray    # (n_windows, n_joints)


def compute_metrics(log: RunLog, windows=()) -> MetricsReport:
    """Norms of the tracking error.

    Windows are half-open [start, end) in seconds; the Frobenius norm of a
    window covers every joint and every sample inside it.
    """
    if len(log) == 0:
        raise ScenarioError("empty run log")
    e = log.e
    fro, wl2, wmean = [], [], []
    for start, end in windows:
        mask = (log.time >= start - 1e-9) & (log.time < end - 1e-9)
        if not mask.any():
            raise ScenarioError(f"window [{start}, {end}) contains no samples")
        block = e[mask]
        fro.append(float(np.sqrt(np.sum(block ** 2))))
        wl2.append(np.sqrt(np.sum(block ** 2, axis=0)))
        wmean.append(np.mean(np.abs(block), axis=0))
    n = log.n_joints
    return MetricsReport(np.sqrt(np.sum(e ** 2, axis=0)), np.max(np.abs(e), axis=0),
                         [tuple(map(float, w)) for w in windows], np.array(fro),
                         np.array(wl2).reshape(-1, n), np.array(wmean).reshape(-1, n))


# --------------------------------------------------------------------------- CSV I/O

def run_header(n_joints, with_v=False):
    cols = ["time_s"]
    for name in ("theta", "theta_d", "e", "s", "theta_m"):
        cols += [f"{name}_{j + 1}" for j in range(n_joints)]
    cols += ["norm_a_hat", "net_version"]
    if with_v:
        cols.append("V")
    return cols


def _fmt(x):
    return repr(float(x))


def export_csv(obj, path, n_joints=None):
    """Write a RunLog or MetricsReport as CSV.

    An empty log still yields the header row; pass ``n_joints`` if the log
    carries no samples to infer it from.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(obj, RunLog):
            n = obj.theta.shape[1] if obj.theta.ndim == 2 else n_joints
            w.writerow(run_header(n, obj.V is not None))
            for k in range(len(obj)):
                row = [_fmt(obj.time[k])]
                for arr in (obj.theta, obj.theta_d, obj.e, obj.s, obj.theta_m):
                    row += [_fmt(v) for v in arr[k]]
                row += [_fmt(obj.norm_a_hat[k]), str(int(obj.net_version[k]))]
                if obj.V is not None:
                    row.append(_fmt(obj.V[k]))
                w.writerow(row)
        elif isinstance(obj, MetricsReport):
            wcols = [f"window_{a:g}_{b:g}" for a, b in obj.windows]
            w.writerow(["joint", "l2", "linf", *wcols])
            for j in range(len(obj.l2)):
                w.writerow([str(j + 1), _fmt(obj.l2[j]), _fmt(obj.linf[j]),
                            *[_fmt(v) for v in obj.window_l2[:, j]]])
            w.writerow(["all", _fmt(np.sqrt(np.sum(obj.l2 ** 2))), _fmt(np.max(obj.linf)),
                        *[_fmt(v) for v in obj.frobenius]])
        else:
            raise TypeError(f"cannot export {type(obj).__name__}")


def read_run_csv(path) -> RunLog:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("theta_d_"))
    if header != run_header(n, header[-1] == "V"):
        raise ScenarioError(f"{path}: unexpected run CSV header")
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    blocks = [data[:, 1 + i * n:1 + (i + 1) * n] for i in range(5)]
    base = 1 + 5 * n
    V = data[:, base + 2] if header[-1] == "V" else None
    return RunLog(data[:, 0], *blocks, data[:, base], data[:, base + 1].astype(int), V)


def read_metrics_csv(path):
    """Return (header, rows) with numeric cells converted to float."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[r[0], *map(float, r[1:])] for r in rows[1:]]


def dataset_header(n_joints):
    cols = []
    for name in ("theta_dot_1", "theta", "theta_dot_2", "theta_ddot", "theta_m"):
        cols += [f"{name}_{j + 1}" for j in range(n_joints)]
    return cols


def write_dataset(batch: TrainBatch, path):
    n = batch.targets.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset_header(n))
        for x, y in zip(batch.inputs, batch.targets):
            w.writerow([_fmt(v) for v in (*x, *y)])


def read_dataset(path) -> TrainBatch:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = len(header) // 5
    if header != dataset_header(n):
        raise ScenarioError(f"{path}: unexpected dataset CSV header")
    data = np.array(rows[1:], dtype=float).reshape(-1, 5 * n)
    return TrainBatch(data[:, :4 * n], data[:, 4 * n:])
