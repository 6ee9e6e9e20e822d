"""INI-style experiment configuration.

Sections and keys (lists are comma separated, one value per joint or broadcast):

[model]       link_masses, link_lengths, com_offsets, gravity, joint_stiffness,
              motor_inertia, payload_mass
[friction]    kind (viscous_coulomb | stribeck), viscous, coulomb, static,
              stribeck_velocity
[gains]       lambda, k_s, k_robust, p, k1, k2, phi
[network]     basis_dim, hidden, activation, tie_velocities, l2_lambda,
              learning_rate, epochs, batch_size, split
[excitation]  kind = multisine: n_harmonics, base_freq, amplitude, duration, rate
              kind = sinusoid_family: count, length, amplitude_min, amplitude_max,
              freq_min, freq_max, limits_low, limits_high, rate
              sim_dt (both kinds)
[trajectory]  amplitude, frequency, phase, offset
[scenario]    duration, controller, control_rate, sim_dt, retrain_period,
              retrain_passes, retrain_start, windows (start:end, ...),
              theta0, theta_dot0 (default: on the desired trajectory)
[events]      <time> = <action>; <action>; ...
              actions: enable_adaptation | begin_buffering | retrain_now |
              attach_payload <kg> |
              switch_friction <kind> viscous=.. coulomb=.. [static=.. stribeck_velocity=..]
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .control import Gains
from .dynamics import FrictionModel, RobotModel
from .network import TrainBatch, init_regressor, train_offline
from .scenario import (CONTROLLERS, AttachPayload, BeginBuffering, EnableAdaptation, Event,
                       RetrainNow, Scenario, ScenarioError, Sinusoid, SwitchFriction,
                       collect_dataset, gen_multisine, gen_sinusoid_family, merge_events,
                       periodic_retraining)

PRESETS = ("pendulum_friction", "arm_payload", "arm_benchmark", "pendulum_exact")


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _one_or_list(text):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


def parse_friction(kind, params):
    kind = kind.strip().lower()
    if kind == "viscous_coulomb":
        return FrictionModel.viscous_coulomb(float(params.get("viscous", 0.0)),
                                             float(params.get("coulomb", 0.0)))
    if kind == "stribeck":
        try:
            return FrictionModel.stribeck(float(params.get("viscous", 0.0)),
                                          float(params.get("coulomb", 0.0)),
                                          float(params["static"]),
                                          float(params["stribeck_velocity"]))
        except KeyError as exc:
            raise ConfigError(f"Stribeck friction needs {exc.args[0]}") from None
    raise ConfigError(f"unknown friction kind {kind!r}")


def parse_action(text):
    words = text.split()
    if not words:
        raise ConfigError("empty event action")
    name, args = words[0].lower(), words[1:]
    if name == "enable_adaptation":
        return EnableAdaptation()
    if name == "begin_buffering":
        return BeginBuffering()
    if name == "retrain_now":
        return RetrainNow()
    if name == "attach_payload":
        if len(args) != 1:
            raise ConfigError("attach_payload takes one mass in kg")
        return AttachPayload(float(args[0]))
    if name == "switch_friction":
        if not args:
            raise ConfigError("switch_friction needs a friction kind")
        params = dict(a.split("=", 1) for a in args[1:])
        return SwitchFriction(parse_friction(args[0], params))
    raise ConfigError(f"unknown event action {name!r}")


def parse_windows(text):
    out = []
    for item in str(text).split(","):
        item = item.strip()
        if item:
            a, b = item.split(":")
            out.append((float(a), float(b)))
    return out


@dataclass
class ExperimentConfig:
    parser: configparser.ConfigParser
    source: str = "<string>"

    def _sec(self, name):
        if not self.parser.has_section(name):
            raise ConfigError(f"{self.source}: missing [{name}] section")
        return self.parser[name]

    # ---- model and controller
    def model(self) -> RobotModel:
        sec = self._sec("model")
        fsec = self.parser["friction"] if self.parser.has_section("friction") else {}
        friction = parse_friction(fsec.get("kind", "viscous_coulomb"), fsec)
        return RobotModel(_floats(sec["link_masses"]), _floats(sec["link_lengths"]),
                          _floats(sec["com_offsets"]),
                          gravity=sec.getfloat("gravity", 9.81),
                          joint_stiffness=sec.getfloat("joint_stiffness", 50.0),
                          motor_inertia=_floats(sec.get("motor_inertia", "0.01")),
                          friction=friction,
                          payload_mass=sec.getfloat("payload_mass", 0.0))

    def gains(self) -> Gains:
        sec = self.parser["gains"] if self.parser.has_section("gains") else {}
        defaults = Gains()
        return Gains(Lambda=_one_or_list(sec.get("lambda", defaults.Lambda)),
                     K_s=_one_or_list(sec.get("k_s", defaults.K_s)),
                     k_robust=float(sec.get("k_robust", defaults.k_robust)),
                     P=_one_or_list(sec.get("p", defaults.P)),
                     K1=_one_or_list(sec.get("k1", defaults.K1)),
                     K2=_one_or_list(sec.get("k2", defaults.K2)),
                     phi=float(sec.get("phi", defaults.phi)))

    # ---- network
    def network_options(self):
        sec = self.parser["network"] if self.parser.has_section("network") else {}
        return dict(basis_dim=int(sec.get("basis_dim", 32)),
                    hidden=tuple(int(v) for v in _floats(sec.get("hidden", "64, 64"))),
                    activation=sec.get("activation", "tanh"),
                    tie_velocities=str(sec.get("tie_velocities", "true")).lower() in ("1", "true", "yes"),
                    l2_lambda=float(sec.get("l2_lambda", 1e-4)),
                    learning_rate=float(sec.get("learning_rate", 1e-3)),
                    epochs=int(sec.get("epochs", 5)),
                    batch_size=int(sec.get("batch_size", 256)),
                    split=float(sec.get("split", 0.8)))

    def init_network(self, seed=0):
        o = self.network_options()
        return init_regressor(self.model().n_joints, o["basis_dim"], o["hidden"], o["activation"],
                              seed=seed, tie_velocities=o["tie_velocities"])

    def train(self, data: TrainBatch, seed=0):
        o = self.network_options()
        net, out = self.init_network(seed)
        return train_offline(net, out, data, epochs=o["epochs"], batch_size=o["batch_size"],
                             split=o["split"], learning_rate=o["learning_rate"],
                             l2_lambda=o["l2_lambda"], seed=seed)

    # ---- data collection
    def excitations(self, seed=0):
        sec = self._sec("excitation")
        kind = sec.get("kind", "multisine")
        rate = sec.getfloat("rate", 100.0)
        n = self.model().n_joints
        if kind == "multisine":
            _, u = gen_multisine(sec.getint("n_harmonics"), sec.getfloat("base_freq"),
                                 sec.getfloat("amplitude"), sec.getfloat("duration"), rate)
            return [np.tile(u, (n, 1))]
        if kind == "sinusoid_family":
            return gen_sinusoid_family(
                sec.getint("count"), (sec.getfloat("amplitude_min"), sec.getfloat("amplitude_max")),
                (sec.getfloat("freq_min"), sec.getfloat("freq_max")), n, sec.getint("length"),
                seed=seed, limits=(_floats(sec["limits_low"]), _floats(sec["limits_high"])), rate=rate)
        raise ConfigError(f"unknown excitation kind {kind!r}")

    def collect(self, seed=0) -> TrainBatch:
        sec = self._sec("excitation")
        return collect_dataset(self.model(), self.excitations(seed), rate=sec.getfloat("rate", 100.0),
                               sim_dt=sec.getfloat("sim_dt", 1e-3))

    # ---- scenario
    def trajectory(self):
        sec = self._sec("trajectory")
        n = self.model().n_joints
        cols = [np.broadcast_to(_floats(sec.get(k, d)), (n,))
                for k, d in (("amplitude", "0"), ("frequency", "0"), ("phase", "0"), ("offset", "0"))]
        return [Sinusoid(*map(float, p)) for p in zip(*cols)]

    def events(self):
        sc = self._sec("scenario")
        evs = []
        if self.parser.has_section("events"):
            for key, value in self.parser["events"].items():
                acts = [parse_action(a) for a in value.split(";") if a.strip()]
                evs.append(Event(float(key), *acts))
        retrain = []
        if "retrain_start" in sc:
            retrain = periodic_retraining(sc.getfloat("retrain_start"),
                                          sc.getfloat("retrain_period", 6.0), sc.getfloat("duration"))
        return merge_events(evs, retrain)

    @property
    def controller(self):
        c = self._sec("scenario").get("controller", "adaptive")
        if c not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}")
        return c

    @property
    def windows(self):
        return parse_windows(self._sec("scenario").get("windows", ""))

    def scenario(self, seed=0) -> Scenario:
        sec = self._sec("scenario")
        o = self.network_options()
        sc = Scenario(self.model(), self.trajectory(), sec.getfloat("duration"), self.events(),
                      self.gains(), control_rate=sec.getfloat("control_rate", 100.0),
                      sim_dt=sec.getfloat("sim_dt", 1e-3),
                      retrain_period=sec.getfloat("retrain_period", 6.0),
                      retrain_passes=sec.getint("retrain_passes", 50),
                      retrain_batch_size=o["batch_size"], retrain_learning_rate=o["learning_rate"],
                      l2_lambda=o["l2_lambda"], seed=seed,
                      theta0=_floats(sec["theta0"]) if "theta0" in sec else None,
                      theta_dot0=_floats(sec["theta_dot0"]) if "theta_dot0" in sec else None)
        try:
            sc.validate()
        except ScenarioError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None
        return sc


def load_config(path) -> ExperimentConfig:
    p = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        p.read_file(fh)
    return ExperimentConfig(p, str(path))


def parse_config(text) -> ExperimentConfig:
    p = configparser.ConfigParser(inline_comment_prefixes=("#",))
    p.read_string(text)
    return ExperimentConfig(p)


def preset_path(name) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Path(str(resources.files("flexadapt") / "configs" / f"{name}.ini"))


def load_preset(name) -> ExperimentConfig:
    return load_config(preset_path(name))
