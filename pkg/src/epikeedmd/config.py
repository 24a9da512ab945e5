"""Campaign configuration: a sectioned key-value file with every default embedded.

An empty file reproduces the default landing experiment. Any key can be
overridden from the environment as ``EPIKEEDMD_<SECTION>_<KEY>``, e.g.
``EPIKEEDMD_TASK_U_MAX=0.75``. Values are echoed with ``repr`` so that
``load -> dump -> load`` is the identity.
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigInvalid

ENV_PREFIX = "EPIKEEDMD_"


@dataclass(frozen=True)
class TaskSection:
    setpoint: float = 0.05          # landing fixed point (m)
    u_hover: float = 0.66
    u_min: float = 0.3
    u_max: float = 0.8
    x_min: float = 0.05             # soft altitude floor (m)
    x0_altitude: tuple = (1.8, 2.2)
    x0_velocity: tuple = (-0.05, 0.05)
    duration: float = 4.0           # seconds per repetition
    control_dt: float = 0.01
    repetitions: int = 3


@dataclass(frozen=True)
class ControlSection:
    q: tuple = (10.0, 0.1)
    r: float = 1.0
    lqr_q: tuple = (10.0, 1.0)      # weights of the linear proxy gain used by the eigenfunctions
    horizon: int = 20
    dt: float = 0.05
    soft_penalty: float = 1e4
    alpha_r: float = 0.0
    nominal: str = "mpc"            # "mpc" or "lqr"
    qp_max_iter: int = 4000
    qp_rho: float = 0.1


@dataclass(frozen=True)
class LearningSection:
    episodes: int = 3
    weights: tuple = ()             # empty: w_e = e / episodes
    noise_sigma: float = 0.001
    max_degree: int = 2
    l1: float = 1e-4
    l2: float = 1e-2
    centered: bool = True
    input_gain: str = "nominal"     # "nominal": state rows keep B_nom; "fit": regress them
    shrink_to: str = "data"         # velocity rows shrink towards: "data" (x-only fit), "nominal" (A_cl), "zero"


@dataclass(frozen=True)
class DiffeoSection:
    hidden: tuple = (32, 32)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    l2_weight: float = 1e-6
    grad_clip: float = 10.0


@dataclass(frozen=True)
class SimSection:
    gravity: float = 9.81
    rotor_radius: float = 0.12
    ground_gain: float = 1.0
    min_altitude_clamp: float = 0.03
    drag_coeff: float = 0.1
    inner_dt: float = 1e-3
    measurement_noise: float = 0.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs"
    figures: bool = True


_INT_TUPLES = {("diffeo", "hidden"), ("run", "seeds")}


@dataclass(frozen=True)
class CampaignConfig:
    task: TaskSection = field(default_factory=TaskSection)
    control: ControlSection = field(default_factory=ControlSection)
    learning: LearningSection = field(default_factory=LearningSection)
    diffeo: DiffeoSection = field(default_factory=DiffeoSection)
    sim: SimSection = field(default_factory=SimSection)
    run: RunSection = field(default_factory=RunSection)

    def with_overrides(self, **sections) -> "CampaignConfig":
        """``cfg.with_overrides(learning={"episodes": 1})``; the result is re-validated."""
        out = self
        for name, values in sections.items():
            out = replace(out, **{name: replace(getattr(out, name), **values)})
        validate(out)
        return out

    def stage_weights(self) -> tuple:
        n = self.learning.episodes
        if self.learning.weights:
            return tuple(float(w) for w in self.learning.weights)
        return tuple((e + 1) / n for e in range(n))

    def to_dict(self) -> dict:
        return {f.name: {g.name: _plain(getattr(getattr(self, f.name), g.name))
                         for g in fields(getattr(self, f.name))} for f in fields(self)}


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _parse(section: str, key: str, raw: str, default):
    raw = raw.strip()
    if raw == "":
        raise ConfigInvalid(key, f"[{section}] {key} has an empty value")
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s for s in raw.replace(";", ",").split(",") if s.strip()]
            if (section, key) in _INT_TUPLES:
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        return raw
    except ValueError:
        raise ConfigInvalid(key, f"[{section}] {key} = {raw!r} is not a valid {type(default).__name__}") from None


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v) if v else "none"
    return str(v)


# keys that only make sense together; giving one without the other is an error
_PAIRED = {("task", "u_min"): "u_max", ("task", "u_max"): "u_min"}


def loads(text: str, env=None) -> CampaignConfig:
    """Parse configuration text, then apply environment overrides and validate."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid("<file>", f"malformed configuration: {exc}") from None
    base = CampaignConfig()
    names = {f.name for f in fields(base)}
    for sec in cp.sections():
        if sec not in names:
            raise ConfigInvalid(sec, f"unknown section [{sec}]")
        for key in cp[sec]:
            pair = _PAIRED.get((sec, key))
            if pair and pair not in cp[sec]:
                raise ConfigInvalid(pair, f"[{sec}] sets {key} but is missing {pair}")
    values = {}
    env = os.environ if env is None else env
    for f in fields(base):
        sec_obj = getattr(base, f.name)
        known = {g.name: getattr(sec_obj, g.name) for g in fields(sec_obj)}
        upd = {}
        if cp.has_section(f.name):
            for key, raw in cp[f.name].items():
                if key not in known:
                    raise ConfigInvalid(key, f"unknown key {key!r} in [{f.name}]")
                upd[key] = _parse(f.name, key, _none_to_empty(raw, known[key]), known[key])
        for key, default in known.items():
            env_key = f"{ENV_PREFIX}{f.name.upper()}_{key.upper()}"
            if env_key in env:
                upd[key] = _parse(f.name, key, _none_to_empty(env[env_key], default), default)
        values[f.name] = replace(sec_obj, **upd)
    cfg = CampaignConfig(**values)
    validate(cfg)
    return cfg


def _none_to_empty(raw: str, default):
    # an empty tuple is written as "none"
    if isinstance(default, tuple) and raw.strip().lower() == "none":
        return ","
    return raw


def load(path, env=None) -> CampaignConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read(), env)


def dumps(cfg: CampaignConfig) -> str:
    buf = io.StringIO()
    for f in fields(cfg):
        sec = getattr(cfg, f.name)
        buf.write(f"[{f.name}]\n")
        for g in fields(sec):
            buf.write(f"{g.name} = {_format(getattr(sec, g.name))}\n")
        buf.write("\n")
    return buf.getvalue()


def validate(cfg: CampaignConfig) -> None:
    t, c, l, d, s = cfg.task, cfg.control, cfg.learning, cfg.diffeo, cfg.sim

    def need(ok, key, msg):
        if not ok:
            raise ConfigInvalid(key, msg)

    need(0.0 <= t.u_min < t.u_hover, "u_min", "u_min must lie in [0, u_hover)")
    need(t.u_hover < t.u_max <= 1.0, "u_max", "u_max must lie in (u_hover, 1]")
    need(t.setpoint >= 0.0, "setpoint", "setpoint must be non-negative")
    need(len(t.x0_altitude) == 2 and 0 < t.x0_altitude[0] <= t.x0_altitude[1], "x0_altitude",
         "x0_altitude must be an increasing positive pair")
    need(len(t.x0_velocity) == 2 and t.x0_velocity[0] <= t.x0_velocity[1], "x0_velocity",
         "x0_velocity must be an increasing pair")
    need(t.control_dt > 0, "control_dt", "control_dt must be positive")
    need(t.duration >= 3 * t.control_dt, "duration", "duration must span at least 3 control steps")
    need(t.repetitions >= 1, "repetitions", "repetitions must be >= 1")
    need(len(c.q) == 2 and min(c.q) >= 0, "q", "q must be two non-negative weights")
    need(len(c.lqr_q) == 2 and min(c.lqr_q) >= 0, "lqr_q", "lqr_q must be two non-negative weights")
    need(c.r > 0, "r", "r must be positive")
    need(c.horizon >= 1, "horizon", "horizon must be >= 1")
    need(c.dt > 0, "dt", "dt must be positive")
    need(c.soft_penalty > 0, "soft_penalty", "soft_penalty must be positive")
    need(c.alpha_r >= 0, "alpha_r", "alpha_r must be non-negative")
    need(c.nominal in ("mpc", "lqr"), "nominal", "nominal must be 'mpc' or 'lqr'")
    need(c.qp_max_iter >= 1 and c.qp_rho > 0, "qp_max_iter", "qp settings must be positive")
    need(l.episodes >= 0, "episodes", "episodes must be >= 0")
    if l.weights:
        w = np.asarray(l.weights)
        need(len(w) == l.episodes, "weights", f"weights needs {l.episodes} entries")
        need(np.all((w >= 0) & (w <= 1)), "weights", "weights must lie in [0, 1]")
        need(np.all(np.diff(w) >= 0), "weights", "weights must be non-decreasing")
    need(l.noise_sigma >= 0, "noise_sigma", "noise_sigma must be non-negative")
    need(l.max_degree >= 1, "max_degree", "max_degree must be >= 1")
    need(l.l1 >= 0 and l.l2 >= 0, "l1", "penalties must be non-negative")
    need(l.input_gain in ("nominal", "fit"), "input_gain", "input_gain must be 'nominal' or 'fit'")
    need(l.shrink_to in ("data", "nominal", "zero"), "shrink_to", "shrink_to must be 'data', 'nominal' or 'zero'")
    need(len(d.hidden) >= 1 and min(d.hidden) >= 1, "hidden", "hidden must list positive layer widths")
    need(d.learning_rate > 0, "learning_rate", "learning_rate must be positive")
    need(d.epochs >= 0, "epochs", "epochs must be non-negative")
    need(d.batch_size >= 1, "batch_size", "batch_size must be positive")
    need(d.grad_clip > 0, "grad_clip", "grad_clip must be positive")
    need(s.gravity > 0, "gravity", "gravity must be positive")
    need(s.inner_dt > 0 and s.inner_dt <= t.control_dt, "inner_dt", "inner_dt must be in (0, control_dt]")
    need(s.min_altitude_clamp > 0, "min_altitude_clamp", "min_altitude_clamp must be positive")
    need(len(cfg.run.seeds) >= 1, "seeds", "seeds must not be empty")
