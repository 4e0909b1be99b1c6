"""Run configuration: sectioned key-value files layered over the shipped defaults."""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .airframe import AircraftModel, load_aircraft
from .atmosphere import DrydenConfig
from .environment import Discretizer, EpisodeConfig, RewardConfig
from .pid import PidGains
from .qlearning import Schedule, action_grid


class ConfigError(ValueError):
    pass


def defaults_path() -> Path:
    return Path(str(resources.files("qpitch") / "data" / "defaults.ini"))


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_profile(text: str) -> tuple:
    """``"t0:th0, t1:th1, ..."`` (s, deg) -> ``((t0, th0), ...)`` with strictly increasing times."""
    pts = []
    for item in text.split(","):
        t, _, th = item.strip().partition(":")
        pts.append((float(t), float(th)))
    ts = [p[0] for p in pts]
    if len(pts) < 1 or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError("profile times must be strictly increasing")
    return tuple(pts)


@dataclass(frozen=True)
class Profile:
    """Piecewise-linear pitch target; breakpoints in (s, deg), held constant past the ends."""

    points: tuple

    def __call__(self, t: float) -> float:
        ts = [p[0] for p in self.points]
        vs = [p[1] for p in self.points]
        return math.radians(float(np.interp(t, ts, vs)))

    @property
    def duration(self) -> float:
        return self.points[-1][0]

    @classmethod
    def constant(cls, deg: float, duration: float) -> "Profile":
        return cls(((0.0, deg), (duration, deg)))


@dataclass(frozen=True)
class EvalConfig:
    step_duration: float
    step_theta0: float
    step_target: float
    profile: Profile
    err_clip: float
    transient: float
    envelope: float
    trim_duration: float
    trim_perturb: float


@dataclass
class RunConfig:
    """Everything a command needs, resolved from the layered config files."""

    parser: configparser.ConfigParser
    dataset: Path | None
    model: AircraftModel
    V_trim: float
    gamma: float
    trim_tol: float
    dt: float
    episode: EpisodeConfig
    reward: RewardConfig
    discretizer: Discretizer
    actions: np.ndarray
    schedule: Schedule
    faa_anchor: str
    faa_outer_rule: str
    faa_in_training: bool
    pid: PidGains
    dryden: DrydenConfig
    noise_fraction: float
    train_seed: int
    eval_seed: int
    evaluation: EvalConfig

    def to_text(self) -> str:
        buf = io.StringIO()
        self.parser.write(buf)
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {s: dict(self.parser[s]) for s in self.parser.sections()}


def read_parser(path=None, overrides: dict | None = None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cp.optionxform = str
    cp.read(defaults_path())
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        user = configparser.ConfigParser(inline_comment_prefixes=(";",))
        user.optionxform = str
        user.read(path)
        for section in user.sections():
            if section not in cp:
                raise ConfigError(f"unknown config section [{section}] in {path}")
            for key, val in user[section].items():
                if key not in cp[section]:
                    raise ConfigError(f"unknown config key {section}.{key} in {path}")
                cp[section][key] = val
    for dotted, val in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in cp or key not in cp[section]:
            raise ConfigError(f"unknown config key {dotted}")
        cp[section][key] = str(val)
    return cp


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults + optional user file + ``{"section.key": value}`` overrides."""
    cp = read_parser(path, overrides)
    try:
        return _build(cp)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _build(cp: configparser.ConfigParser) -> RunConfig:
    ac = cp["aircraft"]
    dataset = Path(ac["dataset"]) if ac["dataset"].strip() else None
    model = load_aircraft(
        dataset, ac["phase"], ac.getfloat("rho"), ac.getfloat("V_ref"), ac.getboolean("abs_drag")
    )
    dt = cp["simulation"].getfloat("dt")
    ep = cp["episode"]
    noise_fraction = cp["noise"].getfloat("fraction")
    episode = EpisodeConfig(
        duration=ep.getfloat("duration"),
        dt=dt,
        theta_des=math.radians(ep.getfloat("theta_des_deg")),
        theta0_range=(math.radians(ep.getfloat("theta0_min_deg")), math.radians(ep.getfloat("theta0_max_deg"))),
        mode=ep["mode"],
        gust=ep.getboolean("gust"),
        noise=ep.getboolean("noise"),
        noise_fraction=noise_fraction,
    )
    rw = cp["reward"]
    reward = RewardConfig(
        jump_threshold=rw.getfloat("jump_threshold"),
        penalty=rw.getfloat("penalty"),
        penalty_form=rw["penalty_form"],
        bonus_gate=rw["bonus_gate"],
        err_thresholds=_floats(rw["err_thresholds"]),
        err_bonuses=_floats(rw["err_bonuses"]),
        rate_thresholds=_floats(rw["rate_thresholds"]),
        rate_bonuses=_floats(rw["rate_bonuses"]),
        bonus_units=rw["bonus_units"],
        err_weight=rw.getfloat("err_weight"),
        rate_weight=rw.getfloat("rate_weight"),
        quadratic_units=rw["quadratic_units"],
    )
    disc = Discretizer(_floats(cp["discretizer"]["theta_edges"]), _floats(cp["discretizer"]["rate_edges"]))
    actions = action_grid(cp["actions"].getfloat("limit"), cp["actions"].getfloat("step"))
    sc = cp["schedule"]
    schedule = Schedule(
        *(sc.getfloat(k) for k in (
            "epsilon_start", "epsilon_decrement", "epsilon_floor",
            "alpha_start", "alpha_decrement", "alpha_floor", "gamma",
        )),
        episodes=sc.getint("episodes"),
    )
    pg = cp["pid"]
    pid = PidGains(*(pg.getfloat(k) for k in ("kp", "ki", "kd", "integrator_limit", "output_limit")))
    dr = cp["dryden"]
    seeds = cp["seeds"]
    dryden = DrydenConfig(dr.getfloat("sigma_w"), dr.getfloat("L_w"), dr.getfloat("u1"), dt, seeds.getint("eval"))
    ev = cp["eval"]
    evaluation = EvalConfig(
        step_duration=ev.getfloat("step_duration"),
        step_theta0=math.radians(ev.getfloat("step_theta0_deg")),
        step_target=math.radians(ev.getfloat("step_target_deg")),
        profile=Profile(parse_profile(ev["profile"])),
        err_clip=math.radians(ev.getfloat("err_clip_deg")),
        transient=ev.getfloat("transient_s"),
        envelope=math.radians(ev.getfloat("envelope_deg")),
        trim_duration=ev.getfloat("trim_duration"),
        trim_perturb=math.radians(ev.getfloat("trim_perturb_deg")),
    )
    fa = cp["faa"]
    return RunConfig(
        parser=cp,
        dataset=dataset,
        model=model,
        V_trim=ac.getfloat("V_trim"),
        gamma=ac.getfloat("gamma"),
        trim_tol=ac.getfloat("trim_tol"),
        dt=dt,
        episode=episode,
        reward=reward,
        discretizer=disc,
        actions=actions,
        schedule=schedule,
        faa_anchor=fa["anchor"],
        faa_outer_rule=fa["outer_rule"],
        faa_in_training=fa.getboolean("in_training"),
        pid=pid,
        dryden=dryden,
        noise_fraction=noise_fraction,
        train_seed=seeds.getint("train"),
        eval_seed=seeds.getint("eval"),
        evaluation=evaluation,
    )
