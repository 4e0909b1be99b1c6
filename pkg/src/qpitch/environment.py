"""Pitch-attitude RL environment: observation binning, reward, episode lifecycle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .airframe import OK, AircraftModel, FlightState, TrimSolution, _rk4, raise_fault
from .atmosphere import DrydenConfig, DrydenGust, _noisy

MODES = ("mdp", "pomdp")


def _default_theta_edges() -> tuple:
    fine = [k / 1000 for k in (1, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24)]
    return tuple([-10.0] + [-v for v in reversed(fine)] + [0.0] + fine + [10.0])


def _default_rate_edges() -> tuple:
    return (-10.0, -0.04, -0.02, -0.005, 0.005, 0.02, 0.04, 10.0)


@dataclass(frozen=True)
class Discretizer:
    """Bin edges for pitch error (rad) and pitch rate (rad/s); bins are ``[e_k, e_k+1)``."""

    theta_edges: tuple = field(default_factory=_default_theta_edges)
    rate_edges: tuple = field(default_factory=_default_rate_edges)

    def __post_init__(self):
        for name in ("theta_edges", "rate_edges"):
            e = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, tuple(float(v) for v in e))
            if e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            if not np.array_equal(e, -e[::-1]):
                raise ValueError(f"{name} must be symmetric about zero")

    @property
    def n_err(self) -> int:
        return len(self.theta_edges) - 1

    @property
    def n_rate(self) -> int:
        return len(self.rate_edges) - 1

    def theta_array(self) -> np.ndarray:
        return np.asarray(self.theta_edges)

    def rate_array(self) -> np.ndarray:
        return np.asarray(self.rate_edges)

    @staticmethod
    def centers(edges) -> np.ndarray:
        e = np.asarray(edges)
        return (e[1:] + e[:-1]) / 2

    @staticmethod
    def half_widths(edges) -> np.ndarray:
        e = np.asarray(edges)
        return (e[1:] - e[:-1]) / 2

    @property
    def fine_theta(self) -> float:
        """Largest finite inner edge; beyond it only the catch-all bins remain."""
        return self.theta_edges[-2]

    @property
    def fine_rate(self) -> float:
        return self.rate_edges[-2]


@dataclass(frozen=True)
class Observation:
    err_bin: int
    rate_bin: int | None
    err_p: float
    q: float

    @property
    def index(self) -> tuple:
        """Row index into a table stored as ``(n_err, n_rate_or_1, n_actions)``."""
        return self.err_bin, (self.rate_bin if self.rate_bin is not None else 0)


@njit(cache=True)
def _bin(x, edges):
    n = edges.shape[0] - 1
    k = np.searchsorted(edges, x, side="right") - 1
    if k < 0:
        return 0
    if k > n - 1:
        return n - 1
    return k


def discretize(err_p: float, q: float, d: Discretizer, mode: str = "mdp") -> Observation:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    i = int(_bin(float(err_p), d.theta_array()))
    j = int(_bin(float(q), d.rate_array())) if mode == "mdp" else None
    return Observation(i, j, float(err_p), float(q))


# ---------------------------------------------------------------------------
# reward
# ---------------------------------------------------------------------------

PENALTY_FORMS = ("as_printed", "abs_change")
BONUS_GATES = ("error", "any")
UNITS = ("deg", "rad")


@dataclass(frozen=True)
class RewardConfig:
    """Three-branch reward.

    ``bonus_gate='error'`` enters the bonus branch only while ``|err|`` is inside the
    widest error threshold; ``'any'`` enters it whenever any single bonus condition holds.
    """

    jump_threshold: float = 0.1
    penalty: float = -10000.0
    penalty_form: str = "as_printed"
    bonus_gate: str = "error"
    err_thresholds: tuple = (0.05, 0.02)
    err_bonuses: tuple = (300.0, 300.0)
    rate_thresholds: tuple = (0.04, 0.02, 0.005)
    rate_bonuses: tuple = (400.0, 600.0, 800.0)
    bonus_units: str = "deg"
    err_weight: float = 100.0
    rate_weight: float = 40.0
    quadratic_units: str = "rad"

    def __post_init__(self):
        if not self.penalty < 0:
            raise ValueError("penalty must be negative")
        if any(b <= 0 for b in self.err_bonuses + self.rate_bonuses):
            raise ValueError("bonuses must be positive")
        if len(self.err_thresholds) != 2 or len(self.err_bonuses) != 2:
            raise ValueError("exactly two pitch-error bonus levels are supported")
        if len(self.rate_thresholds) != 3 or len(self.rate_bonuses) != 3:
            raise ValueError("exactly three pitch-rate bonus levels are supported")
        if self.penalty_form not in PENALTY_FORMS:
            raise ValueError(f"penalty_form must be one of {PENALTY_FORMS}")
        if self.bonus_gate not in BONUS_GATES:
            raise ValueError(f"bonus_gate must be one of {BONUS_GATES}")
        if self.bonus_units not in UNITS or self.quadratic_units not in UNITS:
            raise ValueError(f"units must be one of {UNITS}")

    def as_array(self) -> np.ndarray:
        deg = 180.0 / math.pi
        return np.array(
            [
                self.jump_threshold,
                self.penalty,
                float(PENALTY_FORMS.index(self.penalty_form)),
                float(BONUS_GATES.index(self.bonus_gate)),
                deg if self.bonus_units == "deg" else 1.0,
                deg if self.quadratic_units == "deg" else 1.0,
                self.err_weight,
                self.rate_weight,
                *self.err_thresholds,
                *self.err_bonuses,
                *self.rate_thresholds,
                *self.rate_bonuses,
            ],
            dtype=np.float64,
        )


@njit(cache=True)
def _reward(err, q, de, de_prev, rc):
    if rc[2] == 0.0:
        jump = abs(de) - abs(de_prev)
    else:
        jump = abs(de - de_prev)
    if jump > rc[0]:
        return rc[1]
    e = abs(err) * rc[4]
    r = abs(q) * rc[4]
    bonus = 0.0
    hit = False
    for k in range(2):
        if e < rc[8 + k]:
            bonus += rc[10 + k]
            hit = True
    for k in range(3):
        if r < rc[12 + k]:
            bonus += rc[15 + k]
            hit = True
    if rc[3] == 0.0:
        hit = e < max(rc[8], rc[9])
    if hit:
        return bonus
    a = rc[6] * abs(err) * rc[5]
    b = rc[7] * abs(q) * rc[5]
    return -(a * a) - (b * b)


def reward(err_p: float, q_sim: float, deltaE_t: float, deltaE_prev: float, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    return float(_reward(float(err_p), float(q_sim), float(deltaE_t), float(deltaE_prev), cfg.as_array()))


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeConfig:
    duration: float = 5.0
    dt: float = 0.01
    theta_des: float = math.radians(1.0)
    theta0_range: tuple = (0.0, math.radians(2.0))
    mode: str = "mdp"
    gust: bool = False
    noise: bool = False
    noise_fraction: float = 0.1
    # clip the observed tracking error (virtual target); None disables
    err_clip: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.dt > 0 or not self.duration > 0:
            raise ValueError("duration and dt must be positive")
        if abs(self.duration / self.dt - round(self.duration / self.dt)) > 1e-9:
            raise ValueError("duration must be an integral multiple of dt")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_fraction must lie in [0, 1]")
        lo, hi = self.theta0_range
        if hi < lo:
            raise ValueError("theta0_range must be ordered")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class Streams:
    """Independent generators for exploration, resets, gusts and sensor noise."""

    explore: np.random.Generator
    reset: np.random.Generator
    gust: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        children = np.random.SeedSequence(int(seed)).spawn(4)
        return cls(*(np.random.default_rng(c) for c in children))


@dataclass
class StepResult:
    state: FlightState
    observation: Observation
    reward: float
    done: bool
    info: dict


def _observe(x, theta_des, cfg: EpisodeConfig, noise_rng, d: Discretizer):
    th, q = x[7], x[4]
    if cfg.noise:
        th = _noisy(th, cfg.noise_fraction, noise_rng)
        q = _noisy(q, cfg.noise_fraction, noise_rng)
    err = th - theta_des
    if cfg.err_clip is not None:
        err = min(max(err, -cfg.err_clip), cfg.err_clip)
    return discretize(err, q, d, cfg.mode), th


class PitchEnv:
    """Episodic pitch-tracking environment around the cruise trim point."""

    def __init__(
        self,
        model: AircraftModel,
        trim: TrimSolution | None,
        episode: EpisodeConfig | None = None,
        reward_cfg: RewardConfig | None = None,
        discretizer: Discretizer | None = None,
        dryden: DrydenConfig | None = None,
        seed: int = 0,
        streams: Streams | None = None,
    ):
        if trim is None:
            raise RuntimeError("a trim solution is required to initialize episodes")
        self.model = model.with_thrust(trim.thrust)
        self.trim = trim
        self.cfg = episode or EpisodeConfig()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.discretizer = discretizer or Discretizer()
        self.dryden = dryden or DrydenConfig(dt=self.cfg.dt)
        self.streams = streams or Streams.from_seed(seed)
        self.theta_des = self.cfg.theta_des
        self._p = self.model.params()
        self._rc = self.reward_cfg.as_array()
        self._gust = DrydenGust(self.dryden, self.streams.gust) if self.cfg.gust else None
        self._x = None
        self.k = 0
        self.deltaE_prev = trim.deltaE
        self.theta_meas = float("nan")

    @property
    def state(self) -> FlightState:
        return FlightState.from_array(self._x)

    @property
    def t(self) -> float:
        return self.k * self.cfg.dt

    def initial_state(self, theta0: float) -> np.ndarray:
        x = self.trim.state().as_array()
        x[7] = theta0
        x[4] = 0.0
        return x

    def reset(self, theta0: float | None = None):
        """Start an episode at trim with a new pitch angle; returns ``(state, observation)``."""
        if theta0 is None:
            lo, hi = self.cfg.theta0_range
            theta0 = lo + (hi - lo) * self.streams.reset.random()
        self._x = self.initial_state(float(theta0))
        if self._gust is not None:
            self._gust.state.delays[:] = 0.0
        self.k = 0
        self.deltaE_prev = self.trim.deltaE
        self.theta_des = self.cfg.theta_des
        obs, self.theta_meas = _observe(self._x, self.theta_des, self.cfg, self.streams.noise, self.discretizer)
        self.obs = obs
        return self.state, obs

    def step(self, deltaE: float) -> StepResult:
        if self._x is None:
            raise RuntimeError("call reset() before step()")
        deltaE = float(deltaE)
        gw = self._gust.step() if self._gust is not None else 0.0
        xn, code, theta = _rk4(self._x, deltaE, gw, self._p, self.cfg.dt)
        if code != OK:
            raise_fault(code, theta)
        self._x = xn
        self.k += 1
        err_true = xn[7] - self.theta_des
        r = float(_reward(err_true, xn[4], deltaE, self.deltaE_prev, self._rc))
        self.deltaE_prev = deltaE
        obs, self.theta_meas = _observe(xn, self.theta_des, self.cfg, self.streams.noise, self.discretizer)
        self.obs = obs
        done = self.k >= self.cfg.steps
        info = {"gust_w": gw, "theta_meas": self.theta_meas, "q_meas": obs.q, "err_true": err_true}
        return StepResult(self.state, obs, r, done, info)
