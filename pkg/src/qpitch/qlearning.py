"""Tabular Q-learning for pitch attitude: action grid, schedules, updates, training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .airframe import OK, AircraftModel, TrimSolution, _rk4
from .atmosphere import DrydenConfig, _gust_sample, _noisy
from .environment import Discretizer, EpisodeConfig, Observation, RewardConfig, Streams, _bin, _reward
from .faa import OUTER_RULES, MembershipGrid, _faa

log = logging.getLogger(__name__)

QTABLE_FORMAT = "qpitch-qtable"
QTABLE_VERSION = 1


def action_grid(limit: float = 0.25, step: float = 0.025) -> np.ndarray:
    """Symmetric elevator grid ``-limit .. +limit`` (rad); 21 values by default."""
    n = int(round(limit / step))
    if abs(n * step - limit) > 1e-12:
        raise ValueError("limit must be an integer multiple of step")
    return np.arange(-n, n + 1) * step


@dataclass(frozen=True)
class Schedule:
    epsilon_start: float = 0.1
    epsilon_decrement: float = 3e-6
    epsilon_floor: float = 0.04
    alpha_start: float = 0.02
    alpha_decrement: float = 9e-7
    alpha_floor: float = 0.002
    gamma: float = 0.99
    episodes: int = 20000

    def __post_init__(self):
        if not self.epsilon_start >= self.epsilon_floor > 0:
            raise ValueError("epsilon schedule needs start >= floor > 0")
        if not self.alpha_start >= self.alpha_floor > 0:
            raise ValueError("alpha schedule needs start >= floor > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")

    def epsilon(self, episode: int) -> float:
        return schedule_value(self.epsilon_start, self.epsilon_decrement, self.epsilon_floor, episode)

    def alpha(self, episode: int) -> float:
        return schedule_value(self.alpha_start, self.alpha_decrement, self.alpha_floor, episode)

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.epsilon_start, self.epsilon_decrement, self.epsilon_floor,
                self.alpha_start, self.alpha_decrement, self.alpha_floor,
                self.gamma,
            ]
        )


@njit(cache=True)
def _schedule(start, dec, floor, episode):
    return max(start - dec * episode, floor)


def schedule_value(start: float, decrement: float, floor: float, episode: int) -> float:
    """Linear per-episode decay clipped at ``floor``."""
    if episode < 0:
        raise ValueError("episode must be non-negative")
    return float(_schedule(start, decrement, floor, episode))


# ---------------------------------------------------------------------------
# Q-table
# ---------------------------------------------------------------------------


class QTableFormatError(ValueError):
    pass


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


@dataclass
class QTable:
    """Action values stored as ``(n_err, n_rate, n_actions)``; POMDP tables use ``n_rate = 1``."""

    values: np.ndarray
    mode: str
    discretizer: Discretizer = field(default_factory=Discretizer)
    actions: np.ndarray = field(default_factory=action_grid)
    episodes: int = 0
    seed: int | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        n_rate = self.discretizer.n_rate if self.mode == "mdp" else 1
        expected = (self.discretizer.n_err, n_rate, self.actions.size)
        if self.values.shape != expected:
            raise ValueError(f"table shape {self.values.shape} does not match {expected}")

    @classmethod
    def zeros(cls, mode: str = "mdp", discretizer: Discretizer | None = None, actions=None) -> "QTable":
        d = discretizer or Discretizer()
        a = action_grid() if actions is None else np.asarray(actions, dtype=np.float64)
        n_rate = d.n_rate if mode == "mdp" else 1
        return cls(np.zeros((d.n_err, n_rate, a.size)), mode, d, a)

    @property
    def view(self) -> np.ndarray:
        """Table in its natural shape: 3-D for MDP, 2-D ``(err, action)`` for POMDP."""
        return self.values if self.mode == "mdp" else self.values[:, 0, :]

    def row(self, obs: Observation) -> np.ndarray:
        return self.values[obs.index]

    def greedy_index(self, obs: Observation) -> int:
        return int(np.argmax(self.row(obs)))

    def greedy_actions(self) -> np.ndarray:
        """Greedy elevator deflection for every cell, shape ``(n_err, n_rate)``."""
        return self.actions[np.argmax(self.values, axis=2)]

    def save(self, path) -> Path:
        path = Path(path)
        d = self.discretizer
        lines = [
            f"# {QTABLE_FORMAT}",
            f"format_version = {QTABLE_VERSION}",
            f"mode = {self.mode}",
            f"theta_edges = {_fmt(d.theta_edges)}",
            f"rate_edges = {_fmt(d.rate_edges)}",
            f"actions = {_fmt(self.actions)}",
            f"episodes = {self.episodes}",
            f"seed = {'' if self.seed is None else self.seed}",
            f"shape = {' '.join(str(s) for s in self.view.shape)}",
            "values",
        ]
        for i in range(self.values.shape[0]):
            if self.mode == "mdp":
                for j in range(self.values.shape[1]):
                    lines.append(f"{i} {j} {_fmt(self.values[i, j])}")
            else:
                lines.append(f"{i} {_fmt(self.values[i, 0])}")
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "QTable":
        path = Path(path)
        text = path.read_text().splitlines()
        if not text or text[0].strip() != f"# {QTABLE_FORMAT}":
            raise QTableFormatError(f"{path} is not a q-table file")
        header = {}
        k = 1
        while k < len(text) and text[k].strip() != "values":
            key, _, val = text[k].partition("=")
            header[key.strip()] = val.strip()
            k += 1
        if k == len(text):
            raise QTableFormatError(f"{path}: missing 'values' section")
        if int(header.get("format_version", -1)) != QTABLE_VERSION:
            raise QTableFormatError(f"{path}: unsupported format version {header.get('format_version')}")
        mode = header["mode"]
        d = Discretizer(
            tuple(float(v) for v in header["theta_edges"].split()),
            tuple(float(v) for v in header["rate_edges"].split()),
        )
        actions = np.array([float(v) for v in header["actions"].split()])
        table = cls.zeros(mode, d, actions)
        n_idx = 2 if mode == "mdp" else 1
        seen = 0
        for line in text[k + 1:]:
            if not line.strip():
                continue
            parts = line.split()
            idx = [int(v) for v in parts[:n_idx]]
            vals = [float(v) for v in parts[n_idx:]]
            if len(vals) != actions.size:
                raise QTableFormatError(f"{path}: row {idx} has {len(vals)} values")
            table.values[idx[0], idx[1] if mode == "mdp" else 0] = vals
            seen += 1
        if seen != table.values.shape[0] * table.values.shape[1]:
            raise QTableFormatError(f"{path}: expected {table.values.shape[0] * table.values.shape[1]} rows, got {seen}")
        table.episodes = int(header.get("episodes", 0))
        table.seed = int(header["seed"]) if header.get("seed") else None
        return table


# ---------------------------------------------------------------------------
# action selection and update
# ---------------------------------------------------------------------------


@njit(cache=True)
def _explore_or_greedy(row, epsilon, rng):
    if rng.random() < epsilon:
        n = row.shape[0]
        k = int(rng.random() * n)
        return min(k, n - 1)
    return np.argmax(row)


def select_action(table: QTable, obs: Observation, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action index; greedy ties go to the lowest index."""
    return int(_explore_or_greedy(table.row(obs), float(epsilon), rng))


@njit(cache=True)
def _q_update(Q, i, j, k, r, i2, j2, alpha, gamma):
    target = r + gamma * np.max(Q[i2, j2])
    Q[i, j, k] = Q[i, j, k] + alpha * (target - Q[i, j, k])


def q_update(table: QTable, obs_t: Observation, action: int, reward: float, obs_next: Observation, alpha: float, gamma: float):
    """One-step Q-learning backup of a single cell (in place)."""
    if not math.isfinite(reward):
        raise ValueError(f"non-finite reward {reward!r}")
    i, j = obs_t.index
    i2, j2 = obs_next.index
    _q_update(table.values, i, j, int(action), float(reward), i2, j2, float(alpha), float(gamma))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@njit(cache=True)
def _observe(x, theta_des, noise, nf, clip, rng_noise, te, re, mdp):
    th = x[7]
    q = x[4]
    if noise:
        th = _noisy(th, nf, rng_noise)
        q = _noisy(q, nf, rng_noise)
    err = th - theta_des
    if clip > 0.0:
        err = min(max(err, -clip), clip)
    j = _bin(q, re) if mdp else 0
    return err, q, _bin(err, te), j


@njit(cache=True)
def _train_kernel(
    Q, visits, trace, x_trim, de_trim, p, rc, te, re, actions, sched,
    ep_start, n_episodes, steps, dt, theta_des, th0_lo, th0_hi, mdp,
    use_faa, tc, ts, rcen, rsig, outer_mode,
    gust, dcoef, noise, nf, clip,
    rng_explore, rng_reset, rng_gust, rng_noise,
):
    n_i, n_j, n_a = Q.shape
    greedy = np.empty((n_i, n_j), dtype=np.int64)
    gv = np.empty((n_i, n_j))
    for i in range(n_i):
        for j in range(n_j):
            greedy[i, j] = np.argmax(Q[i, j])
            gv[i, j] = actions[greedy[i, j]]
    fine_t = te[te.shape[0] - 2]
    fine_r = re[re.shape[0] - 2]
    gst = np.zeros(2)
    inv_sqrt_dt = 1.0 / math.sqrt(dt)
    gamma = sched[6]
    for e in range(n_episodes):
        ep = ep_start + e
        eps = _schedule(sched[0], sched[1], sched[2], ep)
        alpha = _schedule(sched[3], sched[4], sched[5], ep)
        x = x_trim.copy()
        x[7] = th0_lo + (th0_hi - th0_lo) * rng_reset.random()
        x[4] = 0.0
        gst[0] = 0.0
        gst[1] = 0.0
        de_prev = de_trim
        err, q, i, j = _observe(x, theta_des, noise, nf, clip, rng_noise, te, re, mdp)
        total = 0.0
        aborted = 0.0
        for t in range(steps):
            if rng_explore.random() < eps:
                k = min(int(rng_explore.random() * n_a), n_a - 1)
                de = actions[k]
            elif use_faa:
                de = _faa(err, q, gv, tc, ts, rcen, rsig, fine_t, fine_r, outer_mode, te, re)
                k = np.argmin(np.abs(actions - de))
            else:
                k = greedy[i, j]
                de = actions[k]
            gw = _gust_sample(dcoef, gst, rng_gust, inv_sqrt_dt) if gust else 0.0
            x, code, _ = _rk4(x, de, gw, p, dt)
            if code != OK:
                aborted = 1.0
                break
            r = _reward(x[7] - theta_des, x[4], de, de_prev, rc)
            total += r
            err2, q2, i2, j2 = _observe(x, theta_des, noise, nf, clip, rng_noise, te, re, mdp)
            _q_update(Q, i, j, k, r, i2, j2, alpha, gamma)
            g = np.argmax(Q[i, j])
            greedy[i, j] = g
            gv[i, j] = actions[g]
            visits[i, j, k] += 1
            i, j, err, q, de_prev = i2, j2, err2, q2, de
        trace[e, 0] = total
        trace[e, 1] = eps
        trace[e, 2] = alpha
        trace[e, 3] = aborted


@dataclass
class TrainingResult:
    table: QTable
    rewards: np.ndarray
    epsilons: np.ndarray
    alphas: np.ndarray
    aborted: np.ndarray
    visits: np.ndarray

    @property
    def n_aborted(self) -> int:
        return int(self.aborted.sum())

    def first_positive_episode(self) -> int | None:
        pos = np.flatnonzero(self.rewards > 0)
        return int(pos[0]) if pos.size else None

    def moving_average(self, window: int = 500) -> np.ndarray:
        r = self.rewards
        if r.size < window:
            window = max(r.size, 1)
        c = np.cumsum(np.r_[0.0, r])
        return (c[window:] - c[:-window]) / window

    def final_moving_average(self, window: int = 500) -> float:
        ma = self.moving_average(window)
        return float(ma[-1]) if ma.size else float("nan")

    def write_trace(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("episode,total_reward,epsilon,alpha,aborted\n")
            for k in range(self.rewards.size):
                r, e, a = (float(v[k]) for v in (self.rewards, self.epsilons, self.alphas))
                fh.write(f"{k},{r!r},{e!r},{a!r},{int(self.aborted[k])}\n")
        return path


def train(
    model: AircraftModel,
    trim: TrimSolution,
    episode: EpisodeConfig | None = None,
    schedule: Schedule | None = None,
    reward_cfg: RewardConfig | None = None,
    discretizer: Discretizer | None = None,
    actions=None,
    dryden: DrydenConfig | None = None,
    seed: int = 0,
    faa_in_training: bool = False,
    faa_anchor: str = "center",
    faa_outer_rule: str = "exclude_in_fine",
    chunk: int = 1000,
    table: QTable | None = None,
) -> TrainingResult:
    """Run epsilon-greedy Q-learning episodes against the 6DoF environment.

    Deterministic for a given ``seed``; the random streams are split exactly as
    in :class:`~qpitch.environment.Streams`, so the same episodes can be
    replayed step by step through :class:`~qpitch.environment.PitchEnv`.
    """
    episode = episode or EpisodeConfig()
    schedule = schedule or Schedule()
    reward_cfg = reward_cfg or RewardConfig()
    discretizer = discretizer or Discretizer()
    actions = action_grid() if actions is None else np.asarray(actions, dtype=np.float64)
    dryden = dryden or DrydenConfig(dt=episode.dt)
    mdp = episode.mode == "mdp"
    if table is None:
        table = QTable.zeros(episode.mode, discretizer, actions)
    elif table.mode != episode.mode:
        raise ValueError("table mode does not match episode mode")
    grid = MembershipGrid.from_discretizer(discretizer, episode.mode, faa_anchor, faa_outer_rule)

    streams = Streams.from_seed(seed)
    p = model.with_thrust(trim.thrust).params()
    x_trim = trim.state().as_array()
    n = schedule.episodes
    trace = np.zeros((n, 4))
    visits = np.zeros(table.values.shape, dtype=np.int64)
    start0 = table.episodes
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        _train_kernel(
            table.values, visits, trace[start:start + m], x_trim, trim.deltaE, p,
            reward_cfg.as_array(), discretizer.theta_array(), discretizer.rate_array(), actions,
            schedule.as_array(), start0 + start, m, episode.steps, episode.dt, episode.theta_des,
            episode.theta0_range[0], episode.theta0_range[1], mdp,
            faa_in_training, grid.theta_centers, grid.theta_sigmas, grid.rate_centers, grid.rate_sigmas,
            OUTER_RULES.index(faa_outer_rule),
            episode.gust, dryden.coefficients(), episode.noise, episode.noise_fraction,
            episode.err_clip if episode.err_clip is not None else 0.0,
            streams.explore, streams.reset, streams.gust, streams.noise,
        )
        done = start + m
        block = trace[start:done, 0]
        log.info(
            "%s episodes %d-%d: mean reward %.1f, positive %d, aborted %d",
            episode.mode, start0 + start, start0 + done - 1, block.mean(), int((block > 0).sum()),
            int(trace[start:done, 3].sum()),
        )
    table.episodes = start0 + n
    table.seed = seed
    return TrainingResult(table, trace[:, 0].copy(), trace[:, 1].copy(), trace[:, 2].copy(), trace[:, 3].copy(), visits)
