"""Scenario orchestration: closed-loop runs, episode logs, metrics, trim checks and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .airframe import (
    OK,
    SimulationFault,
    TrimSolution,
    _rk4,
    _simulate,
    builtin_dataset,
    linearize_longitudinal,
    load_reference,
    longitudinal_modes,
    raise_fault,
    trim_solve,
)
from .atmosphere import DrydenGust, _noisy
from .config import Profile, RunConfig, defaults_path
from .environment import Streams, _reward, discretize
from .faa import FaaController, MembershipGrid
from .pid import PidController
from .qlearning import QTable, train

log = logging.getLogger(__name__)

CONTROLLERS = ("mdp", "pomdp", "faa", "pid", "trim")
LOG_FORMAT = "qpitch-episode-log"
LOG_VERSION = 1
LOG_COLUMNS = (
    "t_s", "theta_deg", "theta_des_deg", "err_deg", "q_deg_s", "alpha_deg", "u_m_s", "w_m_s",
    "deltaE_rad", "reward", "gust_w_m_s", "theta_meas_deg", "q_meas_deg_s",
)


class MissingArtifact(FileNotFoundError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def solve_trim(cfg: RunConfig) -> TrimSolution:
    return trim_solve(cfg.model, cfg.V_trim, cfg.gamma, tol=cfg.trim_tol)


def load_table(path) -> QTable:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"Q-table not found: {path}")
    return QTable.load(path)


# ---------------------------------------------------------------------------
# scenarios and logs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    controller: str
    profile: Profile
    duration: float
    theta0: float = 0.0
    gust: bool = False
    noise: bool = False
    seed: int = 0
    err_clip: float | None = None
    table_path: str | None = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.controller in ("mdp", "pomdp", "faa") and self.table_path is None:
            raise ValueError(f"controller {self.controller!r} needs a Q-table")


def step_scenario(cfg: RunConfig, controller: str, table_path=None, gust=False, noise=False, seed=None) -> Scenario:
    ev = cfg.evaluation
    return Scenario(
        name="step",
        controller=controller,
        profile=Profile.constant(math.degrees(ev.step_target), ev.step_duration),
        duration=ev.step_duration,
        theta0=ev.step_theta0,
        gust=gust,
        noise=noise,
        seed=cfg.eval_seed if seed is None else seed,
        table_path=None if table_path is None else str(table_path),
    )


def profile_scenario(cfg: RunConfig, controller: str, table_path=None, gust=True, noise=True, seed=None) -> Scenario:
    ev = cfg.evaluation
    return Scenario(
        name="profile",
        controller=controller,
        profile=ev.profile,
        duration=ev.profile.duration,
        theta0=0.0,
        gust=gust,
        noise=noise,
        seed=cfg.eval_seed if seed is None else seed,
        err_clip=ev.err_clip,
        table_path=None if table_path is None else str(table_path),
    )


@dataclass
class EpisodeLog:
    """Per-step record.  Row ``k`` holds the state at ``t_k``; ``deltaE``, ``reward``
    and ``gust_w`` belong to the interval ending at ``t_k`` and the measurements are
    those the controller saw at its start.  Row 0 is the initial condition."""

    data: dict
    scenario: dict = field(default_factory=dict)
    aborted: str | None = None
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key) -> np.ndarray:
        return self.data[key]

    def __len__(self) -> int:
        return len(self.data["t_s"])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# {LOG_FORMAT} v{LOG_VERSION}\n")
            for key, val in self.meta.items():
                fh.write(f"# meta: {key}={val}\n")
            if self.aborted:
                fh.write(f"# aborted: {self.aborted}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for k in range(len(self)):
                w.writerow([repr(float(self.data[c][k])) for c in LOG_COLUMNS])
        return path

    @classmethod
    def read_csv(cls, path) -> "EpisodeLog":
        path = Path(path)
        if not path.is_file():
            raise MissingArtifact(f"episode log not found: {path}")
        with path.open() as fh:
            first = fh.readline().strip()
            if first != f"# {LOG_FORMAT} v{LOG_VERSION}":
                raise ValueError(f"{path}: not a v{LOG_VERSION} episode log")
            rows = list(csv.reader(fh))
        aborted, meta = None, {}
        while rows and rows[0] and rows[0][0].startswith("#"):
            note = ",".join(rows.pop(0))
            if note.startswith("# aborted: "):
                aborted = note[len("# aborted: "):]
            elif note.startswith("# meta: "):
                key, _, val = note[len("# meta: "):].partition("=")
                meta[key] = val
        header, body = rows[0], rows[1:]
        if tuple(header) != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        arr = np.array(body, dtype=np.float64).reshape(-1, len(LOG_COLUMNS))
        return cls({c: arr[:, k] for k, c in enumerate(LOG_COLUMNS)}, aborted=aborted, meta=meta)


def make_controller(cfg: RunConfig, sc: Scenario, table: QTable | None):
    """Return ``f(err_p, q) -> deltaE`` for the scenario's controller."""
    if sc.controller == "pid":
        ctl = PidController(cfg.pid, cfg.dt)
        return ctl
    if sc.controller == "faa":
        grid = MembershipGrid.from_discretizer(table.discretizer, table.mode, cfg.faa_anchor, cfg.faa_outer_rule)
        return FaaController(table, grid)
    if sc.controller in ("mdp", "pomdp"):
        if table.mode != sc.controller:
            raise ValueError(f"{sc.controller} controller given a {table.mode} table")
        greedy = table.greedy_actions()

        def discrete(err_p, q):
            return float(greedy[discretize(err_p, q, table.discretizer, table.mode).index])

        return discrete
    return None


def run_scenario(cfg: RunConfig, sc: Scenario, table: QTable | None = None, trim: TrimSolution | None = None) -> EpisodeLog:
    """Closed-loop simulation of one scenario.

    A simulation fault (e.g. a diverging discrete controller) truncates the log
    and is recorded in ``EpisodeLog.aborted`` rather than raised.
    """
    if sc.controller in ("mdp", "pomdp", "faa") and table is None:
        table = load_table(sc.table_path)
    trim = trim or solve_trim(cfg)
    p = cfg.model.with_thrust(trim.thrust).params()
    rc = cfg.reward.as_array()
    ctl = make_controller(cfg, sc, table)
    streams = Streams.from_seed(sc.seed)
    gust = DrydenGust(cfg.dryden, streams.gust) if sc.gust else None
    nf = cfg.noise_fraction
    dt = cfg.dt
    n = int(round(sc.duration / dt))

    x = trim.state().as_array()
    x[7] = sc.theta0
    x[4] = 0.0
    rows = np.full((n + 1, len(LOG_COLUMNS)), np.nan)
    de_prev = trim.deltaE
    aborted = None

    def record(k, x, des, de, r, gw, thm, qm):
        rows[k] = (
            k * dt, math.degrees(x[7]), math.degrees(des), math.degrees(x[7] - des), math.degrees(x[4]),
            math.degrees(math.atan2(x[2], x[0])), x[0], x[2], de, r, gw, math.degrees(thm), math.degrees(qm),
        )

    record(0, x, sc.profile(0.0), trim.deltaE, 0.0, 0.0, x[7], x[4])
    last = n
    for k in range(n):
        t = k * dt
        thm, qm = x[7], x[4]
        if sc.noise:
            thm = _noisy(thm, nf, streams.noise)
            qm = _noisy(qm, nf, streams.noise)
        err = thm - sc.profile(t)
        if sc.err_clip is not None:
            err = min(max(err, -sc.err_clip), sc.err_clip)
        de = trim.deltaE if ctl is None else float(ctl(err, qm))
        gw = gust.step() if gust is not None else 0.0
        xn, code, theta = _rk4(x, de, gw, p, dt)
        if code != OK:
            try:
                raise_fault(code, theta)
            except SimulationFault as exc:
                aborted = f"t={t + dt:.2f}s: {exc}"
                log.warning("%s/%s aborted at %s", sc.name, sc.controller, aborted)
            last = k
            break
        des = sc.profile(t + dt)
        r = float(_reward(xn[7] - des, xn[4], de, de_prev, rc))
        x, de_prev = xn, de
        record(k + 1, x, des, de, r, gw, thm, qm)
    rows = rows[: last + 1]
    meta = {
        "scenario": sc.name, "controller": sc.controller, "seed": sc.seed,
        "gust": sc.gust, "noise": sc.noise, "noise_fraction": nf if sc.noise else 0.0,
    }
    if sc.controller == "faa":
        meta.update(faa_anchor=cfg.faa_anchor, faa_outer_rule=cfg.faa_outer_rule)
    if table is not None:
        meta["table"] = sc.table_path
    return EpisodeLog({c: rows[:, i] for i, c in enumerate(LOG_COLUMNS)}, asdict(sc), aborted, meta)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def episode_metrics(lg: EpisodeLog, transient: float = 0.0, tail: float = 1.0) -> dict:
    """Tracking and effort metrics of a log.

    Control effort is measured on the physical elevator trajectory, which starts
    at the trim deflection (row 0), so the controller's first move away from trim
    counts; that first move is also reported separately as ``handover_rad``.
    """
    t = lg["t_s"]
    th = lg["theta_deg"]
    des = lg["theta_des_deg"]
    err = lg["err_deg"]
    de = lg["deltaE_rad"]
    d = np.abs(np.diff(de)) if de.size > 1 else np.zeros(1)
    th0, target = th[0], des[-1]
    span = target - th0
    rise = float("inf")
    overshoot = 0.0
    if abs(span) > 1e-12:
        frac = (th - th0) / span
        hi, lo = np.flatnonzero(frac >= 0.9), np.flatnonzero(frac >= 0.1)
        if hi.size and lo.size:
            rise = float(t[hi[0]] - t[lo[0]])
        overshoot = float(max(0.0, np.max(frac) - 1.0) * abs(span))
    t_end = t[-1]
    last = t >= t_end - tail - 1e-9
    after = t >= transient - 1e-9
    return {
        "duration_s": float(t_end),
        "rise_time_s": rise,
        "overshoot_deg": overshoot,
        "ss_err_deg": float(np.max(np.abs(err[last]))),
        "total_variation_rad": float(d.sum()),
        "max_step_rad": float(d.max()),
        "handover_rad": float(d[0]),
        "max_err_after_transient_deg": float(np.max(np.abs(err[after]))) if after.any() else float("nan"),
        "total_reward": float(np.nansum(lg["reward"][1:])),
        "aborted": lg.aborted is not None,
    }


METRIC_COLUMNS = (
    "rise_time_s", "overshoot_deg", "ss_err_deg", "total_variation_rad", "max_step_rad", "handover_rad",
    "max_err_after_transient_deg", "total_reward", "aborted",
)


def compare_table(named: dict, transient: float = 0.0) -> list[dict]:
    """Aligned metric rows for several logs; all logs must cover the same duration."""
    if len(named) < 2:
        raise ValueError("compare needs at least two scenarios")
    rows = []
    durations = set()
    for name, lg in named.items():
        m = episode_metrics(lg, transient)
        durations.add(round(m["duration_s"], 9) if not m["aborted"] else None)
        rows.append({"scenario": name, **{k: m[k] for k in METRIC_COLUMNS}, "duration_s": m["duration_s"]})
    finished = {d for d in durations if d is not None}
    if len(finished) > 1:
        raise ValueError(f"incompatible durations: {sorted(finished)}")
    return rows


def format_rows(rows: list[dict], columns=None) -> str:
    columns = columns or list(rows[0].keys())

    def fmt(v):
        if isinstance(v, bool):
            return "yes" if v else "no"
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)

    cells = [[str(c) for c in columns]] + [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(s.rjust(w) for s, w in zip(row, widths)) for row in cells)


def write_rows_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return path


# ---------------------------------------------------------------------------
# trim check
# ---------------------------------------------------------------------------


def _envelope_fit(t, y):
    """Period and exponential decay rate from the peaks of ``|y|`` between zero crossings."""
    s = np.signbit(y)
    crossings = np.flatnonzero(s[1:] != s[:-1])
    if crossings.size < 3:
        return float("nan"), float("nan"), np.empty(0), np.empty(0)
    # interpolated crossing times
    tc = t[crossings] - y[crossings] * (t[crossings + 1] - t[crossings]) / (y[crossings + 1] - y[crossings])
    period = 2.0 * float(np.mean(np.diff(tc)))
    pk_t, pk_v = [], []
    for a, b in zip(crossings[:-1], crossings[1:]):
        k = a + 1 + int(np.argmax(np.abs(y[a + 1:b + 1])))
        pk_t.append(t[k])
        pk_v.append(abs(y[k]))
    pk_t, pk_v = np.array(pk_t), np.array(pk_v)
    rate = float(np.polyfit(pk_t, np.log(pk_v), 1)[0]) if pk_t.size >= 2 else float("nan")
    return period, rate, pk_t, pk_v


def trim_report(cfg: RunConfig) -> dict:
    """Own trim against the published one, and an open-loop run from a perturbed trim."""
    trim = solve_trim(cfg)
    ref = load_reference(cfg.dataset)
    ev = cfg.evaluation
    p = cfg.model.with_thrust(trim.thrust).params()
    x0 = trim.state().as_array()
    x0[7] += ev.trim_perturb
    n = int(round(ev.trim_duration / cfg.dt))
    traj, code, theta = _simulate(x0, trim.deltaE, p, cfg.dt, n)
    if code != OK:
        raise_fault(code, theta)
    t = np.arange(n + 1) * cfg.dt
    dth = traj[:, 7] - trim.theta
    period, rate, pk_t, pk_v = _envelope_fit(t, dth)
    modes = longitudinal_modes(linearize_longitudinal(cfg.model, trim, cfg.trim_tol))
    ph = modes.phugoid
    alpha = np.arctan2(traj[:, 2], traj[:, 0])
    return {
        "trim": trim,
        "reference": ref.get("trim"),
        "period_s": period,
        "decay_rate": rate,
        "linear_phugoid_period_s": ph.period,
        "linear_phugoid_decay": float(ph.roots[0].real),
        "max_theta_dev_deg": float(np.degrees(np.max(np.abs(dth)))),
        "final_theta_dev_deg": float(np.degrees(abs(dth[-1]))),
        "alpha_range_deg": (float(np.degrees(alpha.min())), float(np.degrees(alpha.max()))),
        "peaks": (pk_t, pk_v),
        "t": t,
        "theta_dev": dth,
        "alpha": alpha,
    }


def format_trim_report(rep: dict) -> str:
    tr = rep["trim"]
    ref = rep["reference"] or {}
    lines = [
        "wings-level trim (own solution vs published)",
        f"  {'quantity':<14}{'own':>14}{'published':>14}{'delta':>14}",
    ]

    def row(name, own, pub):
        if pub is None:
            lines.append(f"  {name:<14}{own:>14.4f}{'-':>14}{'-':>14}")
        else:
            lines.append(f"  {name:<14}{own:>14.4f}{pub:>14.4f}{own - pub:>14.4f}")

    row("alpha [deg]", math.degrees(tr.alpha), ref.get("alpha_deg"))
    row("deltaE [deg]", math.degrees(tr.deltaE), ref.get("deltaE_deg"))
    row("thrust [N]", tr.thrust, ref.get("thrust_N"))
    lines += [
        f"  residual norm {tr.residual_norm:.3e} after {tr.iterations} Newton iterations",
        "open-loop response to the pitch perturbation",
        f"  oscillation period {rep['period_s']:.2f} s (linear phugoid {rep['linear_phugoid_period_s']:.2f} s)",
        f"  envelope decay rate {rep['decay_rate']:.5f} 1/s (linear phugoid {rep['linear_phugoid_decay']:.5f} 1/s)",
        f"  max |theta - theta_trim| {rep['max_theta_dev_deg']:.4f} deg, final {rep['final_theta_dev_deg']:.4f} deg",
        f"  alpha range {rep['alpha_range_deg'][0]:.4f} .. {rep['alpha_range_deg'][1]:.4f} deg",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# training wrapper, manifests, ensembles
# ---------------------------------------------------------------------------


def run_training(cfg: RunConfig, mode: str, seed: int, episodes: int | None, out_dir) -> dict:
    """Train one table and persist table + reward trace; returns a summary dict."""
    from dataclasses import replace

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = cfg.schedule if episodes is None else replace(cfg.schedule, episodes=episodes)
    episode = replace(cfg.episode, mode=mode)
    trim = solve_trim(cfg)
    res = train(
        cfg.model, trim, episode, schedule, cfg.reward, cfg.discretizer, cfg.actions, cfg.dryden,
        seed=seed, faa_in_training=cfg.faa_in_training, faa_anchor=cfg.faa_anchor,
        faa_outer_rule=cfg.faa_outer_rule,
    )
    table_path = res.table.save(out_dir / f"qtable_{mode}.txt")
    trace_path = res.write_trace(out_dir / f"trace_{mode}.csv")
    window = min(500, max(schedule.episodes, 1))
    return {
        "mode": mode,
        "seed": seed,
        "episodes": schedule.episodes,
        "first_positive_episode": res.first_positive_episode(),
        "positive_episodes": int((res.rewards > 0).sum()),
        "final_moving_average": res.final_moving_average(window) if schedule.episodes else float("nan"),
        "aborted_episodes": res.n_aborted,
        "table": str(table_path),
        "trace": str(trace_path),
    }


def write_manifest(out_dir, cfg: RunConfig, command: str, seeds: dict, artifacts, argv=None) -> Path:
    out_dir = Path(out_dir)
    dataset = cfg.dataset or builtin_dataset()
    manifest = {
        "format": "qpitch-manifest",
        "version": 1,
        "package_version": __version__,
        "command": command,
        "argv": list(sys.argv if argv is None else argv),
        "seeds": seeds,
        "config": cfg.as_dict(),
        "inputs": {
            "dataset": {"path": str(dataset), "sha256": sha256_file(dataset)},
            "defaults": {"path": str(defaults_path()), "sha256": sha256_file(defaults_path())},
        },
        "artifacts": {Path(a).name: {"path": str(a), "sha256": sha256_file(a)} for a in artifacts},
        "numpy": np.__version__,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def fan_out(fn, arg_list, workers: int | None = None) -> list:
    """Run ``fn(*args)`` for every entry, in worker processes when more than one is requested."""
    workers = workers or min(len(arg_list), os.cpu_count() or 1)
    if workers <= 1 or len(arg_list) <= 1:
        return [fn(*a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *a) for a in arg_list]
        return [f.result() for f in futures]


def plot_log(lg: EpisodeLog, path, title: str = "") -> Path | None:
    """SVG of pitch tracking and elevator; silently skipped when matplotlib is unavailable."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plot")
        return None
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    a1.plot(lg["t_s"], lg["theta_deg"], label="theta")
    a1.plot(lg["t_s"], lg["theta_des_deg"], "--", label="target")
    a1.set_ylabel("pitch [deg]")
    a1.legend()
    a2.step(lg["t_s"], lg["deltaE_rad"], where="pre")
    a2.set_ylabel("elevator [rad]")
    a2.set_xlabel("time [s]")
    if title:
        a1.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
