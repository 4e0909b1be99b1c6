"""PID pitch-attitude baseline with derivative on measured pitch rate.

Sign convention: the command is ``deltaE = -(Kp*err + Ki*integral(err) + Kd*q)``
with ``err = theta - theta_des``.  Because trailing-edge-down elevator
(``deltaE > 0``) pitches this airframe nose-down (``cm_de < 0``), stabilizing
gains are negative.
"""
from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

STEP = math.radians(1.0)


@dataclass(frozen=True)
class PidGains:
    kp: float = -10.78
    ki: float = -0.454
    kd: float = -3.479
    integrator_limit: float = 0.5
    output_limit: float = 0.25

    def __post_init__(self):
        if not self.output_limit > 0 or not self.integrator_limit > 0:
            raise ValueError("limits must be positive")


@dataclass
class PidState:
    integral: float = 0.0
    saturated: bool = False


def pid_step(err_p: float, q: float, dt: float, state: PidState, gains: PidGains | None = None) -> float:
    """One controller update; ``state`` is advanced in place.

    Anti-windup by conditional integration: the integrator only accepts the new
    error while the resulting command is unsaturated, and is always clamped to
    ``integrator_limit``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = gains or PidGains()
    trial = min(max(state.integral + err_p * dt, -g.integrator_limit), g.integrator_limit)
    u = -(g.kp * err_p + g.ki * trial + g.kd * q)
    lim = g.output_limit
    if abs(u) > lim:
        state.saturated = True
        return float(np.clip(u, -lim, lim))
    state.saturated = False
    state.integral = trial
    return float(u)


class PidController:
    """Stateful wrapper used by the evaluation harness."""

    def __init__(self, gains: PidGains | None = None, dt: float = 0.01):
        self.gains = gains or PidGains()
        self.dt = dt
        self.state = PidState()

    def reset(self):
        self.state = PidState()

    def __call__(self, err_p: float, q: float) -> float:
        return pid_step(err_p, q, self.dt, self.state, self.gains)


# ---------------------------------------------------------------------------
# offline tuning against the linearized plant
# ---------------------------------------------------------------------------


def discretize_plant(A, B, dt: float):
    """Zero-order-hold discretization via the augmented matrix exponential."""
    from scipy.linalg import expm

    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n]


def linear_step_response(Ad, Bd, gains: PidGains, dt: float = 0.01, duration: float = 6.0, target: float = STEP):
    """Closed-loop pitch response (rad) of the linear ``(u, w, q, theta)`` model to a ``target`` step (default 1 deg)."""
    x = np.zeros(Ad.shape[0])
    st = PidState()
    out = np.empty(int(round(duration / dt)))
    for k in range(out.size):
        de = pid_step(x[3] - target, x[2], dt, st, gains)
        x = Ad @ x + Bd * de
        out[k] = x[3]
    return out


def step_metrics(y, target: float = 1.0, dt: float = 0.01, band: float = 0.02) -> dict:
    """Rise time (10-90 %), fractional overshoot and settling time of a sampled step response."""
    y = np.asarray(y, dtype=np.float64) / target
    t = np.arange(1, y.size + 1) * dt
    hi, lo = np.flatnonzero(y >= 0.9), np.flatnonzero(y >= 0.1)
    rise = (hi[0] - lo[0]) * dt if hi.size and lo.size else float("inf")
    outside = np.flatnonzero(np.abs(y - 1.0) > band)
    settle = t[outside[-1]] if outside.size else 0.0
    return {"rise_time": float(rise), "overshoot": float(y.max() - 1.0), "settling_time": float(settle)}


def tune_gains(
    A, B, dt: float = 0.01, rise: float = 0.5, overshoot: float = 0.10, settle: float = 2.0,
    kp_range=(0.5, 30.0), kd_range=(0.1, 15.0), ki_range=(0.1, 20.0), n: int = 25,
) -> tuple[PidGains, dict]:
    """Grid search for gains whose linear step response best matches the time-domain targets.

    Gains are searched on negative logarithmic grids (see module docstring for the sign).
    """
    Ad, Bd = discretize_plant(np.asarray(A, float), np.asarray(B, float), dt)
    best = None
    for kp in -np.geomspace(*kp_range, n):
        for kd in -np.geomspace(*kd_range, n):
            for ki in -np.r_[0.0, np.geomspace(*ki_range, 15)]:
                g = PidGains(kp, ki, kd)
                y = linear_step_response(Ad, Bd, g, dt)
                if not np.all(np.isfinite(y)) or np.abs(y).max() > 5 * STEP:
                    continue
                m = step_metrics(y, STEP, dt)
                cost = ((m["rise_time"] - rise) / rise) ** 2 + ((m["overshoot"] - overshoot) / overshoot) ** 2
                cost += ((m["settling_time"] - settle) / settle) ** 2
                if best is None or cost < best[0]:
                    best = (cost, g, m)
    if best is None:
        raise RuntimeError("no stabilizing gains found on the search grid")
    return best[1], best[2]
