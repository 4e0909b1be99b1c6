"""Dryden vertical gust and multiplicative sensor noise.

The vertical-gust shaping filter

    G_w(s) = sigma_w * sqrt(L_w / (pi * u1)) * (1 + sqrt(3) * tau * s) / (1 + tau * s)**2,   tau = L_w / u1

is discretized with the bilinear (Tustin) transform and driven by unit-variance
white noise scaled by ``1/sqrt(dt)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass(frozen=True)
class DrydenConfig:
    sigma_w: float = 10.0
    L_w: float = 100.0
    u1: float = 160.0
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be non-negative")
        for name in ("L_w", "u1", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def gain(self) -> float:
        """Static gain ``G_w(0)``."""
        return self.sigma_w * math.sqrt(self.L_w / (math.pi * self.u1))

    def coefficients(self) -> np.ndarray:
        """Tustin coefficients ``[b0, b1, b2, a1, a2]`` (``a0 = 1``)."""
        tau = self.L_w / self.u1
        c = 2.0 / self.dt
        lead = math.sqrt(3.0) * tau * c
        lag = tau * c
        k = self.gain / (1.0 + lag) ** 2
        return np.array(
            [
                k * (1.0 + lead),
                2.0 * k,
                k * (1.0 - lead),
                2.0 * (1.0 - lag) / (1.0 + lag),
                ((1.0 - lag) / (1.0 + lag)) ** 2,
            ]
        )

    def continuous_tf(self):
        """``(num, den)`` polynomial coefficients of ``G_w(s)``, highest power first."""
        tau = self.L_w / self.u1
        k = self.gain
        return [k * math.sqrt(3.0) * tau, k], [tau * tau, 2.0 * tau, 1.0]


@njit(cache=True)
def _filter_sample(coef, st, x):
    # direct form II transposed; st holds the two delay states and is updated in place
    y = coef[0] * x + st[0]
    st[0] = coef[1] * x - coef[3] * y + st[1]
    st[1] = coef[2] * x - coef[4] * y
    return y


@njit(cache=True)
def _filter_run(coef, st, xs):
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        out[k] = _filter_sample(coef, st, xs[k])
    return out


@njit(cache=True)
def _gust_sample(coef, st, rng, inv_sqrt_dt):
    return _filter_sample(coef, st, rng.standard_normal() * inv_sqrt_dt)


@dataclass
class GustFilterState:
    """Filter delay states plus the generator that drives them."""

    delays: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @classmethod
    def initial(cls, cfg: DrydenConfig, rng: np.random.Generator | None = None) -> "GustFilterState":
        return cls(np.zeros(2), rng if rng is not None else np.random.default_rng(cfg.seed))


def dryden_step(cfg: DrydenConfig, st: GustFilterState) -> tuple[float, GustFilterState]:
    """Draw one vertical-gust sample (m/s).  ``st`` is advanced in place and returned."""
    w = _gust_sample(cfg.coefficients(), st.delays, st.rng, 1.0 / math.sqrt(cfg.dt))
    return float(w), st


class DrydenGust:
    """Stateful gust generator for one trajectory."""

    def __init__(self, cfg: DrydenConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.state = GustFilterState.initial(cfg, rng)
        self._coef = cfg.coefficients()
        self._scale = 1.0 / math.sqrt(cfg.dt)

    def step(self) -> float:
        return float(_gust_sample(self._coef, self.state.delays, self.state.rng, self._scale))

    def sample(self, n: int) -> np.ndarray:
        """``n`` consecutive samples; identical to ``n`` calls of :meth:`step`."""
        drive = self.state.rng.standard_normal(n) * self._scale
        return _filter_run(self._coef, self.state.delays, drive)

    def respond(self, inputs) -> np.ndarray:
        """Filter an explicit input sequence (bypasses the noise source)."""
        return _filter_run(self._coef, self.state.delays, np.asarray(inputs, dtype=np.float64))


@njit(cache=True)
def _noisy(value, fraction, rng):
    return value * (1.0 + fraction * (2.0 * rng.random() - 1.0))


def apply_sensor_noise(measurement: float, fraction: float, rng: np.random.Generator) -> float:
    """Multiplicative noise: ``measurement * (1 + fraction * U[-1, 1])``."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("noise fraction must lie in [0, 1]")
    return float(_noisy(float(measurement), float(fraction), rng))
