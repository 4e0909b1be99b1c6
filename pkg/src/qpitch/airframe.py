"""Nonlinear 6DoF rigid-body aircraft model with trim and longitudinal linearization.

The numerical core is a set of ``numba`` kernels operating on a packed state
vector ``[u, v, w, p, q, r, phi, theta, psi, x, y, z]`` and a packed parameter
vector (see :meth:`AircraftModel.params`).  The public functions wrap those
kernels with validation and the :class:`FlightState` dataclass.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

G = 9.80665
THETA_GUARD = math.pi / 2 - 1e-6
MIN_AIRSPEED = 1.0
LBF_TO_N = 4.4482216152605

DERIVATIVE_NAMES = (
    "cD0", "cL0", "cm0",
    "cDa", "cLa", "cma",
    "cDu", "cLu", "cmu",
    "cDq", "cLq", "cmq",
    "cDde", "cLde", "cmde",
)

# packed parameter layout shared by every kernel
P_S, P_CBAR, P_B, P_MASS, P_IXX, P_IYY, P_IZZ, P_RHO, P_VREF, P_THRUST, P_ABSDRAG = range(11)
P_CL = 11  # cL0, cLa, cLu, cLq, cLde
P_CD = 16  # cD0, cDa, cDu, cDq, cDde
P_CM = 21  # cm0, cma, cmu, cmq, cmde
N_PARAMS = 26

# kernel status codes
OK, FAULT_THETA, FAULT_AIRSPEED, FAULT_NONFINITE = 0, 1, 2, 3
_FAULT_TEXT = {
    FAULT_THETA: "pitch angle reached the Euler-rate singularity guard",
    FAULT_AIRSPEED: "airspeed fell below the aerodynamic model limit",
    FAULT_NONFINITE: "non-finite state",
}


class SimulationFault(RuntimeError):
    """Raised when the simulation leaves the model's validity envelope."""

    def __init__(self, message: str, theta: float | None = None, code: int = 0):
        super().__init__(message)
        self.theta = theta
        self.code = code


class TrimError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FlightState:
    """Rigid-body state: body velocities (m/s), body rates (rad/s), Euler angles (rad), position (m)."""

    u: float = 0.0
    v: float = 0.0
    w: float = 0.0
    p: float = 0.0
    q: float = 0.0
    r: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "FlightState":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (12,):
            raise ValueError(f"expected 12 state values, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    @property
    def alpha(self) -> float:
        return math.atan2(self.w, self.u)

    @property
    def airspeed(self) -> float:
        return math.sqrt(self.u**2 + self.v**2 + self.w**2)


@dataclass(frozen=True)
class DerivativeSet:
    """Longitudinal stability and control derivatives (per rad) for one flight phase."""

    phase: str
    cD0: float
    cL0: float
    cm0: float
    cDa: float
    cLa: float
    cma: float
    cDu: float
    cLu: float
    cmu: float
    cDq: float
    cLq: float
    cmq: float
    cDde: float
    cLde: float
    cmde: float

    @classmethod
    def zeros(cls, phase: str = "zero") -> "DerivativeSet":
        return cls(phase, *([0.0] * len(DERIVATIVE_NAMES)))


@dataclass(frozen=True)
class AircraftModel:
    S: float
    cbar: float
    b: float
    mass: float
    Ixx: float
    Iyy: float
    Izz: float
    derivs: DerivativeSet
    Ixz: float = 0.0
    rho: float = 1.225
    V_ref: float = 160.0
    T: float = 0.0
    # drag uses |alpha| and |deltaE|, as in the trim equations
    abs_drag: bool = True

    def __post_init__(self):
        for name in ("S", "cbar", "b", "mass", "Ixx", "Iyy", "Izz", "rho", "V_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.Ixz != 0.0:
            raise ValueError("non-zero Ixz is not supported (diagonal inertia equations)")

    def params(self) -> np.ndarray:
        d = self.derivs
        return np.array(
            [
                self.S, self.cbar, self.b, self.mass, self.Ixx, self.Iyy, self.Izz,
                self.rho, self.V_ref, self.T, 1.0 if self.abs_drag else 0.0,
                d.cL0, d.cLa, d.cLu, d.cLq, d.cLde,
                d.cD0, d.cDa, d.cDu, d.cDq, d.cDde,
                d.cm0, d.cma, d.cmu, d.cmq, d.cmde,
            ],
            dtype=np.float64,
        )

    def with_thrust(self, thrust: float) -> "AircraftModel":
        return replace(self, T=float(thrust))

    @property
    def weight(self) -> float:
        return self.mass * G


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


def builtin_dataset() -> Path:
    return Path(str(resources.files("qpitch") / "data" / "chaka50.ini"))


def _read_dataset(path) -> configparser.ConfigParser:
    path = Path(path) if path is not None else builtin_dataset()
    if not path.is_file():
        raise DatasetError(f"aircraft dataset not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read(path)
    return cp


def load_aircraft(
    path=None, phase: str = "cruise", rho: float = 1.225, V_ref: float = 160.0, abs_drag: bool = True
) -> AircraftModel:
    """Load geometry/inertia and one phase of derivatives from a dataset file."""
    cp = _read_dataset(path)
    if "geometry" not in cp:
        raise DatasetError("dataset lacks a [geometry] section")
    section = f"derivatives.{phase}"
    if section not in cp:
        raise DatasetError(f"dataset lacks phase {phase!r} (section [{section}])")
    missing = [n for n in DERIVATIVE_NAMES if n not in cp[section]]
    if missing:
        raise DatasetError(f"phase {phase!r} is missing derivatives: {', '.join(missing)}")
    geo = cp["geometry"]
    try:
        derivs = DerivativeSet(phase, *(cp[section].getfloat(n) for n in DERIVATIVE_NAMES))
        return AircraftModel(
            S=geo.getfloat("S"),
            cbar=geo.getfloat("cbar"),
            b=geo.getfloat("b"),
            mass=geo.getfloat("mass"),
            Ixx=geo.getfloat("Ixx"),
            Iyy=geo.getfloat("Iyy"),
            Izz=geo.getfloat("Izz"),
            Ixz=geo.getfloat("Ixz", 0.0),
            derivs=derivs,
            rho=rho,
            V_ref=V_ref,
            abs_drag=abs_drag,
        )
    except (KeyError, ValueError) as exc:
        raise DatasetError(str(exc)) from exc


def load_reference(path=None) -> dict:
    """Published trim and modal values stored alongside the dataset."""
    cp = _read_dataset(path)
    out = {}
    if "trim_reference" in cp:
        t = cp["trim_reference"]
        out["trim"] = {
            "thrust_N": t.getfloat("thrust_lbf") * LBF_TO_N,
            "thrust_lbf": t.getfloat("thrust_lbf"),
            "alpha_deg": t.getfloat("alpha_deg"),
            "deltaE_deg": t.getfloat("deltaE_deg"),
        }
    if "modes_reference" in cp:
        m = cp["modes_reference"]
        for key in ("short_period", "phugoid"):
            re_, im_ = (float(s) for s in m[key].split(","))
            out[key] = complex(re_, im_)
    return out


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _coefficients(alpha, V, u, q, de, p):
    uh = (u - p[P_VREF]) / p[P_VREF]
    qh = q * p[P_CBAR] / (2.0 * V) if V > 0.0 else 0.0
    cL = p[P_CL] + p[P_CL + 1] * alpha + p[P_CL + 2] * uh + p[P_CL + 3] * qh + p[P_CL + 4] * de
    a_d = alpha
    de_d = de
    if p[P_ABSDRAG] != 0.0:
        a_d = abs(alpha)
        de_d = abs(de)
    cD = p[P_CD] + p[P_CD + 1] * a_d + p[P_CD + 2] * uh + p[P_CD + 3] * qh + p[P_CD + 4] * de_d
    cm = p[P_CM] + p[P_CM + 1] * alpha + p[P_CM + 2] * uh + p[P_CM + 3] * qh + p[P_CM + 4] * de
    return cL, cD, cm


@njit(cache=True)
def _wind_to_body(lift, drag, alpha):
    ca = math.cos(alpha)
    sa = math.sin(alpha)
    return -drag * ca + lift * sa, -lift * ca - drag * sa


@njit(cache=True)
def _aero(x, de, gw, p):
    wa = x[2] + gw
    V = math.sqrt(x[0] * x[0] + x[1] * x[1] + wa * wa)
    alpha = math.atan2(wa, x[0])
    cL, cD, cm = _coefficients(alpha, V, x[0], x[4], de, p)
    qS = 0.5 * p[P_RHO] * V * V * p[P_S]
    fx, fz = _wind_to_body(qS * cL, qS * cD, alpha)
    return fx, fz, qS * p[P_CBAR] * cm


@njit(cache=True)
def _derivative(x, de, gw, p):
    u, v, w = x[0], x[1], x[2]
    pr, q, r = x[3], x[4], x[5]
    sphi, cphi = math.sin(x[6]), math.cos(x[6])
    sth, cth = math.sin(x[7]), math.cos(x[7])
    sps, cps = math.sin(x[8]), math.cos(x[8])
    fx, fz, my = _aero(x, de, gw, p)
    m = p[P_MASS]
    ixx, iyy, izz = p[P_IXX], p[P_IYY], p[P_IZZ]
    d = np.empty(12)
    d[0] = (fx + p[P_THRUST]) / m + r * v - q * w - G * sth
    d[1] = pr * w - r * u + G * cth * sphi
    d[2] = fz / m + q * u - pr * v + G * cth * cphi
    d[3] = -(izz - iyy) * q * r / ixx
    d[4] = (my - (ixx - izz) * r * pr) / iyy
    d[5] = -(iyy - ixx) * pr * q / izz
    tth = sth / cth
    d[6] = pr + sphi * tth * q + cphi * tth * r
    d[7] = cphi * q - sphi * r
    d[8] = (sphi * q + cphi * r) / cth
    d[9] = cps * cth * u + (cps * sth * sphi - sps * cphi) * v + (cps * sth * cphi + sps * sphi) * w
    d[10] = sps * cth * u + (sps * sth * sphi + cps * cphi) * v + (sps * sth * cphi - cps * sphi) * w
    d[11] = -sth * u + cth * sphi * v + cth * cphi * w
    return d


@njit(cache=True)
def _has_aero(p):
    for k in range(P_CL, N_PARAMS):
        if p[k] != 0.0:
            return True
    return False


@njit(cache=True)
def _check(x, gw, p):
    for k in range(12):
        if not math.isfinite(x[k]):
            return FAULT_NONFINITE, x[7]
    if abs(x[7]) >= THETA_GUARD:
        return FAULT_THETA, x[7]
    # the airspeed floor only matters when there is an aerodynamic model to invalidate
    if not _has_aero(p):
        return OK, x[7]
    wa = x[2] + gw
    if math.sqrt(x[0] * x[0] + x[1] * x[1] + wa * wa) <= MIN_AIRSPEED:
        return FAULT_AIRSPEED, x[7]
    return OK, x[7]


@njit(cache=True)
def _rk4(x, de, gw, p, dt):
    """One classical RK4 step with elevator, thrust and gust held constant."""
    code, val = _check(x, gw, p)
    if code != OK:
        return x.copy(), code, val
    k1 = _derivative(x, de, gw, p)
    x2 = x + 0.5 * dt * k1
    code, val = _check(x2, gw, p)
    if code != OK:
        return x2, code, val
    k2 = _derivative(x2, de, gw, p)
    x3 = x + 0.5 * dt * k2
    code, val = _check(x3, gw, p)
    if code != OK:
        return x3, code, val
    k3 = _derivative(x3, de, gw, p)
    x4 = x + dt * k3
    code, val = _check(x4, gw, p)
    if code != OK:
        return x4, code, val
    k4 = _derivative(x4, de, gw, p)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    code, val = _check(xn, gw, p)
    return xn, code, val


@njit(cache=True)
def _simulate(x0, de, p, dt, n):
    traj = np.empty((n + 1, 12))
    traj[0] = x0
    x = x0.copy()
    for k in range(n):
        x, code, val = _rk4(x, de, 0.0, p, dt)
        if code != OK:
            return traj[: k + 1], code, val
        traj[k + 1] = x
    return traj, OK, x[7]


def raise_fault(code: int, theta: float):
    raise SimulationFault(f"{_FAULT_TEXT.get(code, 'fault')} (theta={theta!r} rad)", theta=theta, code=code)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def aero_coefficients(state: FlightState, deltaE: float, model: AircraftModel, alpha: float, V: float):
    """Return ``(cL, cD, cm)`` for the given aerodynamic angle and airspeed."""
    vals = (deltaE, alpha, V, state.u, state.q)
    if not all(math.isfinite(v) for v in vals):
        raise SimulationFault("non-finite input to aerodynamic model", theta=state.theta)
    if V <= MIN_AIRSPEED:
        raise SimulationFault(f"airspeed {V} m/s below aerodynamic model limit", theta=state.theta)
    return _coefficients(alpha, V, state.u, state.q, deltaE, model.params())


def lift_drag_to_body(cL: float, cD: float, alpha: float, qbar_S: float = 1.0):
    """Rotate lift/drag (stability axes) into body-axis ``(Fx, Fz)``."""
    return _wind_to_body(qbar_S * cL, qbar_S * cD, alpha)


def aero_forces_moments_body(state: FlightState, deltaE: float, model: AircraftModel, gust_w: float = 0.0):
    """Aerodynamic body-axis force components and pitching moment ``(Fx, Fz, M)``.

    Thrust is not included.  ``gust_w`` only enters the angle of attack and airspeed.
    """
    x = state.as_array()
    if not (np.all(np.isfinite(x)) and math.isfinite(deltaE) and math.isfinite(gust_w)):
        raise SimulationFault("non-finite input to aerodynamic model", theta=state.theta)
    wa = state.w + gust_w
    if math.sqrt(state.u**2 + state.v**2 + wa**2) <= MIN_AIRSPEED:
        raise SimulationFault("airspeed below aerodynamic model limit", theta=state.theta)
    return _aero(x, float(deltaE), float(gust_w), model.params())


def gravity_body(phi: float, theta: float):
    return (-G * math.sin(theta), G * math.cos(theta) * math.sin(phi), G * math.cos(theta) * math.cos(phi))


def dcm_body_to_inertial(phi: float, theta: float, psi: float) -> np.ndarray:
    """Direction-cosine matrix mapping body-axis vectors to the inertial frame."""
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    ss, cs = math.sin(psi), math.cos(psi)
    return np.array(
        [
            [cs * ct, cs * st * sf - ss * cf, cs * st * cf + ss * sf],
            [ss * ct, ss * st * sf + cs * cf, ss * st * cf - cs * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def state_derivative(state: FlightState, deltaE: float, model: AircraftModel, gust_w: float = 0.0) -> FlightState:
    """Time derivative of every state, returned in a :class:`FlightState` container."""
    x = state.as_array()
    code, theta = _check(x, float(gust_w), model.params())
    if code == OK and not (math.isfinite(deltaE) and math.isfinite(gust_w)):
        code = FAULT_NONFINITE
    if code != OK:
        raise_fault(code, theta)
    return FlightState.from_array(_derivative(x, float(deltaE), float(gust_w), model.params()))


def integrate_step(
    state: FlightState, deltaE: float, model: AircraftModel, gust_w: float = 0.0, dt: float = 0.01
) -> FlightState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    xn, code, theta = _rk4(state.as_array(), float(deltaE), float(gust_w), model.params(), float(dt))
    if code != OK:
        raise_fault(code, theta)
    return FlightState.from_array(xn)


def simulate(state: FlightState, deltaE: float, model: AircraftModel, duration: float, dt: float = 0.01) -> np.ndarray:
    """Integrate with constant elevator and no gust; returns an ``(n+1, 12)`` trajectory."""
    n = int(round(duration / dt))
    traj, code, theta = _simulate(state.as_array(), float(deltaE), model.params(), float(dt), n)
    if code != OK:
        raise_fault(code, theta)
    return traj


# ---------------------------------------------------------------------------
# trim
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrimSolution:
    alpha: float
    deltaE: float
    thrust: float
    residual_norm: float
    V: float
    gamma: float = 0.0
    iterations: int = 0

    @property
    def theta(self) -> float:
        return self.alpha + self.gamma

    def state(self) -> FlightState:
        return FlightState(
            u=self.V * math.cos(self.alpha), w=self.V * math.sin(self.alpha), theta=self.theta
        )


def _trim_residual(z, model_params, V, gamma):
    alpha, de, thrust = z
    p = model_params.copy()
    p[P_THRUST] = thrust
    x = np.zeros(12)
    x[0] = V * math.cos(alpha)
    x[2] = V * math.sin(alpha)
    x[7] = alpha + gamma
    d = _derivative(x, de, 0.0, p)
    return np.array([d[0], d[2], d[4]])


def trim_solve(
    model: AircraftModel, V: float, gamma: float = 0.0, tol: float = 1e-8, max_iter: int = 100
) -> TrimSolution:
    """Wings-level trim by Newton iteration on ``(alpha, deltaE, thrust)``.

    Drives ``(du/dt, dw/dt, dq/dt)`` to zero with ``theta = alpha + gamma`` and ``q = 0``.
    """
    if not V > 0:
        raise ValueError("trim airspeed must be positive")
    p = model.params()
    qS = 0.5 * model.rho * V * V * model.S
    z = np.array([0.0, 0.0, qS * model.derivs.cD0 + model.weight * math.sin(gamma)])
    steps = np.array([1e-7, 1e-7, max(1e-3 * abs(z[2]), 1e-3)])
    r = _trim_residual(z, p, V, gamma)
    norm = float(np.linalg.norm(r))
    it = 0
    for it in range(1, max_iter + 1):
        J = np.empty((3, 3))
        for k in range(3):
            dz = np.zeros(3)
            dz[k] = steps[k]
            J[:, k] = (_trim_residual(z + dz, p, V, gamma) - _trim_residual(z - dz, p, V, gamma)) / (2 * steps[k])
        try:
            z_new = z - np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise TrimError(f"singular trim Jacobian: {exc}", norm) from exc
        r_new = _trim_residual(z_new, p, V, gamma)
        norm_new = float(np.linalg.norm(r_new))
        if not math.isfinite(norm_new):
            raise TrimError("trim iteration diverged", norm)
        improved = norm_new < norm
        z, r, norm = z_new, r_new, norm_new
        # keep polishing until roundoff stops helping
        if norm < tol and (not improved or norm < 1e-13):
            break
    if not norm < tol:
        raise TrimError(f"trim did not converge in {max_iter} iterations (residual {norm:.3e})", norm)
    return TrimSolution(float(z[0]), float(z[1]), float(z[2]), norm, float(V), float(gamma), it)


# ---------------------------------------------------------------------------
# linearization and modes
# ---------------------------------------------------------------------------

_LONG_IDX = (0, 2, 4, 7)  # u, w, q, theta
_LONG_STEPS = (1e-6, 1e-6, 1e-6, 1e-6)


def _long_rates(xl, de, p, base):
    x = base.copy()
    for k, idx in enumerate(_LONG_IDX):
        x[idx] = xl[k]
    d = _derivative(x, de, 0.0, p)
    return np.array([d[idx] for idx in _LONG_IDX])


def _require_trim(trim: TrimSolution, tol: float):
    if not trim.residual_norm < tol:
        raise TrimError(f"trim residual {trim.residual_norm:.3e} above tolerance {tol:.1e}", trim.residual_norm)


def linearize_longitudinal(model: AircraftModel, trim: TrimSolution, tol: float = 1e-8) -> np.ndarray:
    """Central-difference Jacobian of ``(u, w, q, theta)`` dynamics at trim."""
    _require_trim(trim, tol)
    p = model.with_thrust(trim.thrust).params()
    base = trim.state().as_array()
    x0 = np.array([base[i] for i in _LONG_IDX])
    A = np.empty((4, 4))
    for k, h in enumerate(_LONG_STEPS):
        dx = np.zeros(4)
        dx[k] = h
        A[:, k] = (_long_rates(x0 + dx, trim.deltaE, p, base) - _long_rates(x0 - dx, trim.deltaE, p, base)) / (2 * h)
    return A


def longitudinal_input(model: AircraftModel, trim: TrimSolution, tol: float = 1e-8, h: float = 1e-6) -> np.ndarray:
    """Sensitivity of the ``(u, w, q, theta)`` rates to elevator at trim."""
    _require_trim(trim, tol)
    p = model.with_thrust(trim.thrust).params()
    base = trim.state().as_array()
    x0 = np.array([base[i] for i in _LONG_IDX])
    return (_long_rates(x0, trim.deltaE + h, p, base) - _long_rates(x0, trim.deltaE - h, p, base)) / (2 * h)


def eig4(A) -> np.ndarray:
    """Eigenvalues of a real 4x4 matrix sorted by descending ``|Re|``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {A.shape}")
    lam = np.linalg.eigvals(A).astype(complex)
    order = sorted(range(4), key=lambda k: (-abs(lam[k].real), lam[k].imag))
    return lam[order]


@dataclass(frozen=True)
class ModePair:
    roots: tuple

    @property
    def oscillatory(self) -> bool:
        return abs(self.roots[0].imag) > 0.0

    @property
    def natural_frequency(self) -> float:
        return math.sqrt(abs((self.roots[0] * self.roots[1]).real))

    @property
    def damping_ratio(self) -> float:
        wn = self.natural_frequency
        return -(self.roots[0] + self.roots[1]).real / (2 * wn) if wn > 0 else float("nan")

    @property
    def period(self) -> float:
        im = abs(self.roots[0].imag)
        return 2 * math.pi / im if im > 0 else float("inf")


@dataclass(frozen=True)
class LongitudinalModes:
    eigenvalues: np.ndarray
    short_period: ModePair
    phugoid: ModePair

    @property
    def stable(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))


def longitudinal_modes(A) -> LongitudinalModes:
    """Split the four longitudinal roots into the fast (short period) and slow (phugoid) pairs."""
    lam = eig4(A)
    by_mag = sorted(lam, key=lambda z: (-abs(z), z.imag))
    return LongitudinalModes(lam, ModePair(tuple(by_mag[:2])), ModePair(tuple(by_mag[2:])))
