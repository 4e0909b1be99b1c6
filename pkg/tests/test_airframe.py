import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpitch.airframe import (
    G,
    AircraftModel,
    DatasetError,
    DerivativeSet,
    FlightState,
    SimulationFault,
    TrimError,
    TrimSolution,
    aero_coefficients,
    aero_forces_moments_body,
    dcm_body_to_inertial,
    eig4,
    gravity_body,
    integrate_step,
    linearize_longitudinal,
    load_aircraft,
    load_reference,
    longitudinal_input,
    longitudinal_modes,
    lift_drag_to_body,
    simulate,
    state_derivative,
    trim_solve,
)


@pytest.fixture(scope="module")
def cruise():
    return load_aircraft()


@pytest.fixture(scope="module")
def trim(cruise):
    return trim_solve(cruise, 160.0)


def zero_model(**kw):
    return AircraftModel(S=43.42, cbar=1.216, b=28.0, mass=18418.27, Ixx=3.8e5, Iyy=4.9e6, Izz=5.7e6,
                         derivs=DerivativeSet.zeros(), **kw)


# ---------------------------------------------------------------- dataset


def test_dataset_loads_both_phases():
    for phase in ("cruise", "takeoff"):
        m = load_aircraft(phase=phase)
        assert m.derivs.phase == phase
        assert m.derivs.cma < 0 and m.derivs.cmq < 0
        assert m.Ixz == 0.0


def test_dataset_missing_derivative(tmp_path):
    from qpitch.airframe import builtin_dataset

    text = builtin_dataset().read_text().replace("cmde = -5.98\n", "")
    bad = tmp_path / "bad.ini"
    bad.write_text(text)
    with pytest.raises(DatasetError, match="cmde"):
        load_aircraft(bad)
    with pytest.raises(DatasetError):
        load_aircraft(tmp_path / "absent.ini")
    with pytest.raises(DatasetError):
        load_aircraft(phase="landing")


def test_model_validation():
    with pytest.raises(ValueError):
        zero_model(rho=0.0)
    with pytest.raises(ValueError):
        zero_model(Ixz=10.0)


def test_reference_values():
    ref = load_reference()
    assert ref["trim"]["thrust_lbf"] == pytest.approx(21433.02)
    assert ref["trim"]["thrust_N"] == pytest.approx(21433.02 * 4.4482216152605)
    assert ref["short_period"] == complex(-0.8, 0.61)
    assert ref["phugoid"] == complex(-0.0064, 0.05)


# ---------------------------------------------------------------- aero


def test_coefficients_zero_increment(cruise):
    s = FlightState(u=160.0)
    cL, cD, cm = aero_coefficients(s, 0.0, cruise, 0.0, 160.0)
    assert (cL, cD, cm) == pytest.approx((0.3180, 0.0338, -0.06), abs=1e-12)


def test_coefficients_published_trim_point(cruise):
    a, de = 0.006807, -0.0398
    cL, _, cm = aero_coefficients(FlightState(u=160.0), de, cruise, a, 160.0)
    # hand arithmetic on the tabulated derivatives
    assert cL == pytest.approx(0.3180 + 14.88 * a + 0.78 * de, abs=1e-12)
    assert cL == pytest.approx(0.38824, abs=1e-5)
    assert cm == pytest.approx(-0.06 - 11.84 * a - 5.98 * de, abs=1e-12)
    assert cm == pytest.approx(0.09740, abs=1e-5)


def test_coefficients_zero_set():
    m = zero_model()
    s = FlightState(u=123.0, w=4.0, q=0.3)
    assert aero_coefficients(s, 0.2, m, 0.1, 130.0) == (0.0, 0.0, 0.0)


def test_coefficients_faults(cruise):
    with pytest.raises(SimulationFault):
        aero_coefficients(FlightState(u=1.0), 0.0, cruise, 0.0, 1.0)
    with pytest.raises(SimulationFault):
        aero_coefficients(FlightState(u=160.0), float("nan"), cruise, 0.0, 160.0)


def test_lift_drag_rotation():
    assert lift_drag_to_body(1.0, 0.0, 0.0) == pytest.approx((0.0, -1.0))
    assert lift_drag_to_body(0.0, 1.0, 0.0) == pytest.approx((-1.0, 0.0))
    a = 0.3
    fx, fz = lift_drag_to_body(2.0, 0.5, a)
    assert fx == pytest.approx(-0.5 * math.cos(a) + 2.0 * math.sin(a))
    assert fz == pytest.approx(-2.0 * math.cos(a) - 0.5 * math.sin(a))


def test_moment_uses_chord(cruise):
    a, de = 0.006807, -0.0398
    V = 160.0
    s = FlightState(u=V * math.cos(a), w=V * math.sin(a))
    qS = 0.5 * 1.225 * V * V * 43.42
    # the quoted 680 795 N is a rounded hand value (exact product 680 825.6 N)
    assert qS == pytest.approx(680_795, rel=1e-4)
    _, _, M = aero_forces_moments_body(s, de, cruise)
    # u differs from V_ref by cos(alpha); include the tiny cmu increment in the oracle
    cm = -0.06 - 11.84 * a - 0.039 * (s.u - V) / V - 5.98 * de
    assert M == pytest.approx(qS * 1.216 * cm, rel=1e-12)
    assert M == pytest.approx(8.063e4, rel=1e-3)


def test_gust_only_changes_aero_angles(cruise):
    s = FlightState(u=160.0, w=0.0)
    fx, fz, M = aero_forces_moments_body(s, 0.0, cruise, gust_w=5.0)
    s2 = FlightState(u=160.0, w=5.0)
    assert (fx, fz, M) == pytest.approx(aero_forces_moments_body(s2, 0.0, cruise))
    d1 = state_derivative(s, 0.0, cruise, 5.0)
    # kinematics still use the unperturbed body velocity
    assert d1.z == pytest.approx(0.0)


def test_forces_fault_at_rest(cruise):
    with pytest.raises(SimulationFault):
        aero_forces_moments_body(FlightState(u=0.5), 0.0, cruise)


# ---------------------------------------------------------------- gravity, DCM


def test_gravity_examples():
    assert gravity_body(0, 0) == pytest.approx((0.0, 0.0, 9.80665))
    assert gravity_body(0, math.pi / 2) == pytest.approx((-9.80665, 0.0, 0.0), abs=1e-12)
    assert gravity_body(0, math.pi / 6) == pytest.approx((-4.9033, 0.0, 8.4928), abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-math.pi, math.pi), st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi),
)
def test_dcm_orthonormal(phi, theta, psi):
    C = dcm_body_to_inertial(phi, theta, psi)
    assert np.max(np.abs(C @ C.T - np.eye(3))) <= 1e-12
    assert np.linalg.det(C) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1, 1), st.floats(-3, 3))
def test_gravity_is_dcm_row(theta, phi, psi):
    C = dcm_body_to_inertial(phi, theta, psi)
    assert np.allclose(np.array(gravity_body(phi, theta)), G * C[2], atol=1e-12)


# ---------------------------------------------------------------- state derivative


def test_ballistic_case():
    m = zero_model()
    d = state_derivative(FlightState(u=1.0), 0.0, m)
    assert d.u == pytest.approx(0.0, abs=1e-15)
    assert d.w == pytest.approx(G)
    assert d.x == pytest.approx(1.0)


def test_symmetric_flight_has_no_lateral_rates(cruise):
    s = FlightState(u=150.0, w=3.0, q=0.05, theta=0.1)
    d = state_derivative(s, -0.05, cruise.with_thrust(3e4))
    assert (d.v, d.p, d.r, d.phi, d.psi, d.y) == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_trim_is_equilibrium(cruise, trim):
    d = state_derivative(trim.state(), trim.deltaE, cruise.with_thrust(trim.thrust))
    assert max(abs(d.u), abs(d.w), abs(d.q)) < 1e-8


def test_theta_guard(cruise):
    with pytest.raises(SimulationFault) as exc:
        state_derivative(FlightState(u=160.0, theta=math.pi / 2), 0.0, cruise)
    assert exc.value.theta == pytest.approx(math.pi / 2)


# ---------------------------------------------------------------- integration


def test_rk4_fixed_point_at_trim(cruise, trim):
    # at trim the derivative vanishes (apart from forward motion), so RK4 leaves the attitude alone
    s = trim.state()
    s1 = integrate_step(s, trim.deltaE, cruise.with_thrust(trim.thrust))
    assert abs(s1.theta - s.theta) < 1e-14
    assert abs(s1.u - s.u) < 1e-10 and abs(s1.w - s.w) < 1e-10


def test_pure_rotation_exact():
    m = zero_model()
    s = FlightState(u=0.0, q=0.2, theta=0.1)
    s1 = integrate_step(s, 0.0, m, dt=0.01)
    assert s1.theta == pytest.approx(0.1 + 0.2 * 0.01, abs=1e-15)


def test_step_halving(cruise, trim):
    s = FlightState.from_array(trim.state().as_array() + np.r_[0, 0, 0, 0, 0, 0, 0, math.radians(1), 0, 0, 0, 0])
    m = cruise.with_thrust(trim.thrust)
    a = simulate(s, trim.deltaE, m, 5.0, 0.01)[-1, 7]
    b = simulate(s, trim.deltaE, m, 5.0, 0.005)[-1, 7]
    assert abs(a - b) < 1e-8


def _order_ratio(model, trim, dq):
    s = FlightState.from_array(trim.state().as_array() + np.r_[0, 0, 0, 0, dq, 0, 0, math.radians(-1), 0, 0, 0, 0])
    m = model.with_thrust(trim.thrust)
    ref = simulate(s, trim.deltaE, m, 5.0, 0.0015625)[-1, 7]
    e1 = abs(simulate(s, trim.deltaE, m, 5.0, 0.05)[-1, 7] - ref)
    e2 = abs(simulate(s, trim.deltaE, m, 5.0, 0.025)[-1, 7] - ref)
    return e1 / e2


def test_rk4_order_ratio(cruise, trim):
    # nose-down disturbance keeps alpha negative, away from the |alpha| kink in the drag law
    assert 12.0 <= _order_ratio(cruise, trim, -0.01) <= 20.0


def test_rk4_order_ratio_smooth_drag():
    m = load_aircraft(abs_drag=False)
    assert 12.0 <= _order_ratio(m, trim_solve(m, 160.0), 0.02) <= 20.0


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-0.25, 0.25), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-10, 10),
)
def test_longitudinal_closure(de, dtheta, q0, dw):
    m = load_aircraft().with_thrust(25414.0)
    s = FlightState(u=160.0, w=-0.54 + dw, q=q0, theta=-0.0034 + dtheta)
    traj = simulate(s, de, m, 5.0)
    for k in (1, 3, 5, 6, 8, 10):  # v, p, r, phi, psi, y
        assert np.all(traj[:, k] == 0.0)


def test_simulate_raises_on_divergence():
    m = zero_model()
    with pytest.raises(SimulationFault):
        simulate(FlightState(u=0.0, q=1.0, theta=1.5), 0.0, m, 1.0)


# ---------------------------------------------------------------- trim


def test_trim_converges(trim):
    assert trim.residual_norm < 1e-8
    assert math.degrees(trim.alpha) == pytest.approx(-0.192, abs=0.02)
    assert math.degrees(trim.deltaE) == pytest.approx(-0.194, abs=0.02)


def test_trim_matches_two_equation_oracle(cruise, trim):
    # lift = weight and pitching moment = 0, linear in (alpha, deltaE) at u = V_ref
    qS = 0.5 * cruise.rho * 160.0**2 * cruise.S
    d = cruise.derivs
    M = np.array([[d.cLa, d.cLde], [d.cma, d.cmde]])
    rhs = np.array([cruise.weight / qS - d.cL0, -d.cm0])
    a, de = np.linalg.solve(M, rhs)
    assert math.degrees(trim.alpha) == pytest.approx(math.degrees(a), abs=0.02)
    assert math.degrees(trim.deltaE) == pytest.approx(math.degrees(de), abs=0.02)


def test_trim_symmetric_model():
    # zero pitching-moment offset and lift offset balancing the weight exactly: alpha = deltaE = 0
    m0 = load_aircraft()
    qS = 0.5 * m0.rho * 160.0**2 * m0.S
    from dataclasses import replace

    derivs = replace(m0.derivs, cm0=0.0, cL0=m0.weight / qS)
    m = replace(m0, derivs=derivs)
    tr = trim_solve(m, 160.0)
    assert abs(tr.alpha) < 1e-10 and abs(tr.deltaE) < 1e-10
    assert tr.thrust == pytest.approx(qS * derivs.cD0, rel=1e-9)


def test_trim_failure_reports_residual(cruise):
    with pytest.raises(TrimError) as exc:
        trim_solve(cruise, 160.0, max_iter=1, tol=1e-30)
    assert exc.value.residual >= 0
    with pytest.raises(ValueError):
        trim_solve(cruise, -1.0)


def test_ten_second_hold(cruise, trim):
    traj = simulate(trim.state(), trim.deltaE, cruise.with_thrust(trim.thrust), 10.0)
    assert np.max(np.abs(traj[:, 7] - trim.theta)) < math.radians(0.05)


# ---------------------------------------------------------------- linearization, eigenvalues


def test_linearization_kinematic_row(cruise, trim):
    A = linearize_longitudinal(cruise, trim)
    assert A[3] == pytest.approx([0.0, 0.0, 1.0, 0.0], abs=1e-9)


def test_linearization_refuses_untrimmed(cruise, trim):
    from dataclasses import replace

    with pytest.raises(TrimError):
        linearize_longitudinal(cruise, replace(trim, residual_norm=1e-3))


def test_ballistic_jacobian():
    m = zero_model()
    V = 100.0
    point = TrimSolution(alpha=0.0, deltaE=0.0, thrust=0.0, residual_norm=0.0, V=V)
    A = linearize_longitudinal(m, point)
    expected = np.array([[0, 0, 0, -G], [0, 0, V, 0], [0, 0, 0, 0], [0, 0, 1, 0]], dtype=float)
    assert np.allclose(A, expected, atol=1e-6)


def test_input_vector_sign(cruise, trim):
    B = longitudinal_input(cruise, trim)
    assert B[2] < 0  # positive elevator pitches nose-down
    assert B[3] == 0.0


def test_eig4_examples():
    lam = eig4(np.diag([1.0, 2.0, 3.0, 4.0]))
    assert np.allclose(sorted(lam.real), [1, 2, 3, 4]) and np.allclose(lam.imag, 0)
    w1, w2 = 0.7, 2.5
    R = np.zeros((4, 4))
    R[:2, :2] = [[0, -w1], [w1, 0]]
    R[2:, 2:] = [[0, -w2], [w2, 0]]
    lam = eig4(R)
    assert np.allclose(sorted(lam.imag), [-w2, -w1, w1, w2])
    assert np.allclose(lam.real, 0, atol=1e-12)
    with pytest.raises(ValueError):
        eig4(np.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_eig4_vs_characteristic_polynomial(seed):
    A = np.random.default_rng(seed).normal(size=(4, 4))
    lam = eig4(A)
    # companion-matrix oracle built from the characteristic polynomial
    coeffs = np.poly(A)
    C = np.zeros((4, 4))
    C[0] = -coeffs[1:]
    C[1:, :3] = np.eye(3)
    oracle = np.linalg.eigvals(C)
    for z in lam:
        assert np.min(np.abs(oracle - z)) < 1e-6 * max(1.0, abs(z))
    # eigen-residual
    w, V = np.linalg.eig(A)
    assert np.max(np.linalg.norm(A @ V - V * w, axis=0)) < 1e-8
    assert list(np.abs(lam.real)) == sorted(np.abs(lam.real), reverse=True)


def test_cruise_modes(cruise, trim):
    modes = longitudinal_modes(linearize_longitudinal(cruise, trim))
    assert modes.stable
    assert modes.phugoid.oscillatory
    assert modes.phugoid.damping_ratio < 0.1
    assert abs(modes.short_period.roots[0].real) >= 10 * abs(modes.phugoid.roots[0].real)
