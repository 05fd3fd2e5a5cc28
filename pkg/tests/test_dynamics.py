import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from descentdiff.dynamics import (
    DragParams,
    ProblemSpec,
    deriv_6dof,
    discretize,
    euler_zyx_to_quat,
    jacobians_6dof,
    propagate,
    quat_normalize,
    quat_to_dcm,
    rollout_drag_pd,
)


def make_spec(**kwargs):
    return ProblemSpec(**kwargs)


def random_state(rng, tilt=0.3):
    q = quat_normalize(np.array([1.0, *(tilt * rng.standard_normal(3))]))
    return np.concatenate(
        [
            [1.5 + rng.random()],
            rng.standard_normal(3),
            rng.standard_normal(3),
            q,
            0.3 * rng.standard_normal(3),
        ]
    )


# ---------------------------------------------------------------------------
# deriv_6dof
# ---------------------------------------------------------------------------


def test_zero_thrust_derivative():
    spec = make_spec()
    rng = np.random.default_rng(0)
    x = random_state(rng)
    dx = deriv_6dof(x, np.zeros(3), spec)
    assert dx[0] == 0.0
    np.testing.assert_allclose(dx[4:7], spec.g_I, atol=1e-14)
    w = x[11:14]
    expected_wdot = spec.J_inv @ (-np.cross(w, spec.J_B @ w))
    np.testing.assert_allclose(dx[11:14], expected_wdot, atol=1e-14)


def test_mass_rate_hand_value():
    # alpha = 0.01 and ||T|| = 5 gives mdot = -0.05
    spec = make_spec(alpha_mdot=0.01)
    x = random_state(np.random.default_rng(1))
    u = np.array([3.0, 0.0, 4.0])  # norm 5
    dx = deriv_6dof(x, u, spec)
    assert dx[0] == pytest.approx(-0.05, rel=1e-12)


def test_zero_rate_quaternion_derivative():
    spec = make_spec()
    x = random_state(np.random.default_rng(2))
    x[11:14] = 0.0
    dx = deriv_6dof(x, np.array([1.0, 0.0, 0.0]), spec)
    np.testing.assert_allclose(dx[7:11], 0.0, atol=1e-15)


def test_nonfinite_input_rejected():
    spec = make_spec()
    x = random_state(np.random.default_rng(3))
    x[2] = np.nan
    with pytest.raises(ValueError):
        deriv_6dof(x, np.zeros(3), spec)


def test_jacobians_match_finite_differences():
    spec = make_spec()
    rng = np.random.default_rng(4)
    x = random_state(rng)
    u = np.array([2.0, 0.3, -0.2])
    fx, fu = jacobians_6dof(x, u, spec)
    eps = 1e-6
    for j in range(14):
        dxp = x.copy()
        dxm = x.copy()
        dxp[j] += eps
        dxm[j] -= eps
        col = (deriv_6dof(dxp, u, spec) - deriv_6dof(dxm, u, spec)) / (2 * eps)
        np.testing.assert_allclose(fx[:, j], col, atol=1e-6)
    for j in range(3):
        dup = u.copy()
        dum = u.copy()
        dup[j] += eps
        dum[j] -= eps
        col = (deriv_6dof(x, dup, spec) - deriv_6dof(x, dum, spec)) / (2 * eps)
        np.testing.assert_allclose(fu[:, j], col, atol=1e-6)


# ---------------------------------------------------------------------------
# propagate
# ---------------------------------------------------------------------------


def test_ballistic_closed_form():
    spec = make_spec()
    x0 = np.zeros(14)
    x0[0] = 2.0
    x0[7] = 1.0
    x1 = propagate(x0, np.zeros(3), np.zeros(3), 1.0, spec)
    # v gains g*t, r gains g*t^2/2 with g = -e1
    np.testing.assert_allclose(x1[4:7], spec.g_I, atol=1e-12)
    np.testing.assert_allclose(x1[1:4], 0.5 * spec.g_I, atol=1e-12)
    assert x1[0] == pytest.approx(2.0)


def test_pure_spin_quaternion_exponential():
    # Zero torque configuration: no thrust, spin about body x. The quaternion
    # should follow the closed-form axis-angle solution q = (cos wt/2, sin wt/2, 0, 0).
    spec = make_spec()
    rate = 0.8
    x0 = np.zeros(14)
    x0[0] = 2.0
    x0[7] = 1.0
    x0[11] = rate
    dt = 1.3
    x1 = propagate(x0, np.zeros(3), np.zeros(3), dt, spec)
    half = rate * dt / 2.0
    expected = np.array([np.cos(half), np.sin(half), 0.0, 0.0])
    np.testing.assert_allclose(x1[7:11], expected, atol=1e-9)
    assert abs(np.linalg.norm(x1[7:11]) - 1.0) <= 1e-9


def test_rk4_order_richardson():
    # Halving the step size should reduce endpoint error by about 2^4.
    spec = make_spec()
    rng = np.random.default_rng(5)
    x0 = random_state(rng)
    u0 = np.array([2.0, 0.5, -0.3])
    u1 = np.array([1.5, -0.2, 0.4])
    dt = 1.0
    ref = propagate(x0, u0, u1, dt, spec, substeps=400)
    err_coarse = np.linalg.norm(propagate(x0, u0, u1, dt, spec, substeps=5) - ref)
    err_fine = np.linalg.norm(propagate(x0, u0, u1, dt, spec, substeps=10) - ref)
    ratio = err_coarse / err_fine
    assert 10.0 < ratio < 25.0


def test_mass_nonincreasing_and_quaternion_norm():
    spec = make_spec(m_wet=3.0, m_dry=0.5)
    rng = np.random.default_rng(6)
    x = random_state(rng)
    x[0] = 3.0
    for _ in range(20):
        u = np.array([2.0, 0.0, 0.0]) + 0.3 * rng.standard_normal(3)
        x_next = propagate(x, u, u, 0.1, spec)
        assert x_next[0] <= x[0]
        assert abs(np.linalg.norm(x_next[7:11]) - 1.0) <= 1e-9
        x = x_next


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    thrust=st.floats(0.0, 5.0),
    dt=st.floats(0.05, 0.5),
)
def test_propagate_invariants_property(seed, thrust, dt):
    spec = make_spec(m_wet=5.0, m_dry=0.1)
    rng = np.random.default_rng(seed)
    x = random_state(rng)
    x[0] = 4.0
    u = thrust * np.array([1.0, 0.1, -0.1]) / np.linalg.norm([1.0, 0.1, -0.1])
    x1 = propagate(x, u, u, dt, spec)
    assert abs(np.linalg.norm(x1[7:11]) - 1.0) <= 1e-9
    assert x1[0] <= x[0] + 1e-15


def test_omega_stays_zero_without_torque():
    # r_TB x T = 0 when thrust is along the body x axis and r_TB is too.
    spec = make_spec()
    x = np.zeros(14)
    x[0] = 2.0
    x[7] = 1.0
    u = np.array([2.5, 0.0, 0.0])
    x1 = propagate(x, u, u, 1.0, spec)
    np.testing.assert_allclose(x1[11:14], 0.0, atol=1e-13)


# ---------------------------------------------------------------------------
# discretize
# ---------------------------------------------------------------------------


def rk4_flow(x0, u0, u1, dt, spec, substeps=10):
    """Independent raw RK4 oracle (no quaternion renormalization)."""
    x = np.asarray(x0, dtype=float).copy()
    h = dt / substeps
    for i in range(substeps):
        t0 = i * h

        def u_of(t):
            lam = t / dt
            return (1 - lam) * u0 + lam * u1

        k1 = deriv_6dof(x, u_of(t0), spec)
        k2 = deriv_6dof(x + 0.5 * h * k1, u_of(t0 + 0.5 * h), spec)
        k3 = deriv_6dof(x + 0.5 * h * k2, u_of(t0 + 0.5 * h), spec)
        k4 = deriv_6dof(x + h * k3, u_of(t0 + h), spec)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def reference_rollout(spec, sigma, K=6):
    """Nonlinear rollout used as the linearization point in the tests."""
    rng = np.random.default_rng(7)
    x = np.zeros(14)
    x[0] = spec.m_wet
    x[1:4] = spec.r_I0
    x[4:7] = spec.v_I0
    x[7:11] = quat_normalize(np.array([1.0, 0.05, -0.03, 0.02]))
    x[11:14] = np.array([0.0, 0.05, -0.04])
    controls = 2.0 + 0.2 * rng.standard_normal((3, K))
    controls[0] += 1.0
    traj = np.zeros((14, K))
    traj[:, 0] = x
    dtau = 1.0 / (K - 1)
    for k in range(K - 1):
        traj[:, k + 1] = propagate(traj[:, k], controls[:, k], controls[:, k + 1], sigma * dtau, spec)
    return traj, controls


def test_defect_reproduces_flow():
    spec = make_spec(m_wet=3.0, m_dry=0.5)
    sigma = 2.0
    traj, controls = reference_rollout(spec, sigma)
    segments = discretize(traj, controls, sigma, spec)
    K = traj.shape[1]
    dtau = 1.0 / (K - 1)
    for k, seg in enumerate(segments):
        flow = rk4_flow(traj[:, k], controls[:, k], controls[:, k + 1], sigma * dtau, spec)
        pred = seg.A @ traj[:, k] + seg.B @ controls[:, k] + seg.C @ controls[:, k + 1] + seg.Sigma * sigma + seg.z
        assert np.max(np.abs(pred - flow)) <= 1e-8


def flow_endpoint(x, u0, u1, sigma, dtau, spec):
    return rk4_flow(x, u0, u1, sigma * dtau, spec)


def test_state_jacobian_matches_finite_difference():
    spec = make_spec(m_wet=3.0, m_dry=0.5)
    sigma = 2.0
    traj, controls = reference_rollout(spec, sigma)
    segments = discretize(traj, controls, sigma, spec)
    dtau = 1.0 / (traj.shape[1] - 1)
    k = 2
    seg = segments[k]
    delta = 1e-4
    for j in range(14):
        xp = traj[:, k].copy()
        xm = traj[:, k].copy()
        xp[j] += delta
        xm[j] -= delta
        col = (
            flow_endpoint(xp, controls[:, k], controls[:, k + 1], sigma, dtau, spec)
            - flow_endpoint(xm, controls[:, k], controls[:, k + 1], sigma, dtau, spec)
        ) / (2 * delta)
        denom = max(np.linalg.norm(seg.A[:, j]), 1e-3)
        assert np.linalg.norm(seg.A[:, j] - col) / denom < 1e-5


def test_sigma_sensitivity_matches_finite_difference():
    spec = make_spec(m_wet=3.0, m_dry=0.5)
    sigma = 2.0
    traj, controls = reference_rollout(spec, sigma)
    segments = discretize(traj, controls, sigma, spec)
    dtau = 1.0 / (traj.shape[1] - 1)
    k = 1
    delta = 1e-5
    up = flow_endpoint(traj[:, k], controls[:, k], controls[:, k + 1], sigma + delta, dtau, spec)
    dn = flow_endpoint(traj[:, k], controls[:, k], controls[:, k + 1], sigma - delta, dtau, spec)
    fd = (up - dn) / (2 * delta)
    assert np.linalg.norm(segments[k].Sigma - fd) / np.linalg.norm(fd) < 1e-5


def test_control_jacobians_match_finite_difference():
    spec = make_spec(m_wet=3.0, m_dry=0.5)
    sigma = 2.0
    traj, controls = reference_rollout(spec, sigma)
    segments = discretize(traj, controls, sigma, spec)
    dtau = 1.0 / (traj.shape[1] - 1)
    k = 3
    delta = 1e-4
    for mat, which in ((segments[k].B, "start"), (segments[k].C, "end")):
        for j in range(3):
            up, un = controls[:, k].copy(), controls[:, k].copy()
            vp, vn = controls[:, k + 1].copy(), controls[:, k + 1].copy()
            if which == "start":
                up[j] += delta
                un[j] -= delta
            else:
                vp[j] += delta
                vn[j] -= delta
            col = (
                flow_endpoint(traj[:, k], up, vp, sigma, dtau, spec)
                - flow_endpoint(traj[:, k], un, vn, sigma, dtau, spec)
            ) / (2 * delta)
            assert np.linalg.norm(mat[:, j] - col) / max(np.linalg.norm(col), 1e-3) < 1e-5


# ---------------------------------------------------------------------------
# drag rollout
# ---------------------------------------------------------------------------


def test_drag_rollout_zero_pd_error():
    params = DragParams(g_I=np.zeros(3), r_target=np.array([1.0, 2.0, 3.0]), v_target=np.zeros(3))
    traj = rollout_drag_pd(params, params.r_target, params.v_target, steps=10)
    np.testing.assert_allclose(traj[14:17], 0.0, atol=1e-14)
    for k in range(10):
        np.testing.assert_allclose(traj[0:3, k], params.r_target, atol=1e-12)
        np.testing.assert_allclose(traj[3:6, k], 0.0, atol=1e-12)


def test_drag_rollout_hand_value():
    # With g = 0, no PD gains and C_d = 0.1: ||v_1|| = 1 - 0.1 dt.
    params = DragParams(C_d=0.1, K_p=0.0, K_d=0.0, dt=0.25, g_I=np.zeros(3))
    traj = rollout_drag_pd(params, np.zeros(3), np.array([0.0, 0.0, -1.0]), steps=3)
    assert np.linalg.norm(traj[3:6, 1]) == pytest.approx(1.0 - 0.1 * 0.25, rel=1e-12)


def test_drag_rollout_ballistic_when_unforced():
    params = DragParams(C_d=0.0, K_p=0.0, K_d=0.0, dt=0.2)
    r0 = np.array([2.0, 0.0, 0.0])
    v0 = np.array([-0.5, 0.1, 0.0])
    traj = rollout_drag_pd(params, r0, v0, steps=5)
    r, v = r0.copy(), v0.copy()
    for k in range(1, 5):
        v = v + params.g_I * params.dt
        r = r + v * params.dt
        np.testing.assert_allclose(traj[3:6, k], v, atol=1e-14)
        np.testing.assert_allclose(traj[0:3, k], r, atol=1e-14)


def test_drag_rollout_matches_dragfree_with_same_thrust():
    # With C_d = 0 and the same thrust sequence the rollout is the plain
    # 3-DoF Euler integration.
    params = DragParams(C_d=0.0, dt=0.15)
    r0 = np.array([3.0, 1.0, -1.0])
    v0 = np.array([-0.8, -0.3, -0.3])
    traj = rollout_drag_pd(params, r0, v0, steps=8)
    r, v = r0.copy(), v0.copy()
    for k in range(8):
        thrust = params.K_p * (params.r_target - r) + params.K_d * (params.v_target - v)
        np.testing.assert_allclose(traj[14:17, k], thrust, atol=1e-13)
        v = v + (params.g_I + thrust) * params.dt
        r = r + v * params.dt
    np.testing.assert_allclose(traj[6, :], 1.0)
    np.testing.assert_allclose(traj[7:10, :], 0.0)
    np.testing.assert_allclose(traj[10:13, :], 0.0)


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------


def test_euler_to_quat_round_trip():
    q = euler_zyx_to_quat(0.0, np.deg2rad(20.0), np.deg2rad(-15.0))
    assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
    # Rebuild the DCM from the individual rotations (ZYX intrinsic).
    cy, sy = np.cos(np.deg2rad(-15.0)), np.sin(np.deg2rad(-15.0))
    cp, sp = np.cos(np.deg2rad(20.0)), np.sin(np.deg2rad(20.0))
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    R = Rz @ Ry
    np.testing.assert_allclose(quat_to_dcm(q).T, R, atol=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(T_min=2.0, T_max=1.0)
    with pytest.raises(ValueError):
        ProblemSpec(m_wet=1.0, m_dry=2.0)
    with pytest.raises(ValueError):
        ProblemSpec(K=1)
