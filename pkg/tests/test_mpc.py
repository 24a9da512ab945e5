import numpy as np
import pytest

from epikeedmd.errors import DimensionMismatch, HorizonZero
from epikeedmd.keedmd import LiftedModel, discretize_zoh
from epikeedmd.mpc import LiftedMPC, MPCConfig, condense, diagnostics_csv, mpc_step
from epikeedmd.qp import solve_qp
from epikeedmd.sim import DroneParams, nominal_matrices


def scalar_model(dt=1.0):
    return LiftedModel(np.array([[1.0]]), np.array([[1.0]]), np.eye(1), np.zeros(0), dt=dt)


def double_integrator(dt=0.05):
    A, B = nominal_matrices(DroneParams())
    return discretize_zoh(LiftedModel(A, B, np.eye(2), np.zeros(0)), dt)


def test_one_step_deadbeat():
    cfg = MPCConfig(Q=[[1.0]], R=[[0.0]], N_p=1, dt=1.0)
    sol = solve_qp(condense(scalar_model(), cfg, [0.0], [[1.0]]))
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)


def test_unconstrained_matches_batch_least_squares():
    M = double_integrator()
    Np = 10
    Q, R = np.diag([10.0, 0.1]), np.eye(1)
    cfg = MPCConfig(Q=Q, R=R, N_p=Np, dt=M.dt)
    ctrl = LiftedMPC(M, cfg)
    z0 = np.array([1.0, -0.2])
    tau = np.zeros((2, Np))
    sol = solve_qp(ctrl.problem(z0, tau))
    Sq = np.kron(np.eye(Np), np.sqrt(Q))
    lhs = np.vstack([Sq @ ctrl.Su, np.kron(np.eye(Np), np.sqrt(R))])
    rhs = np.concatenate([-Sq @ (ctrl.Sx @ z0), np.zeros(Np)])
    ref = np.linalg.pinv(lhs) @ rhs
    assert np.max(np.abs(sol.x - ref)) <= 1e-6


def test_nested_bound_shift():
    cfg = MPCConfig(Q=[[1.0]], R=[[1.0]], N_p=3, dt=1.0, u_min=[-0.5], u_max=[0.8])
    prob = condense(scalar_model(), cfg, [0.0], np.zeros((1, 3)), u_prev_sum=np.full((1, 3), 0.2))
    assert np.allclose(prob.hi[:3], 0.6) and np.allclose(prob.lo[:3], -0.7)


def test_config_errors():
    with pytest.raises(HorizonZero):
        MPCConfig(Q=[[1.0]], R=[[1.0]], N_p=0)
    cfg = MPCConfig(Q=[[1.0]], R=[[1.0]], N_p=2, dt=1.0)
    with pytest.raises(DimensionMismatch):
        condense(scalar_model(), cfg, [0.0], np.zeros((1, 3)))


def test_idle_on_reference_with_centered_model():
    M = double_integrator()
    M.centered = True
    cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=20, dt=M.dt, u_min=[-0.36], u_max=[0.14])
    u, _ = mpc_step(M, cfg, np.zeros(2), np.zeros((2, 20)))
    assert np.max(np.abs(u)) <= 1e-6


def test_hover_query_gives_hover_thrust():
    u_hover = 0.66
    M = double_integrator()
    cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=20, dt=M.dt,
                    u_min=[0.3 - u_hover], u_max=[0.8 - u_hover], x_min=[0.0, -np.inf])
    u, _ = mpc_step(M, cfg, np.zeros(2), np.zeros((2, 20)))
    assert u[0] + u_hover == pytest.approx(u_hover, abs=1e-6)


def test_saturating_descent_hits_corrected_bound():
    M = double_integrator()
    cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=20, dt=M.dt, u_min=[-0.36], u_max=[0.14])
    prev = np.full((1, 20), 0.05)
    u, dg = mpc_step(M, cfg, np.array([0.3, -3.0]), np.zeros((2, 20)), prev)
    assert u[0] == pytest.approx(0.14 - 0.05, abs=1e-9)
    assert dg["at_upper"][0]


def test_hard_bounds_hold_across_states():
    M = double_integrator()
    cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=20, dt=M.dt,
                    u_min=[-0.36], u_max=[0.14], x_min=[0.0, -np.inf])
    ctrl = LiftedMPC(M, cfg)
    rng = np.random.default_rng(0)
    for _ in range(50):
        prev = rng.uniform(-0.1, 0.1, (1, 20))
        u, _ = ctrl.step(rng.uniform([-0.1, -3.0], [2.5, 3.0]), np.zeros((2, 20)), prev)
        total = u + prev[:, 0]
        assert -0.36 - 1e-9 <= total[0] <= 0.14 + 1e-9


def test_smoothing_never_increases_plan_roughness():
    M = double_integrator()
    x0 = np.array([1.0, 0.5])

    def roughness(alpha):
        cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=20, dt=M.dt, alpha_R=alpha,
                        u_min=[-0.36], u_max=[0.14])
        _, dg = LiftedMPC(M, cfg).step(x0, np.zeros((2, 20)), u_last=np.zeros(1))
        u = np.concatenate([[0.0], dg["u_plan"][:, 0]])
        return float(np.sum(np.diff(u) ** 2))

    r = [roughness(a) for a in (0.0, 0.1, 1.0, 10.0)]
    assert all(b <= a + 1e-9 for a, b in zip(r, r[1:]))


def test_warm_and_cold_agree():
    M = double_integrator()
    cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=20, dt=M.dt, u_min=[-0.36], u_max=[0.14])
    ctrl = LiftedMPC(M, cfg)
    ctrl.step(np.array([1.0, -0.5]), np.zeros((2, 20)))
    warm, _ = ctrl.step(np.array([0.98, -0.52]), np.zeros((2, 20)), warm=True)
    cold, _ = LiftedMPC(M, cfg).step(np.array([0.98, -0.52]), np.zeros((2, 20)))
    assert np.max(np.abs(warm - cold)) <= 1e-6


def test_diagnostics_csv():
    assert diagnostics_csv([]).count("\n") == 1
    M = double_integrator()
    cfg = MPCConfig(Q=np.diag([10.0, 0.1]), R=np.eye(1), N_p=5, dt=M.dt, u_min=[-0.36], u_max=[0.14])
    x = np.array([0.5, 0.0])
    u, dg = mpc_step(M, cfg, x, np.zeros((2, 5)))
    text = diagnostics_csv([(0.0, x, u, dg)])
    assert text.splitlines()[0].startswith("t,x_0,x_1,u_0,iterations")
    assert len(text.splitlines()) == 2
