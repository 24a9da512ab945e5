"""1-D multirotor altitude simulator with a synthetic ground effect.

States are ``(p_z, v_z)`` in metres and m/s; the input is normalized total
thrust ``T`` in ``[0, 1]``. Hover in open air needs ``T = u_hover``, so the
normalized mass is ``u_hover / g``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import NotStabilizable, RiccatiNoConvergence, SimDiverged
from .koopman_linear import NominalModel


@dataclass(frozen=True)
class DroneParams:
    u_hover: float = 0.66
    gravity: float = 9.81
    rotor_radius: float = 0.12
    ground_gain: float = 1.0
    min_altitude_clamp: float = 0.03
    drag_coeff: float = 0.1

    def __post_init__(self):
        if self.u_hover <= 0 or self.gravity <= 0:
            raise ValueError("u_hover and gravity must be positive")
        if self.min_altitude_clamp <= 0 or self.rotor_radius < 0 or self.ground_gain < 0:
            raise ValueError("ground-effect constants must be non-negative (clamp > 0)")

    @property
    def mass(self) -> float:
        return self.u_hover / self.gravity


def ground_effect_factor(z: float, p: DroneParams) -> float:
    """In-ground-effect thrust multiplier, clamped to ``[1, 2]``."""
    ratio = p.rotor_radius / (4.0 * max(z, p.min_altitude_clamp))
    denom = 1.0 - p.ground_gain * ratio * ratio
    if denom <= 0.5:
        return 2.0
    return min(max(1.0 / denom, 1.0), 2.0)


def true_dynamics(x, T: float, p: DroneParams) -> np.ndarray:
    pz, vz = x[0], x[1]
    acc = ground_effect_factor(pz, p) * T / p.mass - p.gravity - p.drag_coeff * vz
    return np.array([vz, acc])


def rk4_step(f, x, u, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``dx/dt = f(x, u)`` with ``u`` held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(x, u), dtype=float)
    k2 = np.asarray(f(x + 0.5 * dt * k1, u), dtype=float)
    k3 = np.asarray(f(x + 0.5 * dt * k2, u), dtype=float)
    k4 = np.asarray(f(x + dt * k3, u), dtype=float)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def nominal_matrices(params: DroneParams):
    """Double-integrator altitude model driven by thrust deviation from hover."""
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0 / params.mass]])
    return A, B


def care_residual(A, B, Q, R, P) -> float:
    return float(np.max(np.abs(A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q)))


def _initial_stabilizing_gain(A, B):
    if np.max(np.linalg.eigvals(A).real) < 0:
        return np.zeros((B.shape[1], A.shape[0]))
    # Bass's method: shift the spectrum so -(A + beta I) is Hurwitz
    beta = np.max(np.abs(np.linalg.eigvals(A))) + 1.0
    Ab = -(A + beta * np.eye(A.shape[0]))
    Z = solve_continuous_lyapunov(Ab, -2.0 * B @ B.T)
    Z = 0.5 * (Z + Z.T)
    if np.min(np.linalg.eigvalsh(Z)) <= 1e-12 * max(1.0, np.max(np.abs(Z))):
        raise NotStabilizable("(A, B) is not controllable; no initial stabilizing gain")
    return -B.T @ np.linalg.inv(Z)


def lqr_gains(A, B, Q, R, *, tol=1e-10, max_iter=100):
    """Continuous LQR gain ``K`` (for ``u = K x``) by Newton-Kleinman iteration.

    Returns ``(K, P)`` where ``P`` solves the algebraic Riccati equation.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K = _initial_stabilizing_gain(A, B)
    scale = max(1.0, float(np.max(np.abs(Q))))
    P = np.zeros_like(A)
    for _ in range(max_iter):
        Ak = A + B @ K
        if np.max(np.linalg.eigvals(Ak).real) >= 0:
            raise NotStabilizable("Newton-Kleinman iterate lost stability")
        P = solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K = -np.linalg.solve(R, B.T @ P)
        if care_residual(A, B, Q, R, P) <= tol * scale:
            return K, P
    raise RiccatiNoConvergence(f"residual {care_residual(A, B, Q, R, P):.3e} after {max_iter} iterations")


def nominal_model(params: DroneParams, Q, R) -> NominalModel:
    A, B = nominal_matrices(params)
    K, _ = lqr_gains(A, B, Q, R)
    return NominalModel(A, B, K, mass=params.mass, gravity=params.gravity)


@dataclass
class DroneSim:
    """Ground-truth plant integrated with RK4 at ``inner_dt`` under zero-order-hold thrust."""

    params: DroneParams = field(default_factory=DroneParams)
    inner_dt: float = 1e-3
    safety_box: tuple = (-0.5, 10.0, 20.0)  # p_min, p_max, |v|_max
    measurement_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.x = np.zeros(2)
        self._rng = np.random.default_rng(self.seed)

    def reset(self, x0):
        self.x = np.array(x0, dtype=float)
        return self.observe()

    def observe(self) -> np.ndarray:
        if self.measurement_noise > 0:
            return self.x + self.measurement_noise * self._rng.standard_normal(2)
        return self.x.copy()

    def step(self, T: float, dt: float) -> np.ndarray:
        T = float(np.clip(T, 0.0, 1.0))
        n_sub = max(1, int(round(dt / self.inner_dt)))
        h = dt / n_sub
        # scalar RK4; same scheme as rk4_step, unrolled for speed
        p = self.params
        thrust = T / p.mass
        pz, vz = float(self.x[0]), float(self.x[1])

        def acc(z, v):
            return ground_effect_factor(z, p) * thrust - p.gravity - p.drag_coeff * v

        for _ in range(n_sub):
            k1p, k1v = vz, acc(pz, vz)
            k2p, k2v = vz + 0.5 * h * k1v, acc(pz + 0.5 * h * k1p, vz + 0.5 * h * k1v)
            k3p, k3v = vz + 0.5 * h * k2v, acc(pz + 0.5 * h * k2p, vz + 0.5 * h * k2v)
            k4p, k4v = vz + h * k3v, acc(pz + h * k3p, vz + h * k3v)
            pz += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            vz += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            if pz < 0.0:  # ground contact
                pz, vz = 0.0, max(vz, 0.0)
        x = np.array([pz, vz])
        self.x = x
        p_lo, p_hi, v_max = self.safety_box
        if not (np.all(np.isfinite(x)) and p_lo <= x[0] <= p_hi and abs(x[1]) <= v_max):
            raise SimDiverged(f"state {x} left the safety box")
        return self.observe()
