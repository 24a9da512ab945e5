"""Condensed (dense-form) linear MPC in the lifted space.

The predicted lifted states ``z_p = A^p z0 + sum_k A^(p-k) B u_k`` are
eliminated so the decision vector is the input sequence ``u_1..u_Np`` plus one
slack per softened state bound and step. The objective is

    sum_p (C z_p - tau_p)' Q (C z_p - tau_p) + u_p' R u_p
          + alpha_R sum_p |u_p - u_(p-1)|^2 + rho_s sum slack

with ``u_0`` the command applied at the previous tick. Input bounds are
shifted by the summed output of previously stacked controllers so that the
composed command stays inside ``[u_min, u_max]``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, HorizonZero
from .keedmd import LiftedModel
from .qp import INF, MAX_ITER, SOLVED, ADMMSolver, QPProblem, QPSettings, QPSolution

BOUND_TOL = 1e-9
HARD_MAX_ITER = 300


@dataclass
class MPCConfig:
    Q: np.ndarray
    R: np.ndarray
    N_p: int = 20
    dt: float = 0.02
    u_min: np.ndarray = None
    u_max: np.ndarray = None
    x_min: np.ndarray = None
    x_max: np.ndarray = None
    soft_penalty: float = 1e4
    alpha_R: float = 0.0
    solver: QPSettings = field(default_factory=QPSettings)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = self.Q.shape[0], self.R.shape[0]
        if self.N_p < 1:
            raise HorizonZero("horizon must contain at least one step")
        for name, M in (("Q", self.Q), ("R", self.R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be square and symmetric")
            if np.min(np.linalg.eigvalsh(M)) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        self.u_min = np.full(m, -np.inf) if self.u_min is None else np.asarray(self.u_min, dtype=float).ravel()
        self.u_max = np.full(m, np.inf) if self.u_max is None else np.asarray(self.u_max, dtype=float).ravel()
        self.x_min = np.full(n, -np.inf) if self.x_min is None else np.asarray(self.x_min, dtype=float).ravel()
        self.x_max = np.full(n, np.inf) if self.x_max is None else np.asarray(self.x_max, dtype=float).ravel()
        if self.u_min.shape != (m,) or self.u_max.shape != (m,):
            raise DimensionMismatch(f"input bounds must have length {m}")
        if self.x_min.shape != (n,) or self.x_max.shape != (n,):
            raise DimensionMismatch(f"state bounds must have length {n}")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be strictly below u_max")
        if self.dt <= 0 or self.soft_penalty <= 0 or self.alpha_R < 0:
            raise ValueError("dt and soft_penalty must be positive, alpha_R non-negative")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


def prediction_matrices(A, B, C, N_p: int):
    """``X = Sx z0 + Su U`` for the stacked outputs ``X = (C z_1, ..., C z_Np)``."""
    nz, m = B.shape
    n = C.shape[0]
    Sx = np.zeros((n * N_p, nz))
    Su = np.zeros((n * N_p, m * N_p))
    CAk = [C]  # C A^k
    for _ in range(N_p):
        CAk.append(CAk[-1] @ A)
    for p in range(N_p):
        Sx[p * n:(p + 1) * n] = CAk[p + 1]
        for k in range(p + 1):
            Su[p * n:(p + 1) * n, k * m:(k + 1) * m] = CAk[p - k] @ B
    return Sx, Su


class LiftedMPC:
    """An MPC stage whose QP matrices and factorizations are built once."""

    def __init__(self, M: LiftedModel, cfg: MPCConfig):
        if M.dt <= 0:
            raise ValueError("the lifted model must be discretized before use in MPC")
        if abs(M.dt - cfg.dt) > 1e-12:
            raise ValueError(f"model dt {M.dt} differs from controller dt {cfg.dt}")
        if M.n != cfg.n or M.m != cfg.m:
            raise DimensionMismatch(f"model (n={M.n}, m={M.m}) does not match weights (n={cfg.n}, m={cfg.m})")
        self.model, self.cfg = M, cfg
        n, m, Np = cfg.n, cfg.m, cfg.N_p
        self.Sx, self.Su = prediction_matrices(M.A, M.B, M.C, Np)
        Qb = np.kron(np.eye(Np), cfg.Q)
        Rb = np.kron(np.eye(Np), cfg.R)
        D = np.eye(m * Np) - np.eye(m * Np, k=-m)
        self._SuQ = self.Su.T @ Qb
        self._Dt0 = D.T[:, :m]  # D' E, E picks u_0 into the first block
        Huu = self._SuQ @ self.Su + Rb + cfg.alpha_R * D.T @ D

        # one slack per softened state component per step
        soft = np.flatnonzero(np.isfinite(cfg.x_min) | np.isfinite(cfg.x_max))
        self.soft = soft
        ns = soft.size * Np
        rows = np.concatenate([p * n + soft for p in range(Np)]).astype(int) if ns else np.zeros(0, int)
        self._soft_rows = rows
        self.nu, self.ns = m * Np, ns
        d = self.nu + ns
        P = np.zeros((d, d))
        P[:self.nu, :self.nu] = 2.0 * Huu
        P = 0.5 * (P + P.T)

        blocks = [np.hstack([np.eye(self.nu), np.zeros((self.nu, ns))])]
        Sus = self.Su[rows]
        self._has_max = np.isfinite(np.tile(cfg.x_max[soft], Np)) if ns else np.zeros(0, bool)
        self._has_min = np.isfinite(np.tile(cfg.x_min[soft], Np)) if ns else np.zeros(0, bool)
        if ns:
            I = np.eye(ns)
            blocks.append(np.hstack([Sus[self._has_max], -I[self._has_max]]))
            blocks.append(np.hstack([Sus[self._has_min], I[self._has_min]]))
            blocks.append(np.hstack([np.zeros((ns, self.nu)), I]))
        self.G = np.vstack(blocks)
        self.P = P
        self.solver = ADMMSolver(P, self.G, cfg.solver)
        # Exact-penalty shortcut: the hard-constrained QP has the same solution
        # whenever it is feasible with state multipliers below rho_s.
        self._hard = None
        if ns:
            G_hard = np.vstack([np.eye(self.nu), Sus[self._has_max], Sus[self._has_min]])
            hard_settings = replace(cfg.solver, max_iter=min(cfg.solver.max_iter, HARD_MAX_ITER))
            self._hard = ADMMSolver(P[:self.nu, :self.nu], G_hard, hard_settings)
        self._last = None
        self._last_hard = None

    def problem(self, z0, tau_window, u_prev_sum=None, u_last=None) -> QPProblem:
        q, lo, hi = self._vectors(z0, tau_window, u_prev_sum, u_last)
        return QPProblem(self.P, q, self.G, lo, hi)

    def _vectors(self, z0, tau_window, u_prev_sum, u_last):
        cfg, n, m, Np = self.cfg, self.cfg.n, self.cfg.m, self.cfg.N_p
        z0 = np.asarray(z0, dtype=float).ravel()
        if z0.shape != (self.model.A.shape[0],):
            raise DimensionMismatch(f"z0 has length {z0.size}, expected {self.model.A.shape[0]}")
        tau = np.asarray(tau_window, dtype=float)
        if tau.ndim == 1 and n == 1:
            tau = tau[None, :]
        if tau.shape != (n, Np):
            raise DimensionMismatch(f"tau_window must be {n}x{Np}, got {tau.shape}")
        prev = np.zeros((m, Np)) if u_prev_sum is None else np.asarray(u_prev_sum, dtype=float).reshape(m, -1)
        if prev.shape[1] == 1:
            prev = np.repeat(prev, Np, axis=1)
        if prev.shape != (m, Np):
            raise DimensionMismatch(f"u_prev_sum must be {m}x{Np}")
        u_last = np.zeros(m) if u_last is None else np.asarray(u_last, dtype=float).ravel()
        free = self.Sx @ z0
        err = free - tau.T.ravel()
        q = np.zeros(self.nu + self.ns)
        q[:self.nu] = 2.0 * (self._SuQ @ err - self.cfg.alpha_R * self._Dt0 @ u_last)
        q[self.nu:] = cfg.soft_penalty
        prev_flat = prev.T.ravel()
        lo_u = np.tile(cfg.u_min, Np) - prev_flat
        hi_u = np.tile(cfg.u_max, Np) - prev_flat
        lo, hi = [lo_u], [hi_u]
        if self.ns:
            fr = free[self._soft_rows]
            xmax = np.tile(cfg.x_max[self.soft], Np)
            xmin = np.tile(cfg.x_min[self.soft], Np)
            hm, hn = self._has_max, self._has_min
            lo += [np.full(hm.sum(), -INF), xmin[hn] - fr[hn], np.zeros(self.ns)]
            hi += [xmax[hm] - fr[hm], np.full(hn.sum(), INF), np.full(self.ns, INF)]
        return q, np.concatenate(lo), np.concatenate(hi)

    def _shifted_warm(self, sol: QPSolution):
        """Previous plan advanced by one step, last block repeated."""
        m, Np = self.cfg.m, self.cfg.N_p
        x = sol.x.copy()
        u = x[:self.nu].reshape(Np, m)
        x[:self.nu] = np.vstack([u[1:], u[-1:]]).ravel()
        return QPSolution(x, sol.y.copy(), sol.z, sol.status, 0, 0.0, 0.0, False, sol.rho)

    def _solve(self, q, lo, hi, warm):
        use_last = warm is True
        if use_last:
            warm = None if self._last is None else self._shifted_warm(self._last)
        if self._hard is not None:
            sol = self._solve_hard(q, lo, hi, use_last)
            if sol is not None:
                self._last = sol
                return sol
        sol = self.solver.solve(q, lo, hi, warm=warm)
        self._last = sol
        return sol

    def _solve_hard(self, q, lo, hi, use_last):
        """Solve without slacks; map back to the softened problem if the penalty is exact."""
        nu, ns = self.nu, self.ns
        n_max, n_min = int(self._has_max.sum()), int(self._has_min.sum())
        nh = n_max + n_min
        hwarm = self._shifted_warm(self._last_hard) if use_last and self._last_hard is not None else None
        hs = self._hard.solve(q[:nu], lo[:nu + nh], hi[:nu + nh], warm=hwarm)
        y_max, y_min = hs.y[nu:nu + n_max], hs.y[nu + n_max:]
        if hs.status != SOLVED or np.max(np.abs(hs.y[nu:]), initial=0.0) >= self.cfg.soft_penalty:
            self._last_hard = None
            return None
        self._last_hard = hs
        x = np.concatenate([hs.x, np.zeros(ns)])
        y_sign = np.full(ns, -self.cfg.soft_penalty)
        y_sign[self._has_max] += y_max
        y_sign[self._has_min] -= y_min
        y = np.concatenate([hs.y, y_sign])
        z = np.clip(self.G @ x, lo, hi)
        return QPSolution(x, y, z, SOLVED, hs.iterations, hs.primal_residual, hs.dual_residual,
                          hs.polished, hs.rho)

    def step(self, x_k, tau_window, u_prev_sum=None, u_last=None, warm=None, tau_k=None):
        """Lift ``x_k``, solve the condensed QP and return ``(u_first, diagnostics)``.

        ``warm`` may be a previous :class:`QPSolution`, ``True`` to reuse this
        controller's previous plan, or ``None`` for a cold start.
        """
        x_k = np.asarray(x_k, dtype=float).ravel()
        if not np.all(np.isfinite(x_k)):
            raise ValueError("state contains non-finite values")
        tau_k = np.asarray(tau_window, dtype=float).reshape(self.cfg.n, -1)[:, 0] if tau_k is None else tau_k
        z0 = self.model.lift(x_k, tau_k)
        q, lo, hi = self._vectors(z0, tau_window, u_prev_sum, u_last)
        sol = self._solve(q, lo, hi, warm)
        m, Np = self.cfg.m, self.cfg.N_p
        u_plan = sol.x[:self.nu].reshape(Np, m)
        # the first input is always returned inside its (nested) box
        u_first = np.clip(u_plan[0], lo[:m], hi[:m])
        diag = {
            "status": sol.status,
            "degraded": sol.status != SOLVED,
            "iterations": sol.iterations,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "polished": sol.polished,
            "u_plan": u_plan,
            "x_pred": (self.Sx @ z0 + self.Su @ sol.x[:self.nu]).reshape(Np, self.cfg.n),
            "at_lower": u_first <= lo[:m] + 1e-7,
            "at_upper": u_first >= hi[:m] - 1e-7,
            "slack_active": bool(self.ns and np.max(sol.x[self.nu:]) > 1e-7),
            "solution": sol,
        }
        return u_first, diag


def condense(M: LiftedModel, cfg: MPCConfig, z0, tau_window, u_prev_sum=None, u_last=None) -> QPProblem:
    return LiftedMPC(M, cfg).problem(z0, tau_window, u_prev_sum, u_last)


def mpc_step(M, cfg: MPCConfig, x_k, tau_window, prev_controllers_eval=None, u_last=None, warm=None):
    """One receding-horizon step; ``M`` is a :class:`LiftedModel` or a built :class:`LiftedMPC`."""
    ctrl = M if isinstance(M, LiftedMPC) else LiftedMPC(M, cfg)
    return ctrl.step(x_k, tau_window, prev_controllers_eval, u_last, warm)


DIAG_COLUMNS = ("t", "x", "u", "iterations", "primal_residual", "dual_residual",
                "at_lower", "at_upper", "slack_active")


def diagnostics_csv(rows) -> str:
    """``rows`` are ``(t, x_k, u_first, diag)`` tuples; vectors are expanded per component."""
    buf = io.StringIO()
    rows = list(rows)
    if not rows:
        buf.write(",".join(DIAG_COLUMNS) + "\n")
        return buf.getvalue()
    n, m = len(np.ravel(rows[0][1])), len(np.ravel(rows[0][2]))
    head = (["t"] + [f"x_{i}" for i in range(n)] + [f"u_{i}" for i in range(m)]
            + ["iterations", "primal_residual", "dual_residual"]
            + [f"at_lower_{i}" for i in range(m)] + [f"at_upper_{i}" for i in range(m)] + ["slack_active"])
    buf.write(",".join(head) + "\n")
    for t, x, u, dg in rows:
        vals = ([repr(float(t))] + [repr(float(v)) for v in np.ravel(x)] + [repr(float(v)) for v in np.ravel(u)]
                + [str(int(dg["iterations"])), repr(float(dg["primal_residual"])), repr(float(dg["dual_residual"]))]
                + [str(int(b)) for b in np.ravel(dg["at_lower"])] + [str(int(b)) for b in np.ravel(dg["at_upper"])]
                + [str(int(dg["slack_active"]))])
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()
