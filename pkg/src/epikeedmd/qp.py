"""Dense ADMM solver for convex QPs of the form

    minimize    1/2 x'Px + q'x
    subject to  lo <= Gx <= hi

The iteration is the operator-splitting scheme popularized by OSQP (relaxed
ADMM on the ``Gx = z`` splitting, ``z`` projected onto the box). Once the
residuals are moderately small the guessed active set is polished with an
exact reduced KKT solve; the polished point is accepted only if it meets the
termination tolerances, otherwise ADMM simply continues.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .errors import InvalidQP

INF = 1e20
SOLVED = "Solved"
MAX_ITER = "MaxIter"
PRIMAL_INFEASIBLE = "PrimalInfeasible"


@dataclass(frozen=True)
class QPSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    max_iter: int = 4000
    eps_abs: float = 1e-6
    eps_prim_inf: float = 1e-7
    adaptive_rho: bool = True
    check_every: int = 5
    polish: bool = True
    polish_trigger: float = np.inf
    polish_after: int = 10


@dataclass
class QPProblem:
    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        d = self.P.shape[0]
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.G = np.asarray(self.G, dtype=float).reshape(-1, d)
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        c = self.G.shape[0]
        if self.P.shape != (d, d) or self.q.shape != (d,):
            raise InvalidQP(f"P {self.P.shape} and q {self.q.shape} are inconsistent")
        if self.lo.shape != (c,) or self.hi.shape != (c,):
            raise InvalidQP(f"bounds must have length {c}")
        if np.any(self.lo > self.hi):
            raise InvalidQP("lower bound exceeds upper bound")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(self.P))):
            raise InvalidQP("P is not symmetric")

    @property
    def d(self) -> int:
        return self.P.shape[0]


@dataclass
class QPSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool = False
    rho: float = 0.1

    @property
    def u_seq(self) -> np.ndarray:
        return self.x


def residuals(P, q, G, x, z, y):
    prim = float(np.max(np.abs(G @ x - z), initial=0.0))
    dual = float(np.max(np.abs(P @ x + q + G.T @ y), initial=0.0))
    return prim, dual


class ADMMSolver:
    """Holds ``P`` and ``G`` fixed so scaling and factorizations are reused across solves.

    The iteration runs on a Ruiz-equilibrated copy of the problem; residuals
    and the returned iterates are always in the original units.
    """

    def __init__(self, P, G, settings: QPSettings | None = None):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        self.G = np.asarray(G, dtype=float).reshape(-1, self.P.shape[0])
        self.settings = settings or QPSettings()
        self._factors = {}
        self._equilibrate()

    def _equilibrate(self, iters: int = 15):
        P, G = self.P, self.G
        d, c = P.shape[0], G.shape[0]
        D, E = np.ones(d), np.ones(c)
        Ps, Gs = P.copy(), G.copy()
        for _ in range(iters):
            col = np.maximum(np.max(np.abs(Ps), axis=0, initial=0.0), np.max(np.abs(Gs), axis=0, initial=0.0))
            row = np.max(np.abs(Gs), axis=1, initial=0.0)
            dd = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            ee = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            Ps = dd[:, None] * Ps * dd[None, :]
            Gs = ee[:, None] * Gs * dd[None, :]
            D *= dd
            E *= ee
        mean_col = np.mean(np.max(np.abs(Ps), axis=0, initial=0.0)) if d else 1.0
        cost = 1.0 / np.clip(mean_col, 1e-4, 1e4)
        self.D, self.E, self.cost = D, E, cost
        self.Ps, self.Gs = cost * Ps, Gs

    def _factor(self, rho_vec):
        key = rho_vec.tobytes()
        f = self._factors.get(key)
        if f is None:
            if len(self._factors) > 32:
                self._factors.clear()
            K = self.Ps + self.settings.sigma * np.eye(self.Ps.shape[0]) + self.Gs.T @ (rho_vec[:, None] * self.Gs)
            f = cho_factor(K)
            self._factors[key] = f
        return f

    def _rho_vec(self, rho, lo, hi):
        r = np.full(lo.shape, rho)
        r[(lo <= -INF) & (hi >= INF)] = 1e-6
        r[hi - lo < 1e-10] = 1e3 * rho
        return r

    def _unscale(self, xs, zs, ys):
        return self.D * xs, zs / self.E, self.E * ys / self.cost

    def solve(self, q, lo, hi, warm=None) -> QPSolution:
        s = self.settings
        P, G, D, E, c = self.P, self.G, self.D, self.E, self.cost
        Ps, Gs = self.Ps, self.Gs
        q = np.asarray(q, dtype=float)
        lo = np.clip(np.asarray(lo, dtype=float), -INF, INF)
        hi = np.clip(np.asarray(hi, dtype=float), -INF, INF)
        if np.any(lo > hi):
            raise InvalidQP("lower bound exceeds upper bound")
        d, m = P.shape[0], G.shape[0]
        qs = c * D * q
        los = np.where(lo <= -INF, -INF, E * lo)
        his = np.where(hi >= INF, INF, E * hi)
        rho = s.rho if warm is None or getattr(warm, "rho", None) is None else warm.rho
        if warm is not None:
            x = np.asarray(warm.x, dtype=float) / D
            y = c * np.asarray(warm.y, dtype=float) / E
            z = np.clip(Gs @ x, los, his)
        else:
            x, z, y = np.zeros(d), np.clip(np.zeros(m), los, his), np.zeros(m)
        rho_vec = self._rho_vec(rho, los, his)
        fac = self._factor(rho_vec)
        y_check = y.copy()
        last_active = None
        it = 0
        for it in range(1, s.max_iter + 1):
            rhs = s.sigma * x - qs + Gs.T @ (rho_vec * z - y)
            xt = cho_solve(fac, rhs)
            zt = Gs @ xt
            x = s.alpha * xt + (1.0 - s.alpha) * x
            z_relax = s.alpha * zt + (1.0 - s.alpha) * z
            z_new = np.clip(z_relax + y / rho_vec, los, his)
            y = y + rho_vec * (z_relax - z_new)
            z = z_new
            if it % s.check_every:
                continue
            xu, zu, yu = self._unscale(x, z, y)
            prim, dual = residuals(P, q, G, xu, zu, yu)
            if prim <= s.eps_abs and dual <= s.eps_abs:
                return QPSolution(xu, yu, zu, SOLVED, it, prim, dual, False, rho)
            if s.polish and it >= s.polish_after and max(prim, dual) <= s.polish_trigger:
                lower, upper = self._guess_active(z, y, los, his, rho_vec)
                key = (lower.tobytes(), upper.tobytes())
                if key != last_active:
                    last_active = key
                    pol = self._polish(q, lo, hi, qs, los, his, lower, upper)
                    if pol is not None:
                        return QPSolution(*pol[:3], SOLVED, it, pol[3], pol[4], True, rho)
            if self._infeasible(y - y_check, los, his):
                return QPSolution(xu, yu, zu, PRIMAL_INFEASIBLE, it, prim, dual, False, rho)
            y_check = y.copy()
            if s.adaptive_rho:
                ps = np.max(np.abs(Gs @ x - z), initial=0.0)
                ds = np.max(np.abs(Ps @ x + qs + Gs.T @ y), initial=0.0)
                new_rho = rho
                if ps > 10.0 * ds and rho < 1e6:
                    new_rho = rho * 2.0
                elif ds > 10.0 * ps and rho > 1e-6:
                    new_rho = rho / 2.0
                if new_rho != rho:
                    rho = new_rho
                    rho_vec = self._rho_vec(rho, los, his)
                    fac = self._factor(rho_vec)
        xu, zu, yu = self._unscale(x, z, y)
        prim, dual = residuals(P, q, G, xu, zu, yu)
        if s.polish:
            lower, upper = self._guess_active(z, y, los, his, rho_vec)
            pol = self._polish(q, lo, hi, qs, los, his, lower, upper)
            if pol is not None:
                return QPSolution(*pol[:3], SOLVED, it, pol[3], pol[4], True, rho)
        return QPSolution(xu, yu, zu, MAX_ITER, it, prim, dual, False, rho)

    def _infeasible(self, dy, lo, hi) -> bool:
        """Certificate on the scaled problem: ``G'dy ~ 0`` with negative support value."""
        eps = self.settings.eps_prim_inf
        norm = np.max(np.abs(dy), initial=0.0)
        if norm <= 1e-12:
            return False
        dy = dy / norm
        if np.max(np.abs(self.Gs.T @ dy), initial=0.0) > eps:
            return False
        pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
        # an infinite bound paired with a dual of that sign cannot certify infeasibility
        if np.any((pos > eps) & (hi >= INF)) or np.any((neg < -eps) & (lo <= -INF)):
            return False
        support = np.sum(np.where(pos > 0, hi * pos, 0.0)) + np.sum(np.where(neg < 0, lo * neg, 0.0))
        return bool(support < -eps)

    @staticmethod
    def _guess_active(z, y, lo, hi, rho_vec):
        lower = (z - lo < -y / rho_vec) & (lo > -INF)
        upper = (hi - z < y / rho_vec) & (hi < INF) & ~lower
        return lower, upper

    def _kkt_solve(self, qs, los, his, lower, upper, delta: float = 1e-9):
        """Equality-constrained QP on an active set, in scaled units."""
        Ps, Gs = self.Ps, self.Gs
        act = np.flatnonzero(lower | upper)
        d = Ps.shape[0]
        K = np.zeros((d + act.size, d + act.size))
        K[:d, :d] = Ps
        K[:d, d:] = Gs[act].T
        K[d:, :d] = Gs[act]
        Kreg = K.copy()
        Kreg[np.diag_indices(d)] += delta
        Kreg[d + np.arange(act.size), d + np.arange(act.size)] -= delta
        rhs = np.concatenate([-qs, np.where(lower, los, his)[act]])
        try:
            lu = lu_factor(Kreg, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
        sol = lu_solve(lu, rhs)
        for _ in range(5):  # iterative refinement against the unregularized system
            sol = sol + lu_solve(lu, rhs - K @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        ys = np.zeros(Gs.shape[0])
        ys[act] = sol[d:]
        return sol[:d], ys

    def _polish(self, q, lo, hi, qs, los, his, lower, upper, max_rounds: int = 20):
        """Refine the guessed active set with a few primal/dual corrections, then verify.

        Each round solves the reduced KKT system, adds rows whose bound is
        violated and drops rows whose multiplier has the wrong sign. The result
        is accepted only if it satisfies the termination tolerances.
        """
        eps = self.settings.eps_abs
        lower, upper = lower.copy(), upper.copy()
        for _ in range(max_rounds):
            out = self._kkt_solve(qs, los, his, lower, upper)
            if out is None:
                return None
            xs, ys = out
            xu = self.D * xs
            yu = self.E * ys / self.cost
            Gx = self.G @ xu
            viol_lo = (Gx < lo - eps) & ~lower
            viol_hi = (Gx > hi + eps) & ~upper
            bad_lo = lower & (yu > eps)
            bad_hi = upper & (yu < -eps)
            if not (viol_lo.any() or viol_hi.any() or bad_lo.any() or bad_hi.any()):
                zu = np.clip(Gx, lo, hi)
                prim, dual = residuals(self.P, q, self.G, xu, zu, yu)
                if prim <= eps and dual <= eps:
                    return xu, yu, zu, prim, dual
                return None
            if viol_lo.any() or viol_hi.any():
                lower |= viol_lo
                upper |= viol_hi
            else:
                # drop only the worst offender to avoid cycling
                score = np.where(bad_lo, yu, 0.0) - np.where(bad_hi, yu, 0.0)
                k = int(np.argmax(score))
                lower[k] = upper[k] = False
        return None


def solve_qp(problem: QPProblem, warm=None, settings: QPSettings | None = None) -> QPSolution:
    return ADMMSolver(problem.P, problem.G, settings).solve(problem.q, problem.lo, problem.hi, warm)
