"""Structured lifted linear model fitted by elastic-net regression.

With ``z = (p, v, phi)`` the model is

    d/dt [p; v; phi] = [[0, I, 0], [A_vp, A_vv, A_vphi], [-B_phi K, Lambda]] z + [B_p; B_v; B_phi] u

where ``0, I, Lambda`` are installed exactly and the remaining blocks are
regressed. In the centered form the input is the deviation ``u - u_nom`` from
the incumbent controller, whose feedback is then already part of the
autonomous dynamics, so the ``-B_phi K`` block is zero.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from . import container
from .data import EpisodeDataset, differentiate_segments
from .eigfunc import EigenfunctionBasis, lift
from .errors import (AlreadyDiscrete, EmptyDataset, NoConvergenceWarning, RankDeficientWarning,
                     TooShort)
from .koopman_linear import NominalModel

RIDGE_FLOOR = 1e-6
MAX_DESIGN_COND = 1e10


@dataclass
class LiftedDataset:
    z: np.ndarray
    zdot: np.ndarray
    u: np.ndarray
    u_nom: np.ndarray
    u_noise: np.ndarray
    tau: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)


def build_lifted_dataset(D_x: EpisodeDataset, basis: EigenfunctionBasis | None) -> LiftedDataset:
    """Lift every sample and differentiate the lifted trajectories numerically."""
    if len(D_x) == 0:
        raise EmptyDataset("empty state dataset")
    counts = np.bincount(D_x.segment - D_x.segment.min())
    if np.min(counts[counts > 0]) < 3:
        raise TooShort("every segment needs at least 3 samples for central differences")
    z = D_x.x.copy() if basis is None else lift(basis, D_x.x, D_x.tau)
    zdot = differentiate_segments(z, D_x.segment, D_x.dt)
    return LiftedDataset(z, zdot, D_x.u, D_x.u_nom, D_x.u_noise, D_x.tau, D_x.t)


def _soft(a, t):
    return np.sign(a) * max(abs(a) - t, 0.0)


def elastic_net(X, Y, l1: float = 0.0, l2: float = 0.0, max_iter: int = 10000, tol: float = 1e-12,
                standardize: bool = True, return_info: bool = False):
    """Coordinate-descent minimizer of ``(1/2p)|Y - X b|^2 + l1 |b|_1 + (l2/2) |b|^2``.

    With ``standardize`` the columns are scaled to unit RMS before fitting (no
    centering, there is no intercept) and the penalty acts on the scaled
    coefficients; the returned coefficients are in the original units.
    Convergence is declared on the KKT residual. Every few sweeps the current
    support is polished with an exact reduced solve, which is accepted only if
    it satisfies the KKT conditions.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    p, q = X.shape
    if p < 1:
        raise EmptyDataset("no rows to regress on")
    G = X.T @ X / p
    c = X.T @ Y / p
    scale = np.ones(q)
    if standardize:
        scale = np.sqrt(np.diag(G)).copy()
        scale[scale == 0.0] = 1.0
        G = G / np.outer(scale, scale)
        c = c / scale
    live = np.diag(G) > 0
    beta = np.zeros(q)
    y2 = float(Y @ Y) / p

    def objective(b):
        return 0.5 * (y2 - 2.0 * c @ b + b @ G @ b) + l1 * np.sum(np.abs(b)) + 0.5 * l2 * b @ b

    def kkt(b):
        g = G @ b - c + l2 * b
        r = np.where(b != 0, np.abs(g + l1 * np.sign(b)), np.maximum(np.abs(g) - l1, 0.0))
        return float(np.max(r[live])) if live.any() else 0.0

    def polish(b):
        act = np.flatnonzero(b != 0)
        if act.size == 0:
            return None
        sgn = np.sign(b[act])
        try:
            ba = np.linalg.solve(G[np.ix_(act, act)] + l2 * np.eye(act.size), c[act] - l1 * sgn)
        except np.linalg.LinAlgError:
            return None
        if np.any(np.sign(ba) != sgn):
            return None
        out = np.zeros(q)
        out[act] = ba
        return out

    history = [objective(beta)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for j in range(q):
            if not live[j]:
                continue
            rho = c[j] - G[j] @ beta + G[j, j] * beta[j]
            beta[j] = _soft(rho, l1) / (G[j, j] + l2)
        history.append(objective(beta))
        if kkt(beta) <= tol:
            converged = True
            break
        if n_iter % 5 == 0:
            cand = polish(beta)
            if cand is not None and kkt(cand) <= tol:
                beta = cand
                history.append(objective(beta))
                converged = True
                break
    if not converged:
        warnings.warn(f"elastic net did not reach KKT tolerance {tol:g} in {max_iter} sweeps",
                      NoConvergenceWarning, stacklevel=2)
    coef = beta / scale
    if return_info:
        return coef, {"converged": converged, "n_iter": n_iter, "kkt": kkt(beta), "objective": history}
    return coef


@dataclass
class LiftedModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Lambda: np.ndarray
    basis: EigenfunctionBasis | None = None
    controller_index: int = 0
    dt: float = 0.0
    centered: bool = True

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def N(self) -> int:
        return len(self.Lambda)

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def lift(self, x, tau=None):
        if self.basis is None:
            return np.asarray(x, dtype=float).copy()
        return lift(self.basis, x, tau)

    @classmethod
    def from_nominal(cls, model: NominalModel) -> "LiftedModel":
        """The nominal plant as a model with an empty eigenfunction block."""
        return cls(model.A_nom.copy(), model.B_nom.copy(), np.eye(model.n), np.zeros(0),
                   None, 0, 0.0, centered=False)

    def to_arrays(self) -> dict:
        arrays = {"A": self.A, "B": self.B, "C": self.C, "Lambda": self.Lambda,
                  "meta": np.array([self.controller_index, self.dt, float(self.centered)])}
        if self.basis is not None:
            arrays.update({"basis_" + k: v for k, v in self.basis.to_arrays().items()})
        return arrays

    def to_bytes(self) -> bytes:
        return container.pack_arrays(self.to_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LiftedModel":
        a = container.unpack_arrays(blob)
        sub = {k[len("basis_"):]: v for k, v in a.items() if k.startswith("basis_")}
        basis = EigenfunctionBasis.from_arrays(sub) if sub else None
        idx, dt, centered = a["meta"]
        return cls(a["A"], a["B"], a["C"], a["Lambda"], basis, int(idx), float(dt), bool(centered))

    def to_csv(self) -> str:
        """A, B and C stacked as labelled rows."""
        buf = io.StringIO()
        for name, mat in (("A", self.A), ("B", self.B), ("C", self.C)):
            for i, row in enumerate(np.atleast_2d(mat)):
                buf.write(f"{name},{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def _check_design(X, name):
    """Warn when the regressors cannot be disambiguated; returns a ridge floor to apply."""
    if X.shape[1] == 0:
        return 0.0
    norms = np.sqrt(np.mean(X * X, axis=0))
    if np.any(norms <= 1e-12 * max(1.0, norms.max())):
        warnings.warn(f"{name}: regressor column(s) identically zero", RankDeficientWarning, stacklevel=3)
        return RIDGE_FLOOR
    Xs = X / norms
    if np.linalg.cond(Xs.T @ Xs) > MAX_DESIGN_COND:
        warnings.warn(f"{name}: design matrix is ill-conditioned", RankDeficientWarning, stacklevel=3)
        return RIDGE_FLOOR
    return 0.0


def fit_lifted_model(D_z: LiftedDataset, basis: EigenfunctionBasis | None, model: NominalModel,
                     centered: bool = True, l1: float = 1e-4, l2: float = 1e-4,
                     feedback_coupling: bool | None = None, controller_index: int = 0,
                     n_pos: int | None = None, state_input_gain=None, state_prior=None,
                     **enet_kw) -> LiftedModel:
    """Regress the free blocks of the structured lifted model.

    ``state_input_gain`` (n x m), when given, is installed as ``[B_p; B_v]``
    instead of being regressed; the state rows then fit only their ``A`` blocks.
    ``state_prior`` (n x n, acting on ``x``) is the point the velocity rows of
    ``A`` are shrunk towards: the penalty applies to ``A - prior``, not to ``A``.
    ``state_prior="data"`` uses the unpenalized least-squares fit on ``x`` alone,
    so only the eigenfunction terms and departures from that fit are penalized.
    """
    if len(D_z) == 0:
        raise EmptyDataset("empty lifted dataset")
    if feedback_coupling is None:
        feedback_coupling = not centered
    n = model.n
    N = 0 if basis is None else basis.N
    m = D_z.u.shape[1]
    n_pos = n // 2 if n_pos is None else n_pos
    z, zdot = D_z.z, D_z.zdot
    du = D_z.u - D_z.u_nom if centered else D_z.u
    Lambda = np.zeros(0) if basis is None else basis.eigenvalues.astype(float)

    A = np.zeros((n + N, n + N))
    B = np.zeros((n + N, m))
    enet_kw.setdefault("max_iter", 2000)
    enet_kw.setdefault("tol", 1e-10)

    def regress(X, y, name):
        floor = _check_design(X, name)
        return elastic_net(X, y, l1=l1, l2=max(l2, floor), **enet_kw)

    fixed = state_input_gain is not None
    if fixed:
        B[:n] = np.asarray(state_input_gain, dtype=float).reshape(n, m)
    prior = np.zeros((n, n + N))
    if isinstance(state_prior, str):
        if state_prior != "data":
            raise ValueError(f"unknown state_prior {state_prior!r}")
        X = z[:, :n] if fixed else np.hstack([z[:, :n], du])
        for i in range(n_pos, n):
            y = zdot[:, i] - (du @ B[i] if fixed else 0.0)
            prior[i, :n] = np.linalg.lstsq(X, y, rcond=None)[0][:n]
    elif state_prior is not None:
        prior[:, :n] = np.asarray(state_prior, dtype=float).reshape(n, n)
    # position rows: exact kinematics, only the input coupling is fitted
    for i in range(n_pos):
        A[i, n_pos + i] = 1.0
        if not fixed:
            B[i] = regress(du, zdot[:, i] - z[:, n_pos + i], f"position row {i}")
    for i in range(n_pos, n):
        target = zdot[:, i] - z @ prior[i]
        if fixed:
            A[i] = prior[i] + regress(z, target - du @ B[i], f"velocity row {i}")
        else:
            coef = regress(np.hstack([z, du]), target, f"velocity row {i}")
            A[i] = prior[i] + coef[: n + N]
            B[i] = coef[n + N:]
    if N:
        x = z[:, :n]
        reg = du - x @ model.K_nom.T if feedback_coupling else du
        for k in range(N):
            target = zdot[:, n + k] - Lambda[k] * z[:, n + k]
            B[n + k] = regress(reg, target, f"eigenfunction row {k}")
        A[n:, n:] = np.diag(Lambda)
        if feedback_coupling:
            A[n:, :n] = -B[n:] @ model.K_nom
    C = np.hstack([np.eye(n), np.zeros((n, N))])
    return LiftedModel(A, B, C, Lambda, basis, controller_index, 0.0, centered)


def zoh(A, B, dt: float):
    """Exact zero-order-hold sampling via the augmented matrix exponential."""
    nz, m = B.shape
    M = np.zeros((nz + m, nz + m))
    M[:nz, :nz] = A
    M[:nz, nz:] = B
    E = expm(M * dt)
    return E[:nz, :nz], E[:nz, nz:]


def discretize_zoh(M: LiftedModel, dt: float) -> LiftedModel:
    if M.dt != 0.0:
        raise AlreadyDiscrete(f"model is already discrete with dt={M.dt}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    Ad, Bd = zoh(M.A, M.B, dt)
    return replace(M, A=Ad, B=Bd, dt=float(dt))
