"""Data-driven Koopman eigenfunctions for the nonlinear closed loop.

Each eigenfunction is a product of powers of principal eigenfunctions of the
linearized closed loop, evaluated on the learned conjugacy ``c(x) = x + h(x, tau)``:

    phi_i(x, tau) = prod_q  g_q(<x + h(x, tau), w_q>) ** m_q^(i)

with eigenvalue ``sum_q m_q^(i) lambda_q``. The cube scaling ``g`` acts on the
modal coordinates ``<y, w_q>``; a per-axis rescaling of ``y`` itself would not
commute with the linear flow and would break the eigenfunction property.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .diffeo import (DiffeoTrainConfig, NormalizedDiffeo, ScalingMap, fit_diffeomorphism,
                     fit_scaling, normalize_diffeo)
from .errors import DimensionMismatch, EmptyDataset
from .koopman_linear import (NominalModel, adjoint_eigenbasis, generate_power_combinations,
                             product_eigenpair)


@dataclass
class EigenfunctionBasis:
    model: NominalModel
    W: np.ndarray           # adjoint vectors as columns, n x n
    V: np.ndarray           # right eigenvectors as columns
    principal: np.ndarray   # principal eigenvalues, ascending
    powers: np.ndarray      # N x n multi-indices
    diffeo: NormalizedDiffeo | None
    scaling: ScalingMap
    tau0: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.powers.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.powers @ self.principal

    def conjugacy(self, x, tau=None):
        """``y = x + h(x, tau)`` for a batch."""
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        if self.diffeo is None:
            return x
        tau = self.tau0 if tau is None else tau
        return x + self.diffeo.forward(x, tau)

    def evaluate(self, x, tau=None) -> np.ndarray:
        """Eigenfunction values, shape ``(batch, N)`` (or ``(N,)`` for one state)."""
        single = np.ndim(x) == 1
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionMismatch(f"expected {self.n}-dimensional state, got {x.shape}")
        s = self.scaling(self.conjugacy(x, tau) @ self.W)
        phi = np.prod(s[:, None, :] ** self.powers[None, :, :], axis=2)
        return phi[0] if single else phi

    def to_arrays(self) -> dict:
        arrays = {
            "A_nom": self.model.A_nom, "B_nom": self.model.B_nom, "K_nom": self.model.K_nom,
            "mass_gravity": np.array([self.model.mass, self.model.gravity]),
            "W": self.W, "V": self.V, "principal": self.principal,
            "powers": self.powers.astype(float), "radius": self.scaling.radius, "tau0": self.tau0,
        }
        if self.diffeo is not None:
            arrays.update(self.diffeo.to_arrays())
        return arrays

    @classmethod
    def from_arrays(cls, a: dict) -> "EigenfunctionBasis":
        mass, gravity = a["mass_gravity"]
        model = NominalModel(a["A_nom"], a["B_nom"], a["K_nom"], mass=float(mass), gravity=float(gravity))
        diffeo = NormalizedDiffeo.from_arrays(a) if "h_layer_dims" in a else None
        return cls(model, a["W"], a["V"], a["principal"], a["powers"].astype(int), diffeo,
                   ScalingMap(a["radius"]), a["tau0"])

    def to_bytes(self) -> bytes:
        return container.pack_arrays(self.to_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EigenfunctionBasis":
        return cls.from_arrays(container.unpack_arrays(blob))


def linear_basis(model: NominalModel, max_degree: int, diffeo=None, scaling=None, tau0=None):
    """Basis from the linear closed loop alone (unit scaling unless given)."""
    pairs = adjoint_eigenbasis(model.A_cl)
    powers = np.array(generate_power_combinations(model.n, max_degree), dtype=int)
    for p in powers:  # validates the multi-indices against the basis
        product_eigenpair(p, pairs)
    W = np.stack([p.w for p in pairs], axis=1)
    V = np.stack([p.v for p in pairs], axis=1)
    principal = np.array([p.lam for p in pairs])
    scaling = scaling or ScalingMap(np.ones(model.n))
    tau0 = np.zeros(model.n) if tau0 is None else np.asarray(tau0, dtype=float)
    return EigenfunctionBasis(model, W, V, principal, powers, diffeo, scaling, tau0)


def construct_eigenfunctions(model: NominalModel, x, xdot, tau, max_degree: int,
                             cfg: DiffeoTrainConfig, warm=None, tau0=None):
    """Fit ``h``, normalize it at the fixed point, fit the scaling and assemble the basis.

    Returns ``(basis, raw_net, loss_history)``; ``raw_net`` is the warm start
    for the next call.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise EmptyDataset("no samples to construct eigenfunctions from")
    tau0 = np.zeros(model.n) if tau0 is None else np.asarray(tau0, dtype=float)
    basis = linear_basis(model, max_degree, tau0=tau0)
    net, history = fit_diffeomorphism(x, xdot, tau, model, cfg, warm_start=warm)
    basis.diffeo = normalize_diffeo(net, tau0)
    modal = basis.conjugacy(x, tau) @ basis.W
    basis.scaling = fit_scaling(modal)
    return basis, net, history


def lift(basis: EigenfunctionBasis, x, tau=None) -> np.ndarray:
    """Lifted state ``z = (x, phi(x, tau))``; ``C z = x`` with ``C = [I 0]``."""
    x = np.asarray(x, dtype=float)
    phi = basis.evaluate(x, tau)
    if x.ndim == 1:
        return np.concatenate([x, phi])
    return np.concatenate([x.reshape(-1, basis.n), phi], axis=1)


def projection_matrix(n: int, N: int) -> np.ndarray:
    return np.hstack([np.eye(n), np.zeros((n, N))])
