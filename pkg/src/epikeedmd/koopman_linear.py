"""Koopman eigenpairs of a linear closed-loop system.

For ``dy/dt = A_cl y`` with real, distinct eigenvalues, the linear functionals
``psi_q(y) = <y, w_q>`` built from the adjoint (left) eigenvectors are Koopman
eigenfunctions, and so is any product of their powers, with the eigenvalue
given by the power-weighted sum of the principal eigenvalues.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ComplexEigenvalues, DefectiveMatrix, DimensionMismatch, NotHurwitz

IMAG_TOL = 1e-9
MAX_EIGVEC_COND = 1e10


@dataclass(frozen=True)
class NominalModel:
    """Linearized plant ``dx/dt = A_nom x + B_nom u`` with feedback ``u = K_nom x``."""

    A_nom: np.ndarray
    B_nom: np.ndarray
    K_nom: np.ndarray
    mass: float = 1.0
    gravity: float = 9.81

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A_nom, dtype=float))
        B = np.asarray(self.B_nom, dtype=float).reshape(A.shape[0], -1)
        K = np.asarray(self.K_nom, dtype=float).reshape(B.shape[1], A.shape[0])
        object.__setattr__(self, "A_nom", A)
        object.__setattr__(self, "B_nom", B)
        object.__setattr__(self, "K_nom", K)
        if self.mass <= 0 or self.gravity <= 0:
            raise ValueError("mass and gravity must be positive")

    @property
    def n(self) -> int:
        return self.A_nom.shape[0]

    @property
    def m(self) -> int:
        return self.B_nom.shape[1]

    @property
    def A_cl(self) -> np.ndarray:
        return self.A_nom + self.B_nom @ self.K_nom


@dataclass(frozen=True)
class PrincipalEigenpair:
    lam: float
    w: np.ndarray
    v: np.ndarray

    def __call__(self, y):
        return principal_eigenfunction_eval(self, y)


@dataclass(frozen=True)
class Eigenpair:
    """Product eigenpair ``(sum m_q lam_q, prod psi_q^m_q)``."""

    lam: float
    powers: tuple
    basis: tuple

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != len(self.basis):
            raise DimensionMismatch(f"expected {len(self.basis)}-vector, got shape {y.shape}")
        W = np.stack([p.w for p in self.basis], axis=1)
        return np.prod((y @ W) ** np.asarray(self.powers), axis=-1)


def adjoint_eigenbasis(A_cl) -> list[PrincipalEigenpair]:
    """Eigenvalues with right eigenvectors ``v_q`` and the adjoint basis ``w_q``.

    ``<v_q, w_r> = delta_qr``; pairs are sorted by ascending eigenvalue.
    """
    A = np.asarray(A_cl, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A_cl must be square, got shape {A.shape}")
    evals, V = np.linalg.eig(A)
    if np.max(np.abs(evals.imag)) > IMAG_TOL:
        raise ComplexEigenvalues(f"eigenvalues {evals} are not all real")
    evals = evals.real
    V = V.real
    if np.max(evals) >= 0:
        raise NotHurwitz(f"eigenvalues {evals} are not all in the open left half-plane")
    if np.linalg.cond(V) > MAX_EIGVEC_COND:
        raise DefectiveMatrix("eigenvector matrix is (nearly) singular")
    order = np.argsort(evals, kind="stable")
    evals, V = evals[order], V[:, order]
    V = V / np.linalg.norm(V, axis=0)
    # rows of V^{-1} are the left eigenvectors, scaled so that W^T V = I
    W = np.linalg.inv(V).T
    return [PrincipalEigenpair(float(evals[q]), W[:, q].copy(), V[:, q].copy())
            for q in range(A.shape[0])]


def principal_eigenfunction_eval(pair: PrincipalEigenpair, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != pair.w.shape[0]:
        raise DimensionMismatch(f"expected {pair.w.shape[0]}-vector, got shape {y.shape}")
    return y @ pair.w


def generate_power_combinations(n: int, max_degree: int) -> list[tuple]:
    """All multi-indices with total degree in ``[1, max_degree]``, graded-lex ordered."""
    if n < 1 or max_degree < 1:
        raise ValueError("n and max_degree must be >= 1")
    out = []
    for degree in range(1, max_degree + 1):
        level = [c for c in itertools.product(range(degree, -1, -1), repeat=n) if sum(c) == degree]
        out.extend(level)  # product() with a descending range already yields lex-descending order
    return out


def product_eigenpair(powers, basis) -> Eigenpair:
    powers = tuple(int(p) for p in powers)
    if len(powers) != len(basis):
        raise DimensionMismatch(f"{len(powers)} powers for a basis of size {len(basis)}")
    if any(p < 0 for p in powers) or sum(powers) == 0:
        raise ValueError("powers must be non-negative and not all zero")
    lam = float(sum(p * b.lam for p, b in zip(powers, basis)))
    return Eigenpair(lam, powers, tuple(basis))


def biorthonormality_residual(basis) -> float:
    V = np.stack([p.v for p in basis], axis=1)
    W = np.stack([p.w for p in basis], axis=1)
    return float(np.max(np.abs(V.T @ W - np.eye(len(basis)))))
