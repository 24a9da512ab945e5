"""Reference solutions for box-constrained strictly convex QPs.

``min 1/2 x'Px + q'x  s.t.  lo <= x <= hi``. Small problems are solved by
enumerating every assignment of each coordinate to {free, at lo, at hi};
larger ones take the active set found by bounded-variable least squares and
then certify it with an exact reduced solve and multiplier signs.
"""
import itertools

import numpy as np
from scipy.optimize import lsq_linear

ENUM_MAX_D = 8


def _reduced(P, q, lo, hi, state):
    """Solve with coordinates fixed per ``state`` (0 free, -1 lower, +1 upper)."""
    x = np.where(state < 0, lo, np.where(state > 0, hi, 0.0))
    free = state == 0
    if free.any():
        rhs = -(q[free] + P[np.ix_(free, ~free)] @ x[~free])
        x[free] = np.linalg.solve(P[np.ix_(free, free)], rhs)
    return x


def certify(P, q, lo, hi, x, tol=1e-9):
    """True if ``x`` satisfies the KKT conditions of the box QP."""
    g = P @ x + q
    scale = 1.0 + np.max(np.abs(q))
    if np.any(x < lo - tol * scale) or np.any(x > hi + tol * scale):
        return False
    at_lo = np.isclose(x, lo, atol=tol * scale, rtol=0)
    at_hi = np.isclose(x, hi, atol=tol * scale, rtol=0)
    free = ~(at_lo | at_hi)
    ok_free = np.all(np.abs(g[free]) <= tol * scale)
    ok_lo = np.all(g[at_lo & ~at_hi] >= -tol * scale)
    ok_hi = np.all(g[at_hi & ~at_lo] <= tol * scale)
    return bool(ok_free and ok_lo and ok_hi)


def enumerate_box_qp(P, q, lo, hi):
    d = len(q)
    for combo in itertools.product((0, -1, 1), repeat=d):
        state = np.array(combo)
        if np.any(~np.isfinite(lo) & (state < 0)) or np.any(~np.isfinite(hi) & (state > 0)):
            continue
        x = _reduced(P, q, lo, hi, state)
        if certify(P, q, lo, hi, x):
            return x
    raise RuntimeError("no KKT point found by enumeration")


def bvls_box_qp(P, q, lo, hi):
    L = np.linalg.cholesky(P)
    # 1/2 |L'x + L^{-1} q|^2 = 1/2 x'Px + q'x + const
    b = -np.linalg.solve(L, q)
    res = lsq_linear(L.T, b, bounds=(lo, hi), method="bvls", tol=1e-14, lsmr_tol=None)
    x = res.x
    scale = 1.0 + np.max(np.abs(q))
    state = np.where(np.abs(x - lo) <= 1e-9 * scale, -1, np.where(np.abs(x - hi) <= 1e-9 * scale, 1, 0))
    x = _reduced(P, q, lo, hi, state)
    if not certify(P, q, lo, hi, x):
        raise RuntimeError("active set from BVLS failed certification")
    return x


def solve_box_qp(P, q, lo, hi):
    if len(q) <= ENUM_MAX_D:
        return enumerate_box_qp(P, q, lo, hi)
    return bvls_box_qp(P, q, lo, hi)


def random_box_qp(rng, d):
    M = rng.standard_normal((d, d))
    cond = 10.0 ** rng.uniform(0, 3)
    U, _ = np.linalg.qr(M)
    P = U @ np.diag(np.geomspace(1.0, cond, d)) @ U.T
    P = 0.5 * (P + P.T)
    q = rng.standard_normal(d) * rng.uniform(0.5, 5.0)
    lo = -rng.uniform(0.1, 1.0, d)
    hi = rng.uniform(0.1, 1.0, d)
    return P, q, lo, hi
