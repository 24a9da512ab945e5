"""Time-series containers and numerical differentiation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, TooShort


def differentiate(xs, dt: float) -> np.ndarray:
    """Second-order finite differences along axis 0.

    Central differences in the interior. The ends use one-sided stencils:
    third-order four-point ones when there are at least four samples
    (their error then stays below the interior one), otherwise second-order.
    Quadratics are differentiated exactly everywhere.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] < 3:
        raise TooShort(f"need at least 3 samples, got {xs.shape[0]}")
    d = np.empty_like(xs)
    d[1:-1] = (xs[2:] - xs[:-2]) / (2.0 * dt)
    if xs.shape[0] >= 4:
        d[0] = (-11.0 * xs[0] + 18.0 * xs[1] - 9.0 * xs[2] + 2.0 * xs[3]) / (6.0 * dt)
        d[-1] = (11.0 * xs[-1] - 18.0 * xs[-2] + 9.0 * xs[-3] - 2.0 * xs[-4]) / (6.0 * dt)
    else:
        d[0] = (-3.0 * xs[0] + 4.0 * xs[1] - xs[2]) / (2.0 * dt)
        d[-1] = (3.0 * xs[-1] - 4.0 * xs[-2] + xs[-3]) / (2.0 * dt)
    return d


def differentiate_segments(xs, segment, dt: float) -> np.ndarray:
    """Differentiate each contiguous segment separately (repetitions are not joined)."""
    xs = np.asarray(xs, dtype=float)
    segment = np.asarray(segment)
    out = np.empty_like(xs)
    for s in np.unique(segment):
        idx = np.flatnonzero(segment == s)
        out[idx] = differentiate(xs[idx], dt)
    return out


@dataclass
class EpisodeDataset:
    """Samples logged at the control rate.

    ``u`` is the applied (clipped) total command, ``u_nom`` the incumbent
    controller's output and ``u_noise`` the Brownian perturbation. ``segment``
    separates repetitions so that derivatives never straddle a reset.
    """

    x: np.ndarray
    u: np.ndarray
    u_nom: np.ndarray
    u_noise: np.ndarray
    tau: np.ndarray
    t: np.ndarray
    dt: float
    segment: np.ndarray = None
    clipped: np.ndarray = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        m_rows = len(self.t)

        def rows(a):
            a = np.asarray(a, dtype=float)
            return a if a.ndim == 2 and a.shape[0] == m_rows else a.reshape(m_rows, -1)

        self.x = rows(self.x)
        self.u = rows(self.u)
        self.u_nom = rows(self.u_nom)
        self.u_noise = rows(self.u_noise)
        self.tau = rows(self.tau)
        self.t = np.asarray(self.t, dtype=float)
        if self.segment is None:
            self.segment = np.zeros(m_rows, dtype=int)
        if self.clipped is None:
            self.clipped = np.zeros(m_rows, dtype=bool)
        self.segment = np.asarray(self.segment, dtype=int)
        self.clipped = np.asarray(self.clipped, dtype=bool)

    def __len__(self):
        return len(self.t)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def xdot(self) -> np.ndarray:
        if len(self) == 0:
            raise EmptyDataset("empty dataset")
        return differentiate_segments(self.x, self.segment, self.dt)

    @classmethod
    def concatenate(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise EmptyDataset("nothing to concatenate")
        seg, offset = [], 0
        for p in parts:
            seg.append(p.segment + offset)
            offset += int(p.segment.max()) + 1
        return cls(
            x=np.concatenate([p.x for p in parts]),
            u=np.concatenate([p.u for p in parts]),
            u_nom=np.concatenate([p.u_nom for p in parts]),
            u_noise=np.concatenate([p.u_noise for p in parts]),
            tau=np.concatenate([p.tau for p in parts]),
            t=np.concatenate([p.t for p in parts]),
            dt=parts[0].dt,
            segment=np.concatenate(seg),
            clipped=np.concatenate([p.clipped for p in parts]),
        )
