"""Conjugacy-map residual ``h(x, tau)`` learned by empirical risk minimization.

``h`` is a small tanh network whose input is the state stacked with the
forcing reference. Training minimizes

    || dh/dt - A_cl h - (A_cl x - xdot) + B_nom K_nom tau ||^2

where ``dh/dt = (dh/dx) xdot`` is obtained exactly as a Jacobian-vector product
(forward tangent), and parameter gradients come from hand-written reverse-mode
differentiation through that tangent pass.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import DimensionMismatch, DivergedTraining, EmptyDataset, NonFiniteSample
from .koopman_linear import NominalModel


@dataclass(frozen=True)
class DiffeoTrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    l2_weight: float = 1e-6
    jacobian_fd_step: float = 1e-5
    seed: int = 0
    hidden: tuple = (32, 32)
    grad_clip: float | None = None   # rescale each step's gradient to at most this norm

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.jacobian_fd_step <= 0:
            raise ValueError("learning_rate, batch_size and jacobian_fd_step must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when given")
        if self.epochs < 0 or self.l2_weight < 0:
            raise ValueError("epochs and l2_weight must be non-negative")


@dataclass
class DiffeoNet:
    """Feed-forward net: tanh hidden layers, linear output layer."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise DimensionMismatch(f"layer {i}: bias {b.shape} vs weight {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionMismatch(f"layer {i} input width {W.shape[1]} != {self.weights[i - 1].shape[0]}")
        if self.weights[0].shape[1] != 2 * self.weights[-1].shape[0]:
            raise DimensionMismatch("input width must be twice the output width (state and reference)")

    @classmethod
    def init(cls, n: int, hidden=(32, 32), seed: int = 0, zero_output: bool = True):
        rng = np.random.default_rng(seed)
        dims = [2 * n, *hidden, n]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            W = rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i])
            if zero_output and i == len(dims) - 2:
                W = np.zeros_like(W)
            weights.append(W)
            biases.append(np.zeros(dims[i + 1]))
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "DiffeoNet":
        return DiffeoNet([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def weight_norm_sq(self) -> float:
        return float(sum(np.sum(W * W) for W in self.weights))

    # batched evaluation; rows of x and tau are samples
    def forward(self, x, tau):
        s = _stack_input(self, x, tau)
        a = s
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ W.T + b)
        return a @ self.weights[-1].T + self.biases[-1]

    def jvp(self, x, tau, xdot):
        """``(h, (dh/dx) xdot)`` for a batch."""
        s = _stack_input(self, x, tau)
        d = np.zeros_like(s)
        d[:, : self.n] = np.asarray(xdot, dtype=float).reshape(-1, self.n)
        a, da = s, d
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ W.T + b)
            da = (1.0 - a * a) * (da @ W.T)
        return a @ self.weights[-1].T + self.biases[-1], da @ self.weights[-1].T

    def jacobian(self, x, tau):
        """``dh/dx`` with shape ``(batch, n, n)``."""
        s = _stack_input(self, x, tau)
        n = self.n
        a = s
        da = np.zeros((s.shape[0], 2 * n, n))
        da[:, :n, :] = np.eye(n)
        da = np.transpose(da, (0, 2, 1))  # (batch, n dirs, width)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ W.T + b)
            da = (1.0 - a * a)[:, None, :] * (da @ W.T)
        return np.transpose(da @ self.weights[-1].T, (0, 2, 1))

    def to_bytes(self) -> bytes:
        arrays = {"layer_dims": np.array(self.layer_dims, dtype=float)}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        return container.pack_arrays(arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DiffeoNet":
        arrays = container.unpack_arrays(blob)
        n_layers = len(arrays["layer_dims"]) - 1
        return cls([arrays[f"W{i}"] for i in range(n_layers)], [arrays[f"b{i}"] for i in range(n_layers)])

    def to_json(self) -> str:
        return json.dumps({
            "layer_dims": self.layer_dims,
            "activation": "tanh",
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        })


def _stack_input(net, x, tau):
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    n = net.n
    if x.shape[-1] != n or tau.shape[-1] != n:
        raise DimensionMismatch(f"expected state and reference of size {n}, got {x.shape} and {tau.shape}")
    x2, t2 = np.broadcast_arrays(x.reshape(-1, n), tau.reshape(-1, n))
    return np.concatenate([x2, t2], axis=1)


def net_eval(net, x, tau) -> np.ndarray:
    """``h(x, tau)`` for a single state (or a batch, rows as samples)."""
    out = net.forward(x, tau)
    return out[0] if np.ndim(x) == 1 else out


def net_jacobian(net, x, tau) -> np.ndarray:
    J = net.jacobian(x, tau)
    return J[0] if np.ndim(x) == 1 else J


def _residual(net, x, xdot, tau, model: NominalModel):
    A_cl = model.A_cl
    BK = model.B_nom @ model.K_nom
    h, hdot = net.jvp(x, tau, xdot)
    x = np.asarray(x, dtype=float).reshape(-1, net.n)
    xdot = np.asarray(xdot, dtype=float).reshape(-1, net.n)
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1, net.n), x.shape)
    return hdot - h @ A_cl.T - (x @ A_cl.T - xdot) + tau @ BK.T


def diffeo_loss(net, sample, model: NominalModel, l2_weight: float = 0.0) -> float:
    """Squared residual of the conjugacy condition at one ``(x, xdot, tau)`` sample."""
    x, xdot, tau = (np.asarray(v, dtype=float) for v in sample)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xdot)) and np.all(np.isfinite(tau))):
        raise NonFiniteSample("sample contains non-finite values")
    r = _residual(net, x, xdot, tau, model)[0]
    return float(r @ r + l2_weight * net.weight_norm_sq())


def mean_loss(net, x, xdot, tau, model, l2_weight: float = 0.0) -> float:
    r = _residual(net, x, xdot, tau, model)
    return float(np.mean(np.sum(r * r, axis=1)) + l2_weight * net.weight_norm_sq())


def loss_and_grad(net: DiffeoNet, x, xdot, tau, model: NominalModel, l2_weight: float = 0.0):
    """Mean loss over the batch and its gradient w.r.t. every weight and bias."""
    A_cl = model.A_cl
    BK = model.B_nom @ model.K_nom
    n = net.n
    x = np.asarray(x, dtype=float).reshape(-1, n)
    xdot = np.asarray(xdot, dtype=float).reshape(-1, n)
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1, n), x.shape)
    batch = x.shape[0]

    s = np.concatenate([x, tau], axis=1)
    d = np.concatenate([xdot, np.zeros_like(tau)], axis=1)
    acts, tans, pre_tans = [s], [d], [None]
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.tanh(acts[-1] @ W.T + b)
        zt = tans[-1] @ W.T
        pre_tans.append(zt)
        tans.append((1.0 - a * a) * zt)
        acts.append(a)
    W_out = net.weights[-1]
    h = acts[-1] @ W_out.T + net.biases[-1]
    hdot = tans[-1] @ W_out.T
    r = hdot - h @ A_cl.T - (x @ A_cl.T - xdot) + tau @ BK.T
    loss = float(np.mean(np.sum(r * r, axis=1)) + l2_weight * net.weight_norm_sq())

    g = 2.0 * r / batch           # dL/d(hdot)
    g_h = -g @ A_cl               # dL/dh
    grads_W = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    grads_W[-1] = g_h.T @ acts[-1] + g.T @ tans[-1]
    grads_b[-1] = g_h.sum(axis=0)
    delta_a = g_h @ W_out
    delta_t = g @ W_out
    for i in range(len(net.weights) - 2, -1, -1):
        a, zt = acts[i + 1], pre_tans[i + 1]
        sp = 1.0 - a * a
        # a = tanh(z): da/dz = sp, d(sp * zdot)/dz = -2 a sp zdot
        delta_z = delta_a * sp + delta_t * (-2.0 * a * sp * zt)
        delta_zt = delta_t * sp
        grads_W[i] = delta_z.T @ acts[i] + delta_zt.T @ tans[i]
        grads_b[i] = delta_z.sum(axis=0)
        delta_a = delta_z @ net.weights[i]
        delta_t = delta_zt @ net.weights[i]
    if l2_weight:
        grads_W = [gW + 2.0 * l2_weight * W for gW, W in zip(grads_W, net.weights)]
    return loss, grads_W, grads_b


def fit_diffeomorphism(x, xdot, tau, model: NominalModel, cfg: DiffeoTrainConfig,
                       warm_start: DiffeoNet | None = None):
    """Mini-batch gradient descent on the mean conjugacy loss.

    Returns ``(net, history)`` where ``history`` holds the full-data loss
    before training and after every epoch.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise EmptyDataset("no samples to fit the diffeomorphism on")
    n = model.n
    x = x.reshape(-1, n)
    xdot = np.asarray(xdot, dtype=float).reshape(-1, n)
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1, n), x.shape).copy()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xdot)) and np.all(np.isfinite(tau))):
        raise NonFiniteSample("training data contains non-finite values")
    if warm_start is not None:
        if warm_start.n != n:
            raise DimensionMismatch(f"warm start has output size {warm_start.n}, model has {n}")
        net = warm_start.copy()
    else:
        net = DiffeoNet.init(n, cfg.hidden, seed=cfg.seed)
    if cfg.epochs == 0:
        return net, [mean_loss(net, x, xdot, tau, model, cfg.l2_weight)]

    rng = np.random.default_rng(cfg.seed)
    history = [mean_loss(net, x, xdot, tau, model, cfg.l2_weight)]
    total = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(total)
        for start in range(0, total, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gW, gb = loss_and_grad(net, x[idx], xdot[idx], tau[idx], model, cfg.l2_weight)
            if cfg.grad_clip is not None:
                norm = np.sqrt(sum(np.sum(g * g) for g in gW) + sum(np.sum(g * g) for g in gb))
                if norm > cfg.grad_clip:
                    gW = [g * (cfg.grad_clip / norm) for g in gW]
                    gb = [g * (cfg.grad_clip / norm) for g in gb]
            for i in range(len(net.weights)):
                net.weights[i] -= cfg.learning_rate * gW[i]
                net.biases[i] -= cfg.learning_rate * gb[i]
        epoch_loss = mean_loss(net, x, xdot, tau, model, cfg.l2_weight)
        if not np.isfinite(epoch_loss):
            raise DivergedTraining("training loss became non-finite; lower the learning rate")
        history.append(epoch_loss)
    return net, history


@dataclass
class NormalizedDiffeo:
    """``h(x, tau) - h(0, tau0) - (dh/dx)(0, tau0) x``: zero value and slope at the fixed point."""

    net: object
    tau0: np.ndarray
    offset: np.ndarray = field(init=False)
    slope: np.ndarray = field(init=False)

    def __post_init__(self):
        self.tau0 = np.asarray(self.tau0, dtype=float)
        zero = np.zeros(self.net.n)
        self.offset = self.net.forward(zero, self.tau0)[0]
        self.slope = self.net.jacobian(zero, self.tau0)[0]

    @property
    def n(self) -> int:
        return self.net.n

    def forward(self, x, tau):
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        return self.net.forward(x, tau) - self.offset - x @ self.slope.T

    def jacobian(self, x, tau):
        return self.net.jacobian(x, tau) - self.slope

    def jvp(self, x, tau, xdot):
        h, hdot = self.net.jvp(x, tau, xdot)
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        xdot = np.asarray(xdot, dtype=float).reshape(-1, self.n)
        return h - self.offset - x @ self.slope.T, hdot - xdot @ self.slope.T

    def to_arrays(self, prefix="h_") -> dict:
        net = self.net
        while isinstance(net, NormalizedDiffeo):  # re-normalizing is idempotent up to rounding
            net = net.net
        out = {prefix + k: v for k, v in container.unpack_arrays(net.to_bytes()).items()}
        out[prefix + "tau0"] = self.tau0
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix="h_") -> "NormalizedDiffeo":
        n_layers = len(arrays[prefix + "layer_dims"]) - 1
        net = DiffeoNet([arrays[f"{prefix}W{i}"] for i in range(n_layers)],
                        [arrays[f"{prefix}b{i}"] for i in range(n_layers)])
        return cls(net, arrays[prefix + "tau0"])


def normalize_diffeo(net, tau0) -> NormalizedDiffeo:
    return NormalizedDiffeo(net, tau0)


@dataclass(frozen=True)
class ScalingMap:
    """Coordinate-wise scaling ``y_i / r_i`` of a cube of radii ``r`` onto the unit cube."""

    radius: np.ndarray

    def __call__(self, y):
        return np.asarray(y, dtype=float) / self.radius

    def inverse(self, s):
        return np.asarray(s, dtype=float) * self.radius


SCALING_MARGIN = 1.05
SCALING_FLOOR = 1e-6


def fit_scaling(samples) -> ScalingMap:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise EmptyDataset("no samples to fit the scaling on")
    samples = samples.reshape(samples.shape[0], -1) if samples.ndim > 1 else samples.reshape(1, -1)
    r = np.max(np.abs(samples), axis=0) * SCALING_MARGIN
    return ScalingMap(np.maximum(r, SCALING_FLOOR))
