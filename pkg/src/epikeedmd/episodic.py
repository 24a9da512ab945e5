"""Episodic KEEDMD on the altitude-landing task.

The learning pipeline works in set-point coordinates: the state is
``x - (setpoint, 0)`` and the input is the thrust deviation ``T - u_hover``.
Each episode runs the incumbent composite controller with Brownian excitation,
refits the conjugacy (warm-started), re-lifts every episode collected so far
with the new eigenfunctions, fits a centered lifted model and stacks one more
weighted MPC on top of the incumbent.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import CampaignConfig
from .data import EpisodeDataset, differentiate  # noqa: F401  (re-exported)
from .diffeo import DiffeoTrainConfig
from .eigfunc import construct_eigenfunctions
from .errors import KeedmdError, SimDiverged
from .keedmd import LiftedModel, build_lifted_dataset, discretize_zoh, fit_lifted_model
from .koopman_linear import NominalModel
from .mpc import LiftedMPC, MPCConfig
from .qp import QPSettings
from .sim import DroneParams, DroneSim, nominal_model

log = logging.getLogger(__name__)


def brownian_noise(T_s: int, sigma: float, seed=None, m: int = 1) -> np.ndarray:
    """Random walk ``u_k = u_(k-1) + sigma xi_k`` with ``u_0 = 0``; shape ``(m, T_s)``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = np.zeros((m, T_s))
    if sigma == 0 or T_s < 2:
        return out
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    steps = sigma * rng.standard_normal((m, T_s - 1))
    out[:, 1:] = np.cumsum(steps, axis=1)
    return out


class LinearFeedback:
    """``u = K (x - tau)`` clipped to the input box."""

    def __init__(self, K, u_min, u_max):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.u_min, self.u_max = np.asarray(u_min, float), np.asarray(u_max, float)

    def reset(self):
        pass

    def __call__(self, x, tau_window, u_last=None):
        u = self.K @ (np.asarray(x, float) - np.asarray(tau_window, float)[:, 0])
        return np.clip(u, self.u_min, self.u_max), {"iterations": 0, "status": "Solved"}


class NominalMPC:
    """MPC on the nominal linear model; its decision is the full input."""

    def __init__(self, model: NominalModel, cfg: MPCConfig):
        self.mpc = LiftedMPC(discretize_zoh(LiftedModel.from_nominal(model), cfg.dt), cfg)
        self.reset()

    def reset(self):
        self.u_last = np.zeros(self.mpc.cfg.m)
        self.mpc._last = None

    def __call__(self, x, tau_window, u_last=None):
        u, diag = self.mpc.step(x, tau_window, None, self.u_last, warm=True)
        self.u_last = u
        return u, diag


@dataclass
class Stage:
    weight: float
    model: LiftedModel
    cfg: MPCConfig
    controller: LiftedMPC = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("stage weight must lie in [0, 1]")
        self.controller = LiftedMPC(self.model, self.cfg)
        self.u_last = np.zeros(self.cfg.m)

    def reset(self):
        self.u_last = np.zeros(self.cfg.m)
        self.controller._last = None


@dataclass
class CompositeController:
    """``u = u0 + sum_j w_j u_j`` with nested input boxes, clipped to ``[u_min, u_max]``."""

    u0: object
    u_min: np.ndarray
    u_max: np.ndarray
    stages: list = field(default_factory=list)

    def __post_init__(self):
        self.u_min = np.atleast_1d(np.asarray(self.u_min, dtype=float))
        self.u_max = np.atleast_1d(np.asarray(self.u_max, dtype=float))

    @property
    def weights(self) -> list:
        return [s.weight for s in self.stages]

    def add_stage(self, stage: Stage) -> None:
        if self.stages and stage.weight < self.stages[-1].weight:
            raise ValueError("stage weights must be non-decreasing")
        self.stages.append(stage)

    def reset(self):
        self.u0.reset()
        for s in self.stages:
            s.reset()


def _plan(u_first, diag, n_steps):
    """Planned input sequence ``(m, n_steps)`` with the applied value in front."""
    plan = diag.get("u_plan") if isinstance(diag, dict) else None
    if plan is None:
        return np.repeat(u_first[:, None], n_steps, axis=1)
    plan = np.asarray(plan, dtype=float).reshape(len(u_first), -1).copy()
    plan[:, 0] = u_first
    return plan


def compose_control(ctrl: CompositeController, x, tau_window, t: float = 0.0, bounds=None):
    """Evaluate ``u0`` and then every stage in order; returns ``(u_total, breakdown)``.

    Each stage's input box is shifted by the summed plans of the controllers
    before it, step by step over the horizon (held constant when the incumbent
    has no plan). A stage whose solve raises or fails is dropped for this tick
    and the accumulated command of the healthy stages before it is used.
    """
    u_min, u_max = (ctrl.u_min, ctrl.u_max) if bounds is None else map(np.asarray, bounds)
    u_acc, diag0 = ctrl.u0(x, tau_window)
    u_acc = np.asarray(u_acc, dtype=float).copy()
    u0_val = u_acc.copy()
    n_steps = np.asarray(tau_window).reshape(len(np.atleast_1d(x)), -1).shape[1]
    plan_acc = _plan(u_acc, diag0, n_steps)
    parts, iters, failed = [], int(diag0.get("iterations", 0)), None
    for j, st in enumerate(ctrl.stages):
        try:
            u_j, dg = st.controller.step(x, tau_window, plan_acc, st.u_last, warm=True)
            if dg["status"] == "PrimalInfeasible":
                raise KeedmdError("stage QP reported primal infeasibility")
        except (KeedmdError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("t=%.3f stage %d failed (%s); using stages before it", t, j + 1, exc)
            failed = j
            break
        iters += int(dg["iterations"])
        st.u_last = u_j
        parts.append(st.weight * u_j)
        u_acc = u_acc + st.weight * u_j
        plan_acc = plan_acc + st.weight * _plan(u_j, dg, n_steps)
    parts += [np.zeros_like(u_acc)] * (len(ctrl.stages) - len(parts))
    u_total = np.clip(u_acc, u_min, u_max)
    clipped = bool(np.any(u_total != u_acc))
    if clipped:
        log.debug("t=%.3f composed command clipped from %s", t, u_acc)
    return u_total, {"u0": u0_val, "stages": parts, "iterations": iters, "clipped": clipped, "failed_stage": failed}


@dataclass
class Task:
    """Landing task in set-point coordinates."""

    setpoint: np.ndarray
    u_hover: float
    du_min: np.ndarray
    du_max: np.ndarray
    dt: float
    steps: int

    def tau(self, t) -> np.ndarray:
        """Reference in set-point coordinates (a constant fixed point)."""
        return np.zeros(2)

    def window(self, t, N_p: int, dt_plan: float) -> np.ndarray:
        return np.zeros((2, N_p))


def make_task(cfg: CampaignConfig) -> Task:
    t = cfg.task
    steps = int(round(t.duration / t.control_dt))
    return Task(np.array([t.setpoint, 0.0]), t.u_hover, np.array([t.u_min - t.u_hover]),
                np.array([t.u_max - t.u_hover]), t.control_dt, steps)


def make_params(cfg: CampaignConfig) -> DroneParams:
    s = cfg.sim
    return DroneParams(u_hover=cfg.task.u_hover, gravity=s.gravity, rotor_radius=s.rotor_radius,
                       ground_gain=s.ground_gain, min_altitude_clamp=s.min_altitude_clamp,
                       drag_coeff=s.drag_coeff)


def make_mpc_config(cfg: CampaignConfig, task: Task) -> MPCConfig:
    c = cfg.control
    x_min = np.array([cfg.task.x_min - cfg.task.setpoint, -np.inf])
    return MPCConfig(Q=np.diag(c.q), R=np.atleast_2d(c.r), N_p=c.horizon, dt=c.dt,
                     u_min=task.du_min, u_max=task.du_max, x_min=x_min, x_max=None,
                     soft_penalty=c.soft_penalty, alpha_R=c.alpha_r,
                     solver=QPSettings(rho=c.qp_rho, max_iter=c.qp_max_iter))


def make_nominal(cfg: CampaignConfig, task: Task):
    """Returns ``(NominalModel, u0)``; the model's gain is the LQR proxy."""
    params = make_params(cfg)
    model = nominal_model(params, np.diag(cfg.control.lqr_q), np.atleast_2d(cfg.control.r))
    if cfg.control.nominal == "lqr":
        u0 = LinearFeedback(model.K_nom, task.du_min, task.du_max)
    else:
        u0 = NominalMPC(model, make_mpc_config(cfg, task))
    return model, u0


def sample_x0(cfg: CampaignConfig, rng) -> np.ndarray:
    lo_p, hi_p = cfg.task.x0_altitude
    lo_v, hi_v = cfg.task.x0_velocity
    return np.array([rng.uniform(lo_p, hi_p), rng.uniform(lo_v, hi_v)])


def run_episode(sim: DroneSim, ctrl: CompositeController, task: Task, x0s, sigma: float = 0.0,
                rng=None, N_p: int = 20, dt_plan: float = 0.02) -> EpisodeDataset:
    """Run one closed-loop repetition per entry of ``x0s`` and concatenate them.

    Data are in set-point coordinates; raw-unit logs for export are kept in
    ``extras["log"]``. A divergence aborts the episode but keeps the samples
    gathered so far (``extras["diverged"]``).
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    parts, logs, diverged = [], [], False
    for r, x0 in enumerate(x0s):
        noise = brownian_noise(task.steps, sigma, rng, m=1)
        ctrl.reset()
        sim.reset(x0)
        rows = {k: [] for k in ("x", "u", "u_nom", "u_noise", "tau", "t", "clipped", "stages", "iters")}
        for k in range(task.steps):
            t = k * task.dt
            xs = sim.observe() - task.setpoint
            tau_k = task.tau(t)
            u_nom, info = compose_control(ctrl, xs, task.window(t, N_p, dt_plan), t)
            u_raw = u_nom + noise[:, k]
            u = np.clip(u_raw, task.du_min, task.du_max)
            rows["x"].append(xs)
            rows["u"].append(u)
            rows["u_nom"].append(u_nom)
            rows["u_noise"].append(u - u_nom)
            rows["tau"].append(tau_k)
            rows["t"].append(t)
            rows["clipped"].append(bool(info["clipped"] or np.any(u != u_raw)))
            rows["stages"].append([float(s[0]) for s in info["stages"]])
            rows["iters"].append(info["iterations"])
            try:
                sim.step(float(u[0]) + task.u_hover, task.dt)
            except SimDiverged as exc:
                log.error("repetition %d diverged at t=%.2f: %s", r, t, exc)
                diverged = True
                break
        if len(rows["t"]) >= 3:
            ds = EpisodeDataset(np.array(rows["x"]), np.array(rows["u"]), np.array(rows["u_nom"]),
                                np.array(rows["u_noise"]), np.array(rows["tau"]), np.array(rows["t"]),
                                task.dt, segment=np.full(len(rows["t"]), r), clipped=np.array(rows["clipped"]))
            parts.append(ds)
            logs.append({"stages": np.array(rows["stages"]).reshape(len(rows["t"]), -1),
                         "iters": np.array(rows["iters"])})
        if diverged:
            break
    if not parts:
        raise SimDiverged("episode produced no usable samples")
    out = EpisodeDataset.concatenate(parts)
    out.extras["log"] = {"stages": np.concatenate([l["stages"] for l in logs]),
                         "iters": np.concatenate([l["iters"] for l in logs])}
    out.extras["diverged"] = diverged
    return out


def episode_metrics(ds: EpisodeDataset, task: Task, x_min_shifted: float) -> dict:
    """Tracking-error integral, control effort (raw thrust) and constraint-active time."""
    dt = ds.dt
    err = float(np.sum(np.abs(ds.x[:, 0] - ds.tau[:, 0])) * dt)
    thrust = ds.u[:, 0] + task.u_hover
    effort = float(np.sum(np.abs(thrust)) * dt)
    at_bound = (ds.u[:, 0] <= task.du_min[0] + 1e-9) | (ds.u[:, 0] >= task.du_max[0] - 1e-9)
    return {
        "tracking_error": err,
        "control_effort": effort,
        "constraint_active_s": float(np.sum(at_bound) * dt),
        "min_altitude": float(np.min(ds.x[:, 0]) + task.setpoint[0]),
        "altitude_violation": float(max(0.0, x_min_shifted - np.min(ds.x[:, 0]))),
        "thrust_min": float(np.min(thrust)),
        "thrust_max": float(np.max(thrust)),
        "samples": len(ds),
    }


@dataclass
class CampaignResult:
    controller: CompositeController
    metrics: list
    evaluations: list          # EpisodeDataset per evaluation landing (episode 0..N)
    training: list             # EpisodeDataset per learning episode
    seed: int
    completed: bool = True
    error: str = ""
    timings: dict = field(default_factory=dict)


def episodic_learn(cfg: CampaignConfig, seed: int | None = None, progress=None) -> CampaignResult:
    """Run a full campaign; evaluation landings follow each episode (episode 0 = incumbent)."""
    seed = cfg.run.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    rng_x0, rng_noise, rng_eval = (np.random.default_rng(s) for s in ss.spawn(3))
    task = make_task(cfg)
    mcfg = make_mpc_config(cfg, task)
    model, u0 = make_nominal(cfg, task)
    ctrl = CompositeController(u0, task.du_min, task.du_max)
    sim = DroneSim(make_params(cfg), inner_dt=cfg.sim.inner_dt,
                   measurement_noise=cfg.sim.measurement_noise, seed=seed)
    x_eval = sample_x0(cfg, rng_eval)
    x_floor = cfg.task.x_min - cfg.task.setpoint
    dcfg = DiffeoTrainConfig(learning_rate=cfg.diffeo.learning_rate, epochs=cfg.diffeo.epochs,
                             batch_size=cfg.diffeo.batch_size, l2_weight=cfg.diffeo.l2_weight,
                             seed=seed, hidden=tuple(cfg.diffeo.hidden),
                             grad_clip=cfg.diffeo.grad_clip)
    weights = cfg.stage_weights()
    tau0 = np.zeros(2)
    res = CampaignResult(ctrl, [], [], [], seed)
    t_start = time.perf_counter()

    def evaluate(e):
        ds = run_episode(sim, ctrl, task, [x_eval], 0.0, rng_noise, mcfg.N_p, mcfg.dt)
        met = episode_metrics(ds, task, x_floor)
        met.update(episode=e, stages=len(ctrl.stages), weights=list(ctrl.weights))
        res.evaluations.append(ds)
        res.metrics.append(met)
        if progress:
            progress(e, met)
        if ds.extras["diverged"]:
            raise SimDiverged(f"evaluation landing of episode {e} diverged")

    gain = model.B_nom if cfg.learning.input_gain == "nominal" else None
    prior = {"data": "data", "nominal": model.A_cl, "zero": None}[cfg.learning.shrink_to]
    warm, raw = None, []
    try:
        evaluate(0)
        for e in range(1, cfg.learning.episodes + 1):
            x0s = [sample_x0(cfg, rng_x0) for _ in range(cfg.task.repetitions)]
            D_x = run_episode(sim, ctrl, task, x0s, cfg.learning.noise_sigma, rng_noise, mcfg.N_p, mcfg.dt)
            res.training.append(D_x)
            raw.append(D_x)
            basis, warm, _ = construct_eigenfunctions(model, D_x.x, D_x.xdot(), D_x.tau,
                                                      cfg.learning.max_degree, dcfg, warm=warm, tau0=tau0)
            D_all = EpisodeDataset.concatenate(raw)
            D_z = build_lifted_dataset(D_all, basis)
            M = fit_lifted_model(D_z, basis, model, centered=cfg.learning.centered,
                                 l1=cfg.learning.l1, l2=cfg.learning.l2, controller_index=e,
                                 state_input_gain=gain, state_prior=prior)
            Md = discretize_zoh(M, mcfg.dt)
            ctrl.add_stage(Stage(weights[e - 1], Md, mcfg))
            evaluate(e)
    except KeedmdError as exc:
        log.error("campaign seed %d aborted: %s", seed, exc)
        res.completed, res.error = False, f"{type(exc).__name__}: {exc}"
    res.timings["total_s"] = time.perf_counter() - t_start
    return res


def single_landing(cfg: CampaignConfig, seed: int | None = None):
    """One noise-free landing with the nominal controller from the seeded evaluation start.

    Uses the same start as episode 0 of ``episodic_learn`` with the same seed.
    Returns ``(dataset, metrics)``.
    """
    seed = cfg.run.seed if seed is None else seed
    rng_eval = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    task = make_task(cfg)
    mcfg = make_mpc_config(cfg, task)
    _, u0 = make_nominal(cfg, task)
    ctrl = CompositeController(u0, task.du_min, task.du_max)
    sim = DroneSim(make_params(cfg), inner_dt=cfg.sim.inner_dt,
                   measurement_noise=cfg.sim.measurement_noise, seed=seed)
    ds = run_episode(sim, ctrl, task, [sample_x0(cfg, rng_eval)], 0.0, None, mcfg.N_p, mcfg.dt)
    met = episode_metrics(ds, task, cfg.task.x_min - cfg.task.setpoint)
    met.update(episode=0, stages=0, weights=[])
    return ds, met
