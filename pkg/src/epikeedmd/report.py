"""Run artifacts: trajectory CSVs, JSON reports, summary tables and figures.

Everything written here is a pure function of the run's data, so two runs with
the same configuration and seed produce byte-identical CSV and JSON files.
Floats are written with ``repr`` (shortest round-trip form); wall-clock
timings never enter a file.
"""
from __future__ import annotations

import io
import json
import os

import numpy as np

from .data import EpisodeDataset

BASE_COLUMNS = ("t", "p_z", "v_z", "tau_p", "tau_v", "u_total", "u_nom", "u_noise")
TAIL_COLUMNS = ("thrust_clipped", "qp_iters")


def csv_header(n_stages: int) -> list:
    return list(BASE_COLUMNS) + [f"u_stage_{j}" for j in range(1, n_stages + 1)] + list(TAIL_COLUMNS)


def _num(v) -> str:
    return repr(float(v))


def trajectory_csv(ds: EpisodeDataset | None, setpoint, u_hover: float, n_stages: int | None = None) -> str:
    """CSV text in raw units: altitude in m, thrust normalized, stage columns weighted.

    ``ds = None`` (or an empty dataset) gives the header line only.
    """
    log = {} if ds is None else ds.extras.get("log", {})
    stages = log.get("stages")
    if n_stages is None:
        n_stages = 0 if stages is None else np.asarray(stages).reshape(len(ds), -1).shape[1]
    buf = io.StringIO()
    buf.write(",".join(csv_header(n_stages)) + "\n")
    if ds is None or len(ds) == 0:
        return buf.getvalue()
    setpoint = np.asarray(setpoint, dtype=float)
    stages = np.zeros((len(ds), n_stages)) if stages is None else np.asarray(stages).reshape(len(ds), -1)
    iters = log.get("iters")
    iters = np.zeros(len(ds), dtype=int) if iters is None else np.asarray(iters)
    for k in range(len(ds)):
        row = [ds.t[k], ds.x[k, 0] + setpoint[0], ds.x[k, 1] + setpoint[1],
               ds.tau[k, 0] + setpoint[0], ds.tau[k, 1] + setpoint[1],
               ds.u[k, 0] + u_hover, ds.u_nom[k, 0] + u_hover, ds.u_noise[k, 0]]
        cells = [_num(v) for v in row] + [_num(v) for v in stages[k, :n_stages]]
        cells += [str(int(bool(ds.clipped[k]))), str(int(iters[k]))]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def percent_change(values) -> list:
    """Change of each entry relative to the first, in percent."""
    values = [float(v) for v in values]
    if not values or values[0] == 0.0:
        return [0.0] * len(values)
    return [100.0 * (v - values[0]) / values[0] for v in values]


def campaign_summary(metrics: list) -> dict:
    err = [m["tracking_error"] for m in metrics]
    eff = [m["control_effort"] for m in metrics]
    return {"tracking_error": err, "control_effort": eff,
            "tracking_error_change_pct": percent_change(err),
            "control_effort_change_pct": percent_change(eff)}


def campaign_report(result, config_dict: dict, command: str = "campaign") -> dict:
    return {
        "command": command,
        "seed": int(result.seed),
        "completed": bool(result.completed),
        "error": result.error,
        "config": config_dict,
        "episodes": result.metrics,
        "summary": campaign_summary(result.metrics),
    }


def study_report(results: list, config_dict: dict) -> dict:
    """Per-episode mean and standard deviation over campaigns (population std)."""
    n_ep = min(len(r.metrics) for r in results) if results else 0
    rows = []
    for e in range(n_ep):
        row = {"episode": e}
        for key in ("tracking_error", "control_effort", "constraint_active_s", "altitude_violation"):
            vals = np.array([r.metrics[e][key] for r in results], dtype=float)
            row[key + "_mean"] = float(vals.mean())
            row[key + "_std"] = float(vals.std())
        rows.append(row)
    means = [r["tracking_error_mean"] for r in rows]
    return {
        "command": "study",
        "seeds": [int(r.seed) for r in results],
        "completed": [bool(r.completed) for r in results],
        "errors": [r.error for r in results],
        "config": config_dict,
        "episodes": rows,
        "tracking_error_change_pct": percent_change(means),
        "per_seed": {str(r.seed): campaign_summary(r.metrics) for r in results},
    }


def summary_table(metrics: list) -> str:
    """Fixed-width table: tracking error, control effort and % change vs episode 0."""
    err = [m["tracking_error"] for m in metrics]
    eff = [m["control_effort"] for m in metrics]
    d_err, d_eff = percent_change(err), percent_change(eff)
    lines = [f"{'episode':>7}  {'track_err':>10}  {'d_err%':>7}  {'effort':>8}  {'d_eff%':>7}"
             f"  {'active_s':>8}  {'min_p':>7}"]
    for e, m in enumerate(metrics):
        lines.append(f"{e:>7d}  {err[e]:>10.4f}  {d_err[e]:>7.2f}  {eff[e]:>8.4f}  {d_eff[e]:>7.2f}"
                     f"  {m['constraint_active_s']:>8.2f}  {m['min_altitude']:>7.4f}")
    return "\n".join(lines) + "\n"


def study_table(report: dict) -> str:
    lines = [f"{'episode':>7}  {'track_err':>18}  {'d_err%':>7}  {'effort':>18}"]
    for row, d in zip(report["episodes"], report["tracking_error_change_pct"]):
        lines.append(f"{row['episode']:>7d}  {row['tracking_error_mean']:>8.4f} +- {row['tracking_error_std']:<6.4f}"
                     f"  {d:>7.2f}  {row['control_effort_mean']:>8.4f} +- {row['control_effort_std']:<6.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})


def plot_landings(datasets: list, setpoint, u_hover: float, path, u_bounds=None, labels=None) -> None:
    """Altitude, accumulated tracking error and thrust for each landing."""
    plt = _pyplot()
    setpoint = np.asarray(setpoint, dtype=float)
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    cmap = plt.get_cmap("viridis")
    for i, ds in enumerate(datasets):
        color = cmap(i / max(1, len(datasets) - 1))
        label = labels[i] if labels else f"episode {i}"
        p = ds.x[:, 0] + setpoint[0]
        err = np.cumsum(np.abs(ds.x[:, 0] - ds.tau[:, 0])) * ds.dt
        axes[0].plot(ds.t, p, color=color, label=label)
        axes[1].plot(ds.t, err, color=color)
        axes[2].plot(ds.t, ds.u[:, 0] + u_hover, color=color, lw=1.0)
    axes[0].axhline(setpoint[0], color="k", ls="--", lw=0.8)
    axes[0].set_ylabel("altitude p_z (m)")
    axes[0].legend(frameon=False)
    axes[1].set_ylabel("accumulated |p_z - tau| (m s)")
    if u_bounds is not None:
        for b in u_bounds:
            axes[2].axhline(b, color="0.5", ls=":", lw=0.8)
    axes[2].set_ylabel("thrust T")
    axes[2].set_xlabel("time (s)")
    for ax in axes:
        ax.spines[["top", "right"]].set_visible(False)
    _save(fig, path)
    plt.close(fig)


def plot_campaign_metrics(metrics: list, path) -> None:
    """Per-episode tracking error and control effort."""
    plt = _pyplot()
    ep = np.arange(len(metrics))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].bar(ep, [m["tracking_error"] for m in metrics], color="tab:blue")
    axes[0].set_ylabel("tracking error (m s)")
    axes[1].bar(ep, [m["control_effort"] for m in metrics], color="tab:orange")
    axes[1].set_ylabel("control effort")
    for ax in axes:
        ax.set_xlabel("episode")
        ax.set_xticks(ep)
        ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_study(report: dict, path) -> None:
    """Mean and standard deviation of the tracking error across campaigns."""
    plt = _pyplot()
    rows = report["episodes"]
    ep = np.array([r["episode"] for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, key, color in ((axes[0], "tracking_error", "tab:blue"), (axes[1], "control_effort", "tab:orange")):
        mean = np.array([r[key + "_mean"] for r in rows])
        std = np.array([r[key + "_std"] for r in rows])
        ax.errorbar(ep, mean, yerr=std, color=color, marker="o", capsize=4)
        ax.set_xlabel("episode")
        ax.set_xticks(ep)
        ax.set_ylabel(key.replace("_", " "))
        ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
