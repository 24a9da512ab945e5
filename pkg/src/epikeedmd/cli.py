"""Command-line runner: ``epikeedmd {land,campaign,study,replay}``.

Exit codes: 0 success, 1 replay mismatch, 2 configuration error,
3 runtime failure (divergence or aborted campaign), 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import config as config_mod
from . import report
from .episodic import episodic_learn, make_task, single_landing
from .errors import ConfigInvalid, KeedmdError

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3, 4
CONFIG_ECHO = "config.ini"

log = logging.getLogger("epikeedmd")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="configuration file (defaults are embedded)")
    p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
    p.add_argument("--episodes", type=int, help="number of learning episodes")
    p.add_argument("--quiet", action="store_true", help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epikeedmd", description="Episodic Koopman learning for multirotor landing")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("land", help="one landing with the nominal controller"))
    _common(sub.add_parser("campaign", help="one episodic learning campaign"))
    st = sub.add_parser("study", help="campaigns over several seeds, mean and std per episode")
    _common(st)
    st.add_argument("--seeds", help="comma-separated seeds (overrides [run] seeds)")
    st.add_argument("--jobs", type=int, default=1, help="worker processes")
    rp = sub.add_parser("replay", help="re-run a finished run and compare its CSV/JSON byte for byte")
    rp.add_argument("run_dir", help="directory written by land, campaign or study")
    rp.add_argument("--out", metavar="DIR", help="where to write the replay (default RUN_DIR/replay)")
    rp.add_argument("--quiet", action="store_true")
    return parser


def load_config(args, env=None) -> config_mod.CampaignConfig:
    cfg = config_mod.load(args.config, env) if getattr(args, "config", None) else config_mod.loads("", env)
    over = {}
    if getattr(args, "seed", None) is not None:
        over.setdefault("run", {})["seed"] = args.seed
    if getattr(args, "out", None):
        over.setdefault("run", {})["out"] = args.out
    if getattr(args, "seeds", None):
        try:
            seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
        except ValueError:
            raise ConfigInvalid("seeds", f"--seeds {args.seeds!r} is not a comma-separated list of integers") from None
        over.setdefault("run", {})["seeds"] = seeds
    if getattr(args, "episodes", None) is not None:
        over["learning"] = {"episodes": args.episodes}
    return cfg.with_overrides(**over) if over else cfg


def _say(quiet, *msg, **kw):
    if not quiet:
        print(*msg, flush=True, **kw)


def _result_config(cfg) -> dict:
    # output location and figure switch do not affect results; keep them out of the JSON
    d = cfg.to_dict()
    d["run"] = {k: v for k, v in d["run"].items() if k not in ("out", "figures")}
    return d


def _task_consts(cfg):
    task = make_task(cfg)
    return task.setpoint, task.u_hover, (cfg.task.u_min, cfg.task.u_max)


def write_campaign(result, cfg, out_dir, command="campaign") -> None:
    report.ensure_dir(out_dir)
    setpoint, u_hover, bounds = _task_consts(cfg)
    for e, ds in enumerate(result.evaluations):
        report.write_text(os.path.join(out_dir, f"episode_{e}.csv"),
                          report.trajectory_csv(ds, setpoint, u_hover, n_stages=e))
    report.write_text(os.path.join(out_dir, "report.json"),
                      report.to_json(report.campaign_report(result, _result_config(cfg), command)))
    report.write_text(os.path.join(out_dir, "summary.txt"), report.summary_table(result.metrics))
    report.write_text(os.path.join(out_dir, CONFIG_ECHO), config_mod.dumps(cfg))
    if cfg.run.figures and result.evaluations:
        report.plot_landings(result.evaluations, setpoint, u_hover, os.path.join(out_dir, "landings.png"), bounds)
        report.plot_campaign_metrics(result.metrics, os.path.join(out_dir, "metrics.png"))


def cmd_land(cfg, quiet) -> int:
    out = report.ensure_dir(cfg.run.out)
    ds, met = single_landing(cfg, cfg.run.seed)
    setpoint, u_hover, bounds = _task_consts(cfg)
    report.write_text(os.path.join(out, "land.csv"), report.trajectory_csv(ds, setpoint, u_hover, n_stages=0))
    rep = {"command": "land", "seed": cfg.run.seed, "completed": not ds.extras["diverged"],
           "error": "", "config": _result_config(cfg), "episodes": [met]}
    report.write_text(os.path.join(out, "report.json"), report.to_json(rep))
    report.write_text(os.path.join(out, "summary.txt"), report.summary_table([met]))
    report.write_text(os.path.join(out, CONFIG_ECHO), config_mod.dumps(cfg))
    if cfg.run.figures:
        report.plot_landings([ds], setpoint, u_hover, os.path.join(out, "landing.png"), bounds, labels=["nominal"])
    _say(quiet, report.summary_table([met]), end="")
    return EXIT_RUNTIME if ds.extras["diverged"] else EXIT_OK


def _progress(quiet):
    def cb(e, met):
        _say(quiet, f"episode {e}: tracking error {met['tracking_error']:.4f}, "
                    f"effort {met['control_effort']:.4f}, min altitude {met['min_altitude']:.4f}")
    return cb


def cmd_campaign(cfg, quiet) -> int:
    t0 = time.perf_counter()
    res = episodic_learn(cfg, cfg.run.seed, progress=_progress(quiet))
    write_campaign(res, cfg, cfg.run.out)
    _say(quiet, report.summary_table(res.metrics), end="")
    _say(quiet, f"wrote {cfg.run.out} in {time.perf_counter() - t0:.1f} s")
    if not res.completed:
        print(f"campaign aborted: {res.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _study_worker(payload):
    text, seed = payload
    cfg = config_mod.loads(text, env={})
    res = episodic_learn(cfg, seed)
    res.controller = None  # not picklable cheaply and not needed downstream
    return res


def cmd_study(cfg, quiet, jobs: int = 1) -> int:
    out = report.ensure_dir(cfg.run.out)
    text = config_mod.dumps(cfg)
    payloads = [(text, s) for s in cfg.run.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_study_worker, payloads))
    else:
        results = []
        for p in payloads:
            results.append(_study_worker(p))
            _say(quiet, f"seed {p[1]}: " + ", ".join(f"{m['tracking_error']:.4f}" for m in results[-1].metrics))
    for res in results:
        write_campaign(res, cfg.with_overrides(run={"seed": res.seed}), os.path.join(out, f"seed_{res.seed}"))
    rep = report.study_report(results, _result_config(cfg))
    report.write_text(os.path.join(out, "study.json"), report.to_json(rep))
    report.write_text(os.path.join(out, "summary.txt"), report.study_table(rep))
    report.write_text(os.path.join(out, CONFIG_ECHO), text)
    if cfg.run.figures and rep["episodes"]:
        report.plot_study(rep, os.path.join(out, "study.png"))
    _say(quiet, report.study_table(rep), end="")
    return EXIT_OK if all(r.completed for r in results) else EXIT_RUNTIME


def _artifacts(path) -> list:
    found = []
    for root, _, files in os.walk(path):
        if os.path.basename(root) == "replay" or "/replay/" in root + "/":
            continue
        for f in files:
            if f.endswith((".csv", ".json")):
                found.append(os.path.relpath(os.path.join(root, f), path))
    return sorted(found)


def cmd_replay(run_dir, out, quiet) -> int:
    with open(os.path.join(run_dir, CONFIG_ECHO), encoding="utf-8") as fh:
        text = fh.read()
    cfg = config_mod.loads(text, env={})
    command = "study" if os.path.exists(os.path.join(run_dir, "study.json")) else None
    if command is None:
        import json
        with open(os.path.join(run_dir, "report.json"), encoding="utf-8") as fh:
            command = json.load(fh)["command"]
    out = out or os.path.join(run_dir, "replay")
    cfg = cfg.with_overrides(run={"out": out, "figures": False})
    code = {"land": lambda: cmd_land(cfg, True), "campaign": lambda: cmd_campaign(cfg, True),
            "study": lambda: cmd_study(cfg, True)}[command]()
    if code == EXIT_CONFIG or code == EXIT_IO:
        return code
    mismatched = []
    for rel in _artifacts(run_dir):
        a, b = os.path.join(run_dir, rel), os.path.join(out, rel)
        same = os.path.exists(b) and open(a, "rb").read() == open(b, "rb").read()
        _say(quiet, f"{'identical' if same else 'DIFFERENT'}  {rel}")
        if not same:
            mismatched.append(rel)
    return EXIT_MISMATCH if mismatched else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args.run_dir, args.out, args.quiet)
        cfg = load_config(args)
        if args.command == "land":
            return cmd_land(cfg, args.quiet)
        if args.command == "campaign":
            return cmd_campaign(cfg, args.quiet)
        return cmd_study(cfg, args.quiet, args.jobs)
    except ConfigInvalid as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeedmdError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
