import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epikeedmd import cli, config, report
from epikeedmd.container import pack_arrays, unpack_arrays
from epikeedmd.data import EpisodeDataset
from epikeedmd.errors import ConfigInvalid, FormatError

FAST = "[task]\nduration = 1.0\nrepetitions = 2\n[diffeo]\nepochs = 3\n[run]\nfigures = false\n"


def test_empty_config_gives_defaults():
    cfg = config.loads("", env={})
    assert cfg == config.CampaignConfig()
    assert cfg.control.q == (10.0, 0.1) and cfg.task.u_min == 0.3 and cfg.task.u_max == 0.8
    assert cfg.task.x_min == 0.05 and cfg.task.setpoint == 0.05 and cfg.task.repetitions == 3


def test_config_roundtrip():
    cfg = config.loads("[learning]\nepisodes = 2\nweights = 0.25, 1.0\n[run]\nseeds = 3, 1\n", env={})
    assert config.loads(config.dumps(cfg), env={}) == cfg


@settings(max_examples=30, deadline=None)
@given(st.floats(0.31, 0.65), st.floats(0.67, 1.0), st.integers(1, 60), st.floats(1e-6, 1.0))
def test_config_roundtrip_property(u_min, u_max, horizon, l2):
    cfg = config.CampaignConfig().with_overrides(task={"u_min": u_min, "u_max": u_max},
                                                 control={"horizon": horizon}, learning={"l2": l2})
    assert config.loads(config.dumps(cfg), env={}) == cfg


def test_config_errors_name_the_key():
    with pytest.raises(ConfigInvalid) as err:
        config.loads("[task]\nu_min = 0.3\n", env={})
    assert "u_max" in str(err.value)
    with pytest.raises(ConfigInvalid, match="horizon"):
        config.loads("[control]\nhorizon = abc\n", env={})
    with pytest.raises(ConfigInvalid, match="bogus"):
        config.loads("[task]\nbogus = 1\n", env={})
    with pytest.raises(ConfigInvalid, match="shrink_to"):
        config.loads("[learning]\nshrink_to = nowhere\n", env={})


def test_env_override():
    cfg = config.loads("", env={"EPIKEEDMD_TASK_U_MAX": "0.75", "EPIKEEDMD_LEARNING_EPISODES": "1"})
    assert cfg.task.u_max == 0.75 and cfg.learning.episodes == 1


@given(st.dictionaries(st.text("abcxyz_", min_size=1, max_size=6),
                       st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), max_size=6),
                       max_size=4))
def test_container_roundtrip(arrays):
    arrays = {k: np.array(v) for k, v in arrays.items()}
    back = unpack_arrays(pack_arrays(arrays))
    assert set(back) == set(arrays)
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)


def test_container_rejects_garbage():
    with pytest.raises(FormatError):
        unpack_arrays(b"nope")


def _ds(k):
    x = np.arange(2 * k, dtype=float).reshape(k, 2)
    ds = EpisodeDataset(x, np.zeros((k, 1)), np.zeros((k, 1)), np.zeros((k, 1)), np.zeros((k, 2)),
                        np.arange(k) * 0.01, 0.01)
    ds.extras["log"] = {"stages": np.zeros((k, 2)), "iters": np.ones(k, int)}
    return ds


def test_csv_contract():
    head = "t,p_z,v_z,tau_p,tau_v,u_total,u_nom,u_noise,u_stage_1,u_stage_2,thrust_clipped,qp_iters"
    assert report.trajectory_csv(None, [0.05, 0.0], 0.66, n_stages=2) == head + "\n"
    text = report.trajectory_csv(_ds(3), [0.05, 0.0], 0.66)
    lines = text.splitlines()
    assert len(lines) == 4 and lines[0] == head
    assert lines[1].split(",")[1] == repr(0.05)


def test_summary_percent_change():
    mets = [{"tracking_error": 2.0, "control_effort": 1.0, "constraint_active_s": 0.0, "min_altitude": 0.1},
            {"tracking_error": 1.5, "control_effort": 1.1, "constraint_active_s": 0.0, "min_altitude": 0.1}]
    assert report.percent_change([2.0, 1.5]) == [0.0, -25.0]
    assert "-25.00" in report.summary_table(mets)


def _run(argv):
    return cli.main(argv)


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.ini"
    path.write_text(FAST)
    return str(path)


def test_land_and_replay(tmp_path, fast_config, capsys):
    out = tmp_path / "land"
    assert _run(["land", "--config", fast_config, "--out", str(out), "--quiet"]) == 0
    assert sorted(os.listdir(out)) == ["config.ini", "land.csv", "report.json", "summary.txt"]
    assert _run(["replay", str(out), "--quiet"]) == 0


def test_campaign_files_figures_and_replay(tmp_path, fast_config):
    text = open(fast_config).read().replace("figures = false", "figures = true")
    cfg_path = tmp_path / "fig.ini"
    cfg_path.write_text(text)
    out = tmp_path / "camp"
    assert _run(["campaign", "--config", str(cfg_path), "--out", str(out), "--episodes", "1", "--quiet"]) == 0
    files = set(os.listdir(out))
    assert {"episode_0.csv", "episode_1.csv", "report.json", "summary.txt", "landings.png", "metrics.png"} <= files
    rep = json.loads((out / "report.json").read_text())
    assert rep["command"] == "campaign" and len(rep["episodes"]) == 2
    assert _run(["replay", str(out), "--quiet"]) == 0
    # a tampered artifact is reported as a mismatch
    with open(out / "episode_1.csv", "a") as fh:
        fh.write("tampered\n")
    assert _run(["replay", str(out), "--out", str(tmp_path / "again"), "--quiet"]) == 1


def test_study_reports_mean_and_std(tmp_path, fast_config):
    out = tmp_path / "study"
    assert _run(["study", "--config", fast_config, "--out", str(out), "--seeds", "0,1",
                 "--episodes", "1", "--quiet"]) == 0
    rep = json.loads((out / "study.json").read_text())
    assert rep["seeds"] == [0, 1]
    row = rep["episodes"][1]
    per_seed = [rep["per_seed"][s]["tracking_error"][1] for s in ("0", "1")]
    assert row["tracking_error_mean"] == pytest.approx(np.mean(per_seed))
    assert row["tracking_error_std"] == pytest.approx(np.std(per_seed))


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[task]\nu_min = 0.3\n")
    assert _run(["land", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "u_max" in capsys.readouterr().err


def test_io_error_exit_code(tmp_path, fast_config):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert _run(["land", "--config", fast_config, "--out", str(blocker / "sub"), "--quiet"]) == 4
