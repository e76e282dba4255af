# tests/test_cli.py
import json

import pandas as pd
import pytest

from app.cli import EXIT_INPUT, EXIT_OK, EXIT_UNCONVERGED, main
from app.services.io import parse_track_file
from app.settings import Settings

CROSSING_TOML = """
[graph]
alphas = [1.0, 0.5]

[pipeline]
build_tracklets = true
"""


@pytest.fixture
def settings():
    return Settings(log_level="WARNING", workers=1)


@pytest.fixture
def crossing_files(tmp_path, settings):
    dets, gt = tmp_path / "dets.csv", tmp_path / "gt.csv"
    code = main(["synth", "--scenario", "crossing", "--seed", "0", "--out-dets", str(dets), "--out-gt", str(gt)], settings)
    assert code == EXIT_OK
    config = tmp_path / "crossing.toml"
    config.write_text(CROSSING_TOML)
    return dets, gt, config


def test_synth_offline_eval(tmp_path, capsys, settings, crossing_files):
    dets, gt, config = crossing_files
    out, trace = tmp_path / "tracks.csv", tmp_path / "trace.csv"
    code = main([
        "offline", "--dets", str(dets), "--gt", str(gt), "--config", str(config),
        "--out", str(out), "--energy-trace", str(trace),
    ], settings)
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["switches"] == 0
    assert len(parse_track_file(out).tracks) == 2
    assert list(pd.read_csv(trace).columns) == ["iter", "objective"]

    code = main(["eval", "--tracks", str(out), "--gt", str(gt), "--match", "dist:20"], settings)
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["mota"] == pytest.approx(1.0)
    assert report["motp_kind"] == "distance"


def test_online_writes_stream_and_checkpoint(tmp_path, settings):
    dets, gt = tmp_path / "dets.csv", tmp_path / "gt.csv"
    main(["synth", "--scenario", "parallel", "--out-dets", str(dets), "--out-gt", str(gt)], settings)
    config = tmp_path / "online.toml"
    config.write_text("[online]\nimage_bounds = [0, 0, 1000, 700]\n")
    stream, ckpt, out = tmp_path / "stream.csv", tmp_path / "state.npz", tmp_path / "tracks.csv"
    code = main([
        "online", "--dets", str(dets), "--config", str(config), "--window", "10",
        "--stream-out", str(stream), "--checkpoint", str(ckpt), "--out", str(out),
    ], settings)
    assert code == EXIT_OK
    df = pd.read_csv(stream)
    assert list(df.columns) == ["frame", "node_id", "track_id"]
    assert len(df) == 240
    assert ckpt.exists() and out.exists()


def test_bad_config_exits_2(tmp_path, settings, crossing_files):
    dets, _, _ = crossing_files
    config = tmp_path / "bad.toml"
    config.write_text("[graph]\nwindoww = 3\n")
    assert main(["offline", "--dets", str(dets), "--config", str(config), "--out", str(tmp_path / "o.csv")], settings) == EXIT_INPUT


def test_missing_detections_exit_2(tmp_path, settings):
    code = main(["offline", "--dets", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.csv")], settings)
    assert code == EXIT_INPUT


def test_malformed_detections_exit_2(tmp_path, settings):
    dets = tmp_path / "dets.csv"
    dets.write_text("0,-1,abc,1,2,2,0.9\n")
    assert main(["online", "--dets", str(dets), "--out", str(tmp_path / "o.csv")], settings) == EXIT_INPUT


def test_unconverged_runs_exit_3_but_write_outputs(tmp_path, settings, crossing_files):
    dets, _, config = crossing_files
    config.write_text(CROSSING_TOML + "\n[nodewise]\nt_con = 1\n")
    out = tmp_path / "tracks.csv"
    code = main(["offline", "--dets", str(dets), "--config", str(config), "--out", str(out)], settings)
    assert code == EXIT_UNCONVERGED
    assert out.exists()
