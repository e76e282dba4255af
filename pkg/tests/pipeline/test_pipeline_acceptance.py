# tests/pipeline/test_pipeline_acceptance.py
"""End-to-end runs on the synthetic scenarios."""
import pytest

from app.models.config import PipelineConfig
from app.services.pipeline import track_offline, track_online
from app.services.synth import generate_scenario


def _without_appearance():
    return PipelineConfig().with_updates(graph={"alphas": [1.0, 0.0]})


# ---------- crossing ----------
@pytest.mark.parametrize("solver", ["joint", "nodewise"])
def test_appearance_bridges_the_crossing_gap(solver):
    scenario = generate_scenario("crossing", seed=0)
    result = track_offline(scenario.detections, PipelineConfig(), scenario.ground_truth, solver=solver)
    assert len(result.nodes) == len(scenario.detections)
    assert len(result.tracks.tracks) == 2
    assert result.report.switches == 0
    assert result.report.mota == pytest.approx(1.0)
    assert result.trace.is_non_increasing()


def test_without_appearance_the_gap_splits_identities():
    scenario = generate_scenario("crossing", seed=0)
    result = track_offline(scenario.detections, _without_appearance(), scenario.ground_truth)
    assert len(result.tracks.tracks) == 4
    assert result.report.switches == 2
    assert result.report.mota == pytest.approx(0.98)


def test_joint_and_nodewise_agree_on_the_crossing():
    scenario = generate_scenario("crossing", seed=0)
    joint = track_offline(scenario.detections, PipelineConfig(), scenario.ground_truth, solver="joint")
    nodewise = track_offline(scenario.detections, PipelineConfig(), scenario.ground_truth, solver="nodewise")
    assert len(joint.tracks.tracks) == len(nodewise.tracks.tracks) == 2
    assert abs(joint.report.mota - nodewise.report.mota) <= 0.01


def test_crossing_tracklets_link_across_the_gap():
    scenario = generate_scenario("crossing", seed=0)
    cfg = PipelineConfig().with_updates(pipeline={"build_tracklets": True})
    assert cfg.graph.tracklet_window == 100
    result = track_offline(scenario.detections, cfg, scenario.ground_truth)
    assert len(result.nodes) == 4
    assert len(result.tracks.tracks) == 2
    assert result.report.switches == 0
    assert result.report.mota == pytest.approx(1.0)


# ---------- lanes ----------
@pytest.mark.parametrize("solver", ["joint", "nodewise"])
def test_parallel_lanes_with_tracklets(solver):
    scenario = generate_scenario("parallel", seed=2)
    cfg = PipelineConfig().with_updates(pipeline={"build_tracklets": True})
    result = track_offline(scenario.detections, cfg, scenario.ground_truth, solver=solver)
    assert len(result.tracks.tracks) == 4
    assert result.report.mota == pytest.approx(1.0)
    assert result.trace.is_non_increasing()


# ---------- online ----------
@pytest.mark.parametrize("seed", range(5))
def test_online_keeps_up_with_offline(seed):
    scenario = generate_scenario("parallel", seed=seed)
    cfg = PipelineConfig().with_updates(online={"image_bounds": scenario.image_bounds})
    offline = track_offline(scenario.detections, cfg, scenario.ground_truth)
    online = track_online(scenario.detections, cfg, scenario.ground_truth, window=10)
    assert online.report.mota >= offline.report.mota - 0.05
    assert online.report.switches == 0
    assert online.stats.solves == 60
    assert len(online.trace) == 60


@pytest.mark.parametrize("seed", range(5))
def test_online_with_a_full_window_matches_offline(seed):
    scenario = generate_scenario("parallel", seed=seed)
    cfg = PipelineConfig().with_updates(online={"image_bounds": scenario.image_bounds})
    offline = track_offline(scenario.detections, cfg, scenario.ground_truth)
    online = track_online(scenario.detections, cfg, scenario.ground_truth, window=60)
    assert abs(online.report.mota - offline.report.mota) <= 0.02


def test_online_window_override_and_assignments():
    scenario = generate_scenario("occlusion", seed=0)
    cfg = PipelineConfig().with_updates(online={"image_bounds": scenario.image_bounds})
    result = track_online(scenario.detections, cfg, window=5)
    assert [a.frame for a in result.assignments] == list(range(60))
    assert sum(len(a.assignments) for a in result.assignments) == len(scenario.detections)
