# tests/test_api_tracking.py
import pytest
from fastapi.testclient import TestClient

from app.main import create_app

CROSSING_CONFIG = {"graph": {"alphas": [1.0, 0.5]}, "pipeline": {"build_tracklets": True}}


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture
def crossing(client):
    resp = client.get("/track/synth", params={"scenario": "crossing", "seed": 0})
    assert resp.status_code == 200
    return resp.json()


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_synth_payload(crossing):
    assert crossing["scenario"] == "crossing"
    assert crossing["image_bounds"] == [0.0, 0.0, 800.0, 480.0]
    assert len(crossing["detections"].splitlines()) == 100


def test_offline_crossing_round_trip(client, crossing):
    resp = client.post("/track/offline", json={
        "detections": crossing["detections"],
        "ground_truth": crossing["ground_truth"],
        "config": CROSSING_CONFIG,
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["nodes"] == 4
    assert body["report"]["switches"] == 0
    assert body["report"]["mota"] == pytest.approx(1.0)
    assert body["unconverged_fraction"] == 0.0
    assert len({line.split(",")[1] for line in body["tracks"].splitlines()}) == 2


def test_online_parallel(client):
    synth = client.get("/track/synth", params={"scenario": "parallel", "seed": 0}).json()
    resp = client.post("/track/online", json={
        "detections": synth["detections"],
        "ground_truth": synth["ground_truth"],
        "config": {"online": {"image_bounds": synth["image_bounds"]}},
        "window": 10,
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["report"]["switches"] == 0
    assert len(body["energy_trace"]) == 60


def test_eval_ground_truth_against_itself(client, crossing):
    resp = client.post("/track/eval", json={"tracks": crossing["ground_truth"], "ground_truth": crossing["ground_truth"]})
    assert resp.status_code == 200
    assert resp.json()["mota"] == 1.0


@pytest.mark.parametrize("path, payload", [
    ("/track/offline", {"detections": "0,-1,1,1,2,2,0.9\n", "config": {"graph": {"bogus": 1}}}),
    ("/track/offline", {"detections": "0,-1,1,1\n"}),
    ("/track/online", {"detections": "0,-1,1,1,2,2,0.9\n", "config": {"online": {"observation_window": 0}}}),
    ("/track/eval", {"tracks": "0,1,1,1,2,2\n", "ground_truth": "0,1,1,1,2,2\n", "match": "near"}),
])
def test_bad_input_is_400(client, path, payload):
    resp = client.post(path, json=payload)
    assert resp.status_code == 400
    assert resp.json()["detail"]


def test_unknown_scenario_is_400(client):
    assert client.get("/track/synth", params={"scenario": "spiral"}).status_code == 400


def test_request_validation_is_422(client):
    assert client.post("/track/offline", json={"detections": "", "workers": 0}).status_code == 422
