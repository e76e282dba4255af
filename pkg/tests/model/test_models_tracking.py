# tests/model/test_models_tracking.py
import pytest
from pydantic import ValidationError

from app.models.tracking import Detection, Node, TrackBox, TrackRecord, TrackSet, Tracklet, build_nodes


def det(frame, x=0.0, y=0.0, conf=0.9, **features):
    feats = {int(k[1:]): v for k, v in features.items()}
    return Detection(frame=frame, center=(x, y), extent=(10.0, 20.0), confidence=conf, features=feats)


# ---------- Detection ----------
@pytest.mark.parametrize("kwargs", [
    {"frame": -1, "center": (0, 0)},
    {"frame": 0, "center": (0, 0), "confidence": 1.5},
    {"frame": 0, "center": (0,)},
])
def test_detection_rejects_invalid_fields(kwargs):
    with pytest.raises(ValidationError):
        Detection(**kwargs)


def test_without_features_keeps_position():
    d = det(3, 1.0, 2.0, f1=(1.0, 2.0))
    stripped = d.without_features()
    assert stripped.features == {}
    assert stripped.center == d.center and stripped.frame == 3


# ---------- Tracklet ----------
def test_tracklet_aggregates_present_features_only():
    t = Tracklet.from_detections([det(0, f1=(1.0, 3.0)), det(1), det(2, f1=(3.0, 5.0))])
    assert t.aggregate_features == {1: (2.0, 4.0)}


def test_tracklet_requires_consecutive_frames():
    with pytest.raises(ValidationError):
        Tracklet.from_detections([det(0), det(2)])


def test_tracklet_rejects_wrong_aggregate():
    with pytest.raises(ValidationError):
        Tracklet(detections=(det(0, f1=(1.0,)),), aggregate_features={1: (5.0,)})


def test_tracklet_extended_recomputes_mean():
    t = Tracklet.from_detections([det(0, f1=(0.0,))]).extended(det(1, f1=(2.0,)))
    assert [d.frame for d in t.detections] == [0, 1]
    assert t.aggregate_features[1] == (1.0,)


# ---------- Node ----------
def test_build_nodes_orders_by_first_frame_then_input():
    a, b, c = det(5, 1), det(2, 2), det(5, 3)
    nodes = build_nodes([a, b, c])
    assert [nd.id for nd in nodes] == [0, 1, 2]
    assert [nd.payload for nd in nodes] == [b, a, c]


def test_node_span_and_accessors_for_tracklet():
    t = Tracklet.from_detections([det(4, 0, 0, conf=0.5), det(5, 2, 0, conf=0.95)])
    nd = Node.of(0, t)
    assert nd.span == (4, 5)
    assert nd.confidence == 0.95
    assert list(nd.start_center) == [0.0, 0.0] and list(nd.end_center) == [2.0, 0.0]
    assert list(nd.velocity) == [2.0, 0.0]
    assert list(nd.predicted_center(8)) == [8.0, 0.0]
    assert list(nd.predicted_center(1)) == [-6.0, 0.0]


def test_single_detection_node_does_not_move():
    nd = Node.of(0, det(3, 7, 2))
    assert not nd.velocity.any()
    assert list(nd.predicted_center(40)) == [7.0, 2.0]


def test_node_rejects_inconsistent_span():
    with pytest.raises(ValidationError):
        Node(id=0, payload=det(1), span=(0, 1))


# ---------- output side ----------
def test_track_record_length_counts_gaps():
    rec = TrackRecord(track_id=1, boxes={2: TrackBox((0, 0)), 9: TrackBox((1, 1))})
    assert rec.length == 8
    assert rec.max_confidence == 1.0


def test_trackset_equality_ignores_bookkeeping():
    a = TrackSet(tracks=[TrackRecord(1, {0: TrackBox((0.0, 0.0))}, {0: 0.5})], provenance={0: 1})
    b = TrackSet(tracks=[TrackRecord(1, {0: TrackBox((0.0, 0.0))})])
    assert a == b
