# tests/graphs/test_services_graphs.py
import numpy as np
import pandas as pd
import pytest

from app.errors import GraphSizeError
from app.models.config import GraphParams
from app.models.tracking import Detection, Tracklet, build_nodes
from app.services.graphs import (
    EffectiveWeights,
    SparseGraph,
    build_appearance_graph,
    build_exclusion_graph,
    build_spatiotemporal_graph,
    combine,
    lle_weights,
    write_graph_dump,
)


def _det(frame, x, y=0.0, **features):
    feats = {int(k[1:]): tuple(v) for k, v in features.items()}
    return Detection(frame=frame, center=(float(x), float(y)), features=feats)


# ---------- reconstruction weights ----------
def test_lle_constant_velocity_midpoint():
    target = np.array([3.0, 10.0, 0.0])
    neighbors = np.array([[0.0, 0.0, 0.0], [6.0, 20.0, 0.0]])
    assert lle_weights(target, neighbors, delta=1e-6) == pytest.approx([0.5, 0.5], abs=1e-6)


def test_lle_single_and_empty_neighbourhoods():
    assert lle_weights(np.zeros(2), np.array([[5.0, 5.0]]), 0.01).tolist() == [1.0]
    assert lle_weights(np.zeros(2), np.empty((0, 2)), 0.01) is None


def test_lle_dimension_mismatch():
    with pytest.raises(ValueError):
        lle_weights(np.zeros(3), np.zeros((2, 2)), 0.01)


def test_lle_weights_are_on_the_simplex():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = lle_weights(rng.normal(size=4), rng.normal(size=(6, 4)), 0.01)
        assert w.sum() == pytest.approx(1.0)
        assert (w >= 0).all()


# ---------- spatio-temporal ----------
def test_spatiotemporal_line_and_gating():
    # three detections moving 5 px/frame plus an unreachable one (node 2) in frame 1
    nodes = build_nodes([_det(0, 0), _det(1, 5), _det(2, 10), _det(1, 500, 500)])
    g = build_spatiotemporal_graph(nodes, GraphParams(delta=1e-6))
    assert g.row(1) == pytest.approx({0: 0.5, 3: 0.5}, abs=1e-6)
    assert g.row(0)[1] == pytest.approx(1.0, abs=1e-6)
    assert g.row(2) == {}
    for i in range(g.n):
        if g.row(i):
            assert sum(g.row(i).values()) == pytest.approx(1.0)
    assert all(j != 2 for _, j, _ in g.items())


def test_spatiotemporal_window_bounds_neighbourhood():
    nodes = build_nodes([_det(0, 0), _det(5, 10)])
    assert build_spatiotemporal_graph(nodes, GraphParams(window=4)).edge_count() == 0
    assert build_spatiotemporal_graph(nodes, GraphParams(window=5)).edge_count() == 2


def test_tracklet_nodes_use_tracklet_window_and_span_gap():
    a = Tracklet.from_detections([_det(0, 0), _det(1, 1), _det(2, 2)])
    b = Tracklet.from_detections([_det(22, 100), _det(23, 101)])
    nodes = build_nodes([a, b])
    g = build_spatiotemporal_graph(nodes, GraphParams(window=10, tracklet_window=100))
    assert g.row(0) == {1: 1.0} and g.row(1) == {0: 1.0}
    assert build_spatiotemporal_graph(nodes, GraphParams(window=10, tracklet_window=19)).edge_count() == 0


def test_tracklets_are_linked_by_extrapolated_motion():
    # two targets cross during a gap; positions alone favour neither continuation
    before = [
        Tracklet.from_detections([_det(f, 8 * f) for f in range(5)]),
        Tracklet.from_detections([_det(f, 200 - 8 * f, 10) for f in range(5)]),
    ]
    after = [
        Tracklet.from_detections([_det(f, 8 * f) for f in range(15, 20)]),
        Tracklet.from_detections([_det(f, 200 - 8 * f, 10) for f in range(15, 20)]),
    ]
    g = build_spatiotemporal_graph(build_nodes(before + after), GraphParams(tracklet_window=100))
    for earlier, later in ((0, 2), (1, 3)):
        assert g.row(later)[earlier] == pytest.approx(1.0, abs=1e-3)
        assert g.row(earlier)[later] == pytest.approx(1.0, abs=1e-3)
    assert g.row(2).get(1, 0.0) < 1e-3 and g.row(3).get(0, 0.0) < 1e-3


def test_parallel_row_solving_matches_sequential():
    rng = np.random.default_rng(3)
    dets = [_det(f, 5 * f + rng.normal(), 100 * k) for f in range(8) for k in range(3)]
    nodes = build_nodes(dets)
    one = build_spatiotemporal_graph(nodes, workers=1)
    many = build_spatiotemporal_graph(nodes, workers=4)
    assert list(one.items()) == list(many.items())


# ---------- appearance ----------
def test_appearance_only_links_time_disjoint_nodes():
    nodes = build_nodes([_det(0, 0, f1=(1.0, 0.0)), _det(0, 50, f1=(0.0, 1.0)), _det(5, 0, f1=(1.0, 0.0)), _det(6, 9)])
    g = build_appearance_graph(nodes, 1)
    assert g.row(0) == {2: 1.0}
    assert g.row(1) == {2: 1.0}
    assert set(g.row(2)) <= {0, 1} and g.row(2)[0] > 0.99
    assert g.row(3) == {}


def test_appearance_neighbour_cap_keeps_closest():
    nodes = build_nodes([_det(0, 0, f1=(1.0, 0.0)), _det(1, 0, f1=(0.0, 1.0)), _det(5, 0, f1=(0.9, 0.1))])
    g = build_appearance_graph(nodes, 1, GraphParams(app_neighbors=1))
    assert set(g.row(2)) == {0}


def test_appearance_without_featured_pairs_is_empty():
    nodes = build_nodes([_det(0, 0, f1=(1.0,)), _det(1, 0)])
    assert build_appearance_graph(nodes, 1).edge_count() == 0
    assert build_appearance_graph(nodes, 2).edge_count() == 0


# ---------- exclusion ----------
def test_exclusion_cooccurrence_and_speed():
    nodes = build_nodes([_det(0, 0), _det(0, 30), _det(1, 5), _det(1, 500)])
    g = build_exclusion_graph(nodes)
    assert g.row(0) == {1: 1.0, 3: 1.0}
    assert g.row(1) == {2: 1.0, 0: 1.0, 3: 1.0}
    assert 2 in g.row(3) and 3 in g.row(2)
    assert all(i != j for i, j, _ in g.items())


# ---------- combination ----------
def test_combine_signs_and_sizes():
    pos = SparseGraph(n=3)
    pos.add_edge(0, 1, 1.0)
    app = SparseGraph(n=3)
    app.add_edge(0, 1, 1.0)
    app.add_edge(1, 2, 1.0)
    neg = SparseGraph(n=3)
    neg.add_edge(0, 2, 1.0)
    eff = combine([pos, app], neg, [1.0, 0.5])
    dense = eff.w_eff.toarray()
    assert dense[0, 1] == pytest.approx(1.5)
    assert dense[1, 2] == pytest.approx(0.5)
    assert dense[0, 2] == pytest.approx(-1.0)
    assert np.allclose(eff.w_eff_sym.toarray(), dense + dense.T)


def test_signed_parts_leave_weights_untouched():
    dense = np.array([[0.0, -1.0, 0.5], [0.3, 0.0, 0.0], [0.0, -1.0, 0.0]])
    eff = EffectiveWeights.from_matrix(dense)
    pos, neg = eff.positive_part(), eff.negative_part()
    assert np.array_equal(eff.w_eff.toarray(), dense)
    assert np.array_equal(pos.toarray(), np.maximum(dense, 0.0))
    assert np.array_equal(neg.toarray(), np.maximum(-dense, 0.0))
    # a second round sees the same matrix
    assert np.array_equal(eff.positive_part().toarray(), pos.toarray())
    assert np.array_equal(eff.w_eff.toarray(), dense)


def test_combine_rejects_mismatches():
    with pytest.raises(GraphSizeError):
        combine([SparseGraph(n=2)], SparseGraph(n=2), [1.0, 0.5])
    with pytest.raises(GraphSizeError):
        combine([SparseGraph(n=3)], SparseGraph(n=2), [1.0])


def test_add_edge_out_of_range():
    with pytest.raises(GraphSizeError):
        SparseGraph(n=2).add_edge(0, 2, 1.0)


def test_patched_grows_weights():
    eff = EffectiveWeights.from_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    grown = eff.patched(3, [(2, 0, -1.0)])
    assert grown.n == 3
    assert grown.w_eff.toarray()[2, 0] == -1.0
    assert grown.w_eff.toarray()[0, 1] == 1.0


def test_graph_dump(tmp_path):
    g = SparseGraph(n=3)
    g.add_edge(2, 0, 0.25)
    g.add_edge(0, 1, 1.0)
    path = tmp_path / "graphs.csv"
    write_graph_dump({"exclusion": g}, path)
    df = pd.read_csv(path)
    assert list(df.columns) == ["graph_id", "i", "j", "weight"]
    assert df[["i", "j"]].values.tolist() == [[0, 1], [2, 0]]
