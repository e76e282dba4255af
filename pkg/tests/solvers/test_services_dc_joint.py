# tests/solvers/test_services_dc_joint.py
import numpy as np
import pytest
from scipy import sparse

from app.models.config import JointConfig, NodewiseConfig
from app.services.dc_joint import initial_labels, random_init, solve_joint
from app.services.dc_nodewise import solve_nodewise
from app.services.energy import objective
from app.services.graphs import EffectiveWeights


def test_random_init_rows_on_simplex():
    Y = random_init(7, 4, seed=3)
    assert Y.shape == (7, 4)
    assert np.allclose(Y.sum(axis=1), 1.0) and (Y >= 0).all()
    assert np.array_equal(Y, random_init(7, 4, seed=3))
    assert random_init(3, 1).tolist() == [[1.0], [1.0], [1.0]]


@pytest.mark.parametrize("kind", ["identity", "uniform"])
def test_initial_labels_kinds(kind):
    Y = initial_labels(3, 4, kind)
    assert np.allclose(Y.sum(axis=1), 1.0)
    if kind == "identity":
        assert Y.argmax(axis=1).tolist() == [0, 1, 2]


def test_identity_needs_enough_labels():
    with pytest.raises(ValueError):
        initial_labels(4, 3, "identity")


@pytest.mark.parametrize("seed", range(5))
def test_joint_objective_never_increases(signed_weights, seed):
    eff = signed_weights(15, seed=seed)
    res = solve_joint(eff, JointConfig(t_joint=40, seed=seed))
    assert res.trace.is_non_increasing()
    assert res.objective == pytest.approx(objective(eff, res.Y))
    assert np.allclose(res.Y.sum(axis=1), 1.0) and (res.Y >= -1e-12).all()


def test_joint_no_edges_returns_init():
    eff = EffectiveWeights.from_matrix(sparse.csr_matrix((4, 4)))
    init = initial_labels(4, 4, "identity")
    res = solve_joint(eff, init=init)
    assert np.array_equal(res.Y, init)
    assert res.converged and len(res.trace) == 1


def test_joint_empty_graph():
    eff = EffectiveWeights.from_matrix(sparse.csr_matrix((0, 0)))
    res = solve_joint(eff)
    assert res.Y.shape == (0, 0) and res.converged


def test_joint_rejects_wrong_init_shape(chain_weights):
    with pytest.raises(ValueError):
        solve_joint(chain_weights(3), init=np.full((2, 3), 1 / 3))


def test_joint_and_nodewise_agree_on_positive_graph(chain_weights):
    eff = chain_weights(6)
    init = initial_labels(6, 6, "random", seed=1)
    joint = solve_joint(eff, JointConfig(t_joint=500), init=init)
    nodewise = solve_nodewise(eff, NodewiseConfig(t_con=500, tol=1e-12), init=init)
    assert joint.objective < 1e-5
    assert nodewise.objective < 1e-5
    # a connected positive graph collapses onto one label row
    assert np.ptp(joint.Y, axis=0).max() < 0.02
    assert np.ptp(nodewise.Y, axis=0).max() < 0.02


def test_repulsion_separates_a_pair():
    W = np.array([[0.0, -1.0], [0.0, 0.0]])
    eff = EffectiveWeights.from_matrix(sparse.csr_matrix(W))
    res = solve_joint(eff, init=np.array([[0.6, 0.4], [0.4, 0.6]]))
    assert res.Y.argmax(axis=1).tolist() == [0, 1]
    assert res.objective < -0.5


def _exclusion_pair():
    W = np.array([[0.0, -1.0], [-1.0, 0.0]])
    return EffectiveWeights.from_matrix(sparse.csr_matrix(W))


def test_exclusion_pair_reaches_the_best_labeling_from_default_start():
    eff = _exclusion_pair()
    res = solve_joint(eff)
    assert sorted(res.Y.argmax(axis=1).tolist()) == [0, 1]
    # best one-hot labeling: opposite rows, both directed edges cut
    assert res.objective == pytest.approx(-2.0, abs=1e-6)
    assert res.trace.is_non_increasing()


def test_exclusion_pair_from_a_biased_start():
    res = solve_joint(_exclusion_pair(), init=np.array([[0.6, 0.4], [0.3, 0.7]]))
    assert res.Y == pytest.approx(np.eye(2), abs=1e-6)
    assert res.objective == pytest.approx(-2.0, abs=1e-6)


def test_exclusion_pair_uniform_start_is_stationary():
    uniform = initial_labels(2, 2, "uniform")
    res = solve_joint(_exclusion_pair(), init=uniform)
    assert res.Y == pytest.approx(uniform)
    assert res.objective == pytest.approx(0.0)
