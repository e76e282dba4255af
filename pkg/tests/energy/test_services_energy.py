# tests/energy/test_services_energy.py
import numpy as np
import pandas as pd
import pytest
from scipy import sparse

from app.errors import LossRegistrationError
from app.services.energy import (
    EnergyTrace,
    LossFn,
    decompose_node,
    get_loss,
    objective,
    objective_gradient,
    pairwise_energy,
    register_loss,
)
from app.services.graphs import EffectiveWeights


class HalfSquaredCopy(LossFn):
    """Same values as the default loss but evaluated edge by edge."""

    name = "l2_generic"

    def evaluate_rows(self, A, B):
        return 0.5 * ((A - B) ** 2).sum(axis=1)

    def gradient_rows(self, A, B):
        return A - B


class NotCoincident(LossFn):
    name = "shifted"

    def evaluate_rows(self, A, B):
        return 0.5 * ((A - B) ** 2).sum(axis=1) + 1.0

    def gradient_rows(self, A, B):
        return A - B


class Concave(LossFn):
    name = "concave"

    def evaluate_rows(self, A, B):
        return -((A - B) ** 2).sum(axis=1)

    def gradient_rows(self, A, B):
        return -2 * (A - B)


class Asymmetric(LossFn):
    name = "asymmetric"

    def evaluate_rows(self, A, B):
        return ((A - B) ** 2).sum(axis=1) * (1 + A[:, 0])

    def gradient_rows(self, A, B):
        return 2 * (A - B)


def _random_instance(n=12, m=4, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.4)
    np.fill_diagonal(W, 0.0)
    Y = rng.dirichlet(np.ones(m), size=n)
    return EffectiveWeights.from_matrix(sparse.csr_matrix(W)), W, Y


def test_objective_matches_dense_sum():
    eff, W, Y = _random_instance()
    expected = sum(W[i, j] * 0.5 * np.sum((Y[i] - Y[j]) ** 2) for i in range(len(W)) for j in range(len(W)))
    assert objective(eff, Y) == pytest.approx(expected)


def test_objective_matches_laplacian_form():
    eff, W, Y = _random_instance(seed=1)
    S = W + W.T
    L = np.diag(S.sum(axis=1)) - S
    assert objective(eff, Y) == pytest.approx(0.5 * np.trace(Y.T @ L @ Y))


def test_gradient_matches_finite_differences():
    eff, _, Y = _random_instance(seed=2)
    grad = objective_gradient(eff, Y)
    h = 1e-6
    for i, k in [(0, 0), (3, 2), (11, 1)]:
        E = np.zeros_like(Y)
        E[i, k] = h
        numeric = (objective(eff, Y + E) - objective(eff, Y - E)) / (2 * h)
        assert grad[i, k] == pytest.approx(numeric, rel=1e-5, abs=1e-7)


def test_generic_loss_path_agrees_with_closed_form():
    phi = register_loss(HalfSquaredCopy())
    assert get_loss("l2_generic") is phi
    eff, _, Y = _random_instance(seed=3)
    assert objective(eff, Y, phi) == pytest.approx(objective(eff, Y))
    assert np.allclose(objective_gradient(eff, Y, phi), objective_gradient(eff, Y))


@pytest.mark.parametrize("loss", [NotCoincident(), Concave(), Asymmetric()])
def test_register_loss_rejects_bad_losses(loss):
    with pytest.raises(LossRegistrationError):
        register_loss(loss)
    with pytest.raises(KeyError):
        get_loss(loss.name)


def test_constant_labels_have_zero_energy():
    eff, _, _ = _random_instance(seed=4)
    Y = np.tile([0.2, 0.3, 0.5], (eff.n, 1))
    assert objective(eff, Y) == pytest.approx(0.0, abs=1e-12)


def test_pairwise_energy_row_mismatch():
    with pytest.raises(ValueError):
        pairwise_energy(np.eye(3), np.ones((2, 2)))


def test_decompose_node_lists_symmetrised_row():
    W = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -2.0], [0.5, 0.0, 0.0]])
    eff = EffectiveWeights.from_matrix(sparse.csr_matrix(W))
    assert sorted(decompose_node(eff, 0)) == [(1, 1.0), (2, 0.5)]
    assert sorted(decompose_node(eff, 1)) == [(0, 1.0), (2, -2.0)]
    with pytest.raises(IndexError):
        decompose_node(eff, 3)


def test_cancelling_weights_drop_out_of_decomposition():
    eff = EffectiveWeights.from_matrix(sparse.csr_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]])))
    assert decompose_node(eff, 0) == []


def test_energy_trace_csv(tmp_path):
    trace = EnergyTrace()
    for v in (3.0, 2.0, 2.0, 1.5):
        trace.record(v)
    assert trace.is_non_increasing()
    assert trace.final == 1.5 and len(trace) == 4
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    df = pd.read_csv(path)
    assert df["iter"].tolist() == [0, 1, 2, 3]
    assert df["objective"].tolist() == [3.0, 2.0, 2.0, 1.5]
    trace.record(1.6)
    assert not trace.is_non_increasing()
