# tests/solvers/conftest.py
import numpy as np
import pytest
from scipy import sparse

from app.services.graphs import EffectiveWeights


@pytest.fixture
def signed_weights():
    """Factory for random sparse signed weights without self loops."""

    def make(n, density=0.3, negative=0.3, seed=0):
        rng = np.random.default_rng(seed)
        W = rng.random((n, n)) * (rng.random((n, n)) < density)
        W *= np.where(rng.random((n, n)) < negative, -1.0, 1.0)
        np.fill_diagonal(W, 0.0)
        return EffectiveWeights.from_matrix(sparse.csr_matrix(W))

    return make


@pytest.fixture
def chain_weights():
    """Factory for a symmetric positive path 0 - 1 - ... - n-1."""

    def make(n):
        W = np.zeros((n, n))
        for i in range(n - 1):
            W[i, i + 1] = W[i + 1, i] = 1.0
        return EffectiveWeights.from_matrix(sparse.csr_matrix(W))

    return make
