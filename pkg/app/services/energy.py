"""Labeling energy over signed graphs.

The energy of a row-stochastic label matrix ``Y`` under weights ``W`` is
``Σ_ij W_ij φ(y_i, y_j)``. With the default loss ``φ(a, b) = ½‖a - b‖²`` the
value and gradient are evaluated in closed form from sparse products;
other registered losses go through a generic per-edge path.

Losses must be convex in the first argument, coincident (``φ(y, y) = 0``) and
symmetric; `register_loss` checks all three on random simplex points.
"""
from __future__ import annotations

import abc
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import sparse

from app.errors import LossRegistrationError
from app.services.graphs import EffectiveWeights, SparseGraph

logger = logging.getLogger(__name__)

_CHUNK = 65536
_CHECK_TOL = 1e-10


class LossFn(abc.ABC):
    """Pairwise label loss, evaluated row-wise on stacked pairs."""

    name: str = "loss"

    @abc.abstractmethod
    def evaluate_rows(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """``φ(A[k], B[k])`` for every row ``k``."""

    @abc.abstractmethod
    def gradient_rows(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Gradient of ``φ`` in its first argument for every row pair."""

    def evaluate(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.evaluate_rows(np.atleast_2d(a), np.atleast_2d(b))[0])

    def gradient_first_arg(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.gradient_rows(np.atleast_2d(a), np.atleast_2d(b))[0]


class SquaredL2Loss(LossFn):
    name = "l2"

    def evaluate_rows(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        diff = A - B
        return 0.5 * np.einsum("ij,ij->i", diff, diff)

    def gradient_rows(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return A - B


_LOSSES: dict[str, LossFn] = {}


def _sample_points(rng: np.random.Generator, count: int, m: int) -> np.ndarray:
    return rng.dirichlet(np.ones(m), size=count)


def register_loss(loss: LossFn, samples: int = 64, seed: int = 0) -> LossFn:
    """Add ``loss`` to the registry after checking it on random simplex points.

    Raises:
        LossRegistrationError: the loss is not coincident, symmetric or convex
            in its first argument at some sample.
    """
    rng = np.random.default_rng(seed)
    for m in (2, 3, 5):
        A = _sample_points(rng, samples, m)
        B = _sample_points(rng, samples, m)
        C = _sample_points(rng, samples, m)
        if np.any(np.abs(loss.evaluate_rows(A, A)) > _CHECK_TOL):
            raise LossRegistrationError(f"loss {loss.name!r} is not coincident: φ(y, y) != 0")
        if np.any(np.abs(loss.evaluate_rows(A, B) - loss.evaluate_rows(B, A)) > _CHECK_TOL):
            raise LossRegistrationError(f"loss {loss.name!r} is not symmetric")
        lam = rng.uniform(0.0, 1.0, size=(samples, 1))
        mixed = loss.evaluate_rows(lam * A + (1 - lam) * B, C)
        chord = lam[:, 0] * loss.evaluate_rows(A, C) + (1 - lam[:, 0]) * loss.evaluate_rows(B, C)
        if np.any(mixed > chord + _CHECK_TOL):
            raise LossRegistrationError(f"loss {loss.name!r} is not convex in its first argument")
    _LOSSES[loss.name] = loss
    return loss


def get_loss(name: str = "l2") -> LossFn:
    try:
        return _LOSSES[name]
    except KeyError:
        raise KeyError(f"unknown loss {name!r}; registered: {sorted(_LOSSES)}") from None


DEFAULT_LOSS = register_loss(SquaredL2Loss())


def is_squared_l2(phi: Optional[LossFn]) -> bool:
    return phi is None or isinstance(phi, SquaredL2Loss)


def _as_csr(W: Union[SparseGraph, sparse.spmatrix, np.ndarray]) -> sparse.csr_matrix:
    if isinstance(W, SparseGraph):
        return W.to_csr()
    return sparse.csr_matrix(W, dtype=float)


# ---------- closed form for the squared loss ----------
@dataclass(frozen=True)
class QuadraticEnergy:
    """``½ Σ_ij W_ij ‖y_i - y_j‖²`` with cached degrees and symmetrisation."""

    W: sparse.csr_matrix
    W_sym: sparse.csr_matrix
    degree: np.ndarray

    @classmethod
    def of(cls, W: Union[SparseGraph, sparse.spmatrix]) -> "QuadraticEnergy":
        Wc = _as_csr(W)
        sym = (Wc + Wc.T).tocsr()
        return cls(W=Wc, W_sym=sym, degree=np.asarray(sym.sum(axis=1)).ravel())

    def value(self, Y: np.ndarray) -> float:
        sq = np.einsum("ij,ij->i", Y, Y)
        return float(0.5 * self.degree @ sq - np.sum(Y * (self.W @ Y)))

    def gradient(self, Y: np.ndarray) -> np.ndarray:
        return self.degree[:, None] * Y - self.W_sym @ Y


# ---------- public operations ----------
def pairwise_energy(
    W: Union[SparseGraph, sparse.spmatrix, np.ndarray],
    Y: np.ndarray,
    phi: Optional[LossFn] = None,
) -> float:
    """``Σ_i Σ_j W_ij φ(y_i, y_j)`` for a signed or non-negative weight matrix."""
    Wc = _as_csr(W)
    Y = np.asarray(Y, dtype=float)
    if Wc.shape[0] != Y.shape[0]:
        raise ValueError(f"weights cover {Wc.shape[0]} nodes but Y has {Y.shape[0]} rows")
    if is_squared_l2(phi):
        return QuadraticEnergy.of(Wc).value(Y)
    coo = Wc.tocoo()
    total = 0.0
    for lo in range(0, coo.nnz, _CHUNK):
        r, c, w = coo.row[lo:lo + _CHUNK], coo.col[lo:lo + _CHUNK], coo.data[lo:lo + _CHUNK]
        total += float(w @ phi.evaluate_rows(Y[r], Y[c]))
    return total


def objective(eff: EffectiveWeights, Y: np.ndarray, phi: Optional[LossFn] = None) -> float:
    """Labeling objective ``g(Y)`` (attractive minus repulsive energy)."""
    return pairwise_energy(eff.w_eff, Y, phi)


def objective_gradient(eff: EffectiveWeights, Y: np.ndarray, phi: Optional[LossFn] = None) -> np.ndarray:
    """Row ``p`` is ``Σ_j w̃_pj ∂φ(y_p, y_j)``; for the squared loss ``Σ_j w̃_pj (y_p - y_j)``."""
    Y = np.asarray(Y, dtype=float)
    sym = eff.w_eff_sym
    if is_squared_l2(phi):
        degree = np.asarray(sym.sum(axis=1)).ravel()
        return degree[:, None] * Y - sym @ Y
    grad = np.zeros_like(Y)
    coo = sym.tocoo()
    for lo in range(0, coo.nnz, _CHUNK):
        r, c, w = coo.row[lo:lo + _CHUNK], coo.col[lo:lo + _CHUNK], coo.data[lo:lo + _CHUNK]
        np.add.at(grad, r, w[:, None] * phi.gradient_rows(Y[r], Y[c]))
    return grad


def decompose_node(eff: EffectiveWeights, p: int) -> list[tuple[int, float]]:
    """Non-zero entries ``(j, w̃_pj)`` of the symmetrised row ``p``."""
    if not 0 <= p < eff.n:
        raise IndexError(f"node {p} out of range for {eff.n} nodes")
    sym = eff.w_eff_sym
    lo, hi = sym.indptr[p], sym.indptr[p + 1]
    return [(int(j), float(w)) for j, w in zip(sym.indices[lo:hi], sym.data[lo:hi]) if w != 0.0 and j != p]


# ---------- traces ----------
@dataclass
class EnergyTrace:
    """Objective value after each solver step (entry 0 is the initial value)."""

    objectives: list[float] = field(default_factory=list)

    def record(self, value: float) -> None:
        self.objectives.append(float(value))

    @property
    def final(self) -> float:
        return self.objectives[-1] if self.objectives else float("nan")

    def __len__(self) -> int:
        return len(self.objectives)

    def is_non_increasing(self, tol: float = 1e-9) -> bool:
        return all(b <= a + tol for a, b in zip(self.objectives, self.objectives[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"iter": range(len(self.objectives)), "objective": self.objectives})

    def write_csv(self, path: Union[str, Path]) -> None:
        """CSV ``iter,objective``."""
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


@dataclass
class SolveResult:
    """Labels plus bookkeeping returned by every labeling solver."""

    Y: np.ndarray
    trace: EnergyTrace
    iterations: int = 0
    converged: bool = True
    inner_solves: int = 0
    inner_unconverged: int = 0
    batch_trace: Optional[EnergyTrace] = None

    @property
    def objective(self) -> float:
        return self.trace.final
