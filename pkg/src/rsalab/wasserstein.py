"""Wasserstein divergences between finitely supported measures.

``W_V(mu, nu) = min_pi sum_ij pi_ij V(a_i, b_j)`` over couplings ``pi`` with
marginals ``mu`` and ``nu``. The transport LP is solved exactly with the HiGHS
dual simplex; a Dirac on either side has a single coupling and is evaluated in
closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from rsalab.errors import CertificationError, ParameterError, SizeError
from rsalab.operators import LiftedState, check_same_shape

COST_BUDGET = 1_000_000
WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """``sum_i w_i delta_{a_i}``. Duplicate atoms are kept as given."""

    atoms: tuple
    weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(atoms) == 0 or len(atoms) != w.size:
            raise ParameterError("need one positive weight per atom and at least one atom")
        if (w <= 0).any() or not np.isfinite(w).all():
            raise ParameterError("weights must be positive and finite")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ParameterError(f"weights sum to {w.sum()!r}, not 1")
        for a in atoms[1:]:
            check_same_shape(atoms[0], a)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms: Sequence[LiftedState]) -> "DiscreteMeasure":
        atoms = tuple(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    @classmethod
    def dirac(cls, atom: LiftedState) -> "DiscreteMeasure":
        return cls((atom,), np.ones(1))

    def __len__(self):
        return len(self.atoms)

    def to_json(self) -> dict:
        from rsalab.serialize import encode_array
        return {"atoms": [a.to_json() for a in self.atoms], "weights": encode_array(self.weights)}

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        from rsalab.serialize import decode_array
        atoms = [LiftedState.from_json(a) for a in obj["atoms"]]
        w = obj.get("weights")
        w = np.full(len(atoms), 1.0 / len(atoms)) if w is None else np.asarray(decode_array(w), dtype=float)
        return cls(tuple(atoms), w)


@dataclass
class CouplingPlan:
    """Transport plan ``pi`` with ``value = sum_ij pi_ij C_ij``."""

    pi: np.ndarray
    value: float

    def marginal_error(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(max(np.abs(self.pi.sum(axis=1) - mu.weights).max(),
                         np.abs(self.pi.sum(axis=0) - nu.weights).max()))


@dataclass
class WassersteinResult:
    value: float
    plan: CouplingPlan


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, V) -> np.ndarray:
    m, n = len(mu), len(nu)
    if m * n > COST_BUDGET:
        raise SizeError(f"cost matrix {m} x {n} exceeds the budget of {COST_BUDGET} entries")
    check_same_shape(mu.atoms[0], nu.atoms[0])
    return np.array([[V(a, b) for b in nu.atoms] for a in mu.atoms], dtype=float).reshape(m, n)


def _solve_lp(C: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    m, n = C.shape
    # row sums then column sums of the row-major flattened plan
    A_rows = np.kron(np.eye(m), np.ones((1, n)))
    A_cols = np.kron(np.ones((1, m)), np.eye(n))
    res = linprog(C.ravel(), A_eq=np.vstack([A_rows, A_cols]), b_eq=np.concatenate([p, q]),
                  bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise CertificationError(f"transport LP failed: {res.message}")
    return np.clip(res.x.reshape(m, n), 0.0, None)


def wv_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, V) -> WassersteinResult:
    """Exact ``W_V(mu, nu)`` and an optimal plan."""
    C = cost_matrix(mu, nu, V)
    if len(nu) == 1:
        pi = mu.weights[:, None].copy()
        return WassersteinResult(_dirac_sum(mu.weights, C[:, 0]), CouplingPlan(pi, _dirac_sum(mu.weights, C[:, 0])))
    if len(mu) == 1:
        pi = nu.weights[None, :].copy()
        return WassersteinResult(_dirac_sum(nu.weights, C[0]), CouplingPlan(pi, _dirac_sum(nu.weights, C[0])))
    pi = _solve_lp(C, mu.weights, nu.weights)
    value = float(max((pi * C).sum(), 0.0))
    return WassersteinResult(value, CouplingPlan(pi, value))


def _dirac_sum(w: np.ndarray, costs: np.ndarray) -> float:
    return float(w @ costs)


def wv_dirac(mu: DiscreteMeasure, s_star: LiftedState, V) -> float:
    """``W_V(mu, delta_{s*}) = sum_i w_i V(a_i, s*)``: the product coupling is the only one."""
    return _dirac_sum(mu.weights, np.array([V(a, s_star) for a in mu.atoms], dtype=float))


def wv_pullback_bound(mu: DiscreteMeasure, f: Callable[[LiftedState], LiftedState], V) -> float:
    """Upper bound ``sum_i w_i V(a_i, f(a_i))`` on ``W_V(mu, mu o f^-1)``."""
    return _dirac_sum(mu.weights, np.array([V(a, f(a)) for a in mu.atoms], dtype=float))


def pushforward(mu: DiscreteMeasure, f: Callable[[LiftedState], LiftedState]) -> DiscreteMeasure:
    """``mu o f^-1``, atom by atom (images are not merged)."""
    return DiscreteMeasure(tuple(f(a) for a in mu.atoms), mu.weights)


def kernel_pushforward(mu: DiscreteMeasure, operator, draws: Sequence, probs: Sequence[float] | None = None) -> DiscreteMeasure:
    """``mu Q`` for a kernel given by finitely many draws of a random operator.

    Every atom is pushed through every draw; ``probs`` defaults to uniform.
    """
    draws = list(draws)
    probs = np.full(len(draws), 1.0 / len(draws)) if probs is None else np.asarray(probs, dtype=float)
    atoms, weights = [], []
    for a, w in zip(mu.atoms, mu.weights):
        for d, p in zip(draws, probs):
            atoms.append(operator.apply(a, d))
            weights.append(w * p)
    weights = np.asarray(weights)
    return DiscreteMeasure(tuple(atoms), weights / weights.sum())


def coupled_upper_bound(trajectory, k: int) -> tuple[float, float]:
    """Mean and standard error of ``V_k`` over the replications of a coupled run.

    The mean estimates ``E[V(s_k, s_k')]``, which bounds ``W_V`` of the two
    step-``k`` marginals from above.
    """
    if trajectory.R < 2:
        raise ParameterError("need at least two replications for a standard error")
    if not 0 <= k <= trajectory.K:
        raise ParameterError(f"k must lie in [0, {trajectory.K}]")
    mean, se = trajectory.stats("V")
    return float(mean[k]), float(se[k])
