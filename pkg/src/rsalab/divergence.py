"""Divergence functions on lifted state spaces.

A divergence ``V(s1, s2)`` is nonnegative, zero exactly on the diagonal,
symmetric and inf-compact; it need not satisfy the triangle inequality.
Powers, sums and ``V^p + |.|`` of divergences are again divergences, which the
combinator classes below implement.

All shipped variants are continuous, so lower semi-continuity holds trivially
and is not tested.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from rsalab.errors import ConfigurationError, ParameterError, ShapeError
from rsalab.operators import LiftedState

PD_RTOL = 1e-10


def check_spd(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Symmetric positive definite with smallest eigenvalue > 1e-10 * largest."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ParameterError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(M)
    if not (eig[-1] > 0 and eig[0] > PD_RTOL * eig[-1]):
        raise ParameterError(f"{name} is not positive definite (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")
    return M


def _block(s: LiftedState, on: str) -> np.ndarray:
    return s.x if on == "x" else s.flat()


class Divergence:
    """Base class. Subclasses implement ``_eval`` on shape-checked states."""

    name = "divergence"

    def __call__(self, s1: LiftedState, s2: LiftedState) -> float:
        if s1.shape != s2.shape:
            raise ShapeError(f"state shapes differ: {s1.shape} vs {s2.shape}")
        return self._eval(s1, s2)

    def _eval(self, s1, s2) -> float:
        raise NotImplementedError


def evaluate(V: Divergence, s1: LiftedState, s2: LiftedState) -> float:
    return V(s1, s2)


@dataclass(frozen=True)
class SquaredEuclidean(Divergence):
    on: str = "state"
    name = "squared_euclidean"

    def _eval(self, s1, s2):
        diff = _block(s1, self.on) - _block(s2, self.on)
        return float(diff @ diff)


@dataclass(frozen=True, eq=False)
class WeightedQuadratic(Divergence):
    Q: np.ndarray = None
    on: str = "state"
    name = "weighted_quadratic"

    def __post_init__(self):
        object.__setattr__(self, "Q", check_spd(self.Q, "WeightedQuadratic Q"))

    def _eval(self, s1, s2):
        diff = _block(s1, self.on) - _block(s2, self.on)
        if diff.size != self.Q.shape[0]:
            raise ShapeError(f"state block of size {diff.size} vs Q of size {self.Q.shape[0]}")
        return float(diff @ (self.Q @ diff))


@dataclass(frozen=True, eq=False)
class SagaProxy(Divergence):
    """``|dx|^2 + b * sum_{n in index} |grad f_n(phi_n) - grad f_n(phi'_n)|^2``.

    ``grad`` is ``grad(n, point)``; ``index`` (0-based) defaults to every
    proxy the state carries.
    """

    b: float = 1.0
    grad: Callable = None
    index: tuple | None = None
    name = "saga_proxy"

    def __post_init__(self):
        if not self.b > 0:
            raise ParameterError("SagaProxy needs b > 0")
        if self.grad is None:
            raise ConfigurationError("SagaProxy needs a gradient evaluator")

    def _eval(self, s1, s2):
        dx = s1.x - s2.x
        total = float(dx @ dx)
        if s1.proxies is None:
            return total
        pos = {n: j for j, n in enumerate(s1.proxy_index)}
        idx = s1.proxy_index if self.index is None else self.index
        acc = 0.0
        for n in idx:
            j = pos[n]
            g = self.grad(n, s1.proxies[j]) - self.grad(n, s2.proxies[j])
            acc += float(g @ g)
        return total + self.b * acc


@dataclass(frozen=True, eq=False)
class OptimalityGap(Divergence):
    """``psi(x) + psi(x') - 2 psi*`` for ``x != x'`` and 0 on the diagonal.

    ``c`` is the strong convexity modulus of ``psi``; it is only needed for
    :func:`inf_compactness_radius`.
    """

    psi: Callable = None
    psi_star: float | None = None
    c: float | None = None
    x_star: np.ndarray | None = None
    name = "optimality_gap"

    def _eval(self, s1, s2):
        if np.array_equal(s1.x, s2.x):
            return 0.0
        if self.psi_star is None:
            raise ConfigurationError("OptimalityGap needs the reference value psi*")
        return max(self.psi(s1.x) + self.psi(s2.x) - 2.0 * self.psi_star, 0.0)

    @classmethod
    def for_problem(cls, problem) -> "OptimalityGap":
        return cls(psi=problem.psi, psi_star=problem.psi_star, c=problem.c, x_star=problem.x_star)


@dataclass(frozen=True, eq=False)
class CatalystPair(Divergence):
    """``V(x, x') + (1 - alpha) V(x_prev, x'_prev)``, zero iff both blocks match."""

    inner: Divergence = None
    alpha: float = 0.5
    name = "catalyst_pair"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ParameterError("CatalystPair needs alpha in (0, 1)")

    def _eval(self, s1, s2):
        if s1.prev is None:
            raise ShapeError("CatalystPair needs states with a previous iterate")
        if np.array_equal(s1.x, s2.x) and np.array_equal(s1.prev, s2.prev):
            return 0.0
        now = self.inner(LiftedState(s1.x), LiftedState(s2.x))
        before = self.inner(LiftedState(s1.prev), LiftedState(s2.prev))
        return now + (1.0 - self.alpha) * before


@dataclass(frozen=True, eq=False)
class AsgdQuadraticForm(Divergence):
    """``ds' P ds + 0.5 dx' Q dx`` on ``s = (x_k, x_{k-1})``."""

    P: np.ndarray = None
    Q: np.ndarray = None
    name = "asgd_quadratic_form"

    def __post_init__(self):
        object.__setattr__(self, "P", check_spd(self.P, "ASGD P"))
        object.__setattr__(self, "Q", check_spd(self.Q, "ASGD Q"))
        if self.P.shape[0] != 2 * self.Q.shape[0]:
            raise ShapeError("ASGD P must be 2d x 2d for Q of size d x d")

    def _eval(self, s1, s2):
        if s1.prev is None:
            raise ShapeError("ASGD divergence needs states with a previous iterate")
        ds = np.concatenate([s1.x - s2.x, s1.prev - s2.prev])
        dx = ds[: self.Q.shape[0]]
        return float(ds @ (self.P @ ds)) + 0.5 * float(dx @ (self.Q @ dx))


@dataclass(frozen=True, eq=False)
class Power(Divergence):
    base: Divergence = None
    p: float = 1.0
    name = "power"

    def __post_init__(self):
        if not self.p > 0:
            raise ParameterError("Power needs p > 0")

    def _eval(self, s1, s2):
        return self.base(s1, s2) ** self.p


@dataclass(frozen=True, eq=False)
class Sum(Divergence):
    left: Divergence = None
    right: Divergence = None
    name = "sum"

    def _eval(self, s1, s2):
        return self.left(s1, s2) + self.right(s1, s2)


@dataclass(frozen=True, eq=False)
class PlusMetric(Divergence):
    """``base^p + |s1 - s2|`` with the Euclidean norm of the flattened state."""

    base: Divergence = None
    p: float = 1.0
    name = "plus_metric"

    def __post_init__(self):
        if not self.p > 0:
            raise ParameterError("PlusMetric needs p > 0")

    def _eval(self, s1, s2):
        return self.base(s1, s2) ** self.p + float(np.linalg.norm(s1.flat() - s2.flat()))


# --------------------------------------------------------------------------
# axiom checks


@dataclass
class AxiomReport:
    n: int
    max_symmetry_violation: float = 0.0
    min_offdiagonal: float = float("inf")
    diagonal_nonzero: int = 0
    negative_values: int = 0
    offdiagonal_zero: int = 0

    @property
    def ok(self) -> bool:
        return (self.max_symmetry_violation == 0.0 and self.diagonal_nonzero == 0
                and self.negative_values == 0 and self.offdiagonal_zero == 0)


def check_divergence_axioms(V: Divergence, sampler: Callable, n: int, rng: np.random.Generator | None = None) -> AxiomReport:
    """Sample ``n`` pairs ``(a, b)`` with ``sampler(rng)`` and tally violations of
    nonnegativity, symmetry and positive definiteness."""
    if n < 1:
        raise ParameterError("need n >= 1 samples")
    rng = np.random.default_rng(0) if rng is None else rng
    rep = AxiomReport(n=n)
    for _ in range(n):
        a, b = sampler(rng), sampler(rng)
        vab, vba = V(a, b), V(b, a)
        rep.max_symmetry_violation = max(rep.max_symmetry_violation, abs(vab - vba))
        rep.negative_values += (vab < 0) + (vba < 0)
        if V(a, a) != 0 or V(b, b) != 0:
            rep.diagonal_nonzero += 1
        if not a.identical(b):
            rep.min_offdiagonal = min(rep.min_offdiagonal, vab)
            rep.offdiagonal_zero += vab <= 0
    return rep


def inf_compactness_radius(V: Divergence, q: float, K_radius: float) -> float:
    """Radius ``R`` with ``V(s1, s2) >= q`` whenever ``|s1| > R`` and ``|s2| <= K_radius``."""
    if q < 0 or not K_radius > 0:
        raise ParameterError("need q >= 0 and K_radius > 0")
    if q == 0:
        return float(K_radius)
    if isinstance(V, SquaredEuclidean):
        return float(K_radius + np.sqrt(q))
    if isinstance(V, WeightedQuadratic):
        lam_min = float(np.linalg.eigvalsh(V.Q)[0])
        return float(K_radius + np.sqrt(q / lam_min))
    if isinstance(V, OptimalityGap):
        if V.c is None or V.x_star is None:
            raise ConfigurationError("OptimalityGap radius needs c and x*")
        # psi(x) - psi* >= (c/2)|x - x*|^2 and the other term is nonnegative
        return float(max(K_radius, np.linalg.norm(V.x_star) + np.sqrt(2.0 * q / V.c)))
    raise NotImplementedError(f"no analytic growth bound for {V.name}")
