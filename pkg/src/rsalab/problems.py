"""Strongly convex finite-sum test problems.

Three families are served:

* quadratic finite sums ``f_n(x) = 0.5 x'Q_n x + a_n'x + b_n`` with a
  controlled spectrum ``c I <= Q_n <= L I``,
* smooth nonlinear sums ``f_n(x) = (c/2)|x|^2 + (L - c) logcosh(w_n'x + v_n)``
  whose moduli ``c`` and ``L`` are exact by construction,
* user callbacks (the generic gradient path used to cross-check the others).

Each problem optionally carries a composite term ``g`` with a closed-form prox
and a certified minimizer of ``psi = f + g``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rsalab.errors import CertificationError, ParameterError
from rsalab.serialize import decode_array, decode_float, encode_array, encode_float

COMPOSITE_KINDS = ("zero", "l1", "half_squared_l2")
NOISE_LAWS = ("uniform_ball", "truncated_gaussian")


# --------------------------------------------------------------------------
# composite term


@dataclass(frozen=True)
class Composite:
    kind: str = "zero"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in COMPOSITE_KINDS:
            raise ParameterError(f"unknown composite kind {self.kind!r}")
        if self.kind != "zero" and not self.lam > 0:
            raise ParameterError(f"composite {self.kind} needs lambda > 0")

    def value(self, x: np.ndarray) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.lam * float(np.abs(x).sum())
        return 0.5 * self.lam * float(x @ x)

    def prox(self, step: float, z: np.ndarray) -> np.ndarray:
        """prox of ``step * g`` evaluated at ``z``."""
        return prox(self.kind, step * self.lam, z)

    def to_json(self) -> dict:
        return {"kind": self.kind, "lambda": encode_float(self.lam)}

    @classmethod
    def from_json(cls, obj: dict | None) -> "Composite":
        if not obj:
            return cls()
        return cls(obj.get("kind", "zero"), decode_float(obj.get("lambda", 0.0)))


def prox(kind: str, t: float, z) -> np.ndarray:
    """Closed-form prox with threshold ``t`` (already scaled by step and lambda).

    >>> float(prox("l1", 0.3, np.array([1.0]))[0])
    0.7
    """
    if t < 0:
        raise ParameterError("prox threshold must be nonnegative")
    z = np.asarray(z, dtype=float)
    if kind == "zero":
        return z.copy()
    if kind == "l1":
        return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    if kind == "half_squared_l2":
        return z / (1.0 + t)
    raise ParameterError(f"unknown composite kind {kind!r}")


# --------------------------------------------------------------------------
# bounded oracle noise


@dataclass(frozen=True)
class NoisyOracle:
    """Zero-mean noise with ``|eps| <= bound`` almost surely."""

    bound: float = 0.0
    law: str = "uniform_ball"
    sigma: float = 1.0

    def __post_init__(self):
        if self.law not in NOISE_LAWS:
            raise ParameterError(f"unknown noise law {self.law!r}")
        if self.bound < 0:
            raise ParameterError("noise bound must be nonnegative")

    def sample(self, rng: np.random.Generator, d: int) -> np.ndarray:
        if self.bound == 0:
            return np.zeros(d)
        if self.law == "uniform_ball":
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            return u * self.bound * rng.random() ** (1.0 / d)
        # symmetric rejection keeps the mean at zero
        while True:
            e = rng.normal(0.0, self.sigma, d)
            if np.linalg.norm(e) <= self.bound:
                return e

    def to_json(self) -> dict:
        return {"law": self.law, "B": encode_float(self.bound), "sigma": encode_float(self.sigma)}

    @classmethod
    def from_json(cls, obj: dict | None) -> "NoisyOracle":
        if not obj:
            return cls()
        return cls(decode_float(obj.get("B", 0.0)), obj.get("law", "uniform_ball"),
                   decode_float(obj.get("sigma", 1.0)))


# --------------------------------------------------------------------------
# problems


@dataclass(eq=False)
class FiniteSumProblem:
    """Base class: ``psi(x) = (1/N) sum_n f_n(x) + g(x)``.

    Subclasses provide ``value_component``, ``grad_component`` and
    ``grad_components``; everything else is derived here so that every
    algorithm evaluates averages through the same arithmetic.
    """

    c: float
    L: float
    composite: Composite = field(default_factory=Composite)
    noise: NoisyOracle = field(default_factory=NoisyOracle)
    x_star: np.ndarray | None = None
    residual: float = float("nan")
    seed: int | None = None

    kind = "abstract"
    d = 0
    N = 0

    def _check_moduli(self, strict: bool = False):
        if not self.c > 0:
            raise ParameterError("strong convexity modulus c must be > 0")
        if self.c > self.L or (strict and self.c == self.L):
            raise ParameterError(f"need c {'<' if strict else '<='} L, got c={self.c}, L={self.L}")

    # -- per-component evaluation (subclass hooks)
    def value_component(self, n: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_component(self, n: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_components(self, X: np.ndarray) -> np.ndarray:
        """Row ``n`` of the result is ``grad f_n(X[n])``."""
        return np.stack([self.grad_component(n, X[n]) for n in range(self.N)])

    # -- derived
    def grad_mean(self, X: np.ndarray) -> np.ndarray:
        """``(1/N) sum_n grad f_n(X[n])``; the proxy average of SAGA-type methods."""
        return self.grad_components(X).mean(axis=0)

    def grad_full(self, x: np.ndarray) -> np.ndarray:
        return self.grad_mean(np.repeat(np.asarray(x, dtype=float)[None, :], self.N, axis=0))

    def grad_batch(self, indices: Sequence[int], x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.d)
        for n in indices:
            g = g + self.grad_component(n, x)
        return g / len(indices)

    def f(self, x: np.ndarray) -> float:
        return float(np.mean([self.value_component(n, x) for n in range(self.N)]))

    def psi(self, x: np.ndarray) -> float:
        return self.f(x) + self.composite.value(x)

    def prox(self, step: float, z: np.ndarray) -> np.ndarray:
        return self.composite.prox(step, z)

    def oracle_gradient(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.grad_full(x) + self.noise.sample(rng, self.d)

    @property
    def psi_star(self) -> float:
        if self.x_star is None:
            raise CertificationError("problem has no certified optimizer")
        return self.psi(self.x_star)

    def fixed_point_residual(self, x: np.ndarray, step: float | None = None) -> float:
        step = 1.0 / self.L if step is None else step
        return float(np.linalg.norm(x - self.prox(step, x - step * self.grad_full(x))))

    def certify(self, x0: np.ndarray | None = None, tol: float = 1e-12,
                max_iter: int = 1_000_000) -> np.ndarray:
        """Deterministic proximal gradient with step 1/L until the fixed-point
        residual drops to ``tol``. Sets and returns ``x_star``."""
        step = 1.0 / self.L
        x = np.zeros(self.d) if x0 is None else np.array(x0, dtype=float)
        for _ in range(max_iter):
            x_new = self.prox(step, x - step * self.grad_full(x))
            res = float(np.linalg.norm(x_new - x))
            x = x_new
            if res <= tol:
                break
        else:
            raise CertificationError(f"prox-gradient did not reach residual {tol} in {max_iter} iterations")
        self.x_star = x
        self.residual = self.fixed_point_residual(x)
        return x

    # -- serialization
    def to_json(self) -> dict:
        return {
            "d": self.d,
            "N": self.N,
            "c": encode_float(self.c),
            "L": encode_float(self.L),
            "composite": self.composite.to_json(),
            "noise": self.noise.to_json(),
            "terms": self._terms_json(),
            "optimizer": None if self.x_star is None else {
                "x_star": encode_array(self.x_star), "residual": encode_float(self.residual)},
            "seed": self.seed,
        }

    def _terms_json(self) -> list:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


@dataclass(eq=False)
class QuadraticProblem(FiniteSumProblem):
    Q: np.ndarray = None  # (N, d, d)
    a: np.ndarray = None  # (N, d)
    b: np.ndarray = None  # (N,)

    kind = "quadratic"

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.N, self.d = self.Q.shape[0], self.Q.shape[1]
        self.a = np.zeros((self.N, self.d)) if self.a is None else np.asarray(self.a, dtype=float).reshape(self.N, self.d)
        self.b = np.zeros(self.N) if self.b is None else np.asarray(self.b, dtype=float).reshape(self.N)
        self._check_moduli()
        eig = np.linalg.eigvalsh(self.Q)
        if eig.min() < self.c - 1e-9 or eig.max() > self.L + 1e-9:
            raise ParameterError(
                f"term spectrum [{eig.min():.6g}, {eig.max():.6g}] outside [c, L] = [{self.c}, {self.L}]")

    @classmethod
    def from_terms(cls, Q, a=None, b=None, composite: Composite | None = None,
                   noise: NoisyOracle | None = None, c: float | None = None,
                   L: float | None = None) -> "QuadraticProblem":
        """Build from explicit terms; ``c``/``L`` default to the extreme eigenvalues."""
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 2:
            Q = Q[None]
        eig = np.linalg.eigvalsh(Q)
        prob = cls(c=float(eig.min()) if c is None else c, L=float(eig.max()) if L is None else L,
                   composite=composite or Composite(), noise=noise or NoisyOracle(), Q=Q, a=a, b=b)
        prob.solve()
        return prob

    @property
    def Q_mean(self) -> np.ndarray:
        return self.Q.mean(axis=0)

    @property
    def a_mean(self) -> np.ndarray:
        return self.a.mean(axis=0)

    def value_component(self, n, x):
        return float(0.5 * x @ self.Q[n] @ x + self.a[n] @ x + self.b[n])

    def grad_component(self, n, x):
        return self.Q[n] @ x + self.a[n]

    def grad_components(self, X):
        return np.einsum("nij,nj->ni", self.Q, X) + self.a

    def solve(self) -> np.ndarray:
        """Direct linear solve for the smooth composites, prox-gradient for L1."""
        if self.composite.kind == "l1":
            return self.certify()
        H = self.Q_mean + (self.composite.lam * np.eye(self.d) if self.composite.kind == "half_squared_l2" else 0)
        x = np.linalg.solve(H, -self.a_mean)
        # one refinement step keeps the residual near machine precision
        x = x - np.linalg.solve(H, H @ x + self.a_mean)
        self.x_star = x
        self.residual = float(np.linalg.norm(H @ x + self.a_mean))
        return x

    def _terms_json(self):
        return [{"Q": encode_array(self.Q[n]), "a": encode_array(self.a[n]), "b": encode_float(self.b[n])}
                for n in range(self.N)]


def _logcosh(z):
    return np.logaddexp(z, -z) - np.log(2.0)


@dataclass(eq=False)
class NonlinearProblem(FiniteSumProblem):
    """``f_n(x) = (c/2)|x|^2 + (L - c) logcosh(w_n'x + v_n)`` with ``|w_n| = 1``."""

    W: np.ndarray = None  # (N, d), unit rows
    v: np.ndarray = None  # (N,)

    kind = "nonlinear"

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.N, self.d = self.W.shape
        self.v = np.zeros(self.N) if self.v is None else np.asarray(self.v, dtype=float).reshape(self.N)
        self._check_moduli(strict=True)
        norms = np.linalg.norm(self.W, axis=1)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-12):
            raise ParameterError("nonlinear directions must have unit norm")

    def value_component(self, n, x):
        return float(0.5 * self.c * x @ x + (self.L - self.c) * _logcosh(self.W[n] @ x + self.v[n]))

    def grad_component(self, n, x):
        return self.c * x + (self.L - self.c) * np.tanh(self.W[n] @ x + self.v[n]) * self.W[n]

    def grad_components(self, X):
        z = np.einsum("nj,nj->n", self.W, X) + self.v
        return self.c * X + (self.L - self.c) * np.tanh(z)[:, None] * self.W

    def _terms_json(self):
        return [{"kind": "logcosh", "params": {"w": encode_array(self.W[n]), "v": encode_float(self.v[n])}}
                for n in range(self.N)]


@dataclass(eq=False)
class CallbackProblem(FiniteSumProblem):
    """Generic path: components given as ``(value, gradient)`` callables."""

    values: Sequence[Callable] = ()
    grads: Sequence[Callable] = ()
    dim: int = 1

    kind = "callback"

    def __post_init__(self):
        self.N, self.d = len(self.grads), self.dim
        self._check_moduli()

    def value_component(self, n, x):
        return float(self.values[n](x))

    def grad_component(self, n, x):
        return np.asarray(self.grads[n](x), dtype=float)

    @classmethod
    def wrap(cls, problem: FiniteSumProblem) -> "CallbackProblem":
        """Re-expose ``problem`` through per-component callbacks only."""
        vals = [lambda x, n=n: problem.value_component(n, x) for n in range(problem.N)]
        grads = [lambda x, n=n: problem.grad_component(n, x) for n in range(problem.N)]
        return cls(c=problem.c, L=problem.L, composite=problem.composite, noise=problem.noise,
                   x_star=None if problem.x_star is None else problem.x_star.copy(),
                   residual=problem.residual, values=vals, grads=grads, dim=problem.d)


# --------------------------------------------------------------------------
# generators


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    A = rng.standard_normal((d, d))
    Qm, R = np.linalg.qr(A)
    return Qm * np.sign(np.diag(R))


def _check_params(d, N, c, L):
    if d < 1 or N < 1:
        raise ParameterError("need d >= 1 and N >= 1")
    if not c > 0:
        raise ParameterError("need c > 0")
    if c > L:
        raise ParameterError("need c <= L")


def generate_quadratic(d: int, N: int, c: float, L: float, seed: int = 0,
                       composite: Composite | None = None,
                       noise: NoisyOracle | None = None) -> QuadraticProblem:
    """Random quadratic finite sum whose term spectra are exactly within ``[c, L]``.

    ``c`` is placed in the first term and ``L`` in the last so that the bounds are
    attained.
    """
    _check_params(d, N, c, L)
    rng = np.random.default_rng(seed)
    Q = np.empty((N, d, d))
    for n in range(N):
        lam = rng.uniform(c, L, size=d)
        if n == 0:
            lam[0] = c
        if n == N - 1:
            lam[-1] = L
        R = _random_orthogonal(rng, d)
        Qn = R.T @ np.diag(lam) @ R
        Q[n] = 0.5 * (Qn + Qn.T)
    a = rng.standard_normal((N, d))
    prob = QuadraticProblem(c=c, L=L, composite=composite or Composite(), noise=noise or NoisyOracle(),
                            Q=Q, a=a, b=np.zeros(N), seed=seed)
    prob.solve()
    return prob


def generate_nonlinear(d: int, N: int, c: float, L: float, seed: int = 0,
                       composite: Composite | None = None,
                       noise: NoisyOracle | None = None) -> NonlinearProblem:
    _check_params(d, N, c, L)
    if c == L:
        raise ParameterError("nonlinear family needs c < L")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((N, d))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    v = rng.standard_normal(N)
    prob = NonlinearProblem(c=c, L=L, composite=composite or Composite(), noise=noise or NoisyOracle(),
                            W=W, v=v, seed=seed)
    prob.certify()
    return prob


# --------------------------------------------------------------------------
# instance files


def problem_from_json(obj: dict) -> FiniteSumProblem:
    composite = Composite.from_json(obj.get("composite"))
    noise = NoisyOracle.from_json(obj.get("noise"))
    c, L = decode_float(obj["c"]), decode_float(obj["L"])
    terms = obj["terms"]
    if terms and "Q" in terms[0]:
        prob = QuadraticProblem(c=c, L=L, composite=composite, noise=noise,
                                Q=np.stack([decode_array(t["Q"]) for t in terms]),
                                a=np.stack([decode_array(t["a"]) for t in terms]),
                                b=np.array([decode_float(t.get("b", 0.0)) for t in terms]),
                                seed=obj.get("seed"))
    elif terms and terms[0].get("kind") == "logcosh":
        prob = NonlinearProblem(c=c, L=L, composite=composite, noise=noise,
                                W=np.stack([decode_array(t["params"]["w"]) for t in terms]),
                                v=np.array([decode_float(t["params"]["v"]) for t in terms]),
                                seed=obj.get("seed"))
    else:
        raise ParameterError("unrecognized term encoding in instance file")
    opt = obj.get("optimizer")
    if opt:
        prob.x_star = decode_array(opt["x_star"])
        prob.residual = decode_float(opt["residual"])
    elif isinstance(prob, QuadraticProblem):
        prob.solve()
    else:
        prob.certify()
    return prob


def load_problem(path: str | Path) -> FiniteSumProblem:
    return problem_from_json(json.loads(Path(path).read_text()))
