"""Operators for the constant-stepsize algorithms.

Each class is an immutable random operator: ``draw`` samples everything a step
(or epoch) consumes and ``apply`` is then deterministic, so two chains can
share a draw. Lifted states:

=============  ==============================================
SgdOracle      ``x``
SgdProx        ``x``
Asgd           ``(x_k, x_{k-1})``
Saga           ``(x, phi_1..phi_N)``
Svrg, Asvrg    ``x`` (inner state carries the anchor gradient)
Hsag           ``(x, phi_n for n in S)``
Catalyst       ``(x_k, x_{k-1})``
=============  ==============================================

SAGA, SVRG and HSAG share :func:`_vr_step` so that the regression identities
between them hold with identical arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rsalab import rates
from rsalab.errors import ConfigurationError, ParameterError
from rsalab.operators import EpochOperator, LiftedState, RandomnessDraw, RandomOperator
from rsalab.problems import FiniteSumProblem, QuadraticProblem

GEOMETRIC_CAP = 10  # geometric epoch lengths are capped at GEOMETRIC_CAP * M


def _vr_step(eta, x, g_x, g_ref, g_mean):
    """``x - eta (grad f_i(x) - grad f_i(ref) + mean)``."""
    return x - eta * (g_x - g_ref + g_mean)


def _index_draw(rng, N, size, k):
    return RandomnessDraw(indices=tuple(int(i) for i in rng.integers(0, N, size=size)), step=k)


class _Base(RandomOperator):
    def __init__(self, problem: FiniteSumProblem):
        if problem.x_star is None:
            raise ConfigurationError("problem needs a certified optimizer")
        self.problem = problem

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({params})"

    def params(self) -> dict:
        return {}


def _positive(name, value):
    if not value > 0:
        raise ParameterError(f"{name} must be positive, got {value}")


def _smooth_only(problem, name):
    if problem.composite.kind != "zero":
        raise ConfigurationError(f"{name} takes plain gradient steps and ignores g; use a problem with composite zero")


def _epoch_length(M):
    if int(M) != M or M < 1:
        raise ParameterError(f"epoch length M must be an integer >= 1, got {M}")
    return int(M)


# --------------------------------------------------------------------------
# single-step methods


class SgdOracle(_Base):
    """``x - eta (grad f(x) + eps)`` with ``eps`` from the problem's noise law."""

    name = "sgd_oracle"

    def __init__(self, problem, eta: float):
        super().__init__(problem)
        _smooth_only(problem, "SgdOracle")
        if not isinstance(problem, QuadraticProblem):
            raise ConfigurationError("oracle SGD is defined for quadratic problems; use SgdProx otherwise")
        if eta < 0:
            raise ParameterError("eta must be nonnegative")
        self.eta = eta

    def params(self):
        return {"eta": self.eta}

    def lift(self, x):
        return LiftedState(x)

    def draw(self, rng, k=0):
        return RandomnessDraw(noise=self.problem.noise.sample(rng, self.problem.d), step=k)

    def apply(self, state, draw):
        g = self.problem.grad_full(state.x)
        return LiftedState(state.x - self.eta * (g + draw.noise))


class SgdProx(_Base):
    """``prox_{eta g}(x - (eta/J) sum_j grad f_{I_j}(x))``.

    With ``full_batch`` every draw enumerates all components, which makes the
    step the deterministic proximal gradient step.
    """

    name = "sgd_prox"

    def __init__(self, problem, eta: float, J: int = 1, full_batch: bool = False):
        super().__init__(problem)
        _positive("eta", eta)
        if int(J) != J or J < 1:
            raise ParameterError("batch size J must be an integer >= 1")
        self.eta, self.J, self.full_batch = eta, int(J), bool(full_batch)

    def params(self):
        return {"eta": self.eta, "J": self.J, "full_batch": self.full_batch}

    def lift(self, x):
        return LiftedState(x)

    def draw(self, rng, k=0):
        if self.full_batch:
            return RandomnessDraw(indices=tuple(range(self.problem.N)), step=k)
        return _index_draw(rng, self.problem.N, self.J, k)

    def apply(self, state, draw):
        p = self.problem
        x = state.x
        return LiftedState(p.prox(self.eta, x - self.eta * p.grad_batch(draw.indices, x)))


class Asgd(_Base):
    """``x+ = (1+beta) x - beta x_prev - eta (grad f(y) + eps)``, ``y = (1+alpha) x - alpha x_prev``.

    ``alpha = 0`` is the heavy-ball method and ``alpha = beta`` classical
    accelerated SGD.
    """

    name = "asgd"

    def __init__(self, problem, eta: float, alpha: float, beta: float):
        super().__init__(problem)
        _smooth_only(problem, "Asgd")
        _positive("eta", eta)
        if not (0 <= alpha < 1 and 0 <= beta < 1):
            raise ParameterError("need alpha, beta in [0, 1)")
        self.eta, self.alpha, self.beta = eta, alpha, beta

    def params(self):
        return {"eta": self.eta, "alpha": self.alpha, "beta": self.beta}

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        return LiftedState(x, prev=x.copy())

    def draw(self, rng, k=0):
        return RandomnessDraw(noise=self.problem.noise.sample(rng, self.problem.d), step=k)

    def apply(self, state, draw):
        x, xp = state.x, state.prev
        y = (1 + self.alpha) * x - self.alpha * xp
        g = self.problem.grad_full(y)
        x_new = ((1 + self.beta) * x - self.beta * xp) - self.eta * (g + draw.noise)
        return LiftedState(x_new, prev=x)


class Saga(_Base):
    """Joint update of the iterate and the proxy table.

    ``x+ = x - eta (grad f_I(x) - grad f_I(phi_I) + (1/N) sum_n grad f_n(phi_n))``
    and ``phi_I+ = x``. ``b`` only weights the divergence.
    """

    name = "saga"

    def __init__(self, problem, eta: float, b: float | None = None):
        super().__init__(problem)
        _smooth_only(problem, "Saga")
        _positive("eta", eta)
        if b is not None:
            _positive("b", b)
        self.eta, self.b = eta, b

    def params(self):
        return {"eta": self.eta, "b": self.b}

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        N = self.problem.N
        return LiftedState(x, proxies=np.repeat(x[None, :], N, axis=0), proxy_index=tuple(range(N)))

    def draw(self, rng, k=0):
        return _index_draw(rng, self.problem.N, 1, k)

    def apply(self, state, draw):
        p = self.problem
        i = draw.indices[0]
        phi = state.proxies
        x_new = _vr_step(self.eta, state.x, p.grad_component(i, state.x), p.grad_component(i, phi[i]),
                         p.grad_mean(phi))
        phi_new = phi.copy()
        phi_new[i] = state.x
        return LiftedState(x_new, proxies=phi_new, proxy_index=state.proxy_index)


# --------------------------------------------------------------------------
# epoch methods


class _EpochBase(EpochOperator, _Base):
    epoch_law = "fixed"

    def epoch_draw(self, rng, k):
        M = self.M
        if self.epoch_law == "geometric":
            tau = int(min(rng.geometric(1.0 / M), GEOMETRIC_CAP * M))
        else:
            tau = M
        return RandomnessDraw(indices=tuple(int(i) for i in rng.integers(0, self.problem.N, size=tau)),
                              epoch_length=tau, step=k)

    def draw(self, rng, k=0):
        return self.epoch_draw(rng, k)


class Svrg(_EpochBase):
    """Inner step ``x~ - eta (grad f_I(x~) - grad f_I(x_k) + grad f(x_k))``.

    This is ``G(x~) - G(x_k) + T(x_k)`` with ``G(s) = s - eta grad f_I(s)`` and
    the exact gradient step ``T``, written in the algebraically equal form
    that HSAG with ``S`` empty also uses. ``epoch_law="geometric"`` draws the
    epoch length from a geometric law with mean ``M``, capped at ``10 M``.
    """

    name = "svrg"

    def __init__(self, problem, eta: float, M: int, epoch_law: str = "fixed", kappa: float | None = None):
        super().__init__(problem)
        _smooth_only(problem, "Svrg")
        _positive("eta", eta)
        if epoch_law not in ("fixed", "geometric"):
            raise ParameterError(f"unknown epoch law {epoch_law!r}")
        self.eta, self.M, self.epoch_law, self.kappa = eta, _epoch_length(M), epoch_law, kappa

    def params(self):
        return {"eta": self.eta, "M": self.M, "epoch_law": self.epoch_law}

    def lift(self, x):
        return LiftedState(x)

    def inner_init(self, anchor):
        return anchor.x, self.problem.grad_full(anchor.x)

    def inner_step(self, inner, anchor, draw):
        x, g_mean = inner
        p = self.problem
        i = draw.indices[0]
        return _vr_step(self.eta, x, p.grad_component(i, x), p.grad_component(i, anchor.x), g_mean), g_mean

    def project(self, inner):
        return LiftedState(inner[0])

    def inner_expectation(self, x, anchor_x) -> np.ndarray:
        """Average of the inner step over all ``N`` indices."""
        anchor = LiftedState(anchor_x)
        inner = (np.asarray(x, dtype=float), self.problem.grad_full(anchor_x))
        outs = [self.inner_step(inner, anchor, RandomnessDraw(indices=(i,)))[0] for i in range(self.problem.N)]
        return np.mean(outs, axis=0)


class Asvrg(_EpochBase):
    """Accelerated SVRG with inner state ``(x~, y~)`` started at ``(x_k, x_k)``.

    ``y~+ = prox_{(eta/theta) g}(y~ - (eta/theta) v)`` with the variance-reduced
    gradient ``v = grad f_I(x~) - grad f_I(x_k) + grad f(x_k)``, then
    ``x~+ = x_k + theta (y~+ - x_k)``. The projection returns ``x~``.
    """

    name = "asvrg"

    def __init__(self, problem, eta: float, theta: float, M: int):
        super().__init__(problem)
        _positive("eta", eta)
        if not 0 < theta <= 1:
            raise ParameterError("need theta in (0, 1]")
        self.eta, self.theta, self.M = eta, theta, _epoch_length(M)

    def params(self):
        return {"eta": self.eta, "theta": self.theta, "M": self.M}

    def lift(self, x):
        return LiftedState(x)

    def inner_init(self, anchor):
        return anchor.x, anchor.x, self.problem.grad_full(anchor.x)

    def inner_step(self, inner, anchor, draw):
        x, y, g_mean = inner
        p = self.problem
        i = draw.indices[0]
        v = p.grad_component(i, x) - p.grad_component(i, anchor.x) + g_mean
        t = self.eta / self.theta
        y_new = p.prox(t, y - t * v)
        x_new = anchor.x + self.theta * (y_new - anchor.x)
        return x_new, y_new, g_mean

    def project(self, inner):
        return LiftedState(inner[0])


class Hsag(_EpochBase):
    """Hybrid SAGA/SVRG epoch.

    Components in ``S`` (0-based) keep SAGA proxies across epochs; those in
    the complement are reset to the anchor ``x_k`` at the start of every epoch
    and never updated inside it.
    """

    name = "hsag"

    def __init__(self, problem, eta: float, S, M: int, b: float | None = None):
        super().__init__(problem)
        _smooth_only(problem, "Hsag")
        _positive("eta", eta)
        S = tuple(sorted(int(n) for n in S))
        if len(set(S)) != len(S) or any(not 0 <= n < problem.N for n in S):
            raise ParameterError(f"S must be distinct indices in [0, {problem.N})")
        if b is not None:
            _positive("b", b)
        self.eta, self.S, self.M, self.b = eta, S, _epoch_length(M), b
        self._in_S = frozenset(S)

    def params(self):
        return {"eta": self.eta, "S": list(self.S), "M": self.M, "b": self.b}

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        if not self.S:
            return LiftedState(x)
        return LiftedState(x, proxies=np.repeat(x[None, :], len(self.S), axis=0), proxy_index=self.S)

    def inner_init(self, anchor):
        phi = np.repeat(anchor.x[None, :], self.problem.N, axis=0)
        if self.S:
            phi[list(self.S)] = anchor.proxies
        return anchor.x, phi

    def inner_step(self, inner, anchor, draw):
        x, phi = inner
        p = self.problem
        i = draw.indices[0]
        x_new = _vr_step(self.eta, x, p.grad_component(i, x), p.grad_component(i, phi[i]), p.grad_mean(phi))
        if i in self._in_S:
            phi = phi.copy()
            phi[i] = x
        return x_new, phi

    def project(self, inner):
        x, phi = inner
        if not self.S:
            return LiftedState(x)
        return LiftedState(x, proxies=phi[list(self.S)], proxy_index=self.S)


# --------------------------------------------------------------------------
# Catalyst


@dataclass
class InnerSolverResult:
    x: np.ndarray
    iterations: int
    gap_bound: float


def prox_gradient_solve(problem, theta: float, center: np.ndarray, x0: np.ndarray, eps: float,
                        max_iter: int = 100_000) -> InnerSolverResult:
    """Approximately minimize ``psi(x) + (theta/2)|x - center|^2``.

    Runs proximal gradient with step ``1/(L+theta)`` and returns ``x+`` as soon
    as the gradient-mapping bound ``|G(x)|^2/(2(c+theta)) >= psi_k(x+) - psi_k*``
    is at most ``eps``.
    """
    mu, step = problem.c + theta, 1.0 / (problem.L + theta)
    x = np.array(x0, dtype=float)
    bound = math.inf
    for it in range(1, max_iter + 1):
        g = problem.grad_full(x) + theta * (x - center)
        x_new = problem.prox(step, x - step * g)
        G = (x - x_new) / step
        gg = float(G @ G)
        bound = gg / (2 * mu)
        x = x_new
        if bound <= eps or gg == 0.0 or math.sqrt(gg) <= 1e-15 * max(1.0, float(np.linalg.norm(x))):
            break
    return InnerSolverResult(x=x, iterations=it, gap_bound=bound)


class Catalyst(_Base):
    """Time-varying outer operator ``(x_k, x_{k-1}) -> (x_{k+1}, x_k)``.

    ``x_{k+1}`` is an ``eps_k``-minimizer of ``psi(x) + (theta/2)|x - y_k|^2``
    with ``y_k = x_k + beta_k (x_k - x_{k-1})``. The tolerance
    ``eps_k = (2/9) gap_0 (1 - alpha)^k`` needs the initial optimality gap;
    :meth:`bind` takes the smaller gap of the two chains so both share one
    schedule that is valid for each.
    """

    name = "catalyst"

    def __init__(self, problem, theta: float, alpha: float, eps0: float | None = None,
                 max_inner: int = 100_000, horizon: int = 1000):
        super().__init__(problem)
        _positive("theta", theta)
        self.theta, self.alpha, self.eps0, self.max_inner = theta, alpha, eps0, int(max_inner)
        self.schedule = rates.catalyst_schedule(problem.c, theta, alpha, horizon)

    def params(self):
        return {"theta": self.theta, "alpha": self.alpha, "eps0": self.eps0}

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        return LiftedState(x, prev=x.copy())

    def bind(self, s_a, s_b):
        p = self.problem
        gap = min(p.psi(s_a.x) - p.psi_star, p.psi(s_b.x) - p.psi_star)
        return Catalyst(p, self.theta, self.alpha, eps0=max(gap, 0.0) * 2.0 / 9.0,
                        max_inner=self.max_inner, horizon=len(self.schedule.beta) - 1)

    def beta(self, k: int) -> float:
        if k < len(self.schedule.beta):
            return float(self.schedule.beta[k])
        return float(rates.catalyst_schedule(self.problem.c, self.theta, self.alpha, k).beta[k])

    def epsilon(self, k: int) -> float:
        if self.eps0 is None:
            raise ConfigurationError("Catalyst needs eps0; bind the operator to the initial states first")
        return self.eps0 * (1.0 - self.alpha) ** k

    def draw(self, rng, k=0):
        return RandomnessDraw(step=k)

    def apply(self, state, draw):
        k = draw.step
        x, xp = state.x, state.prev
        center = x + self.beta(k) * (x - xp)
        res = prox_gradient_solve(self.problem, self.theta, center, x, self.epsilon(k), self.max_inner)
        return LiftedState(res.x, prev=x)


# --------------------------------------------------------------------------
# configuration


_KINDS = {
    "sgdoracle": ("sgd_oracle", {"eta"}, {"eta"}),
    "sgdprox": ("sgd_prox", {"eta"}, {"eta", "J", "full_batch"}),
    "asgd": ("asgd", {"eta", "alpha", "beta"}, {"eta", "alpha", "beta"}),
    "saga": ("saga", {"eta", "b"}, {"eta", "b"}),
    "svrg": ("svrg", {"eta", "M"}, {"eta", "M", "epoch_law", "kappa"}),
    "asvrg": ("asvrg", {"eta", "theta", "M"}, {"eta", "theta", "M"}),
    "hsag": ("hsag", {"eta", "S", "b", "M"}, {"eta", "S", "b", "M"}),
    "catalyst": ("catalyst", {"theta", "alpha"}, {"theta", "alpha", "max_inner"}),
}


def normalize_kind(kind: str) -> str:
    key = kind.replace("_", "").replace("-", "").lower()
    if key not in _KINDS:
        raise ConfigurationError(f"unknown algorithm {kind!r}; choose from {sorted(v[0] for v in _KINDS.values())}")
    return _KINDS[key][0]


@dataclass
class AlgorithmConfig:
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict) -> "AlgorithmConfig":
        obj = dict(obj)
        if "kind" not in obj:
            raise ConfigurationError("algorithm config needs a 'kind'")
        kind = normalize_kind(obj.pop("kind"))
        params = obj.pop("params", {}) | obj
        _, required, allowed = _KINDS[kind.replace("_", "")]
        unknown = set(params) - allowed
        if unknown:
            raise ConfigurationError(f"unknown parameters for {kind}: {sorted(unknown)}")
        missing = required - set(params)
        if missing:
            raise ConfigurationError(f"missing parameters for {kind}: {sorted(missing)}")
        return cls(kind=kind, params=params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def make_operator(config: AlgorithmConfig | dict, problem: FiniteSumProblem) -> RandomOperator:
    if isinstance(config, dict):
        config = AlgorithmConfig.from_dict(config)
    p = config.params
    k = config.kind
    if k == "sgd_oracle":
        return SgdOracle(problem, p["eta"])
    if k == "sgd_prox":
        return SgdProx(problem, p["eta"], p.get("J", 1), p.get("full_batch", False))
    if k == "asgd":
        return Asgd(problem, p["eta"], p["alpha"], p["beta"])
    if k == "saga":
        return Saga(problem, p["eta"], p["b"])
    if k == "svrg":
        return Svrg(problem, p["eta"], p["M"], p.get("epoch_law", "fixed"), p.get("kappa"))
    if k == "asvrg":
        return Asvrg(problem, p["eta"], p["theta"], p["M"])
    if k == "hsag":
        return Hsag(problem, p["eta"], p["S"], p["M"], p["b"])
    if k == "catalyst":
        return Catalyst(problem, p["theta"], p["alpha"], max_inner=p.get("max_inner", 100_000))
    raise ConfigurationError(f"unknown algorithm {k!r}")


def certificate(config: AlgorithmConfig | dict, problem: FiniteSumProblem) -> rates.RateCertificate:
    """Rate certificate for ``config`` on ``problem`` (feasibility not enforced)."""
    if isinstance(config, dict):
        config = AlgorithmConfig.from_dict(config)
    p, k = config.params, config.kind
    c, L, N = problem.c, problem.L, problem.N
    if k in ("sgd_oracle", "sgd_prox"):
        return rates.gamma_certificate(p["eta"], c, L)
    if k == "asgd":
        if not isinstance(problem, QuadraticProblem):
            raise ConfigurationError("the ASGD certificate needs a quadratic problem")
        cert = rates.asgd_certificate(problem.Q_mean, p["eta"], p["alpha"], p["beta"])
        return rates.RateCertificate(cert.rho, [rates.Condition("spectral radius < 1", cert.spectral_radius, 1.0)],
                                     extra={"P": cert.P, "spectral_radius": cert.spectral_radius})
    if k == "saga":
        return rates.saga_alpha(p["eta"], p["b"], N, c, L)
    if k == "svrg":
        if p.get("epoch_law", "fixed") != "fixed":
            raise ConfigurationError("the SVRG certificate is stated for a fixed epoch length")
        return rates.svrg_certificate(p["eta"], c, L, p["M"], p.get("kappa"))
    if k == "asvrg":
        return rates.asvrg_certificate(p["eta"], p["theta"], p["M"], c)
    if k == "hsag":
        return rates.hsag_rates(p["eta"], p["b"], N, len(p["S"]), c, L, p["M"])
    if k == "catalyst":
        return rates.catalyst_certificate(c, p["theta"], p["alpha"])
    raise ConfigurationError(f"unknown algorithm {k!r}")
