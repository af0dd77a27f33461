"""Contraction coefficients, their feasibility conditions and bound sequences.

Every coefficient function is plain real arithmetic. Feasibility is a strict
inequality per printed condition, reported with its slack ``rhs - lhs``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from rsalab.errors import CertificationError, InfeasibleError, ParameterError

GEOMETRIC = "geometric"
GEOMETRIC_PLUS_ERROR = "geometric_plus_error"
CATALYST_ENVELOPE = "catalyst_envelope"


@dataclass
class Condition:
    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_json(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "pass": self.passed, "slack": self.slack}


@dataclass
class RateCertificate:
    """A contraction coefficient together with the conditions it rests on."""

    alpha: float
    conditions: list = field(default_factory=list)
    bound_kind: str = GEOMETRIC
    epsilon: float = 0.0
    envelope_constant: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all(c.passed for c in self.conditions) and 0 <= self.alpha < 1

    def require(self) -> "RateCertificate":
        if not self.feasible:
            failed = [c.name for c in self.conditions if not c.passed] or [f"alpha={self.alpha} >= 1"]
            raise InfeasibleError("infeasible parameters: " + ", ".join(failed), self)
        return self

    def bound(self, k, V0: float) -> np.ndarray:
        """Bound on the (mean) divergence after ``k`` steps from ``V0``."""
        self.require()
        k = np.asarray(k, dtype=float)
        a = self.alpha
        if self.bound_kind == GEOMETRIC:
            return a ** k * V0
        if self.bound_kind == GEOMETRIC_PLUS_ERROR:
            return error_bounds(a, self.epsilon, V0, k)
        if self.bound_kind == CATALYST_ENVELOPE:
            return self.envelope_constant * (1.0 - a) ** (k + 1) * V0
        raise ParameterError(f"unknown bound kind {self.bound_kind}")

    def to_json(self) -> dict:
        out = {"alpha": self.alpha, "feasible": self.feasible,
               "conditions": [c.to_json() for c in self.conditions], "bound_kind": self.bound_kind}
        out.update(self.extra)
        return out


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ParameterError(f"{k} must be positive, got {v}")


def _moduli(c, L):
    if not 0 < c <= L:
        raise ParameterError(f"need 0 < c <= L, got c={c}, L={L}")


# --------------------------------------------------------------------------
# single-step methods


def gamma(eta: float, c: float, L: float) -> float:
    """``1 - 2 eta c + eta^2 L^2``: per-step contraction of ``I - eta grad f``."""
    _positive(eta=eta)
    _moduli(c, L)
    return 1.0 - 2.0 * eta * c + eta * eta * L * L


def gamma_certificate(eta: float, c: float, L: float) -> RateCertificate:
    g = gamma(eta, c, L)
    return RateCertificate(g, [Condition("gamma(eta) < 1", g, 1.0)])


def saga_alpha(eta: float, b: float, N: int, c: float, L: float) -> RateCertificate:
    """``max{gamma + b L^2, (eta^2/b + N - 1)/N}`` with its three step conditions.

    The step range is read with modulus ``c`` in place of the undefined ``m``.
    """
    _positive(eta=eta, b=b, N=N)
    g = gamma(eta, c, L)
    first = g + b * L * L
    second = (eta * eta / b + N - 1) / N
    conds = [Condition("eta < c/L^2", eta, c / (L * L)),
             Condition("eta^2 < b", eta * eta, b),
             Condition("gamma(eta) + b L^2 < 1", first, 1.0)]
    return RateCertificate(max(first, second), conds, extra={"branches": [first, second]})


def asgd_closed_loop(Q: np.ndarray, eta: float, alpha: float, beta: float) -> np.ndarray:
    """Matrix of the noise-free difference dynamics of ASGD on ``0.5 x'Qx``.

    Derived from ``x+ = (1+beta) x - beta x_prev - eta Q((1+alpha) x - alpha x_prev)``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Q.shape[0]
    I = np.eye(d)
    top = np.hstack([(1 + beta) * I - eta * (1 + alpha) * Q, -beta * I + eta * alpha * Q])
    bottom = np.hstack([I, np.zeros((d, d))])
    return np.vstack([top, bottom])


@dataclass
class AsgdCertificate:
    rho: float
    P: np.ndarray
    M: np.ndarray
    residual: float
    spectral_radius: float


def asgd_certificate(Q, eta: float, alpha: float, beta: float, delta: float = 1e-6) -> AsgdCertificate:
    """Lyapunov certificate ``M' X M <= rho X`` for the ASGD difference dynamics.

    ``rho`` is the squared spectral radius of the closed-loop matrix plus
    ``delta``. ``X`` solves the Stein equation ``M'XM/rho - X + W = 0`` with
    ``W = blkdiag(Q/2, 0) + I``; the returned ``P = X - blkdiag(Q/2, 0)`` makes
    ``ds'P ds + 0.5 dx'Q dx = ds'X ds`` contract by ``rho`` per step.
    """
    _positive(eta=eta)
    if not (0 <= alpha < 1 and 0 <= beta < 1):
        raise ParameterError("need alpha, beta in [0, 1)")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Q.shape[0]
    M = asgd_closed_loop(Q, eta, alpha, beta)
    sr = float(np.max(np.abs(np.linalg.eigvals(M))))
    if sr >= 1:
        raise InfeasibleError(f"closed-loop spectral radius {sr:.6g} >= 1: no contraction")
    rho = sr * sr + delta
    if rho >= 1:
        raise InfeasibleError(f"rho = {rho} >= 1")
    E = np.zeros((2 * d, 2 * d))
    E[:d, :d] = 0.5 * Q
    W = E + np.eye(2 * d)
    A = M.T / math.sqrt(rho)
    X = scipy.linalg.solve_discrete_lyapunov(A, W)
    X = 0.5 * (X + X.T)
    P = X - E
    P = 0.5 * (P + P.T)
    resid = float(np.linalg.eigvalsh(M.T @ X @ M - rho * X).max())
    scale = float(np.linalg.norm(X, 2))
    if resid > 1e-8 * scale:
        raise CertificationError(f"Stein certificate residual {resid:.3g} exceeds 1e-8 * |X|")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise CertificationError("certificate matrix P is not positive definite")
    return AsgdCertificate(rho=rho, P=P, M=M, residual=resid, spectral_radius=sr)


# --------------------------------------------------------------------------
# epoch methods


def svrg_alpha_quadratic(eta: float, c: float, L: float, N: int) -> float:
    """``1/(c eta (1 - 2 L eta) N) + 2 L eta/(1 - 2 L eta)``."""
    _positive(eta=eta, N=N)
    _moduli(c, L)
    if 2 * L * eta >= 1:
        raise InfeasibleError(f"need 2 L eta < 1, got {2 * L * eta}")
    return 1.0 / (c * eta * (1 - 2 * L * eta) * N) + 2 * L * eta / (1 - 2 * L * eta)


def svrg_xi(alpha: float, kappa: float, m: int) -> float:
    """``alpha^m + kappa (1 - alpha^m)/(1 - alpha)``, the per-epoch factor."""
    if not 0 < alpha < 1:
        raise ParameterError("need alpha in (0, 1)")
    if not 0 <= kappa < 1 - alpha:
        raise InfeasibleError(f"need kappa in [0, 1 - alpha), got kappa={kappa}, alpha={alpha}")
    if m < 1:
        raise ParameterError("need m >= 1")
    am = alpha ** m
    xi = am + kappa * (1 - am) / (1 - alpha)
    assert xi < 1
    return xi


def svrg_certificate(eta: float, c: float, L: float, M: int, kappa: float | None = None) -> RateCertificate:
    """Epoch factor ``xi_M`` with ``alpha = gamma(eta)`` and ``kappa = eta^2 L^2`` by default."""
    a = gamma(eta, c, L)
    kappa = eta * eta * L * L if kappa is None else kappa
    conds = [Condition("gamma(eta) < 1", a, 1.0), Condition("kappa < 1 - alpha", kappa, 1.0 - a)]
    cert = RateCertificate(float("nan"), conds, extra={"alpha_inner": a, "kappa": kappa, "M": M})
    if all(c.passed for c in conds) and a > 0:
        cert.alpha = svrg_xi(a, kappa, M)
    return cert


def asvrg_alpha(eta: float, theta: float, M: int, c: float) -> float:
    """``1 - theta + theta^2/(M c eta)``."""
    _positive(eta=eta, theta=theta, M=M, c=c)
    return 1.0 - theta + theta * theta / (M * c * eta)


def asvrg_certificate(eta, theta, M, c) -> RateCertificate:
    a = asvrg_alpha(eta, theta, M, c)
    return RateCertificate(a, [Condition("theta <= 1", theta, 1.0 + 1e-300),
                               Condition("alpha(eta, theta) < 1", a, 1.0)])


def hsag_rates(eta: float, b: float, N: int, S_size: int, c: float, L: float, M: int) -> RateCertificate:
    """Epoch coefficient of the hybrid SAGA/SVRG scheme.

    ``K = max{gamma + b|S|L^2/N, (eta^2/b + N - 1)/N}`` and
    ``alpha = K^M + eta^2 L^2 |S^C| (1 - K^M) / (N (1 - K))``.
    """
    _positive(eta=eta, b=b, N=N, M=M)
    if not 0 <= S_size <= N:
        raise ParameterError("need 0 <= |S| <= N")
    g = gamma(eta, c, L)
    first = g + b * S_size * L * L / N
    second = (eta * eta / b + N - 1) / N
    Kc = max(first, second)
    Sc = N - S_size
    conds = [Condition("eta < 2c/((1+|S|/N) L^2)", eta, 2 * c / ((1 + S_size / N) * L * L)),
             Condition("eta^2 < b", eta * eta, b),
             Condition("gamma(eta) + b|S|L^2/N < 1", first, 1.0)]
    if Kc < 1:
        KM = Kc ** M
        alpha = KM + eta * eta * L * L * Sc / (N * (1 - Kc)) * (1 - KM)
    else:
        alpha = float("inf")
    return RateCertificate(alpha, conds, extra={"K": Kc})


# --------------------------------------------------------------------------
# Catalyst


@dataclass
class CatalystSchedule:
    q: float
    zeta: np.ndarray
    beta: np.ndarray
    eps_ratio: np.ndarray
    envelope: np.ndarray
    envelope_constant: float


def catalyst_zeta_next(zeta_prev: float, q: float) -> float:
    """Positive root of ``z^2 + (zeta_prev^2 - q) z - zeta_prev^2 = 0``."""
    p = zeta_prev * zeta_prev - q
    # p^2 + 4 zeta_prev^2 > 0; written to avoid cancellation when p > 0
    disc = math.sqrt(p * p + 4 * zeta_prev * zeta_prev)
    if p <= 0:
        return 0.5 * (-p + disc)
    return 2 * zeta_prev * zeta_prev / (p + disc)


def catalyst_schedule(c: float, theta: float, alpha: float, K: int, zeta0: float | None = None) -> CatalystSchedule:
    """``q = c/(c+theta)``, ``zeta_k``, ``beta_k``, ``eps_k/eps_0`` and the envelope
    ``16/(sqrt q - alpha)^2 (1 - alpha)^(k+1)`` for ``k = 0..K``.

    ``beta_0`` is computed with ``zeta_{-1} = zeta_0``; it multiplies
    ``x_0 - x_{-1} = 0`` and so never matters.
    """
    _positive(c=c, theta=theta)
    q = c / (c + theta)
    sq = math.sqrt(q)
    if not 0 < alpha < sq:
        raise InfeasibleError(f"need 0 < alpha < sqrt(q) = {sq}, got {alpha}")
    z = np.empty(K + 1)
    z[0] = sq if zeta0 is None else zeta0
    for k in range(1, K + 1):
        z[k] = catalyst_zeta_next(z[k - 1], q)
    zp = np.concatenate([[z[0]], z[:-1]])
    beta = zp * (1 - zp) / (zp * zp + z)
    ks = np.arange(K + 1)
    const = 16.0 / (sq - alpha) ** 2
    return CatalystSchedule(q=q, zeta=z, beta=beta, eps_ratio=(1 - alpha) ** ks,
                            envelope=const * (1 - alpha) ** (ks + 1), envelope_constant=const)


def catalyst_certificate(c: float, theta: float, alpha: float) -> RateCertificate:
    _positive(c=c, theta=theta)
    q = c / (c + theta)
    cert = RateCertificate(alpha, [Condition("alpha < sqrt(q)", alpha, math.sqrt(q))],
                           bound_kind=CATALYST_ENVELOPE, extra={"q": q})
    if cert.feasible:
        sched = catalyst_schedule(c, theta, alpha, 0)
        cert.envelope_constant = sched.envelope_constant
        cert.extra.update(zeta=float(sched.zeta[0]), beta=float(sched.beta[0]))
    return cert


# --------------------------------------------------------------------------
# error forms


def error_bounds(alpha: float, eps: float, V0: float, k):
    """``alpha^k V0 + eps (1 - alpha^k)/(1 - alpha)``."""
    if not 0 < alpha < 1:
        raise ParameterError("need alpha in (0, 1)")
    if k is math.inf:
        return eps / (1 - alpha)
    ak = np.power(alpha, k)
    out = ak * V0 + (1 - ak) / (1 - alpha) * eps
    return float(out) if np.ndim(out) == 0 else out


def markov_tail(alpha: float, eps: float, kappa: float) -> float:
    """Limit bound ``eps/(kappa (1 - alpha))`` on ``Pr{V(s_k, s*) >= kappa}``."""
    if not 0 < alpha < 1:
        raise ParameterError("need alpha in (0, 1)")
    if not kappa > 0:
        raise ParameterError("need kappa > 0")
    if math.isinf(kappa):
        return 0.0
    return eps / (kappa * (1 - alpha))
