import numpy as np
import pytest

from rsalab.divergence import (AsgdQuadraticForm, CatalystPair, OptimalityGap, PlusMetric, Power, SagaProxy,
                               SquaredEuclidean, Sum, WeightedQuadratic, check_divergence_axioms, check_spd,
                               inf_compactness_radius)
from rsalab.errors import ConfigurationError, ParameterError, ShapeError
from rsalab.operators import LiftedState


def S(*x, prev=None):
    return LiftedState(np.array(x, dtype=float), prev=prev)


def test_squared_euclidean_examples():
    V = SquaredEuclidean()
    assert V(S(1.5, -2.0), S(1.5, -2.0)) == 0.0
    assert V(S(1, 0), S(0, 1)) == 2.0


def test_optimality_gap_example():
    V = OptimalityGap(psi=lambda x: float(x @ x), psi_star=0.0)
    assert V(S(1.0), S(2.0)) == 5.0
    # the diagonal case never calls psi
    V_bad = OptimalityGap(psi=lambda x: 1 / 0, psi_star=0.0)
    assert V_bad(S(3.0), S(3.0)) == 0.0


def test_optimality_gap_needs_reference():
    V = OptimalityGap(psi=lambda x: float(x @ x))
    with pytest.raises(ConfigurationError):
        V(S(1.0), S(2.0))


def test_power_example():
    V = Power(base=SquaredEuclidean(), p=0.5)
    assert V(S(1, 0), S(0, 1)) == pytest.approx(np.sqrt(2), abs=1e-15)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        SquaredEuclidean()(S(1, 2), S(1, 2, 3))
    with pytest.raises(ShapeError):
        SquaredEuclidean()(S(1, 2, prev=np.zeros(2)), S(1, 2))


def test_spd_checks():
    with pytest.raises(ParameterError):
        check_spd(np.diag([1.0, 0.0]))
    with pytest.raises(ParameterError):
        check_spd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        check_spd(np.ones(3))
    with pytest.raises(ParameterError):
        WeightedQuadratic(Q=np.diag([1.0, -1.0]))
    with pytest.raises(ShapeError):
        AsgdQuadraticForm(P=np.eye(3), Q=np.eye(2))


def test_weighted_identity_equals_euclidean(rng):
    W, E = WeightedQuadratic(Q=np.eye(3)), SquaredEuclidean()
    for _ in range(200):
        a, b = S(*rng.standard_normal(3)), S(*rng.standard_normal(3))
        assert abs(W(a, b) - E(a, b)) <= 1e-12


def _gauss(d, prev=False):
    def sample(rng):
        return LiftedState(rng.standard_normal(d), prev=rng.standard_normal(d) if prev else None)
    return sample


def _shipped(quad):
    gap = OptimalityGap.for_problem(quad)
    E = SquaredEuclidean()
    P = np.eye(2 * quad.d) + 0.1 * np.ones((2 * quad.d, 2 * quad.d))
    return {
        "squared_euclidean": (E, _gauss(quad.d)),
        "weighted": (WeightedQuadratic(Q=quad.Q.sum(axis=0)), _gauss(quad.d)),
        "optimality_gap": (gap, _gauss(quad.d)),
        "catalyst_pair": (CatalystPair(inner=gap, alpha=0.4), _gauss(quad.d, prev=True)),
        "asgd_form": (AsgdQuadraticForm(P=P, Q=quad.Q_mean), _gauss(quad.d, prev=True)),
        "power": (Power(base=E, p=0.5), _gauss(quad.d)),
        "sum": (Sum(left=E, right=Power(base=E, p=2.0)), _gauss(quad.d)),
        "plus_metric": (PlusMetric(base=gap, p=2.0), _gauss(quad.d)),
    }


@pytest.mark.parametrize("name", ["squared_euclidean", "weighted", "optimality_gap", "catalyst_pair",
                                  "asgd_form", "power", "sum", "plus_metric"])
def test_axioms_hold(quad, name):
    V, sampler = _shipped(quad)[name]
    rep = check_divergence_axioms(V, sampler, 1000, np.random.default_rng(7))
    assert rep.ok, rep
    assert rep.min_offdiagonal > 0


def test_saga_proxy_axioms(quad):
    V = SagaProxy(b=0.02, grad=quad.grad_component)

    def sampler(rng):
        return LiftedState(rng.standard_normal(quad.d), proxies=rng.standard_normal((quad.N, quad.d)),
                           proxy_index=range(quad.N))

    rep = check_divergence_axioms(V, sampler, 500, np.random.default_rng(8))
    assert rep.ok


def test_saga_proxy_subset_index(quad):
    V = SagaProxy(b=1.0, grad=quad.grad_component)
    x = np.zeros(quad.d)
    a = LiftedState(x, proxies=np.zeros((2, quad.d)), proxy_index=(1, 3))
    b = LiftedState(x, proxies=np.array([np.zeros(quad.d), np.ones(quad.d)]), proxy_index=(1, 3))
    g = quad.Q[3] @ np.ones(quad.d)
    assert V(a, b) == pytest.approx(float(g @ g), rel=1e-14)


def test_catalyst_pair_case_split(quad):
    gap = OptimalityGap.for_problem(quad)
    V = CatalystPair(inner=gap, alpha=0.4)
    x, y = np.ones(quad.d), np.zeros(quad.d)
    assert V(LiftedState(x, prev=y), LiftedState(x, prev=y)) == 0.0
    # only the previous iterates differ
    v = V(LiftedState(x, prev=y), LiftedState(x, prev=x))
    assert v == pytest.approx(0.6 * gap(LiftedState(y), LiftedState(x)))
    with pytest.raises(ParameterError):
        CatalystPair(inner=gap, alpha=1.0)


def test_inf_compactness_examples(quad):
    assert inf_compactness_radius(SquaredEuclidean(), 4.0, 1.0) == 3.0
    assert inf_compactness_radius(SquaredEuclidean(), 0.0, 1.5) == 1.5
    gap = OptimalityGap(psi=lambda x: float(x @ x), psi_star=0.0, c=2.0, x_star=np.zeros(1))
    assert inf_compactness_radius(gap, 9.0, 1.0) == 3.0
    with pytest.raises(NotImplementedError):
        inf_compactness_radius(SagaProxy(b=1.0, grad=quad.grad_component), 1.0, 1.0)


def _ball_point(rng, d, lo, hi):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u) * rng.uniform(lo, hi)


@pytest.mark.parametrize("which", ["euclid", "weighted", "gap"])
def test_inf_compactness_radius_defining_inequality(quad, which):
    d = quad.d
    V = {"euclid": SquaredEuclidean(), "weighted": WeightedQuadratic(Q=quad.Q_mean),
         "gap": OptimalityGap.for_problem(quad)}[which]
    q, K = 2.0, 1.0
    R = inf_compactness_radius(V, q, K)
    rng = np.random.default_rng(11)
    vals = [V(LiftedState(_ball_point(rng, d, R * (1 + 1e-9), 2 * R)), LiftedState(_ball_point(rng, d, 0, K)))
            for _ in range(10_000)]
    assert min(vals) >= q
