"""Acceptance criteria 1-11.

Each test prints one ``criterion N: PASS|FAIL`` line (also collected into the
terminal summary) and then asserts. Scenarios 1-7 run the committed configs in
``configs/`` through the ``rsa-lab verify`` entry point.
"""
import contextlib
import io
import json
import math
from itertools import product
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from rsalab import rates
from rsalab.algorithms import Asvrg, Hsag, Saga, SgdProx, Svrg
from rsalab.divergence import (AsgdQuadraticForm, CatalystPair, OptimalityGap, PlusMetric, Power, SagaProxy,
                               SquaredEuclidean, Sum, WeightedQuadratic, check_divergence_axioms)
from rsalab.harness import runner
from rsalab.harness.cli import main
from rsalab.harness.config import ExperimentConfig, load_config_file
from rsalab.operators import LiftedState, RandomnessDraw, derive_rng, run_coupled, run_epoch, step
from rsalab.problems import QuadraticProblem, generate_quadratic, prox
from rsalab.wasserstein import DiscreteMeasure, cost_matrix, kernel_pushforward, wv_dirac, wv_exact

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SCENARIOS = {1: "c1_sgd_oracle", 2: "c2_prox_sgd", 3: "c3_saga", 4: "c4_svrg", 5: "c5_hsag", 6: "c6_asvrg",
             7: "c7_catalyst"}


def report(n, checks):
    """``checks``: list of ``(label, passed, detail)``."""
    ok = all(passed for _, passed, _ in checks)
    detail = "; ".join(f"{label} {'ok' if passed else 'FAILED'} ({info})" for label, passed, info in checks)
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def run_verify(name, out_dir, workers=1):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["verify", str(CONFIGS / f"{name}.toml"), "--out", str(out_dir), "--workers", str(workers)])
    out = Path(out_dir)
    return {"code": code, "report": json.loads((out / "report.json").read_text()),
            "csv": (out / "trajectory.csv").read_bytes(), "json": (out / "report.json").read_bytes()}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = run_verify(SCENARIOS[n], base / SCENARIOS[n])
        return cache[n]

    return get


def experiment(n):
    return runner.prepare(ExperimentConfig.from_dict(load_config_file(CONFIGS / f"{SCENARIOS[n]}.toml")))


def contraction_check(rep, upto=None):
    rows = rep["contraction"]["rows"]
    if upto is not None:
        rows = [r for r in rows if r["k"] <= upto]
    bad = [r["k"] for r in rows if not r["pass"]]
    worst = max(r["mean"] / r["bound"] for r in rows if r["bound"] > 0 and r["k"] > 0)
    return not bad, f"k=0..{rows[-1]['k']}, failed k {bad or 'none'}, max mean/bound for k>0 {worst:.3g}"


def hexval(v):
    return float.fromhex(v) if isinstance(v, str) else v


def decode_rows(rep):
    for sec in ("contraction", "concentration"):
        if sec in rep:
            for r in rep[sec]["rows"]:
                for key in ("mean", "bound", "se"):
                    r[key] = hexval(r[key])
    return rep


# --------------------------------------------------------------------------


def test_criterion_1_oracle_sgd_per_step(runs):
    r = runs(1)
    rep = decode_rows(r["report"])
    ps = rep["per_step"]
    cert = rep["certificate"]
    report(1, [
        ("gamma", abs(hexval(cert["alpha"]) - 0.96) <= 1e-12, f"gamma={hexval(cert['alpha']):.12g}"),
        ("per-step", ps["violations"] == 0 and r["code"] == 0,
         f"{ps['violations']} violations in {ps['steps']} steps, max ratio {hexval(ps['max_ratio']):.6g}"),
    ])


def test_criterion_2_prox_sgd_per_step(runs):
    r = runs(2)
    ps = r["report"]["per_step"]
    report(2, [("per-step", ps["violations"] == 0 and ps["steps"] >= 10**5 and r["code"] == 0,
                f"{ps['violations']} violations in {ps['steps']} steps, gamma={hexval(ps['gamma']):.6g}, "
                f"max ratio {hexval(ps['max_ratio']):.6g}")])


def test_criterion_3_saga(runs):
    r = runs(3)
    rep = decode_rows(r["report"])
    ok_c, info_c = contraction_check(rep, upto=200)
    alpha = hexval(rep["certificate"]["alpha"])
    final = rep["concentration"]["final"]

    # exact fixed point on the worked instance with paired linear terms (x* = 0, component gradients nonzero)
    exp = experiment(3)
    a = exp.problem.a.copy()
    a[1::2] = -a[0::2]
    paired = QuadraticProblem.from_terms(exp.problem.Q, a)
    op = Saga(paired, 0.1, 0.02)
    s_star = op.fixed_point()
    exact = all(step(op, s_star, op.draw(derive_rng(0, 0, k, "fixed-point"), k)).identical(s_star)
                for k in range(1000))
    # on the generated instance grad f(x*) is zero only up to rounding
    op = exp.operator
    s_star = op.fixed_point()
    drift = max(float(np.abs(step(op, s_star, op.draw(derive_rng(0, 0, k, "fixed-point"), k)).x - s_star.x).max())
                for k in range(1000))
    k_needed = math.ceil(math.log(1e-6) / math.log(0.95))
    report(3, [
        ("alpha", abs(alpha - 0.95) <= 1e-12, f"alpha={alpha:.12g}"),
        ("contraction", ok_c and r["code"] == 0, info_c),
        ("fixed point", exact and drift <= 1e-15, f"bitwise over 1000 draws; generic instance drift {drift:.1e}"),
        ("concentration", final["checked"] and final["pass"] and final["k"] == k_needed == 270,
         f"mean|x_k-x*|^2 ratio at k={final['k']}: {hexval(final.get('ratio', float('nan'))):.3g}"),
    ])


def test_criterion_4_svrg(runs):
    r = runs(4)
    rep = decode_rows(r["report"])
    ok_c, info_c = contraction_check(rep, upto=50)
    xi = hexval(rep["certificate"]["alpha"])

    # brute force on N = 2, M = 2: all 4^k inner index sequences
    p = generate_quadratic(2, 2, 1.0, 2.0, seed=0)
    eta, M, K = 0.1, 2, 4
    op = Svrg(p, eta, M)
    xa, xb = np.array([1.0, -0.5]), np.array([-0.3, 0.8])
    tr = run_coupled(op, op.lift(xa), op.lift(xb), K=K, R=20_000, V=SquaredEuclidean(), seed=21)
    mean, se = tr.stats("V")
    worst_mc, worst_enum = 0.0, 0.0
    ok_mc = ok_enum = True
    for k in range(K + 1):
        oracle = oracles.svrg_expected_sqdist(p.Q, p.a, eta, M, xa, xb, k)
        lib = 0.0
        for seq in product(range(2), repeat=M * k):
            sa, sb = op.lift(xa), op.lift(xb)
            for e in range(k):
                draws = [RandomnessDraw(indices=(i,)) for i in seq[e * M:(e + 1) * M]]
                sa, sb = run_epoch(op, sa, draws), run_epoch(op, sb, draws)
            lib += float((sa.x - sb.x) @ (sa.x - sb.x))
        lib /= 2 ** (M * k)
        ok_enum &= abs(lib - oracle) <= 1e-12
        worst_enum = max(worst_enum, abs(lib - oracle))
        # summing R equal values is itself off by about R ulp, hence the runner's relative rounding slack
        ok_mc &= abs(mean[k] - oracle) <= 3 * se[k] + runner.ROUNDING_RTOL * oracle
        if se[k] > 1e-12 * oracle:
            worst_mc = max(worst_mc, abs(mean[k] - oracle) / se[k])
    report(4, [
        ("xi", abs(xi - float(oracles.svrg_xi(0.84, 0.04, 5))) <= 1e-12, f"xi_M={xi:.6g}"),
        ("contraction", ok_c and r["code"] == 0, info_c),
        ("enumeration", ok_enum, f"library vs oracle max |diff| {worst_enum:.1e}"),
        ("monte carlo", ok_mc, f"max |mean - exact|/SE {worst_mc:.2f} with R=20000"),
    ])


def test_criterion_5_hsag(runs):
    r = runs(5)
    rep = decode_rows(r["report"])
    ok_c, info_c = contraction_check(rep, upto=40)
    alpha = hexval(rep["certificate"]["alpha"])

    p = experiment(5).problem
    rng = np.random.default_rng(55)
    h_saga, saga = Hsag(p, 0.1, range(p.N), 1, 0.02), Saga(p, 0.1, 0.02)
    h_svrg, svrg = Hsag(p, 0.1, [], 5, 0.02), Svrg(p, 0.1, 5)
    same_saga = same_svrg = 0
    for _ in range(100):
        st = LiftedState(rng.standard_normal(p.d), proxies=rng.standard_normal((p.N, p.d)),
                         proxy_index=tuple(range(p.N)))
        i = int(rng.integers(p.N))
        same_saga += h_saga.apply(st, RandomnessDraw(indices=(i,), epoch_length=1)).identical(
            saga.apply(st, RandomnessDraw(indices=(i,))))
        x = LiftedState(rng.standard_normal(p.d))
        d = svrg.draw(rng)
        same_svrg += h_svrg.apply(x, d).identical(svrg.apply(x, d))
    report(5, [
        ("alpha", abs(alpha - 0.86427) <= 5e-6, f"alpha={alpha:.8g}"),
        ("contraction", ok_c and r["code"] == 0, info_c),
        ("HSAG(S=[N],M=1)=SAGA", same_saga == 100, f"{same_saga}/100 bitwise"),
        ("HSAG(S=empty)=SVRG", same_svrg == 100, f"{same_svrg}/100 bitwise"),
    ])


def test_criterion_6_asvrg(runs):
    r = runs(6)
    rep = decode_rows(r["report"])
    ok_c, info_c = contraction_check(rep, upto=30)
    alpha = hexval(rep["certificate"]["alpha"])
    exp = experiment(6)
    op = exp.operator
    assert isinstance(op, Asvrg)
    s_star = op.fixed_point()
    drift = max(float(np.abs(step(op, s_star, op.draw(derive_rng(0, 0, k, "fixed-point"), k)).x - s_star.x).max())
                for k in range(1000))
    report(6, [
        ("alpha", abs(alpha - 0.75) <= 1e-12, f"alpha={alpha:.12g}"),
        ("contraction", ok_c and r["code"] == 0, info_c),
        ("fixed point", drift <= 1e-14, f"max |T(s*) - s*| over 1000 epochs {drift:.1e}"),
    ])


def test_criterion_7_catalyst(runs):
    r = runs(7)
    rep = decode_rows(r["report"])
    ok_c, info_c = contraction_check(rep, upto=25)
    s = rates.catalyst_schedule(1.0, 3.0, 0.4, 25)
    const = rep["contraction"]["rows"][0]["bound"] / (0.6 * hexval(rep["contraction"]["reference_V0"]))
    report(7, [
        ("envelope", ok_c and r["code"] == 0, info_c),
        ("constant", abs(const - 16 / 0.01) <= 1e-9 * 1600, f"16/(0.5-0.4)^2 = {const:.10g}"),
        ("schedules", bool((s.zeta == 0.5).all() and (s.beta == 1 / 3).all()),
         "zeta_k == 0.5 and beta_k == 1/3 exactly for k <= 25"),
    ])


def test_criterion_8_wasserstein():
    E = SquaredEuclidean()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(800 + seed)
        n = int(rng.integers(2, 9))
        mu = DiscreteMeasure.uniform([LiftedState(rng.standard_normal(3)) for _ in range(n)])
        nu = DiscreteMeasure.uniform([LiftedState(rng.standard_normal(3)) for _ in range(n)])
        worst = max(worst, abs(wv_exact(mu, nu, E).value - oracles.wv_enumerate(cost_matrix(mu, nu, E))))

    dirac_ok = True
    for seed in range(100):
        rng = np.random.default_rng(900 + seed)
        mu = DiscreteMeasure.uniform([LiftedState(rng.standard_normal(3)) for _ in range(int(rng.integers(1, 9)))])
        star = LiftedState(rng.standard_normal(3))
        dirac_ok &= wv_exact(mu, DiscreteMeasure.dirac(star), E).value == wv_dirac(mu, star, E)
    example = wv_dirac(DiscreteMeasure.uniform([LiftedState(np.array([v])) for v in (-1.0, 0.0, 2.0)]),
                       LiftedState(np.zeros(1)), E)

    p = experiment(2).problem
    eta = 0.1
    op = SgdProx(p, eta)
    g = rates.gamma(eta, p.c, p.L)
    draws = [RandomnessDraw(indices=(i,)) for i in range(p.N)]
    min_slack = math.inf
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        mu = DiscreteMeasure.uniform([LiftedState(rng.standard_normal(p.d)) for _ in range(4)])
        nu = DiscreteMeasure.uniform([LiftedState(rng.standard_normal(p.d)) for _ in range(4)])
        after = wv_exact(kernel_pushforward(mu, op, draws), kernel_pushforward(nu, op, draws), E).value
        min_slack = min(min_slack, g * wv_exact(mu, nu, E).value - after)
    report(8, [
        ("enumeration", worst <= 1e-10, f"100 uniform measures n<=8, max |diff| {worst:.1e}"),
        ("dirac", dirac_ok and abs(example - 5 / 3) <= 1e-15, f"exact equality on 100 measures, example {example!r}"),
        ("kernel contraction", min_slack >= 0, f"20 prox-SGD pushforward pairs, min slack {min_slack:.3g}"),
    ])


def test_criterion_9_divergence_axioms():
    p = experiment(3).problem
    d, N = p.d, p.N
    gap = OptimalityGap.for_problem(p)
    E = SquaredEuclidean()
    P = rates.asgd_certificate(p.Q_mean, 0.1, 0.2, 0.3).P

    def x_only(rng):
        return LiftedState(rng.standard_normal(d))

    def pair(rng):
        return LiftedState(rng.standard_normal(d), prev=rng.standard_normal(d))

    def saga_state(rng):
        return LiftedState(rng.standard_normal(d), proxies=rng.standard_normal((N, d)), proxy_index=range(N))

    cases = {
        "squared_euclidean": (E, x_only),
        "weighted_quadratic": (WeightedQuadratic(Q=p.Q.sum(axis=0)), x_only),
        "saga_proxy": (SagaProxy(b=0.02, grad=p.grad_component), saga_state),
        "optimality_gap": (gap, x_only),
        "catalyst_pair": (CatalystPair(inner=gap, alpha=0.4), pair),
        "asgd_quadratic_form": (AsgdQuadraticForm(P=P, Q=p.Q_mean), pair),
        "power": (Power(base=E, p=0.5), x_only),
        "sum": (Sum(left=E, right=Power(base=E, p=2.0)), x_only),
        "plus_metric": (PlusMetric(base=gap, p=2.0), x_only),
        "sum_of_power_and_gap": (Sum(left=Power(base=gap, p=3.0), right=WeightedQuadratic(Q=p.Q_mean)), x_only),
    }
    checks = []
    for name, (V, sampler) in cases.items():
        rep = check_divergence_axioms(V, sampler, 10_000, np.random.default_rng(9))
        checks.append((name, rep.ok, f"{rep.n} pairs, min off-diagonal {rep.min_offdiagonal:.2g}"))
    report(9, checks)


def test_criterion_10_rates_arithmetic():
    F = oracles
    cases = [
        ("gamma(0.05,0.5,2)", rates.gamma(0.05, 0.5, 2.0), 0.96, F.gamma(0.05, 0.5, 2)),
        ("gamma(0.1,1,2)", rates.gamma(0.1, 1.0, 2.0), 0.84, F.gamma(0.1, 1, 2)),
        ("saga", rates.saga_alpha(0.1, 0.02, 10, 1.0, 2.0).alpha, 0.95, F.saga_alpha(0.1, 0.02, 10, 1, 2)),
        ("svrg quadratic", rates.svrg_alpha_quadratic(0.1, 1.0, 1.0, 100), 0.375, F.svrg_alpha_quadratic(0.1, 1, 1, 100)),
        ("svrg xi", rates.svrg_xi(0.5, 0.25, 2), 0.625, F.svrg_xi(0.5, 0.25, 2)),
        ("asvrg", rates.asvrg_alpha(0.1, 0.5, 10, 1.0), 0.75, F.asvrg_alpha(0.1, 0.5, 10, 1)),
        ("hsag", rates.hsag_rates(0.1, 0.02, 10, 5, 1.0, 2.0, 5).alpha, 0.86427, F.hsag_alpha(0.1, 0.02, 10, 5, 1, 2, 5)),
        ("error limit", rates.error_bounds(0.5, 0.1, 1.0, math.inf), 0.2, F.error_limit(0.5, 0.1)),
        ("markov tail", rates.markov_tail(0.9, 0.01, 0.5), 0.2, F.markov_tail(0.9, 0.01, 0.5)),
        ("catalyst beta", float(rates.catalyst_schedule(1.0, 3.0, 0.4, 5).beta[3]), 1 / 3, F.catalyst_beta(0.5, 0.5)),
        ("dirac 5/3", wv_dirac(DiscreteMeasure.uniform([LiftedState(np.array([v])) for v in (-1.0, 0.0, 2.0)]),
                               LiftedState(np.zeros(1)), SquaredEuclidean()), 5 / 3, None),
        ("soft threshold", float(prox("l1", 0.3, np.array([1.0]))[0]), 0.7, F.soft_threshold(0.3, 1.0)),
    ]
    checks = []
    for name, got, printed, oracle in cases:
        # the printed 0.86427 is rounded to five decimals
        tol = 5e-6 if name == "hsag" else 1e-9
        ok = abs(got - printed) <= tol and (oracle is None or abs(got - float(oracle)) <= 1e-9)
        checks.append((name, ok, f"{got:.10g}"))
    report(10, checks)


def test_criterion_11_determinism(runs, tmp_path):
    checks = []
    for n, name in SCENARIOS.items():
        first = runs(n)
        again = run_verify(name, tmp_path / name, workers=2)
        same = first["csv"] == again["csv"] and first["json"] == again["json"]
        hex_csv = b"0x" in first["csv"]
        checks.append((name, same and hex_csv, f"{len(first['csv'])} CSV bytes, workers 1 vs 2"))
    report(11, checks)
