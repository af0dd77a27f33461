"""Experiment orchestration and bound verification."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rsalab.algorithms import certificate, make_operator
from rsalab.divergence import CatalystPair
from rsalab.errors import ConfigurationError, InfeasibleError
from rsalab.harness.config import ExperimentConfig, build_divergence, build_init, build_problem
from rsalab.operators import CoupledTrajectory, LiftedState, run_coupled
from rsalab.rates import CATALYST_ENVELOPE, GEOMETRIC, RateCertificate
from rsalab.serialize import config_hash

EXIT_PASS, EXIT_VIOLATION, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 1, 2, 3

# algorithms whose invariant law is a point mass at s* with a geometric bound to check
VARIANCE_REDUCED = {"saga", "svrg", "asvrg", "hsag"}
PER_STEP_ALGORITHMS = {"sgd_oracle", "sgd_prox"}
PER_STEP_RTOL = 1e-12
SE_MULTIPLIER = 3.0
# means taken in different summation orders differ in the last bits
ROUNDING_RTOL = 1e-12
CONCENTRATION_LEVEL = 1e-6


@dataclass
class Experiment:
    config: ExperimentConfig
    problem: object
    operator: object
    certificate: RateCertificate
    V: object
    V_star: object
    s_star: LiftedState
    init: object

    @property
    def hash(self) -> str:
        return config_hash(self.config.raw)


def prepare(config: ExperimentConfig) -> Experiment:
    problem = build_problem(config.problem, config.base_dir)
    op = make_operator(config.algorithm, problem)
    cert = certificate(config.algorithm, problem)
    V = build_divergence(config.divergence, problem, cert)
    V_star = V if config.concentration_divergence is None else build_divergence(
        config.concentration_divergence, problem, cert)
    init = build_init(config.init, op, problem, config.seed)
    return Experiment(config, problem, op, cert, V, V_star, op.fixed_point(), init)


def simulate(exp: Experiment, workers: int | None = None) -> CoupledTrajectory:
    c = exp.config
    return run_coupled(exp.operator, K=c.K, R=c.R, V=exp.V, seed=c.seed, init=exp.init, s_star=exp.s_star,
                       V_star=exp.V_star, project_radius=c.project_radius, independent=c.independent,
                       workers=workers)


# --------------------------------------------------------------------------
# summaries


def fit_log_slope(mean: np.ndarray, window: float = 0.5) -> float | None:
    """Least-squares slope of ``log mean_k`` over the last ``window`` of the horizon."""
    K = len(mean) - 1
    ks = np.arange(int(math.floor((1 - window) * K)), K + 1)
    vals = mean[ks]
    keep = np.isfinite(vals) & (vals > 0)
    if keep.sum() < 2:
        return None
    return float(np.polyfit(ks[keep], np.log(vals[keep]), 1)[0])


def _num(x, hex_mode: bool):
    if x is None:
        return None
    x = float(x)
    if hex_mode:
        return x.hex()
    return x if math.isfinite(x) else None


def _jsonable(obj, hex_mode):
    if isinstance(obj, dict):
        return {k: _jsonable(v, hex_mode) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v, hex_mode) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist(), hex_mode)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj, hex_mode)
    return obj


def certificate_json(cert: RateCertificate) -> dict:
    out = cert.to_json()
    out.pop("P", None)
    return out


def summarize(exp: Experiment, traj: CoupledTrajectory) -> dict:
    mean, se = traj.stats("V")
    mean_star, _ = traj.stats("V_star")
    slope = fit_log_slope(mean, exp.config.alpha_window)
    return {
        "config": exp.config.raw,
        "config_hash": exp.hash,
        "algorithm": exp.operator.name,
        "K": traj.K,
        "R": traj.R,
        "final_mean_V": mean[-1],
        "final_se_V": se[-1],
        "final_mean_V_star": mean_star[-1],
        "log_slope": slope,
        "alpha_empirical": None if slope is None else math.exp(slope),
        "diverged_count": traj.diverged_count,
        "certificate": certificate_json(exp.certificate),
    }


# --------------------------------------------------------------------------
# verification


def _initial_pairs(exp: Experiment):
    return [exp.init(r) for r in range(exp.config.R)]


def _bound_rows(bound, mean, se):
    rows, ok = [], True
    for k in range(len(mean)):
        passed = bool(mean[k] <= bound[k] * (1 + ROUNDING_RTOL) + SE_MULTIPLIER * se[k])
        ok &= passed
        rows.append({"k": k, "bound": bound[k], "mean": mean[k], "se": se[k], "pass": passed})
    return rows, ok


def _contraction(exp, traj):
    cert = exp.certificate
    mean, se = traj.stats("V")
    if cert.bound_kind == CATALYST_ENVELOPE:
        if not isinstance(exp.V, CatalystPair):
            raise ConfigurationError("the Catalyst envelope is stated for the catalyst_pair divergence")
        inner = exp.V.inner
        pairs = _initial_pairs(exp)
        V0 = float(np.mean([inner(LiftedState(a.x), LiftedState(b.x)) for a, b in pairs]))
    else:
        V0 = float(mean[0])
    bound = cert.bound(np.arange(traj.K + 1), V0)
    rows, ok = _bound_rows(bound, mean, se)
    return {"bound_kind": cert.bound_kind, "reference_V0": V0, "rows": rows, "pass": ok}


def _concentration(exp, traj):
    if exp.operator.name not in VARIANCE_REDUCED:
        raise ConfigurationError(f"concentration checks cover SAGA, SVRG, ASVRG and HSAG, "
                                 f"not {exp.operator.name}")
    cert = exp.certificate
    mean, se = traj.stats("V_star")
    pairs = _initial_pairs(exp)
    V0 = float(np.mean([exp.V(a, exp.s_star) for a, _ in pairs]))
    a = cert.alpha
    bound = V0 * a ** np.arange(traj.K + 1, dtype=float)
    rows, ok = _bound_rows(bound, mean, se)
    k_needed = math.ceil(math.log(CONCENTRATION_LEVEL) / math.log(a))
    final = {"k": k_needed, "level": CONCENTRATION_LEVEL, "checked": k_needed <= traj.K}
    if final["checked"]:
        final["ratio"] = float(mean[k_needed] / mean[0]) if mean[0] > 0 else 0.0
        final["pass"] = bool(mean[k_needed] <= CONCENTRATION_LEVEL * mean[0])
        ok &= final["pass"]
    return {"reference_V0": V0, "rows": rows, "final": final, "pass": ok}


def _per_step(exp, traj):
    if exp.operator.name not in PER_STEP_ALGORITHMS or exp.certificate.bound_kind != GEOMETRIC:
        raise ConfigurationError("per-step almost-sure checks apply to the SGD operators only")
    g = exp.certificate.alpha
    V = traj.V[~traj.diverged]
    viol = V[:, 1:] > g * V[:, :-1] * (1 + PER_STEP_RTOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(V[:, :-1] > 0, V[:, 1:] / V[:, :-1], 0.0)
    return {"gamma": g, "steps": int(viol.size), "violations": int(viol.sum()),
            "max_ratio": float(ratios.max()) if ratios.size else 0.0, "pass": bool(viol.sum() == 0)}


def verify(exp: Experiment, traj: CoupledTrajectory) -> tuple[dict, int]:
    report = {"config_hash": exp.hash, "algorithm": exp.operator.name, "K": traj.K, "R": traj.R,
              "certificate": certificate_json(exp.certificate), "diverged_count": traj.diverged_count}
    if traj.too_many_diverged():
        report["verdict"] = "diverged"
        return report, EXIT_DIVERGED
    ok = True
    mode = exp.config.mode
    if mode in ("contraction", "both"):
        report["contraction"] = _contraction(exp, traj)
        ok &= report["contraction"]["pass"]
    if mode in ("concentration", "both"):
        report["concentration"] = _concentration(exp, traj)
        ok &= report["concentration"]["pass"]
    if exp.config.per_step:
        report["per_step"] = _per_step(exp, traj)
        ok &= report["per_step"]["pass"]
    report["verdict"] = "pass" if ok else "fail"
    return report, EXIT_PASS if ok else EXIT_VIOLATION


def check_feasible(exp: Experiment):
    """Raise :class:`InfeasibleError` unless the certificate is feasible."""
    if not exp.certificate.feasible:
        raise InfeasibleError("infeasible parameters", exp.certificate)


# --------------------------------------------------------------------------
# files


def write_json(path: Path, obj, hex_mode: bool):
    path.write_text(json.dumps(_jsonable(obj, hex_mode), indent=1, sort_keys=True) + "\n")


def write_outputs(out_dir: str | Path, traj: CoupledTrajectory, payload: dict, name: str, hex_mode: bool):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv", hex_mode)
    write_json(out / name, payload, hex_mode)
