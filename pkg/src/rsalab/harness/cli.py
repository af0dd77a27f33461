"""``rsa-lab`` command line interface.

Exit codes: 0 pass, 1 bound violated, 2 infeasible or invalid configuration,
3 too many diverged replications.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from rsalab import rates
from rsalab.errors import InfeasibleError, RsaLabError
from rsalab.harness import runner
from rsalab.harness.config import ExperimentConfig, apply_overrides, build_divergence, load_config_file
from rsalab.problems import Composite, NoisyOracle, generate_nonlinear, generate_quadratic
from rsalab.serialize import decode_array
from rsalab.wasserstein import DiscreteMeasure, wv_exact


def _emit(obj, hex_mode=False, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(runner._jsonable(obj, hex_mode), indent=1, sort_keys=True) + "\n")


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config_file(args.config)
    overrides = list(args.set or [])
    for key in ("K", "R", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    if getattr(args, "decimal", False):
        overrides.append("hex=false")
    return ExperimentConfig.from_dict(apply_overrides(cfg, overrides))


def cmd_run(args) -> int:
    config = _load_experiment(args)
    exp = runner.prepare(config)
    traj = runner.simulate(exp, args.workers)
    summary = runner.summarize(exp, traj)
    if args.out:
        runner.write_outputs(args.out, traj, summary, "summary.json", config.hex)
    _emit(summary, config.hex)
    return runner.EXIT_PASS


def cmd_verify(args) -> int:
    config = _load_experiment(args)
    exp = runner.prepare(config)
    if not exp.certificate.feasible:
        _emit({"verdict": "infeasible", "certificate": runner.certificate_json(exp.certificate)})
        return runner.EXIT_INFEASIBLE
    traj = runner.simulate(exp, args.workers)
    report, code = runner.verify(exp, traj)
    report["summary"] = runner.summarize(exp, traj)
    if args.out:
        runner.write_outputs(args.out, traj, report, "report.json", config.hex)
    if args.full:
        _emit(report, config.hex)
    else:
        brief = {k: v for k, v in report.items() if k not in ("contraction", "concentration", "summary")}
        for key in ("contraction", "concentration"):
            if key in report:
                brief[key] = {k: v for k, v in report[key].items() if k != "rows"}
                brief[key]["failed_k"] = [r["k"] for r in report[key]["rows"] if not r["pass"]]
        _emit(brief, config.hex)
    return code


# --------------------------------------------------------------------------
# rate


def _param(params, name, cast=float):
    if name not in params:
        raise InfeasibleError(f"missing parameter {name!r}")
    return cast(params[name])


def rate_certificate(algo: str, params: dict) -> rates.RateCertificate:
    a = algo.replace("-", "_").lower()
    P = lambda n, cast=float: _param(params, n, cast)  # noqa: E731
    if a in ("gamma", "sgd", "sgd_oracle", "sgd_prox"):
        return rates.gamma_certificate(P("eta"), P("c"), P("L"))
    if a == "saga":
        return rates.saga_alpha(P("eta"), P("b"), P("N", int), P("c"), P("L"))
    if a == "svrg":
        return rates.svrg_certificate(P("eta"), P("c"), P("L"), P("M", int), params.get("kappa"))
    if a == "svrg_quadratic":
        alpha = rates.svrg_alpha_quadratic(P("eta"), P("c"), P("L"), P("N", int))
        return rates.RateCertificate(alpha, [rates.Condition("2 L eta < 1", 2 * P("L") * P("eta"), 1.0),
                                             rates.Condition("alpha < 1", alpha, 1.0)])
    if a == "asvrg":
        return rates.asvrg_certificate(P("eta"), P("theta"), P("M", int), P("c"))
    if a == "hsag":
        size = len(params["S"]) if "S" in params else P("S_size", int)
        return rates.hsag_rates(P("eta"), P("b"), P("N", int), size, P("c"), P("L"), P("M", int))
    if a == "catalyst":
        c, theta, alpha = P("c"), P("theta"), P("alpha")
        cert = rates.catalyst_certificate(c, theta, alpha)
        if cert.feasible and "K" in params:
            sched = rates.catalyst_schedule(c, theta, alpha, int(params["K"]))
            cert.extra.update(zeta_schedule=sched.zeta, beta_schedule=sched.beta, envelope=sched.envelope)
        return cert
    if a == "asgd":
        cert = rates.asgd_certificate(np.atleast_2d(decode_array(params["Q"])), P("eta"), P("alpha"), P("beta"))
        return rates.RateCertificate(cert.rho, [rates.Condition("spectral radius < 1", cert.spectral_radius, 1.0)],
                                     extra={"P": cert.P, "spectral_radius": cert.spectral_radius})
    raise InfeasibleError(f"unknown algorithm {algo!r}")


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InfeasibleError(f"parameter {item!r} is not of the form name=value")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def cmd_rate(args) -> int:
    try:
        cert = rate_certificate(args.algo, _parse_params(args.params))
    except InfeasibleError as err:
        _emit({"alpha": None, "feasible": False, "error": str(err)})
        return runner.EXIT_INFEASIBLE
    _emit(cert.to_json())
    return runner.EXIT_PASS if cert.feasible else runner.EXIT_INFEASIBLE


# --------------------------------------------------------------------------
# wasserstein and instances


def cmd_wasserstein(args) -> int:
    mu = DiscreteMeasure.from_json(json.loads(Path(args.mu).read_text()))
    nu = DiscreteMeasure.from_json(json.loads(Path(args.nu).read_text()))
    spec = args.divergence
    if spec.lstrip().startswith("{"):
        spec = json.loads(spec)
    V = build_divergence(spec)
    res = wv_exact(mu, nu, V)
    out = {"value": res.value, "atoms_m": len(mu), "atoms_n": len(nu)}
    if args.plan:
        out["plan"] = res.plan.pi
    _emit(out, args.hex)
    return runner.EXIT_PASS


def cmd_gen_problem(args) -> int:
    composite = Composite(args.composite, args.lam) if args.composite != "zero" else Composite()
    noise = NoisyOracle(bound=args.noise_bound, law=args.noise_law, sigma=args.noise_sigma)
    gen = generate_quadratic if args.kind == "quadratic" else generate_nonlinear
    prob = gen(args.d, args.N, args.c, args.L, seed=args.seed, composite=composite, noise=noise)
    text = json.dumps(prob.to_json(), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return runner.EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsa-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def experiment(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML or JSON experiment file")
        p.add_argument("--out", help="directory for trajectory.csv and the JSON result")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
        p.add_argument("--K", type=int)
        p.add_argument("--R", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--decimal", action="store_true", help="write decimal floats instead of hex")
        p.add_argument("--workers", type=int, help="worker processes (default: $RSA_LAB_WORKERS or 1)")
        p.set_defaults(func=fn)
        return p

    experiment("run", cmd_run, "simulate coupled chains and write a summary")
    v = experiment("verify", cmd_verify, "check the simulated divergence against the rate bound")
    v.add_argument("--full", action="store_true", help="print every per-k row")

    r = sub.add_parser("rate", help="print a rate certificate")
    r.add_argument("--algo", required=True)
    r.add_argument("--params", nargs="*", metavar="NAME=VALUE")
    r.set_defaults(func=cmd_rate)

    w = sub.add_parser("wasserstein", help="exact Wasserstein divergence between two measure files")
    w.add_argument("--mu", required=True)
    w.add_argument("--nu", required=True)
    w.add_argument("--divergence", default="squared_euclidean", help="name or JSON table")
    w.add_argument("--plan", action="store_true")
    w.add_argument("--hex", action="store_true")
    w.set_defaults(func=cmd_wasserstein)

    g = sub.add_parser("gen-problem", help="write a generated problem instance")
    g.add_argument("--kind", choices=("quadratic", "nonlinear"), default="quadratic")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--N", type=int, required=True)
    g.add_argument("--c", type=float, required=True)
    g.add_argument("--L", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--composite", choices=("zero", "l1", "half_squared_l2"), default="zero")
    g.add_argument("--lam", type=float, default=0.0)
    g.add_argument("--noise-bound", type=float, default=0.0)
    g.add_argument("--noise-law", choices=("uniform_ball", "truncated_gaussian"), default="uniform_ball")
    g.add_argument("--noise-sigma", type=float, default=1.0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_problem)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as err:
        cert = getattr(err, "certificate", None)
        _emit({"verdict": "infeasible", "error": str(err),
               "certificate": None if cert is None else runner.certificate_json(cert)})
        return runner.EXIT_INFEASIBLE
    except (RsaLabError, OSError, json.JSONDecodeError) as err:
        sys.stderr.write(f"rsa-lab: {err}\n")
        return runner.EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
