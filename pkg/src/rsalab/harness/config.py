"""Experiment configuration: file loading, overrides and object construction."""
from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rsalab import divergence as dv
from rsalab.algorithms import AlgorithmConfig
from rsalab.errors import ConfigurationError
from rsalab.operators import derive_rng
from rsalab.problems import (Composite, NoisyOracle, generate_nonlinear, generate_quadratic, load_problem,
                             problem_from_json)
from rsalab.serialize import decode_array

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("contraction", "concentration", "both")
TOP_LEVEL = {"name", "problem", "algorithm", "divergence", "K", "R", "seed", "init", "project_radius",
             "mode", "hex", "per_step", "concentration_divergence", "independent", "alpha_window"}


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    if path.suffix == ".toml":
        cfg = tomllib.loads(path.read_text())
    else:
        cfg = json.loads(path.read_text())
    cfg.setdefault("_base_dir", str(path.parent.resolve()))
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in assignments or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot set {key}: {p} is not a table")
        node[parts[-1]] = _parse_value(value)
    return cfg


def effective_config(cfg: dict) -> dict:
    """The merged config without private keys; embedded in every output and hashed."""
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# --------------------------------------------------------------------------
# problems


def build_problem(spec: dict, base_dir: str | Path = "."):
    spec = dict(spec)
    if "file" in spec:
        path = Path(spec["file"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigurationError(f"problem file {path} does not exist")
        return load_problem(path)
    if "terms" in spec:
        return problem_from_json(spec)
    kind = spec.pop("generate", None)
    if kind not in ("quadratic", "nonlinear"):
        raise ConfigurationError("problem needs 'file', inline 'terms' or generate = 'quadratic' | 'nonlinear'")
    composite = Composite.from_json(spec.pop("composite", None))
    noise = NoisyOracle.from_json(spec.pop("noise", None))
    allowed = {"d", "N", "c", "L", "seed"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigurationError(f"unknown problem parameters: {sorted(unknown)}")
    missing = {"d", "N", "c", "L"} - set(spec)
    if missing:
        raise ConfigurationError(f"missing problem parameters: {sorted(missing)}")
    gen = generate_quadratic if kind == "quadratic" else generate_nonlinear
    return gen(int(spec["d"]), int(spec["N"]), float(spec["c"]), float(spec["L"]), seed=int(spec.get("seed", 0)),
               composite=composite, noise=noise)


# --------------------------------------------------------------------------
# divergences


def build_divergence(spec, problem=None, certificate=None) -> dv.Divergence:
    """Divergence from a name or a table ``{kind, ...}``.

    Problem-dependent variants take their data from ``problem``: ``saga_proxy``
    uses its component gradients, ``optimality_gap`` its objective and
    optimum, ``weighted_quadratic`` accepts ``Q = "sum_Q"`` or ``"mean_Q"``,
    and ``asgd_quadratic_form`` takes ``P`` from the ASGD certificate.
    """
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind", None)

    def sub(key):
        if key not in spec:
            raise ConfigurationError(f"{kind} divergence needs '{key}'")
        return build_divergence(spec[key], problem, certificate)

    def need_problem():
        if problem is None:
            raise ConfigurationError(f"{kind} divergence needs a problem")
        return problem

    if kind == "squared_euclidean":
        return dv.SquaredEuclidean(on=spec.get("on", "state"))
    if kind == "weighted_quadratic":
        Q = spec.get("Q")
        if Q == "sum_Q":
            Q = need_problem().Q.sum(axis=0)
        elif Q == "mean_Q":
            Q = need_problem().Q_mean
        elif Q is None:
            raise ConfigurationError("weighted_quadratic needs Q")
        else:
            Q = decode_array(Q)
        return dv.WeightedQuadratic(Q=Q, on=spec.get("on", "state"))
    if kind == "saga_proxy":
        if "b" not in spec:
            raise ConfigurationError("saga_proxy needs b")
        return dv.SagaProxy(b=float(spec["b"]), grad=need_problem().grad_component)
    if kind == "optimality_gap":
        return dv.OptimalityGap.for_problem(need_problem())
    if kind == "catalyst_pair":
        inner = sub("inner") if "inner" in spec else dv.OptimalityGap.for_problem(need_problem())
        if "alpha" not in spec:
            raise ConfigurationError("catalyst_pair needs alpha")
        return dv.CatalystPair(inner=inner, alpha=float(spec["alpha"]))
    if kind == "asgd_quadratic_form":
        P = spec.get("P")
        if P is None:
            if certificate is None or "P" not in certificate.extra:
                raise ConfigurationError("asgd_quadratic_form needs P or an ASGD certificate")
            P = certificate.extra["P"]
        else:
            P = decode_array(P)
        Q = spec.get("Q")
        Q = need_problem().Q_mean if Q is None else decode_array(Q)
        return dv.AsgdQuadraticForm(P=P, Q=Q)
    if kind == "power":
        return dv.Power(base=sub("base"), p=float(spec.get("p", 1.0)))
    if kind == "sum":
        return dv.Sum(left=sub("left"), right=sub("right"))
    if kind == "plus_metric":
        return dv.PlusMetric(base=sub("base"), p=float(spec.get("p", 1.0)))
    raise ConfigurationError(f"unknown divergence kind {kind!r}")


# --------------------------------------------------------------------------
# initial laws


@dataclass(frozen=True, eq=False)
class PointInit:
    """Both chains start from fixed points in every replication."""

    s_a: object
    s_b: object

    def __call__(self, r: int):
        return self.s_a, self.s_b


@dataclass(frozen=True, eq=False)
class GaussianCloudInit:
    """Replication ``r`` starts from ``center + radius * z`` with ``z`` standard
    normal drawn from the ``(seed, r)`` init streams."""

    operator: object
    center_a: np.ndarray
    center_b: np.ndarray
    radius: float
    seed: int

    def __call__(self, r: int):
        d = self.center_a.size
        za = derive_rng(self.seed, r, 0, "init-a").standard_normal(d)
        zb = derive_rng(self.seed, r, 0, "init-b").standard_normal(d)
        return (self.operator.lift(self.center_a + self.radius * za),
                self.operator.lift(self.center_b + self.radius * zb))


def build_init(spec: dict | None, operator, problem, seed: int):
    """Initial law. Points are given as ``x_a``/``x_b`` or drawn once as
    ``x* + scale * z`` from the master seed."""
    spec = dict(spec or {})
    law = spec.pop("law", "point")
    unknown = set(spec) - {"x_a", "x_b", "scale", "radius"}
    if unknown:
        raise ConfigurationError(f"unknown init parameters: {sorted(unknown)}")
    d = problem.d
    if "x_a" in spec and "x_b" in spec:
        xa, xb = decode_array(spec["x_a"]).reshape(-1), decode_array(spec["x_b"]).reshape(-1)
        if xa.size != d or xb.size != d:
            raise ConfigurationError(f"initial points must have dimension {d}")
    else:
        scale = float(spec.get("scale", 1.0))
        xa = problem.x_star + scale * derive_rng(seed, 0, 0, "start-a").standard_normal(d)
        xb = problem.x_star + scale * derive_rng(seed, 0, 0, "start-b").standard_normal(d)
    if law == "point":
        return PointInit(operator.lift(xa), operator.lift(xb))
    if law == "gaussian":
        if "radius" not in spec:
            raise ConfigurationError("gaussian init needs a radius")
        return GaussianCloudInit(operator, xa, xb, float(spec["radius"]), seed)
    raise ConfigurationError(f"unknown init law {law!r}")


@dataclass
class ExperimentConfig:
    raw: dict
    problem: dict
    algorithm: AlgorithmConfig
    divergence: object
    K: int
    R: int
    seed: int
    init: dict = field(default_factory=dict)
    project_radius: float | None = None
    mode: str = "contraction"
    hex: bool = True
    per_step: bool = False
    concentration_divergence: object = None
    independent: bool = False
    alpha_window: float = 0.5
    base_dir: str = "."

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        unknown = {k for k in cfg if not k.startswith("_")} - TOP_LEVEL
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("problem", "algorithm", "divergence", "K", "R", "seed"):
            if key not in cfg:
                raise ConfigurationError(f"config is missing '{key}'")
        mode = cfg.get("mode", "contraction")
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        K, R = int(cfg["K"]), int(cfg["R"])
        if K < 1 or R < 1:
            raise ConfigurationError("need K >= 1 and R >= 1")
        window = float(cfg.get("alpha_window", 0.5))
        if not 0 < window <= 1:
            raise ConfigurationError("alpha_window must lie in (0, 1]")
        return cls(raw=effective_config(cfg), problem=cfg["problem"],
                   algorithm=AlgorithmConfig.from_dict(cfg["algorithm"]), divergence=cfg["divergence"],
                   K=K, R=R, seed=int(cfg["seed"]), init=cfg.get("init", {}),
                   project_radius=cfg.get("project_radius"), mode=mode, hex=bool(cfg.get("hex", True)),
                   per_step=bool(cfg.get("per_step", False)),
                   concentration_divergence=cfg.get("concentration_divergence"),
                   independent=bool(cfg.get("independent", False)), alpha_window=window,
                   base_dir=cfg.get("_base_dir", "."))
