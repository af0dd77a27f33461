"""Iterated random operators on lifted state spaces.

A recursive stochastic algorithm is a Markov chain ``s_{k+1} = T_k(s_k)`` where
``T_k`` is a random operator. Here an operator is an object that can sample a
:class:`RandomnessDraw` and apply itself deterministically given that draw, so
two chains can be driven by exactly the same randomness (common random
numbers).
"""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rsalab.errors import NonFiniteStateError, ParameterError, ShapeError
from rsalab.serialize import decode_array, encode_array, format_float

WORKERS_ENV = "RSA_LAB_WORKERS"
DIVERGED_FRACTION = 1e-3


# --------------------------------------------------------------------------
# states and draws


@dataclass(frozen=True, eq=False)
class LiftedState:
    """Iterate ``x`` plus the algorithm-specific lifting.

    ``prev`` holds ``x_{k-1}`` for two-step methods; ``proxies`` holds one
    stored evaluation point per entry of ``proxy_index`` (0-based component
    indices) for SAGA-type methods.
    """

    x: np.ndarray
    prev: np.ndarray | None = None
    proxies: np.ndarray | None = None
    proxy_index: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        if self.prev is not None:
            object.__setattr__(self, "prev", np.asarray(self.prev, dtype=float).reshape(-1))
        if self.proxies is not None:
            P = np.asarray(self.proxies, dtype=float).reshape(len(self.proxy_index), self.x.size)
            object.__setattr__(self, "proxies", P)
            object.__setattr__(self, "proxy_index", tuple(int(i) for i in self.proxy_index))

    @property
    def d(self) -> int:
        return self.x.size

    @property
    def shape(self) -> tuple:
        return (self.x.size, None if self.prev is None else self.prev.size,
                None if self.proxies is None else self.proxy_index)

    def flat(self) -> np.ndarray:
        parts = [self.x]
        if self.prev is not None:
            parts.append(self.prev)
        if self.proxies is not None:
            parts.append(self.proxies.ravel())
        return np.concatenate(parts)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat()).all())

    def identical(self, other: "LiftedState") -> bool:
        """Componentwise bit-for-bit equality."""
        return self.shape == other.shape and np.array_equal(self.flat(), other.flat())

    def to_json(self) -> dict:
        out = {"x": encode_array(self.x)}
        if self.prev is not None:
            out["prev"] = encode_array(self.prev)
        if self.proxies is not None:
            out["proxies"] = encode_array(self.proxies)
            out["proxy_index"] = list(self.proxy_index)
        return out

    @classmethod
    def from_json(cls, obj) -> "LiftedState":
        if not isinstance(obj, dict):
            return cls(x=np.atleast_1d(decode_array(obj)))
        proxies = obj.get("proxies")
        return cls(x=np.atleast_1d(decode_array(obj["x"])),
                   prev=None if obj.get("prev") is None else np.atleast_1d(decode_array(obj["prev"])),
                   proxies=None if proxies is None else decode_array(proxies),
                   proxy_index=tuple(obj.get("proxy_index", range(len(proxies or [])))))


def check_same_shape(a: LiftedState, b: LiftedState):
    if a.shape != b.shape:
        raise ShapeError(f"state shapes differ: {a.shape} vs {b.shape}")


@dataclass(frozen=True, eq=False)
class RandomnessDraw:
    """All randomness consumed by one application of an operator.

    ``indices`` are 0-based component indices; epoch operators read one index
    per inner step, so ``len(indices) == epoch_length`` for them.
    """

    indices: tuple = ()
    noise: np.ndarray | None = None
    epoch_length: int | None = None
    step: int = 0

    def split(self) -> list["RandomnessDraw"]:
        """One single-index draw per inner step of an epoch."""
        return [RandomnessDraw(indices=(i,), step=self.step) for i in self.indices]


# --------------------------------------------------------------------------
# counter-based streams

_MASK = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """The splitmix64 finalizer (Steele, Lea & Flood) on a 64-bit integer."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def role_id(role: str) -> int:
    return int.from_bytes(hashlib.blake2b(role.encode(), digest_size=8).digest(), "little")


def stream_key(seed: int, replication: int, step: int, role: str) -> int:
    """64-bit key ``mix(seed, r, k, role)``; each field passes through splitmix64."""
    h = splitmix64(seed & _MASK)
    h = splitmix64(h ^ (replication & _MASK))
    h = splitmix64(h ^ (step & _MASK))
    return splitmix64(h ^ role_id(role))


def derive_rng(seed: int, replication: int, step: int, role: str) -> np.random.Generator:
    """Independent Philox stream for ``(seed, replication, step, role)``.

    Streams depend only on their key, never on evaluation order, so results do
    not change with the number of workers.
    """
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replication, step, role)))


# --------------------------------------------------------------------------
# operator application


class RandomOperator:
    """Interface shared by every algorithm operator."""

    epoch = False
    name = "operator"

    def lift(self, x) -> LiftedState:
        raise NotImplementedError

    def fixed_point(self) -> LiftedState:
        """Lifting ``s*`` of the problem optimizer."""
        return self.lift(self.problem.x_star)

    def draw(self, rng: np.random.Generator, k: int = 0) -> RandomnessDraw:
        raise NotImplementedError

    def apply(self, state: LiftedState, draw: RandomnessDraw) -> LiftedState:
        raise NotImplementedError

    def bind(self, s_a: LiftedState, s_b: LiftedState) -> "RandomOperator":
        """Hook for operators whose schedule depends on the initial pair."""
        return self


class EpochOperator(RandomOperator):
    """``T(s) = Pi(H_{tau-1} o ... o H_0)(inner_init(s))``."""

    epoch = True

    def inner_init(self, anchor: LiftedState):
        raise NotImplementedError

    def inner_step(self, inner, anchor: LiftedState, draw: RandomnessDraw):
        raise NotImplementedError

    def project(self, inner) -> LiftedState:
        raise NotImplementedError

    def apply(self, state, draw):
        return run_epoch(self, state, draw.split())


def step(operator: RandomOperator, state: LiftedState, draw: RandomnessDraw) -> LiftedState:
    # overflow is reported as NonFiniteStateError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        out = operator.apply(state, draw)
    if out.shape != state.shape:
        raise ShapeError(f"{operator.name} changed the state shape")
    if not out.is_finite():
        raise NonFiniteStateError(f"{operator.name} produced a non-finite state at step {draw.step}")
    return out


def run_epoch(operator: EpochOperator, state: LiftedState, inner_draws: Sequence[RandomnessDraw]) -> LiftedState:
    if len(inner_draws) < 1:
        raise ParameterError("an epoch needs at least one inner step")
    inner = operator.inner_init(state)
    for d in inner_draws:
        inner = operator.inner_step(inner, state, d)
    return operator.project(inner)


def project_ball(state: LiftedState, radius: float) -> LiftedState:
    """Radially rescale each block (x, prev, every proxy) into the ball."""
    if not radius > 0:
        raise ParameterError("projection radius must be positive")

    def shrink(v):
        nrm = np.linalg.norm(v)
        return v * (radius / nrm) if nrm > radius else v

    return replace(
        state,
        x=shrink(state.x),
        prev=None if state.prev is None else shrink(state.prev),
        proxies=None if state.proxies is None else np.array([shrink(p) for p in state.proxies]).reshape(state.proxies.shape),
    )


# --------------------------------------------------------------------------
# coupled simulation


@dataclass
class CoupledTrajectory:
    """``V[r, k] = V(s_k^(1), s_k^(2))`` and optionally ``V_star[r, k] = V*(s_k^(1), s*)``.

    Rows of diverged replications hold NaN from the first non-finite step on.
    """

    V: np.ndarray
    V_star: np.ndarray | None = None
    diverged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = np.zeros(self.V.shape[0], dtype=bool)

    @property
    def R(self) -> int:
        return self.V.shape[0]

    @property
    def K(self) -> int:
        return self.V.shape[1] - 1

    @property
    def diverged_count(self) -> int:
        return int(self.diverged.sum())

    def too_many_diverged(self) -> bool:
        return self.diverged_count > DIVERGED_FRACTION * self.R

    def stats(self, which: str = "V") -> tuple[np.ndarray, np.ndarray]:
        """Per-k mean and standard error over the non-diverged replications."""
        data = (self.V if which == "V" else self.V_star)[~self.diverged]
        if data.shape[0] == 0:
            nan = np.full(data.shape[1], np.nan)
            return nan, nan.copy()
        mean = data.mean(axis=0)
        if data.shape[0] < 2:
            return mean, np.zeros_like(mean)
        return mean, data.std(axis=0, ddof=1) / np.sqrt(data.shape[0])

    def to_csv(self, path: str | Path | None = None, hex_mode: bool = False) -> str:
        lines = ["replication,k,V,V_star,diverged"]
        for r in range(self.R):
            for k in range(self.K + 1):
                vs = "" if self.V_star is None else format_float(self.V_star[r, k], hex_mode)
                lines.append(f"{r},{k},{format_float(self.V[r, k], hex_mode)},{vs},{int(self.diverged[r])}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


InitFn = Callable[[int], tuple]


def _simulate(operator, init, K, r, V, seed, s_star, V_star, project_radius, independent):
    s_a, s_b = init(r) if callable(init) else init
    check_same_shape(s_a, s_b)
    op = operator.bind(s_a, s_b)
    vs = np.full(K + 1, np.nan)
    vstar = np.full(K + 1, np.nan) if s_star is not None else None

    def record(k):
        # an overflowing divergence counts as divergence of the replication
        with np.errstate(over="ignore", invalid="ignore"):
            v = V(s_a, s_b)
            w = V_star(s_a, s_star) if vstar is not None else 0.0
        if not (math.isfinite(v) and math.isfinite(w)):
            return False
        vs[k] = v
        if vstar is not None:
            vstar[k] = w
        return True

    if not record(0):
        return vs, vstar, True
    for k in range(K):
        draw_a = op.draw(derive_rng(seed, r, k, "step"), k)
        draw_b = op.draw(derive_rng(seed, r, k, "step-b"), k) if independent else draw_a
        try:
            s_a = step(op, s_a, draw_a)
            s_b = step(op, s_b, draw_b)
        except (NonFiniteStateError, FloatingPointError, OverflowError):
            return vs, vstar, True
        if project_radius is not None:
            s_a, s_b = project_ball(s_a, project_radius), project_ball(s_b, project_radius)
        if not record(k + 1):
            return vs, vstar, True
    return vs, vstar, False


def _simulate_chunk(args):
    operator, init, K, reps, V, seed, s_star, V_star, project_radius, independent = args
    return [_simulate(operator, init, K, r, V, seed, s_star, V_star, project_radius, independent) for r in reps]


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def run_coupled(operator: RandomOperator, s0_a: LiftedState | None = None, s0_b: LiftedState | None = None,
                K: int = 1, R: int = 1, V=None, seed: int = 0, *, init: InitFn | None = None,
                s_star: LiftedState | None = None, V_star=None, project_radius: float | None = None,
                independent: bool = False, workers: int | None = None) -> CoupledTrajectory:
    """Run ``R`` replications of two chains for ``K`` steps (epochs).

    Both chains of a replication consume the same draws unless
    ``independent`` is set. Initial states come from ``(s0_a, s0_b)`` or from
    ``init(r)``, which must itself be deterministic in ``r``.
    """
    if K < 1 or R < 1:
        raise ParameterError("need K >= 1 and R >= 1")
    if V is None:
        raise ParameterError("a divergence is required")
    if init is None:
        if s0_a is None or s0_b is None:
            raise ParameterError("give both initial states or an init function")
        check_same_shape(s0_a, s0_b)
        init = (s0_a, s0_b)
    V_star = V if V_star is None else V_star
    workers = default_workers() if workers is None else workers
    reps = list(range(R))
    if workers > 1 and R > 1:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, [
                (operator, init, K, ch, V, seed, s_star, V_star, project_radius, independent) for ch in chunks]))
        results = [None] * R
        for ch, part in zip(chunks, parts):
            for r, res in zip(ch, part):
                results[r] = res
    else:
        results = _simulate_chunk((operator, init, K, reps, V, seed, s_star, V_star, project_radius, independent))
    Vm = np.stack([res[0] for res in results])
    Vs = np.stack([res[1] for res in results]) if s_star is not None else None
    div = np.array([res[2] for res in results], dtype=bool)
    return CoupledTrajectory(V=Vm, V_star=Vs, diverged=div)
