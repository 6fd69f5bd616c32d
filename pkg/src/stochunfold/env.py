"""Discrete stationary random environments.

The probability space is realized in one of three ways:

* ``torus``: all ``L**d`` lattice translates of one periodic configuration,
  with the uniform measure. Shifting acts by offset translation, so every
  expectation is a finite, exact sum.
* ``iid``: an i.i.d. lattice (random checkerboard). Phases are pure
  functions of ``(master seed, sample key, absolute cell index)`` obtained
  from a counter-based hash, so shifting is exact and evaluation order does
  not matter.
* ``deterministic``: a single phase everywhere.

The environment lattice has unit spacing. At scale ``eps`` the coefficient
seen at a continuum point ``x`` is the phase of cell ``floor(x / eps)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

KINDS = ("torus", "iid", "deterministic")

# ¼(y² − 1)² in ascending powers
DOUBLE_WELL = (0.25, 0.0, -0.5, 0.0, 0.25)

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wrapping arithmetic)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def split_key(key: int, index: int) -> int:
    """Derive an independent child key; used to split the master seed into sample keys."""
    k = _mix64(np.uint64(key & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        return int(_mix64(k ^ _mix64(np.uint64(index & 0xFFFFFFFFFFFFFFFF))))


def cell_uniforms(key: int, cells: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) variates attached to absolute lattice cells.

    ``cells`` has shape ``(..., d)`` and may contain negative coordinates.
    The result depends only on ``key`` and the cell coordinates.
    """
    cells = np.asarray(cells, dtype=np.int64)
    h = np.full(cells.shape[:-1], np.uint64(key & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for i in range(cells.shape[-1]):
            c = cells[..., i].astype(np.uint64)  # two's complement wrap for negatives
            h = _mix64(h ^ (c + np.uint64(i + 1) * _GOLDEN))
    return (h >> _U64(11)).astype(np.float64) * 2.0**-53


def poly_min_second_derivative(coeffs: Sequence[float]) -> float:
    """Infimum over y of f''(y) for a polynomial f given in ascending powers.

    Returns ``-inf`` when f'' is unbounded below.
    """
    c = np.polynomial.polynomial.polyder(np.asarray(coeffs, dtype=float), 2)
    c = np.trim_zeros(c, "b")
    if c.size == 0:
        return 0.0
    if c.size == 1:
        return float(c[0])
    if (c.size - 1) % 2 == 1 or c[-1] < 0:
        return -math.inf
    crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(c))
    crit = crit[np.abs(crit.imag) < 1e-12].real
    return float(np.min(np.polynomial.polynomial.polyval(crit, c))) if crit.size else float(c[0])


@dataclass(frozen=True, eq=False)
class Phase:
    """Coefficient table of one phase.

    ``A`` defaults to ``a * Id``. ``f`` is the reaction potential in ascending
    polynomial coefficients (default double well).
    """

    a: float
    A: np.ndarray | None = None
    r: float = 1.0
    f: tuple = DOUBLE_WELL

    def matrix(self, d: int) -> np.ndarray:
        if self.A is None:
            return self.a * np.eye(d)
        return np.asarray(self.A, dtype=float)

    @property
    def lam(self) -> float:
        """λ such that f − (λ/2) y² is convex (sharp)."""
        return poly_min_second_derivative(self.f)


@dataclass(eq=False)
class EnvironmentSpec:
    kind: str
    d: int
    phases: tuple
    L: int = 1
    config: np.ndarray | None = None
    probs: np.ndarray | None = None
    seed: int = 0
    C: float | None = None

    def __post_init__(self):
        self.phases = tuple(self.phases)
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not self.phases:
            raise ValueError("at least one phase is required")
        nph = len(self.phases)
        if self.kind == "torus":
            if self.L < 1:
                raise ValueError("torus period must be positive")
            cfg = np.asarray(self.config, dtype=np.int64)
            if cfg.size != self.L**self.d:
                raise ValueError(f"configuration needs exactly L^d = {self.L ** self.d} entries")
            cfg = cfg.reshape((self.L,) * self.d)
            if cfg.min() < 0 or cfg.max() >= nph:
                raise ValueError("configuration contains invalid phase indices")
            self.config = cfg
        elif self.kind == "iid":
            p = np.asarray(self.probs, dtype=float)
            if p.shape != (nph,):
                raise ValueError("need one probability per phase")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("phase probabilities must be nonnegative and sum to 1")
            self.probs = p
            self.L = 1
        else:
            if nph != 1:
                raise ValueError("deterministic environment takes a single phase")
            self.L = 1
            self.config = np.zeros((1,) * self.d, dtype=np.int64)
        for ph in self.phases:
            A = ph.matrix(self.d)
            if A.shape != (self.d, self.d):
                raise ValueError("phase matrix has wrong shape")
            if np.max(np.abs(A - A.T)) > 1e-14:
                raise ValueError("phase matrix must be symmetric")
            lo, hi = np.linalg.eigvalsh(A)[[0, -1]]
            if lo <= 0 or ph.r <= 0:
                raise ValueError("coefficients must be positive definite")
            if self.C is not None:
                C = self.C
                if lo < 1.0 / C - 1e-14 or hi > C + 1e-14 or not (1.0 / C <= ph.r <= C):
                    raise ValueError(f"coefficients violate declared constant C={C}")

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    def phase_fractions(self) -> np.ndarray:
        """Law of the phase at the origin."""
        if self.kind == "iid":
            return self.probs.copy()
        counts = np.bincount(self.config.ravel(), minlength=self.n_phases)
        return counts / counts.sum()

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d}
        if self.kind == "torus":
            out["L"] = self.L
            out["config"] = [int(v) for v in self.config.ravel(order="F")]
        if self.kind == "iid":
            out["probs"] = [float(v) for v in self.probs]
            out["seed"] = int(self.seed)
        out["phases"] = []
        for ph in self.phases:
            entry = {"a": float(ph.a), "r": float(ph.r), "f": [float(v) for v in ph.f]}
            if ph.A is not None:
                entry["A"] = np.asarray(ph.A, dtype=float).tolist()
            out["phases"].append(entry)
        if self.C is not None:
            out["C"] = float(self.C)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentSpec":
        allowed = {"kind", "d", "L", "config", "phases", "probs", "seed", "C"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown environment keys: {sorted(unknown)}")
        d = int(data["d"])
        phases = []
        for entry in data["phases"]:
            extra = set(entry) - {"a", "A", "r", "f"}
            if extra:
                raise ValueError(f"unknown phase keys: {sorted(extra)}")
            A = entry.get("A")
            phases.append(
                Phase(
                    a=float(entry.get("a", 1.0)),
                    A=None if A is None else np.asarray(A, dtype=float),
                    r=float(entry.get("r", 1.0)),
                    f=tuple(float(v) for v in entry.get("f", DOUBLE_WELL)),
                )
            )
        kind = data["kind"]
        config = None
        L = int(data.get("L", 1))
        if kind == "torus":
            config = np.asarray(data["config"], dtype=np.int64)
            if config.size != L**d:
                raise ValueError(f"configuration needs exactly L^d = {L ** d} entries")
            config = config.reshape((L,) * d, order="F")
        return cls(
            kind=kind,
            d=d,
            phases=phases,
            L=L,
            config=config,
            probs=data.get("probs"),
            seed=int(data.get("seed", 0)),
            C=data.get("C"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "EnvironmentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def checkerboard(d: int, phase_a: Phase, phase_b: Phase, L: int = 2) -> EnvironmentSpec:
    """Periodic checkerboard: ``phase_a`` on cells with even coordinate sum."""
    idx = np.indices((L,) * d).sum(axis=0) % 2
    return EnvironmentSpec("torus", d, (phase_a, phase_b), L=L, config=idx)


def deterministic(d: int, phase: Phase) -> EnvironmentSpec:
    return EnvironmentSpec("deterministic", d, (phase,))


@dataclass(frozen=True)
class Realization:
    """One ω: torus offset, or (sample key, offset) for i.i.d. lattices."""

    env: EnvironmentSpec = field(compare=False, repr=False)
    offset: tuple
    key: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, Realization)
            and other.env is self.env
            and other.offset == self.offset
            and other.key == self.key
        )

    def __hash__(self):
        return hash((id(self.env), self.offset, self.key))


def _reduce(env: EnvironmentSpec, offset) -> tuple:
    off = np.asarray(offset, dtype=np.int64).reshape(env.d)
    if env.kind == "torus":
        off = off % env.L
    elif env.kind == "deterministic":
        off = np.zeros(env.d, dtype=np.int64)
    return tuple(int(v) for v in off)


def make_realization(env: EnvironmentSpec, offset=None, key: int = 0) -> Realization:
    if offset is None:
        offset = (0,) * env.d
    return Realization(env, _reduce(env, offset), int(key))


def shift(r: Realization, z) -> Realization:
    """τ_z r. Group laws hold exactly; torus offsets are reduced mod L."""
    z = np.asarray(z, dtype=np.int64).reshape(r.env.d)
    return Realization(r.env, _reduce(r.env, np.asarray(r.offset) + z), r.key)


def eval_env(r: Realization, cells) -> np.ndarray:
    """Phase index at lattice cell(s) ``cells`` (shape ``(..., d)``) for realization r.

    Satisfies ``eval_env(shift(r, z), c) == eval_env(r, c + z)`` exactly.
    """
    env = r.env
    cells = np.asarray(cells, dtype=np.int64)
    absolute = cells + np.asarray(r.offset, dtype=np.int64)
    if env.kind == "torus":
        idx = np.mod(absolute, env.L)
        return env.config[tuple(np.moveaxis(idx, -1, 0))]
    if env.kind == "deterministic":
        return np.zeros(cells.shape[:-1], dtype=np.int64)
    u = cell_uniforms(split_key(env.seed, r.key), absolute)
    cum = np.cumsum(env.probs)
    cum[-1] = 1.0
    return np.searchsorted(cum, u, side="right").astype(np.int64)


class Plan:
    """A discretization of P: realizations with weights summing to one.

    Iterating yields ``(Realization, weight)`` pairs. ``exact`` marks a full
    torus orbit enumeration (uniform weights), which is what unfolding needs.
    """

    def __init__(self, env: EnvironmentSpec, realizations, weights, exact: bool):
        self.env = env
        self.realizations = list(realizations)
        self.weights = np.asarray(weights, dtype=float)
        self.exact = exact

    def __iter__(self) -> Iterator:
        return iter(zip(self.realizations, self.weights))

    def __len__(self) -> int:
        return len(self.realizations)

    def __getitem__(self, i):
        return self.realizations[i], self.weights[i]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([r.offset for r in self.realizations], dtype=np.int64).reshape(len(self), -1)

    def phases(self, cells) -> np.ndarray:
        """Phase indices with shape ``(M, *cells.shape[:-1])``."""
        return np.stack([eval_env(r, cells) for r in self.realizations])


def enumerate_or_sample(
    spec: EnvironmentSpec, M: int | None = None, seed: int = 0, exact: bool | None = None
) -> Plan:
    """Discretize the probability measure of ``spec``.

    Torus: exact uniform enumeration of all ``L**d`` offsets (x₁ fastest) when
    ``M`` is None or ``L**d``; otherwise offsets are sampled. I.i.d.: ``M``
    Monte Carlo samples of weight ``1/M`` keyed by ``seed``. Deterministic:
    ``M`` identical copies.
    """
    if M is not None and M < 1:
        raise ValueError("need at least one realization")
    if spec.kind == "torus":
        full = spec.L**spec.d
        if exact is None:
            exact = M is None or M == full
        if exact:
            if M is not None and M != full:
                raise ValueError(f"exact torus enumeration needs M = L^d = {full}")
            grids = np.indices((spec.L,) * spec.d).reshape(spec.d, -1, order="F").T
            reals = [make_realization(spec, o) for o in grids]
            return Plan(spec, reals, np.full(full, 1.0 / full), True)
        rng = np.random.default_rng(seed)
        offs = rng.integers(0, spec.L, size=(M, spec.d))
        return Plan(spec, [make_realization(spec, o) for o in offs], np.full(M, 1.0 / M), False)
    if spec.kind == "deterministic":
        M = 1 if M is None else M
        reals = [make_realization(spec) for _ in range(M)]
        return Plan(spec, reals, np.full(M, 1.0 / M), True)
    if M is None:
        raise ValueError("i.i.d. environments need a sample count M")
    if exact:
        raise ValueError("i.i.d. environments cannot be enumerated exactly")
    reals = [make_realization(spec, key=split_key(seed, i)) for i in range(M)]
    return Plan(spec, reals, np.full(M, 1.0 / M), False)


def expectation(spec: EnvironmentSpec, observable: Callable, plan: Plan | None = None):
    """Expectation of ``observable(Realization) -> float``.

    Returns ``(mean, standard_error)``. Exact plans return the finite average
    with zero error; Monte Carlo plans the sample standard error.
    """
    if plan is None:
        plan = enumerate_or_sample(spec)
    if len(plan) == 0:
        raise ValueError("empty sample")
    vals = np.array([float(observable(r)) for r in plan.realizations])
    mean = math.fsum(w * v for w, v in zip(plan.weights, vals))
    if plan.exact or len(vals) < 2:
        return mean, 0.0
    return mean, float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def _axis_overlaps(lo: float, hi: float):
    """Integer cells k and overlap lengths of [k, k+1) with [lo, hi]."""
    k0, k1 = math.floor(lo), math.ceil(hi)
    ks = np.arange(k0, k1)
    left = np.maximum(ks, lo)
    right = np.minimum(ks + 1, hi)
    return ks, np.clip(right - left, 0.0, None)


def birkhoff_average(r: Realization, phi, R: float, eps: float) -> float:
    """|Q|⁻¹ ∫_Q φ(τ_{x/ε} ω) dx on Q = [−R, R]^d, computed by cell counting.

    ``phi`` maps phase index to value: a sequence indexed by phase or a callable.
    """
    if R <= 0 or eps <= 0:
        raise ValueError("R and eps must be positive")
    d = r.env.d
    ks, lens = _axis_overlaps(-R / eps, R / eps)
    grids = np.stack(np.meshgrid(*([ks] * d), indexing="ij"), axis=-1)
    w = lens
    for _ in range(d - 1):
        w = np.multiply.outer(w, lens)
    ph = eval_env(r, grids)
    table = np.array([phi(i) for i in range(r.env.n_phases)]) if callable(phi) else np.asarray(phi, float)
    vals = table[ph]
    return float(np.sum(vals * w) / np.sum(w))
