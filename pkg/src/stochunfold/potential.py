"""Potential fields on a (refined) shift torus.

A potential field is the horizontal gradient ``χ = Dφ`` of a mean-zero torus
function ``φ``. With cell subdivision ``k`` the torus ``(ℤ/L)^d`` is refined
to ``(ℤ/kL)^d`` and ``D_i φ(s) = k (φ(s + e_i) − φ(s))``; site ``s`` carries
the phase of environment cell ``⌊s/k⌋``. Realization ``o`` of the coarse
torus sits at refined site ``k·o``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .env import EnvironmentSpec, Plan
from .grid import Domain, RandomField, as_fraction


def torus_shape(env: EnvironmentSpec, k: int) -> tuple:
    if env.kind == "iid":
        raise ValueError("potential fields need a periodic (torus) environment")
    return (k * env.L,) * env.d


def flat_site(idx, shape) -> np.ndarray:
    """Flat index (x₁ fastest) of torus sites, wrapping periodically."""
    idx = np.mod(np.asarray(idx, dtype=np.int64), np.array(shape))
    strides = np.cumprod((1,) + tuple(shape[:-1]))
    return idx @ np.array(strides, dtype=np.int64)


def site_index(shape) -> np.ndarray:
    return np.indices(shape).reshape(len(shape), -1, order="F").T


def site_phases(env: EnvironmentSpec, k: int) -> np.ndarray:
    shape = torus_shape(env, k)
    coarse = site_index(shape) // k
    return env.config[tuple(coarse.T)]


def torus_diff(shape, k: int = 1, m: int = 1) -> sp.csr_matrix:
    """Periodic forward differences; row ``s*m*d + j*d + i``, column ``s*m + j``."""
    d = len(shape)
    N = int(np.prod(shape))
    sites = site_index(shape)
    s = np.arange(N)
    rows, cols, vals = [], [], []
    for i in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[i] = 1
        nxt = flat_site(sites + e, shape)
        for j in range(m):
            r = s * m * d + j * d + i
            rows += [r, r]
            cols += [nxt * m + j, s * m + j]
            vals += [np.full(N, float(k)), np.full(N, -float(k))]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * m * d, N * m)
    )


@dataclass(frozen=True, eq=False)
class PotentialField:
    """``χ = Dφ`` for a mean-zero ``φ`` on the ``k``-refined torus of ``env``.

    ``phi`` has shape ``(N, m)`` and ``chi`` shape ``(N, m*d)`` with
    ``N = (kL)^d`` sites in x₁-fastest order.
    """

    env: EnvironmentSpec
    k: int
    phi: np.ndarray
    chi: np.ndarray

    @classmethod
    def from_phi(cls, env: EnvironmentSpec, phi, k: int = 1) -> "PotentialField":
        shape = torus_shape(env, k)
        N = int(np.prod(shape))
        phi = np.asarray(phi, dtype=float).reshape(N, -1)
        phi = phi - phi.mean(axis=0)
        m = phi.shape[1]
        chi = (torus_diff(shape, k, m) @ phi.ravel()).reshape(N, m * env.d)
        return cls(env, k, phi, chi)

    @classmethod
    def zero(cls, env: EnvironmentSpec, m: int = 1, k: int = 1) -> "PotentialField":
        N = int(np.prod(torus_shape(env, k)))
        return cls(env, k, np.zeros((N, m)), np.zeros((N, m * env.d)))

    @property
    def m(self) -> int:
        return self.phi.shape[1]

    @property
    def shape(self) -> tuple:
        return torus_shape(self.env, self.k)

    def __add__(self, other: "PotentialField") -> "PotentialField":
        self._check(other)
        return PotentialField(self.env, self.k, self.phi + other.phi, self.chi + other.chi)

    def __mul__(self, alpha: float) -> "PotentialField":
        return PotentialField(self.env, self.k, alpha * self.phi, alpha * self.chi)

    __rmul__ = __mul__

    def _check(self, other):
        if other.env is not self.env or other.k != self.k or other.phi.shape != self.phi.shape:
            raise ValueError("potential fields live on different tori")

    def mean(self) -> np.ndarray:
        return self.chi.mean(axis=0)


def _subcell(domain: Domain, eps, k: int):
    g = domain.cells_per_coef(eps)
    if np.any(g % k):
        raise ValueError(f"cell subdivision k={k} must divide the grid cells per period {g.tolist()}")
    return g, g // k


def _check_plan(plan: Plan, env: EnvironmentSpec):
    if plan.env is not env:
        raise ValueError("plan and potential field use different environments")
    if env.kind == "iid":
        raise ValueError("potential fields need a torus environment")


def on_grid(pf: PotentialField, domain: Domain, eps, plan: Plan, eta=None, loc: str = "cell") -> RandomField:
    """Two-scale profile ``(ω, x) ↦ χ(ω, y(x))·η(x)`` as a cell field.

    ``y(x)`` is the refined sub-site of ``x`` inside its environment cell.
    ``eta`` is a callable of cell centers returning ``(n_cells,)`` values, or
    ``None`` for 1. This is the limit object that the unfolded gradients of
    recovery sequences approach.
    """
    _check_plan(plan, pf.env)
    g, sub = _subcell(domain, eps, pf.k)
    owner = domain.owner_cell(loc)
    y = (domain.cell_index % g) // sub
    site = pf.k * plan.offsets[:, None, :] + y[None, owner, :]
    vals = pf.chi[flat_site(site, pf.shape)]
    if eta is not None:
        e = np.asarray(eta(domain.cell_centers), dtype=float)[owner]
        vals = vals * e[None, :, None]
    return RandomField(domain, vals, loc, plan.weights)


def lift(pf: PotentialField, domain: Domain, eps, plan: Plan) -> RandomField:
    """Nodal field ``ε·φ(τ_{x/ε}ω)`` on the grid, multilinear between refined sites.

    Its discrete gradient oscillates like ``χ(τ_{x/ε}ω)``; the match is exact
    in one dimension and whenever ``k`` equals the grid cells per period.
    """
    _check_plan(plan, pf.env)
    e = float(as_fraction(eps))
    g, sub = _subcell(domain, eps, pf.k)
    t = domain.node_index / sub
    base = np.floor(t).astype(np.int64)
    frac = t - base
    d = domain.d
    out = np.zeros((len(plan), domain.n_nodes, pf.m))
    for bits in range(2**d):
        b = np.array([(bits >> i) & 1 for i in range(d)])
        w = np.prod(np.where(b == 1, frac, 1.0 - frac), axis=1)
        if not np.any(w):
            continue
        site = pf.k * plan.offsets[:, None, :] + (base + b)[None]
        out += w[None, :, None] * pf.phi[flat_site(site, pf.shape)]
    return RandomField(domain, e * out, "node", plan.weights, eps=eps)
