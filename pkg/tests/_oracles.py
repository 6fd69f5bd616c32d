"""Independent reference computations used by the tests.

Nothing here imports the package: every value is derived from closed forms,
scalar root finding or brute-force loops.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq

# Values computed once with the functions below and frozen.
TWO_CELL_P4_1_16 = 0.7338046068783319  # two_cell_power(1, 16, 4, 1)
HARMONIC_1_4 = 1.6
KELLER_DYKHNE_1_4 = 2.0


def two_cell_power(a1: float, a2: float, p: float, F: float) -> float:
    """1D two-cell value ``min_c ½(a1|F+c|^p + a2|F−c|^p)/p`` via flux balance.

    The minimizer equalizes ``a|ξ|^{p-2}ξ`` across the two cells; the root is
    bracketed by ``c ∈ [−|F|, |F|]``.
    """
    def flux_gap(c):
        s1, s2 = F + c, F - c
        return a1 * abs(s1) ** (p - 2) * s1 - a2 * abs(s2) ** (p - 2) * s2

    c = brentq(flux_gap, -abs(F), abs(F), xtol=1e-15, rtol=1e-15)
    return 0.5 * (a1 * abs(F + c) ** p + a2 * abs(F - c) ** p) / p


def harmonic_mean(values, weights) -> float:
    return 1.0 / sum(w / v for v, w in zip(values, weights))


def poisson_1d_pw(a_cells, n_nodes_per_cell: int):
    """Exact nodal solution of ``−(a u')' = 1`` on [0, 1], ``u(0) = u(1) = 0``.

    ``a_cells`` lists the conductivity of equal coefficient cells. Returns
    ``(x, u, energy)`` with ``u' = (c − x)/a``, ``c = ∫x/a / ∫1/a`` and
    ``energy = −½∫(c − x)²/a``.
    """
    a_cells = np.asarray(a_cells, float)
    K = a_cells.size
    edges = np.linspace(0.0, 1.0, K + 1)
    inv = 1.0 / a_cells
    c = np.sum(inv * (edges[1:] ** 2 - edges[:-1] ** 2) / 2) / np.sum(inv * np.diff(edges))
    xs = np.linspace(0.0, 1.0, K * n_nodes_per_cell + 1)
    u = np.zeros_like(xs)
    for i, x in enumerate(xs):
        total = 0.0
        for j in range(K):
            lo, hi = edges[j], min(edges[j + 1], x)
            if hi <= lo:
                break
            total += inv[j] * (c * (hi - lo) - (hi**2 - lo**2) / 2)
        u[i] = total
    energy = -0.5 * np.sum(inv * (((c - edges[:-1]) ** 3 - (c - edges[1:]) ** 3) / 3))
    return xs, u, energy


def poisson_1d_hom(x, a_hom: float):
    return (x - x * x) / (2.0 * a_hom)


def brute_inner(u, v, weights, q):
    """Double loop ``Σ_ω w_ω Σ_x q_x u·v``."""
    total = 0.0
    for r in range(u.shape[0]):
        for p in range(u.shape[1]):
            for j in range(u.shape[2]):
                total += weights[r] * q[p] * u[r, p, j] * v[r, p, j]
    return total


def quadratic_two_site_min(a1: float, a2: float, F: float) -> float:
    """Brute-force grid search for ``min_φ ½Σ a_s(F + φ_{s+1} − φ_s)²`` on two sites.

    With ``t = φ_1 − φ_0`` the field is ``(F + t, F − t)``; the minimum of
    ``½(a1(F+t)² + a2(F−t)²)`` is found by golden-section refinement of a
    coarse scan.
    """
    def g(t):
        return 0.5 * (a1 * (F + t) ** 2 + a2 * (F - t) ** 2)

    ts = np.linspace(-2 * abs(F) - 1, 2 * abs(F) + 1, 2001)
    i = int(np.argmin([g(t) for t in ts]))
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
    phi = (math.sqrt(5) - 1) / 2
    for _ in range(200):
        m1, m2 = hi - phi * (hi - lo), lo + phi * (hi - lo)
        if g(m1) < g(m2):
            hi = m2
        else:
            lo = m1
    return g(0.5 * (lo + hi))


def korn_sharp_constant() -> float:
    """``sup |χ|²/|χˢ|²`` for gradients: a rank-one ``ξ⊗a`` with ``a ⊥ ξ`` gives 2."""
    return 2.0


def pairs(n):
    return itertools.combinations(range(n), 2)
