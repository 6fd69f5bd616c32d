"""Convex integrands ``V(phase, ξ)`` evaluated in bulk.

``ξ`` arrays have shape ``(N, q)`` with ``q = m·d`` (component ``j``,
derivative ``i`` at ``j*d + i``); ``ph`` holds the phase index of each row.
Every integrand exposes ``value``, ``grad`` and ``hess`` and is convex in
``ξ`` for each phase.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator

from .env import EnvironmentSpec


def sym_projector(d: int) -> np.ndarray:
    """``(d², d²)`` orthogonal projector onto symmetric matrices."""
    q = d * d
    P = np.zeros((q, q))
    for j in range(d):
        for i in range(d):
            P[j * d + i, j * d + i] += 0.5
            P[j * d + i, i * d + j] += 0.5
    return P


class Quadratic:
    """``V(ph, ξ) = ½ ξ·A_ph ξ`` with one symmetric positive semidefinite ``A`` per phase."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("need an array of square matrices, one per phase")
        if np.max(np.abs(A - A.transpose(0, 2, 1))) > 1e-12 * max(1.0, np.abs(A).max()):
            raise ValueError("quadratic integrand must be symmetric")
        if np.min(np.linalg.eigvalsh(A)) < -1e-12 * max(1.0, np.abs(A).max()):
            raise ValueError("quadratic integrand is not convex")
        self.A = A
        self.p = 2.0

    @classmethod
    def scalar(cls, env: EnvironmentSpec) -> "Quadratic":
        return cls(np.stack([ph.matrix(env.d) for ph in env.phases]))

    @classmethod
    def elastic(cls, env: EnvironmentSpec) -> "Quadratic":
        """``½ a_ph |ξˢ|²`` acting on displacement gradients."""
        P = sym_projector(env.d)
        return cls(np.stack([ph.a * P for ph in env.phases]))

    @property
    def q(self) -> int:
        return self.A.shape[1]

    @property
    def n_phases(self) -> int:
        return self.A.shape[0]

    def value(self, ph, xi):
        return 0.5 * np.einsum("ni,nij,nj->n", xi, self.A[ph], xi)

    def grad(self, ph, xi):
        return np.einsum("nij,nj->ni", self.A[ph], xi)

    def hess(self, ph, xi):
        return self.A[ph]


class PowerLaw:
    """``V(ph, ξ) = a_ph |ξ̃|^p / p`` with ``ξ̃ = ξˢ`` when ``sym`` else ``ξ``."""

    def __init__(self, a, p: float, q: int, sym: bool = False):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        if p <= 1:
            raise ValueError("power-law integrands need p > 1 to be strictly convex with p-growth")
        if np.any(self.a <= 0):
            raise ValueError("power-law moduli must be positive")
        self.p = float(p)
        self._q = int(q)
        self.sym = sym
        if sym:
            d = int(round(np.sqrt(q)))
            if d * d != q:
                raise ValueError("symmetric power law needs square gradients")
            self.P = sym_projector(d)
        else:
            self.P = np.eye(q)

    @classmethod
    def from_env(cls, env: EnvironmentSpec, p: float, sym: bool = False) -> "PowerLaw":
        q = env.d * env.d if sym else env.d
        return cls([ph.a for ph in env.phases], p, q, sym)

    @property
    def q(self) -> int:
        return self._q

    @property
    def n_phases(self) -> int:
        return self.a.size

    def _t(self, xi):
        return xi @ self.P if self.sym else xi

    def value(self, ph, xi):
        t = self._t(xi)
        return self.a[ph] * np.sum(t * t, axis=-1) ** (self.p / 2) / self.p

    def grad(self, ph, xi):
        t = self._t(xi)
        r2 = np.sum(t * t, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r2 > 0, r2 ** (self.p / 2 - 1), 0.0)
        return (self.a[ph] * s)[:, None] * t

    def hess(self, ph, xi):
        t = self._t(xi)
        r2 = np.sum(t * t, axis=-1)
        tiny = np.finfo(float).tiny
        r2s = np.maximum(r2, tiny)
        s1 = np.where(r2 > 0, r2s ** (self.p / 2 - 1), 0.0 if self.p > 2 else 1.0 / np.sqrt(tiny))
        s2 = np.where(r2 > 0, (self.p - 2) * r2s ** (self.p / 2 - 2), 0.0)
        a = self.a[ph]
        H = (a * s1)[:, None, None] * self.P[None]
        return H + (a * s2)[:, None, None] * t[:, :, None] * t[:, None, :]


class RadialTable:
    """Isotropic integrand ``V(ξ) = H(|ξ|)`` from tabulated values.

    ``H`` is interpolated by a monotone cubic. The table must be
    nondecreasing and convex and the interpolant is rejected if its second
    derivative turns negative anywhere on the table range. Past the last
    node ``H`` continues as a convex quadratic.
    """

    def __init__(self, radii, values, q: int, check_tol: float = 1e-9):
        rho = np.asarray(radii, dtype=float)
        H = np.asarray(values, dtype=float)
        if rho.ndim != 1 or rho.size < 3 or rho[0] != 0 or np.any(np.diff(rho) <= 0):
            raise ValueError("radii must start at 0 and increase strictly")
        scale = max(1.0, np.abs(H).max())
        if np.any(np.diff(H) < -check_tol * scale):
            raise ValueError("tabulated integrand is not nondecreasing in |ξ|")
        slopes = np.diff(H) / np.diff(rho)
        if np.any(np.diff(slopes) < -check_tol * scale):
            raise ValueError("tabulated integrand is not convex")
        self.spline = PchipInterpolator(rho, H, extrapolate=False)
        self.d1 = self.spline.derivative(1)
        self.d2 = self.spline.derivative(2)
        probe = np.linspace(0, rho[-1], 40 * rho.size)
        if np.min(self.d2(probe)) < -check_tol * scale / rho[-1] ** 2:
            raise ValueError("interpolated integrand is not convex")
        self.R = rho[-1]
        self.HR, self.dR = float(H[-1]), float(self.d1(self.R))
        self.ddR = max(float(self.d2(self.R * (1 - 1e-12))), 0.0)
        self.d2_0 = float(self.d2(0.0))
        self._q = q
        self.p = 2.0

    @property
    def q(self) -> int:
        return self._q

    n_phases = 1

    def _H(self, rho, k):
        inside = rho <= self.R
        r = np.minimum(rho, self.R)
        out = [self.spline, self.d1, self.d2][k](r)
        t = rho - self.R
        ext = [self.HR + self.dR * t + 0.5 * self.ddR * t * t, self.dR + self.ddR * t, np.full_like(t, self.ddR)][k]
        return np.where(inside, out, ext)

    def value(self, ph, xi):
        return self._H(np.linalg.norm(xi, axis=-1), 0)

    def grad(self, ph, xi):
        rho = np.linalg.norm(xi, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(rho > 1e-12, self._H(rho, 1) / rho, self.d2_0)
        return s[:, None] * xi

    def hess(self, ph, xi):
        rho = np.linalg.norm(xi, axis=-1)
        q = xi.shape[1]
        small = rho <= 1e-12
        safe = np.where(small, 1.0, rho)
        e = xi / safe[:, None]
        h1 = np.where(small, self.d2_0, self._H(rho, 1) / safe)
        h2 = np.where(small, self.d2_0, self._H(rho, 2))
        outer = e[:, :, None] * e[:, None, :]
        return h1[:, None, None] * (np.eye(q)[None] - outer) + h2[:, None, None] * outer


def check_integrand(V, q: int) -> None:
    """Reject integrands that cannot be used with gradients of width ``q``."""
    if getattr(V, "q", q) != q:
        raise ValueError(f"integrand expects gradients of width {V.q}, got {q}")
    for name in ("value", "grad", "hess"):
        if not callable(getattr(V, name, None)):
            raise TypeError(f"integrand lacks {name}()")
