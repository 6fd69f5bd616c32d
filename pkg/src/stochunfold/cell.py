"""Corrector problems on the shift torus.

All problems minimize over potential fields ``χ = Dφ`` on the
``k``-refined torus (see :mod:`stochunfold.potential`); the expectation is
the average over refined sites.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .env import EnvironmentSpec, Phase, make_realization, eval_env, poly_min_second_derivative
from .integrands import Quadratic, check_integrand, sym_projector
from .potential import PotentialField, site_phases, torus_diff, torus_shape
from .solvers import SolverError, block_diag, cg_solve, newton


class AssemblyError(RuntimeError):
    """An assembled effective coefficient violates a bound that must hold exactly."""


class KornError(RuntimeError):
    """A nonzero potential field with vanishing symmetric part was found."""


@dataclass
class CellResult:
    chi: PotentialField
    value: float
    iterations: int = 0
    residual: float = 0.0
    seconds: float = 0.0
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.chi, self.value))


def _as_F(env: EnvironmentSpec, F):
    """Return ``(F_flat, m)``: vectors give scalar problems, matrices elastic ones."""
    F = np.asarray(F, dtype=float)
    d = env.d
    if F.shape == (d,):
        return F, 1
    if F.shape == (d, d):
        return F.ravel(), d
    if F.size == d * d and d > 1:
        return F.ravel(), d
    raise ValueError(f"F must be a vector of length {d} or a {d}x{d} matrix")


def _quadratic_tensor(env: EnvironmentSpec, m: int) -> np.ndarray:
    return (Quadratic.scalar(env) if m == 1 else Quadratic.elastic(env)).A


def corrector_quadratic(env: EnvironmentSpec, F, k: int = 4, tol: float = 1e-12) -> CellResult:
    """Minimize ``⟨A(F+χ)·(F+χ)⟩`` over potential fields by conjugate gradients.

    A vector ``F`` uses the phase matrices ``A``; a ``d×d`` matrix ``F`` uses
    the elastic form ``a|Fˢ+χˢ|²``. The returned value carries no factor ½.
    """
    t0 = time.perf_counter()
    Fv, m = _as_F(env, F)
    shape = torus_shape(env, k)
    N = int(np.prod(shape))
    A = _quadratic_tensor(env, m)[site_phases(env, k)]
    D = torus_diff(shape, k, m)
    B = block_diag(A)
    K = (D.T @ B @ D).tocsr()
    Frep = np.tile(Fv, N)
    rhs = -(D.T @ (B @ Frep))
    try:
        phi, its, res = cg_solve(K, rhs, rtol=tol)
    except SolverError as exc:
        raise SolverError(f"corrector CG stagnated; coefficients may be indefinite ({exc})") from exc
    pf = PotentialField.from_phi(env, phi.reshape(N, m), k)
    xi = Fv[None, :] + pf.chi
    value = float(np.einsum("ni,nij,nj->n", xi, A, xi).mean())
    return CellResult(pf, value, its, res, time.perf_counter() - t0)


def corrector_convex(env: EnvironmentSpec, V, F, tol: float = 1e-10, k: int = 1, max_halvings: int = 60) -> CellResult:
    """``V_hom(F) = min_χ ⟨V(ω, F + χ)⟩`` by damped Newton on ``φ``.

    ``V`` is an integrand from :mod:`stochunfold.integrands` whose phases
    match ``env``. One ``φ`` value per component is pinned to remove the
    constant null space.
    """
    t0 = time.perf_counter()
    Fv = np.asarray(F, dtype=float).ravel()
    d = env.d
    q = Fv.size
    if q not in (d, d * d):
        raise ValueError("F has the wrong size")
    m = q // d
    check_integrand(V, q)
    if getattr(V, "n_phases", env.n_phases) < env.n_phases:
        raise ValueError("integrand has fewer phases than the environment")
    shape = torus_shape(env, k)
    N = int(np.prod(shape))
    ph = site_phases(env, k)
    D = torus_diff(shape, k, m)
    keep = np.arange(m, N * m)  # pin site 0
    Dr = D[:, keep].tocsr()
    Frep = np.tile(Fv, N)

    def xi(x):
        return (Frep + Dr @ x).reshape(N, q)

    def fun(x):
        return float(V.value(ph, xi(x)).sum() / N)

    def grad(x):
        return Dr.T @ V.grad(ph, xi(x)).ravel() / N

    def hess(x):
        return (Dr.T @ block_diag(np.asarray(V.hess(ph, xi(x)), float) * np.ones((N, 1, 1))) @ Dr).tocsr() / N

    res = newton(fun, grad, hess, np.zeros(keep.size), tol=tol, max_halvings=max_halvings)
    phi = np.zeros(N * m)
    phi[keep] = res.x
    pf = PotentialField.from_phi(env, phi.reshape(N, m), k)
    return CellResult(pf, res.value, res.iterations, res.residual, time.perf_counter() - t0, res.history)


def voigt_reuss(env: EnvironmentSpec) -> tuple:
    """Harmonic (Reuss) and arithmetic (Voigt) mean matrices of the phase law."""
    frac = env.phase_fractions()
    mats = [ph.matrix(env.d) for ph in env.phases]
    voigt = sum(f * A for f, A in zip(frac, mats))
    reuss = np.linalg.inv(sum(f * np.linalg.inv(A) for f, A in zip(frac, mats)))
    return reuss, voigt


def hom_matrix(env: EnvironmentSpec, m: int = 1, k: int = 4, tol: float = 1e-12) -> tuple:
    """Effective quadratic form ``H_ab = ⟨(e_a+χ_a)·𝔸(e_b+χ_b)⟩`` and the correctors ``χ_a``."""
    d = env.d
    q = m * d
    A = _quadratic_tensor(env, m)[site_phases(env, k)]
    cols = []
    for a in range(q):
        e = np.zeros(q)
        e[a] = 1.0
        F = e if m == 1 else e.reshape(d, d)
        cols.append(corrector_quadratic(env, F, k=k, tol=tol).chi)
    H = np.empty((q, q))
    for a in range(q):
        xa = np.eye(q)[a] + cols[a].chi
        for b in range(q):
            xb = np.eye(q)[b] + cols[b].chi
            H[a, b] = float(np.einsum("ni,nij,nj->n", xa, A, xb).mean())
    return H, cols


def assemble_Ahom(env: EnvironmentSpec, k: int = 4, tol: float = 1e-12) -> np.ndarray:
    """Homogenized conductivity matrix, checked against the Voigt–Reuss sandwich.

    Raises :class:`AssemblyError` on asymmetry or a bound violation, both of
    which hold exactly for the discrete problem.
    """
    H, _ = hom_matrix(env, 1, k, tol)
    scale = max(1.0, np.abs(H).max())
    if np.max(np.abs(H - H.T)) > 1e-10 * scale:
        raise AssemblyError("homogenized matrix is not symmetric")
    H = 0.5 * (H + H.T)
    check_voigt_reuss(env, H)
    return H


def check_voigt_reuss(env: EnvironmentSpec, H: np.ndarray, tol: float = 1e-9) -> None:
    reuss, voigt = voigt_reuss(env)
    scale = max(1.0, np.abs(voigt).max())
    lo = np.linalg.eigvalsh(H - reuss).min()
    hi = np.linalg.eigvalsh(voigt - H).min()
    if lo < -tol * scale or hi < -tol * scale:
        raise AssemblyError(
            f"Voigt-Reuss bounds violated (min eig H-Reuss={lo:.3e}, Voigt-H={hi:.3e}); solver bug"
        )


def assemble_Chom(env: EnvironmentSpec, k: int = 4, tol: float = 1e-12) -> np.ndarray:
    """Homogenized elastic tensor as a ``d²×d²`` matrix acting on flattened strains."""
    H, _ = hom_matrix(env, env.d, k, tol)
    P = sym_projector(env.d)
    return P @ (0.5 * (H + H.T)) @ P


def extrapolate(values) -> float:
    """Aitken Δ² limit of a refinement sequence (last three entries)."""
    v = [float(x) for x in values]
    if len(v) < 3:
        return v[-1]
    a, b, c = v[-3:]
    den = (c - b) - (b - a)
    if den == 0 or (c - b) * (b - a) <= 0:
        return c
    return c - (c - b) ** 2 / den


def Ahom_refined(env: EnvironmentSpec, ks=(1, 2, 4, 8), tol: float = 1e-12):
    """Assemble at each subdivision ``k`` and extrapolate entrywise.

    Returns ``(extrapolated_matrix, [matrix per k])``.
    """
    mats = [assemble_Ahom(env, k=k, tol=tol) for k in ks]
    d = env.d
    ext = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            ext[i, j] = extrapolate([M[i, j] for M in mats])
    return ext, mats


@dataclass
class FHom:
    """Tabulated ``f_hom = ⟨f⟩`` with its polynomial coefficients and convexity modulus."""

    y: np.ndarray
    values: np.ndarray
    coeffs: np.ndarray
    lam: float

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(np.asarray(y, float), self.coeffs)


def f_hom(env: EnvironmentSpec, y) -> FHom:
    """Pointwise expectation of the reaction potential.

    ``lam`` is the minimum of the per-phase moduli, a valid (not always
    sharp) λ for which ``f_hom − (λ/2)y²`` is convex.
    """
    y = np.asarray(y, dtype=float)
    frac = env.phase_fractions()
    n = max(len(ph.f) for ph in env.phases)
    coeffs = np.zeros(n)
    for w, ph in zip(frac, env.phases):
        coeffs[: len(ph.f)] += w * np.asarray(ph.f, float)
    lam = min(poly_min_second_derivative(ph.f) for ph in env.phases)
    return FHom(y, np.polynomial.polynomial.polyval(y, coeffs), coeffs, lam)


@dataclass
class RVEResult:
    mean: float
    std: float
    values: np.ndarray
    window: int


def window_env(env: EnvironmentSpec, window: int, key: int) -> EnvironmentSpec:
    """Periodic environment built from one ``window^d`` patch of a sample."""
    r = make_realization(env, key=key)
    cells = np.indices((window,) * env.d).reshape(env.d, -1, order="F").T
    config = eval_env(r, cells).reshape((window,) * env.d, order="F")
    return EnvironmentSpec("torus", env.d, env.phases, L=window, config=config)


def rve_vhom(env: EnvironmentSpec, F, window: int, seeds, k: int = 1, V=None, tol: float = 1e-12) -> RVEResult:
    """Periodized window correctors over independent samples.

    ``seeds`` is an iterable of sample keys (or a count). Values are the
    quadratic corrector value by default, or ``V_hom`` of integrand ``V``.
    """
    keys = range(seeds) if isinstance(seeds, int) else list(seeds)
    vals = []
    for key in keys:
        wenv = window_env(env, window, int(key))
        if V is None:
            vals.append(corrector_quadratic(wenv, F, k=k, tol=tol).value)
        else:
            vals.append(corrector_convex(wenv, V, F, tol=tol, k=k).value)
    vals = np.array(vals)
    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return RVEResult(math.fsum(vals) / vals.size, std, vals, window)


# -- stochastic Korn ----------------------------------------------------------


def korn_symbol_bound(d: int, L: int) -> float:
    """Largest Fourier-mode ratio ``|χ|²/|χˢ|²`` of forward-difference gradients on ``(ℤ/L)^d``."""
    best = 0.0
    for kvec in np.ndindex(*(L,) * d):
        if not any(kvec):
            continue
        xi = np.exp(2j * np.pi * np.array(kvec) / L) - 1.0
        n2 = float(np.real(np.vdot(xi, xi)))
        Bs = 0.5 * n2 * np.eye(d) + 0.5 * np.outer(xi, xi.conj())
        # generalized eigenvalues of n2·I against Bs
        ev = np.linalg.eigvalsh(Bs)
        best = max(best, n2 / ev.min())
    return best


def korn_fourier_ratio(phi: np.ndarray, L: int, d: int) -> float:
    """``Σ|χ|² / Σ|χˢ|²`` computed mode by mode from the FFT of ``φ`` (shape ``(L,)*d + (d,)``)."""
    ph = np.fft.fftn(phi, axes=tuple(range(d)))
    ks = np.meshgrid(*[np.arange(L)] * d, indexing="ij")
    xi = np.stack([np.exp(2j * np.pi * k / L) - 1.0 for k in ks], axis=-1)
    n2 = np.sum(np.abs(xi) ** 2, axis=-1)
    num = np.sum(n2 * np.sum(np.abs(ph) ** 2, axis=-1))
    proj = np.sum(np.conj(xi) * ph, axis=-1)
    den = np.sum(0.5 * n2 * np.sum(np.abs(ph) ** 2, axis=-1) + 0.5 * np.abs(proj) ** 2)
    return float(num / den)


@dataclass
class KornResult:
    max_ratio: float
    ratios: np.ndarray
    symbol_bound: float
    fourier_mismatch: float
    skipped: int


def korn_ratio(env: EnvironmentSpec, trials: int, p: float = 2.0, seed: int = 0, L: int | None = None) -> KornResult:
    """Empirical ``sup ⟨|χ|^p⟩ / ⟨|χˢ|^p⟩`` over random vector potentials.

    ``φ`` has ``d`` components, i.i.d. standard normal on ``(ℤ/L)^d``
    (``L`` defaults to the environment period, at least 2). For ``p = 2``
    every ratio is cross-checked against its Fourier evaluation.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    d = env.d
    L = max(2, env.L) if L is None else L
    shape = (L,) * d
    N = L**d
    D = torus_diff(shape, 1, d)
    P = sym_projector(d)
    rng = np.random.default_rng(seed)
    ratios, mismatch, skipped = [], 0.0, 0
    for _ in range(trials):
        phi = rng.standard_normal((N, d))
        chi = (D @ phi.ravel()).reshape(N, d * d)
        chis = chi @ P
        num = np.mean(np.sum(chi**2, axis=1) ** (p / 2))
        den = np.mean(np.sum(chis**2, axis=1) ** (p / 2))
        if num <= 1e-28 * max(1.0, np.abs(phi).max() ** p):
            skipped += 1
            continue
        if den <= 1e-14 * num:
            raise KornError("potential field with vanishing symmetric gradient found")
        ratios.append(num / den)
        if p == 2:
            grid = phi.reshape(shape + (d,), order="F")
            mismatch = max(mismatch, abs(korn_fourier_ratio(grid, L, d) - num / den))
    ratios = np.array(ratios)
    return KornResult(float(ratios.max()) if ratios.size else float("nan"), ratios,
                      korn_symbol_bound(d, L), mismatch, skipped)


__all__ = [
    "AssemblyError",
    "CellResult",
    "FHom",
    "KornError",
    "KornResult",
    "Phase",
    "PotentialField",
    "RVEResult",
    "Ahom_refined",
    "assemble_Ahom",
    "assemble_Chom",
    "corrector_convex",
    "corrector_quadratic",
    "extrapolate",
    "f_hom",
    "hom_matrix",
    "korn_ratio",
    "korn_symbol_bound",
    "rve_vhom",
    "voigt_reuss",
    "window_env",
]
