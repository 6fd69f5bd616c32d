"""Linear and nonlinear solvers shared by the cell, energy and flow modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, spsolve


class SolverError(RuntimeError):
    """Raised when an iterative solve fails to reach its tolerance."""


def cg_solve(A, b, rtol: float = 1e-12, maxiter: int | None = None, precondition: bool = True):
    """Conjugate gradients with a Jacobi preconditioner.

    Returns ``(x, iterations, relative_residual)``. Singular but consistent
    systems (e.g. periodic problems with mean-zero data) are fine.
    """
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros_like(b), 0, 0.0
    maxiter = maxiter or 10 * b.size + 100
    Minv = None
    if precondition and sp.issparse(A):
        diag = A.diagonal()
        if np.all(diag > 0):
            inv = 1.0 / diag
            Minv = LinearOperator(A.shape, matvec=lambda x: inv * x)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=Minv, callback=cb)
    rel = float(np.linalg.norm(b - A @ x) / nb)
    if info != 0 and rel > 10 * rtol:
        raise SolverError(f"CG stopped after {count[0]} iterations at relative residual {rel:.3e}")
    return x, count[0], rel


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def newton(fun, grad, hess, x0, tol: float = 1e-10, maxiter: int = 200, max_halvings: int = 60,
           shift: float = 1e-10, armijo: float = 1e-4) -> NewtonResult:
    """Damped Newton with Armijo backtracking for a smooth convex objective.

    ``hess`` may return a dense array or a sparse matrix. A Levenberg shift
    ``shift·Id`` regularizes degenerate Hessians. Stops when ``‖∇f‖_∞ ≤ tol``.
    When the Newton direction fails to decrease the objective, a scaled
    steepest-descent step is tried before giving up. Once the predicted
    decrease drops below the rounding level of ``f`` the full step is taken
    without a line search.
    """
    x = np.array(x0, dtype=float)
    f = float(fun(x))
    g = grad(x)
    hist = [f]
    for it in range(maxiter + 1):
        res = float(np.max(np.abs(g))) if g.size else 0.0
        if res <= tol:
            return NewtonResult(x, f, it, res, hist)
        if it == maxiter:
            break
        H = hess(x)
        n = x.size
        if sp.issparse(H):
            step = spsolve((H + shift * sp.identity(n, format="csr")).tocsc(), -g)
        else:
            step = np.linalg.solve(H + shift * np.eye(n), -g)
        slope = float(g @ step)
        if not np.all(np.isfinite(step)) or slope >= 0:
            step, slope = -g, -float(g @ g)
        t = 1.0
        if -slope <= 64 * np.finfo(float).eps * max(1.0, abs(f)):
            # Decrease below the rounding level of f: Armijo is meaningless, take the full step.
            x = x + step
            f, g = float(fun(x)), grad(x)
            hist.append(f)
            continue
        for _ in range(max_halvings + 1):
            xt = x + t * step
            ft = float(fun(xt))
            if ft <= f + armijo * t * slope:
                break
            t *= 0.5
        else:
            # Near the optimum the decrease drowns in rounding; accept if the gradient shrinks.
            gt = grad(x + step)
            if np.max(np.abs(gt)) < res:
                xt, ft = x + step, float(fun(x + step))
            else:
                raise SolverError(f"line search failed after {max_halvings} halvings (|grad|={res:.3e})")
        x, f = xt, ft
        g = grad(x)
        hist.append(f)
    raise SolverError(f"Newton did not converge in {maxiter} iterations (|grad|={res:.3e})")


def block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    """Sparse block diagonal from an ``(N, q, q)`` stack."""
    N, q, _ = blocks.shape
    base = np.arange(N)[:, None, None] * q
    rows = np.broadcast_to(base + np.arange(q)[None, :, None], blocks.shape)
    cols = np.broadcast_to(base + np.arange(q)[None, None, :], blocks.shape)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(N * q, N * q))


def fsum_weighted(weights, values) -> float:
    return math.fsum(float(w) * float(v) for w, v in zip(weights, values))
