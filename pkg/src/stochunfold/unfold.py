"""Stochastic unfolding on a fully enumerated shift torus.

With ``z(x) = ⌊x/ε⌋`` (constant on each environment cell), unfolding maps
``u(ω, x)`` to ``u(τ_{−z(x)}ω, x)``. On an enumerated torus this is a
permutation of realizations per grid point, hence an isometry in every
``L^p(Ω×Q)`` norm, and its adjoint, the inverse, shifts by ``+z(x)``.
"""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .env import Plan
from .grid import Domain, RandomField, as_fraction, check_compatible, gradient, stiffness, to_corner
from .potential import PotentialField, lift, on_grid
from .solvers import cg_solve


class UnfoldPlan:
    """Realization permutations for one ``(domain, ε, plan)`` triple."""

    def __init__(self, domain: Domain, plan: Plan, eps):
        if not plan.exact:
            raise ValueError("unfolding needs the full orbit: use an exact torus enumeration, not Monte Carlo samples")
        env = plan.env
        if env.kind == "iid":
            raise ValueError("unfolding is only available for torus environments")
        self.domain = domain
        self.plan = plan
        self.eps = as_fraction(eps)
        self.g = domain.cells_per_coef(eps)
        offs = plan.offsets
        self.L = env.L
        d = domain.d
        n_orbit = self.L**d
        # realization id of every offset; deterministic copies map to themselves
        if env.kind == "deterministic":
            self._table = None
        else:
            flat = self._flat(offs)
            if len(plan) != n_orbit or np.unique(flat).size != n_orbit:
                raise ValueError("plan must list every torus offset exactly once")
            table = np.empty(n_orbit, dtype=np.int64)
            table[flat] = np.arange(len(plan))
            self._table = table

    def _flat(self, offs) -> np.ndarray:
        L, d = self.L, self.domain.d
        strides = L ** np.arange(d, dtype=np.int64)
        return np.mod(offs, L) @ strides

    def shift_table(self, z) -> np.ndarray:
        """Index of ``τ_z ω`` for every enumerated ``ω``; ``z`` of shape ``(..., d)``."""
        M = len(self.plan)
        z = np.asarray(z, dtype=np.int64)
        if self._table is None:
            return np.broadcast_to(np.arange(M), z.shape[:-1] + (M,)).copy()
        offs = self.plan.offsets
        return self._table[self._flat(offs + z[..., None, :])]

    def _perm(self, loc: str, sign: int) -> np.ndarray:
        key = (loc, sign)
        cache = self.__dict__.setdefault("_perm_cache", {})
        if key not in cache:
            z = self.domain.coef_cells(self.eps, loc)
            zr = np.mod(z, self.L)
            uniq, inv = np.unique(zr, axis=0, return_inverse=True)
            tab = self.shift_table(sign * uniq)  # (n_uniq, M)
            cache[key] = tab[inv.ravel()].T  # (M, npts)
        return cache[key]

    @cached_property
    def orbit(self) -> np.ndarray:
        """All shifts of the torus, ``(L^d, d)``."""
        d = self.domain.d
        return np.indices((self.L,) * d).reshape(d, -1, order="F").T


def _apply(u: RandomField, up: UnfoldPlan, sign: int) -> RandomField:
    if u.loc == "node":
        u = to_corner(u)
    if not u.domain.same_as(up.domain):
        raise ValueError("field and unfolding plan use different grids")
    if u.M != len(up.plan):
        raise ValueError("field and unfolding plan have different realization counts")
    idx = up._perm(u.loc, sign)
    vals = np.take_along_axis(u.values, idx[:, :, None], axis=0)
    return RandomField(u.domain, vals, u.loc, u.weights, eps=None if sign < 0 else up.eps)


def unfold(u: RandomField, up: UnfoldPlan) -> RandomField:
    """``(Tu)(ω, x) = u(τ_{−z(x)}ω, x)``. Nodal input is moved to the corner layout."""
    return _apply(u, up, -1)


def fold_adjoint(v: RandomField, up: UnfoldPlan) -> RandomField:
    """Adjoint and inverse of :func:`unfold`: ``v(τ_{z(x)}ω, x)``."""
    return _apply(v, up, +1)


def project_inv(u: RandomField, up: UnfoldPlan) -> RandomField:
    """Average over the shift orbit of each realization, pointwise in ``x``."""
    if u.M != len(up.plan):
        raise ValueError("field and plan have different realization counts")
    tabs = up.shift_table(up.orbit)  # (n_orbit, M)
    acc = np.zeros_like(u.values)
    for t in tabs:
        acc += u.values[t]
    return u.with_values(acc / len(tabs), eps=None)


# -- two-scale diagnostics ---------------------------------------------------


def default_battery(d: int, n_phases: int, degree: int = 2):
    """Phase indicators times monomials ``x^α`` with ``|α| ≤ degree``."""
    alphas = [a for a in np.ndindex(*(degree + 1,) * d) if sum(a) <= degree]
    battery = []
    for ph in range(n_phases):
        ind = np.zeros(n_phases)
        ind[ph] = 1.0
        for a in alphas:
            battery.append((ind, lambda x, a=a: np.prod(x ** np.array(a), axis=1)))
    return battery


def two_scale_residual(u_eps: RandomField, u: RandomField, eps, plan: Plan, battery=None) -> float:
    """``max |⟨∫ u_ε·φ(τ_{x/ε}ω)η(x)⟩ − ⟨∫ u·φ(ω)η(x)⟩|`` over a test battery.

    ``battery`` is a list of ``(phase_values, eta)`` pairs; each is applied to
    every component. Only evaluates the environment along realizations, so
    Monte Carlo plans are allowed.
    """
    if u_eps.loc == "node":
        u_eps = to_corner(u_eps)
    if u.loc == "node":
        u = to_corner(u)
    if u.M == 1 and u_eps.M > 1:
        u = u.broadcast(u_eps.weights)
    check_compatible(u_eps, u)
    if u.M != len(plan):
        raise ValueError("fields and plan have different realization counts")
    dom = u.domain
    battery = default_battery(dom.d, plan.env.n_phases) if battery is None else list(battery)
    if not battery:
        raise ValueError("empty test battery")
    cells = dom.coef_cells(eps, u.loc)
    ph_eps = plan.phases(cells)  # (M, npts)
    ph_0 = plan.phases(np.zeros((1, dom.d), dtype=np.int64))  # (M, 1)
    x = dom.points(u.loc)
    q = dom.weights(u.loc)
    w = u.weights
    worst = 0.0
    for phi, eta in battery:
        phi = np.asarray(phi, dtype=float)
        e = np.asarray(eta(x), dtype=float) * q
        lhs = np.einsum("w,wp,wpm,p->m", w, phi[ph_eps], u_eps.values, e)
        rhs = np.einsum("w,wp,wpm,p->m", w, np.broadcast_to(phi[ph_0], ph_eps.shape), u.values, e)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def integral_oscillating(V, grad_u: RandomField, eps, plan: Plan) -> float:
    """``⟨∫ V(τ_{x/ε}ω, ξ(ω, x))⟩`` for a cell-layout field ``ξ``."""
    dom = grad_u.domain
    ph = plan.phases(dom.coef_cells(eps, grad_u.loc))
    q = dom.weights(grad_u.loc)
    per = [V.value(ph[r], grad_u.values[r]) @ q for r in range(grad_u.M)]
    return math.fsum(w * v for w, v in zip(grad_u.weights, per))


def integral_unfolded(V, xi: RandomField, plan: Plan) -> float:
    """``⟨∫ V(ω, ξ(ω, x))⟩`` with the coefficient of ω at the origin."""
    dom = xi.domain
    ph0 = plan.phases(np.zeros((1, dom.d), dtype=np.int64))[:, 0]
    q = dom.weights(xi.loc)
    per = [V.value(np.full(xi.values.shape[1], ph0[r]), xi.values[r]) @ q for r in range(xi.M)]
    return math.fsum(w * v for w, v in zip(xi.weights, per))


# -- recovery sequences ------------------------------------------------------


def boundary_cutoff(domain: Domain, delta: float):
    """Piecewise-linear cutoff ``min(1, dist(x, ∂Q)/δ)``."""
    s = np.array(domain.s)

    def psi(x):
        dist = np.min(np.minimum(x, s - x), axis=1)
        return np.clip(dist / delta, 0.0, 1.0)

    return psi


def recovery_nonlinear(u: RandomField, terms, eps, plan: Plan, delta: float = 0.0) -> RandomField:
    """``u + ε T_ε^{-1}(Σ φ_i η_i)`` for deterministic zero-trace ``u``.

    ``terms`` is a list of ``(PotentialField, eta)`` with ``eta`` a callable
    of points returning ``(npts,)`` values. Each ``eta`` must vanish on the
    boundary unless a cutoff width ``delta > 0`` is given, in which case it is
    multiplied by :func:`boundary_cutoff`.
    """
    dom = u.domain
    if u.M == 1:
        u = u.broadcast(plan.weights)
    if u.M != len(plan):
        raise ValueError("field and plan have different realization counts")
    bnd = dom.node_coords[dom.boundary]
    out = u.values.copy()
    for pf, eta in terms:
        if not isinstance(pf, PotentialField):
            raise TypeError("recovery terms must pair a PotentialField with a function")
        if delta > 0:
            cut = boundary_cutoff(dom, delta)
            eta = (lambda f: lambda x: f(x) * cut(x))(eta)
        eb = np.asarray(eta(bnd), dtype=float)
        if np.max(np.abs(eb), initial=0.0) > 1e-12:
            raise ValueError("eta must vanish on the boundary (or pass a cutoff width delta > 0)")
        g = lift(pf, dom, eps, plan)
        e = np.asarray(eta(dom.node_coords), dtype=float)
        out += g.values * e[None, :, None]
    out[:, dom.boundary, :] = 0.0
    return RandomField(dom, out, "node", u.weights, eps=eps, dirichlet=True)


def recovery_linear(chi, eps, plan: Plan, domain: Domain | None = None, rtol: float = 1e-12,
                    maxiter: int | None = None) -> RandomField:
    """Zero-trace ``v_ε`` with ``−Δv_ε = −∇·(T_ε^{-1}χ)``, solved per realization by CG.

    ``chi`` is a cell-layout two-scale profile (``m = d``) or a
    :class:`PotentialField`, which is placed on the grid with
    :func:`stochunfold.potential.on_grid`.
    """
    if isinstance(chi, PotentialField):
        if domain is None:
            raise ValueError("a domain is needed to place a potential field on the grid")
        chi = on_grid(chi, domain, eps, plan)
    dom = chi.domain
    if chi.loc != "cell" or chi.m != dom.d:
        raise ValueError("expected a cell-layout vector field")
    up = UnfoldPlan(dom, plan, eps)
    osc = fold_adjoint(chi, up)
    free = dom.free
    K = stiffness(dom)[free][:, free].tocsr()
    G = dom.grad_matrix
    out = np.zeros((chi.M, dom.n_nodes, 1))
    for r in range(chi.M):
        b = (G.T @ (dom.vol * osc.values[r].ravel()))[free]
        x, _, _ = cg_solve(K, b, rtol=rtol, maxiter=maxiter)
        out[r, free, 0] = x
    return RandomField(dom, out, "node", chi.weights, eps=eps, dirichlet=True)


def unfolded_gradient(u: RandomField, up: UnfoldPlan) -> RandomField:
    return unfold(gradient(u), up)


# -- identity battery --------------------------------------------------------


def identity_residuals(domain: Domain, plan: Plan, eps, fields: int = 50, seed: int = 0,
                       integrands=()) -> list:
    """Residuals of the operator identities on random fields.

    Returns ``(identity, field, residual)`` rows, with ``field`` the index of
    the random field. Covers the ``p = 2, 4`` isometry, adjoint duality,
    inversion, the orbit projection (idempotence, contraction, invariance
    under unfolding, collapse to the mean) and, for every integrand in
    ``integrands``, the transformation formula on random gradients. Norm
    and integral residuals are relative to ``max(1, |reference|)``.
    """
    from .grid import norm_p

    up = UnfoldPlan(domain, plan, eps)
    rng = np.random.default_rng(seed)
    w = plan.weights
    M = len(plan)
    rows = []

    def rel(a, b):
        return abs(a - b) / max(1.0, abs(b))

    for i in range(fields):
        u = RandomField(domain, rng.standard_normal((M, domain.n_cells, 1)), "cell", w)
        v = RandomField(domain, rng.standard_normal((M, domain.n_cells, 1)), "cell", w)
        Tu = unfold(u, up)
        for p in (2, 4):
            rows.append((f"isometry_p{p}", i, rel(norm_p(Tu, p), norm_p(u, p))))
        lhs = _pair(Tu, v)
        rows.append(("adjoint_duality", i, rel(lhs, _pair(u, fold_adjoint(v, up)))))
        rows.append(("inverse", i, float(np.max(np.abs(fold_adjoint(Tu, up).values - u.values)))))
        Pu = project_inv(u, up)
        rows.append(("pinv_idempotent", i, float(np.max(np.abs(project_inv(Pu, up).values - Pu.values)))))
        rows.append(("pinv_contraction", i, max(0.0, norm_p(Pu, 2) - norm_p(u, 2))))
        rows.append(("pinv_unfold", i, float(np.max(np.abs(project_inv(Tu, up).values - Pu.values)))))
        mean = np.tensordot(w, u.values, axes=1)
        rows.append(("pinv_mean", i, float(np.max(np.abs(Pu.values - mean[None])))))
        if integrands:
            g = RandomField(domain, rng.standard_normal((M, domain.n_nodes, 1)), "node", w, dirichlet=False)
            grad = gradient(g)
            for j, V in enumerate(integrands):
                a = integral_oscillating(V, grad, eps, plan)
                b = integral_unfolded(V, unfold(grad, up), plan)
                rows.append((f"transformation_{j}", i, rel(b, a)))
    return rows


def _pair(u: RandomField, v: RandomField) -> float:
    q = u.domain.weights(u.loc)
    per = np.einsum("wpm,wpm,p->w", u.values, v.values, q)
    return math.fsum(float(a) * float(b) for a, b in zip(u.weights, per))
