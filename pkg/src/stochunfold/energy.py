"""Discrete energies of one realization in nodal unknowns.

``E(u) = Σ_c vol·V(ph_c, ∇u|_c) + Σ_n Σ_ph W[n, ph] f_ph(u_n) − Σ_n b_n·u_n
+ (1/2τ) Σ_n R_n |u_n − ū_n|²``

The reaction and dissipation terms use lumped nodal weights, with each cell
contributing ``vol/2^d`` to its corners in its own phase. Unknowns are the
free nodes (all nodes without Dirichlet conditions), component-interleaved.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Domain, corner_phase_weights
from .solvers import NewtonResult, block_diag, newton

P = np.polynomial.polynomial


class NodalEnergy:
    """Energy of a single realization; see the module docstring.

    Parameters
    ----------
    domain : Domain
    V : integrand acting on cell gradients of width ``m*d``
    cell_phase : (n_cells,) phase index per grid cell
    m : components per node
    load : (n_nodes, m) nodal load vector ``b`` (already quadrature-weighted), optional
    reaction : list of ascending polynomial coefficients per phase, optional (``m = 1`` only)
    dirichlet : bool
        Fix boundary nodes to zero.
    """

    def __init__(self, domain: Domain, V, cell_phase, m: int = 1, load=None, reaction=None,
                 dirichlet: bool = True):
        self.domain = domain
        self.V = V
        self.m = m
        self.ph = np.asarray(cell_phase, dtype=np.int64)
        nodes = domain.free if dirichlet else np.arange(domain.n_nodes)
        self.nodes = nodes
        self.dofs = (nodes[:, None] * m + np.arange(m)[None, :]).ravel()
        self.G = domain.grad_matrix_m(m)[:, self.dofs].tocsr()
        self.q = m * domain.d
        self.load = None if load is None else np.asarray(load, float).reshape(-1)[self.dofs]
        self.reaction = None
        if reaction is not None:
            if m != 1:
                raise ValueError("reaction terms are scalar")
            nph = len(reaction)
            W = corner_phase_weights(domain, self.ph, nph)[nodes]
            self.W = W
            self.reaction = [np.asarray(c, float) for c in reaction]
            self.dreaction = [P.polyder(c) for c in self.reaction]
            self.d2reaction = [P.polyder(c, 2) for c in self.reaction]
        self.prox_w = None
        self.prox_anchor = None

    def set_prox(self, weights, anchor, tau: float) -> None:
        """Add ``(1/2τ) Σ R_n |u_n − anchor_n|²`` (full-length nodal arrays)."""
        w = np.repeat(np.asarray(weights, float)[self.nodes], self.m)
        self.prox_w = w / tau
        self.prox_anchor = np.asarray(anchor, float).reshape(-1)[self.dofs]

    def clear_prox(self) -> None:
        self.prox_w = None
        self.prox_anchor = None

    def expand(self, x) -> np.ndarray:
        """Full ``(n_nodes, m)`` array from unknowns."""
        out = np.zeros(self.domain.n_nodes * self.m)
        out[self.dofs] = x
        return out.reshape(-1, self.m)

    def restrict(self, u) -> np.ndarray:
        return np.asarray(u, float).reshape(-1)[self.dofs]

    def xi(self, x) -> np.ndarray:
        return (self.G @ x).reshape(self.domain.n_cells, self.q)

    def _reaction_parts(self, x, order: int):
        tabs = [self.reaction, self.dreaction, self.d2reaction][order]
        return sum(self.W[:, i] * P.polyval(x, c) for i, c in enumerate(tabs))

    def parts(self, x) -> dict:
        """Energy split into bulk, reaction, load and proximal contributions."""
        vol = self.domain.vol
        out = {"bulk": float(vol * self.V.value(self.ph, self.xi(x)).sum())}
        out["reaction"] = float(self._reaction_parts(x, 0).sum()) if self.reaction is not None else 0.0
        out["load"] = -float(self.load @ x) if self.load is not None else 0.0
        if self.prox_w is not None:
            dx = x - self.prox_anchor
            out["prox"] = 0.5 * float(self.prox_w @ (dx * dx))
        else:
            out["prox"] = 0.0
        return out

    def value(self, x) -> float:
        p = self.parts(x)
        return p["bulk"] + p["reaction"] + p["load"] + p["prox"]

    def grad(self, x) -> np.ndarray:
        vol = self.domain.vol
        g = self.G.T @ (vol * self.V.grad(self.ph, self.xi(x)).ravel())
        if self.reaction is not None:
            g = g + self._reaction_parts(x, 1)
        if self.load is not None:
            g = g - self.load
        if self.prox_w is not None:
            g = g + self.prox_w * (x - self.prox_anchor)
        return g

    def hess(self, x) -> sp.csr_matrix:
        vol = self.domain.vol
        H = np.asarray(self.V.hess(self.ph, self.xi(x)), float)
        if H.shape[0] != self.domain.n_cells:
            H = np.broadcast_to(H, (self.domain.n_cells,) + H.shape[-2:])
        K = (self.G.T @ block_diag(vol * H) @ self.G).tocsr()
        diag = np.zeros(x.size)
        if self.reaction is not None:
            diag += self._reaction_parts(x, 2)
        if self.prox_w is not None:
            diag += self.prox_w
        if np.any(diag):
            K = K + sp.diags(diag)
        return K.tocsr()

    def minimize(self, x0=None, tol: float = 1e-10, maxiter: int = 200) -> NewtonResult:
        x0 = np.zeros(self.dofs.size) if x0 is None else np.asarray(x0, float)
        return newton(self.value, self.grad, self.hess, x0, tol=tol, maxiter=maxiter)


def nodal_load(domain: Domain, load, m: int = 1) -> np.ndarray | None:
    """Lumped load vector ``w_n·ℓ(x_n)`` for a constant or callable ``ℓ``."""
    if load is None:
        return None
    if callable(load):
        vals = np.asarray(load(domain.node_coords), float).reshape(domain.n_nodes, -1)
    else:
        vals = np.broadcast_to(np.asarray(load, float), (domain.n_nodes, m)) if np.ndim(load) else np.full(
            (domain.n_nodes, m), float(load)
        )
    if vals.shape[1] != m:
        vals = np.broadcast_to(vals, (domain.n_nodes, m))
    if not np.any(vals):
        return None
    return domain.node_weights[:, None] * vals
