"""Box domains, random fields on Ω×Q, gradients and quadrature.

Nodal fields live on the ``(n_1+1) × … × (n_d+1)`` vertex lattice of a box.
The gradient of a nodal field is a cell field: on each cell it is the forward
difference taken from the cell's lower corner node. In one dimension this is
the exact derivative of the piecewise-linear interpolant; in higher
dimensions it is exact for affine fields and, unlike the cell average of the
multilinear gradient, has no zero-energy checkerboard modes under one-point
quadrature.

Three point layouts are used:

``node``
    vertex values, lumped trapezoidal weights;
``cell``
    one value per cell, weight ``vol``;
``corner``
    the ``2**d`` corners of every cell, weight ``vol / 2**d`` each. Each
    point belongs to a single cell, so coefficients and unfolding shifts are
    well defined. Integrals of nodal fields are the same in both layouts.

All flat orderings put ``x_1`` fastest.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

LAYOUTS = ("node", "cell", "corner")


def as_fraction(eps) -> Fraction:
    """Parse ``eps`` (float, Fraction, or string such as ``"1/8"``) as an exact fraction."""
    if isinstance(eps, Fraction):
        return eps
    if isinstance(eps, str):
        return Fraction(eps.strip())
    return Fraction(eps).limit_denominator(1 << 20)


@dataclass(frozen=True, eq=False)
class Domain:
    """Box ``Π [0, s_i]`` with ``n_i`` cells per axis."""

    s: tuple
    n: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.s))
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        if len(n) == 1 and len(s) > 1:
            n = n * len(s)
        if len(s) == 1 and len(n) > 1:
            s = s * len(n)
        if len(s) != len(n) or len(n) not in (1, 2, 3):
            raise ValueError("box sides and cell counts must match in dimension 1-3")
        if min(n) < 2:
            raise ValueError("need at least two cells per axis")
        if min(s) <= 0:
            raise ValueError("box sides must be positive")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "n", n)

    @classmethod
    def unit(cls, d: int, n: int) -> "Domain":
        return cls((1.0,) * d, (n,) * d)

    def same_as(self, other: "Domain") -> bool:
        return self is other or (self.s == other.s and self.n == other.n)

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def h(self) -> np.ndarray:
        return np.array(self.s) / np.array(self.n)

    @property
    def vol(self) -> float:
        return float(np.prod(self.h))

    @property
    def node_shape(self) -> tuple:
        return tuple(v + 1 for v in self.n)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.n))

    def n_points(self, loc: str) -> int:
        return {"node": self.n_nodes, "cell": self.n_cells, "corner": self.n_cells * 2**self.d}[loc]

    @cached_property
    def node_index(self) -> np.ndarray:
        return np.indices(self.node_shape).reshape(self.d, -1, order="F").T

    @cached_property
    def cell_index(self) -> np.ndarray:
        return np.indices(self.n).reshape(self.d, -1, order="F").T

    @cached_property
    def node_coords(self) -> np.ndarray:
        return self.node_index * self.h

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return (self.cell_index + 0.5) * self.h

    @cached_property
    def corner_offsets(self) -> np.ndarray:
        """``(2**d, d)`` 0/1 offsets; corner ``b`` has bit ``i`` set for the upper side of axis ``i``."""
        return np.array([[(b >> i) & 1 for i in range(self.d)] for b in range(2**self.d)])

    def flat_node(self, idx: np.ndarray) -> np.ndarray:
        strides = np.cumprod((1,) + self.node_shape[:-1])
        return np.asarray(idx, dtype=np.int64) @ np.array(strides, dtype=np.int64)

    @cached_property
    def corner_nodes(self) -> np.ndarray:
        """``(n_cells, 2**d)`` node ids of each cell's corners."""
        idx = self.cell_index[:, None, :] + self.corner_offsets[None, :, :]
        return self.flat_node(idx)

    @cached_property
    def boundary(self) -> np.ndarray:
        idx = self.node_index
        return np.any((idx == 0) | (idx == np.array(self.n)), axis=1)

    @cached_property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @cached_property
    def node_weights(self) -> np.ndarray:
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.corner_nodes.ravel(), self.vol / 2**self.d)
        return w

    def weights(self, loc: str) -> np.ndarray:
        if loc == "node":
            return self.node_weights
        if loc == "cell":
            return np.full(self.n_cells, self.vol)
        return np.full(self.n_cells * 2**self.d, self.vol / 2**self.d)

    def points(self, loc: str) -> np.ndarray:
        if loc == "node":
            return self.node_coords
        if loc == "cell":
            return self.cell_centers
        return self.node_coords[self.corner_nodes.ravel()]

    def owner_cell(self, loc: str) -> np.ndarray:
        """Grid cell owning each point of a cell or corner layout."""
        if loc == "cell":
            return np.arange(self.n_cells)
        if loc == "corner":
            return np.repeat(np.arange(self.n_cells), 2**self.d)
        raise ValueError("nodes are shared between cells; convert to the corner layout first")

    @cached_property
    def grad_matrix(self) -> sp.csr_matrix:
        """Sparse ``(n_cells*d, n_nodes)`` forward-difference operator; row ``c*d + i``."""
        nc, d = self.n_cells, self.d
        lower = self.flat_node(self.cell_index)
        rows, cols, vals = [], [], []
        for i in range(d):
            e = np.zeros(d, dtype=np.int64)
            e[i] = 1
            upper = self.flat_node(self.cell_index + e)
            r = np.arange(nc) * d + i
            rows += [r, r]
            cols += [upper, lower]
            vals += [np.full(nc, 1.0 / self.h[i]), np.full(nc, -1.0 / self.h[i])]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nc * d, self.n_nodes),
        )

    def grad_matrix_m(self, m: int) -> sp.csr_matrix:
        """Gradient of an m-component nodal field: row ``c*m*d + j*d + i``, column ``node*m + j``."""
        if m == 1:
            return self.grad_matrix
        G = self.grad_matrix.tocoo()
        d = self.d
        c, i = np.divmod(G.row, d)
        rows = np.concatenate([c * m * d + j * d + i for j in range(m)])
        cols = np.concatenate([G.col * m + j for j in range(m)])
        vals = np.tile(G.data, m)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_cells * m * d, self.n_nodes * m))

    def coef_cells(self, eps, loc: str = "cell") -> np.ndarray:
        """Environment lattice cell ``⌊x/ε⌋`` seen by each point of a cell/corner layout.

        Evaluated at cell centers, so corners inherit their owner cell's value.
        """
        g = self.cells_per_coef(eps)
        cells = self.cell_index // g
        return cells[self.owner_cell(loc)]

    def cells_per_coef(self, eps) -> np.ndarray:
        """Grid cells per environment cell along each axis; validates ``s_i/ε ∈ ℕ`` dividing ``n_i``."""
        e = as_fraction(eps)
        if e <= 0:
            raise ValueError("eps must be positive")
        g = []
        for s, n in zip(self.s, self.n):
            m = Fraction(s).limit_denominator(1 << 20) / e
            if m.denominator != 1 or n % m.numerator:
                raise ValueError(
                    f"eps={e} is not commensurate with the grid: need s/eps integer dividing n={n}"
                )
            g.append(n // m.numerator)
        return np.array(g, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class RandomField:
    """Per-realization values on a grid layout.

    ``values`` has shape ``(M, n_points, m)``; ``weights`` are the realization
    weights of the sampling plan. ``eps`` tags oscillatory fields;
    ``dirichlet`` flags membership of the zero-trace space.
    """

    domain: Domain
    values: np.ndarray
    loc: str = "node"
    weights: np.ndarray = field(default=None)
    eps: object = None
    dirichlet: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if self.loc not in LAYOUTS:
            raise ValueError(f"unknown layout {self.loc!r}")
        if v.ndim != 3 or v.shape[1] != self.domain.n_points(self.loc):
            raise ValueError(f"values must have shape (M, {self.domain.n_points(self.loc)}, m)")
        w = np.full(v.shape[0], 1.0 / v.shape[0]) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (v.shape[0],) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("need one weight per realization, summing to one")
        if self.dirichlet and self.loc == "node" and np.any(v[:, self.domain.boundary, :] != 0):
            raise ValueError("field flagged as zero-trace has nonzero boundary values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[2]

    def with_values(self, values, **kw) -> "RandomField":
        return replace(self, values=values, **kw)

    def _binary(self, other, op):
        if isinstance(other, RandomField):
            check_compatible(self, other)
            return self.with_values(op(self.values, other.values), dirichlet=self.dirichlet and other.dirichlet)
        return self.with_values(op(self.values, other), dirichlet=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, alpha):
        return self.with_values(self.values * alpha)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def mean(self) -> "RandomField":
        """Expectation over realizations as a one-realization field."""
        mean = np.einsum("w,wpm->pm", self.weights, self.values)
        return replace(self, values=mean[None], weights=np.ones(1), eps=None)

    def broadcast(self, weights) -> "RandomField":
        """Repeat a one-realization field over a sampling plan's weights."""
        if self.M != 1:
            raise ValueError("only deterministic single-realization fields can be broadcast")
        w = np.asarray(getattr(weights, "weights", weights), dtype=float)
        return replace(self, values=np.repeat(self.values, len(w), axis=0), weights=w)


def check_compatible(u: RandomField, v: RandomField) -> None:
    if not u.domain.same_as(v.domain):
        raise ValueError("fields live on different grids")
    if u.loc != v.loc or u.values.shape != v.values.shape:
        raise ValueError("fields have different layouts or shapes")
    if not np.allclose(u.weights, v.weights, rtol=0, atol=1e-15):
        raise ValueError("fields use different sampling plans")


def from_function(domain: Domain, func, loc: str = "node", weights=None, m: int | None = None, dirichlet=False):
    """Deterministic field ``func(x)`` with ``x`` of shape ``(npts, d)``; repeated over ``weights``."""
    vals = np.asarray(func(domain.points(loc)), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if m is not None and vals.shape[1] != m:
        raise ValueError("function returned the wrong number of components")
    w = np.ones(1) if weights is None else np.asarray(getattr(weights, "weights", weights), dtype=float)
    if dirichlet and loc == "node":
        vals = vals.copy()
        vals[domain.boundary] = 0.0
    return RandomField(domain, np.repeat(vals[None], len(w), axis=0), loc, w, dirichlet=dirichlet)


def zeros(domain: Domain, weights, m: int = 1, loc: str = "node", dirichlet=True, eps=None) -> RandomField:
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    return RandomField(domain, np.zeros((len(w), domain.n_points(loc), m)), loc, w, eps=eps, dirichlet=dirichlet)


def gradient(u: RandomField) -> RandomField:
    """Cell-wise gradient; component ``j*d + i`` is ``∂_i u_j``."""
    if u.loc != "node":
        raise ValueError("gradients are taken of nodal fields")
    D = u.domain.grad_matrix
    d = u.domain.d
    M, nn, m = u.values.shape
    flat = u.values.transpose(1, 0, 2).reshape(nn, M * m)
    g = (D @ flat).reshape(u.domain.n_cells, d, M, m)
    g = g.transpose(2, 0, 3, 1).reshape(M, u.domain.n_cells, m * d)
    return RandomField(u.domain, g, "cell", u.weights, eps=u.eps)


def sym_part(xi: np.ndarray, d: int) -> np.ndarray:
    """Symmetric part of flattened ``d×d`` matrices (row = component)."""
    X = xi.reshape(xi.shape[:-1] + (d, d))
    return (0.5 * (X + np.swapaxes(X, -1, -2))).reshape(xi.shape)


def sym_gradient(U: RandomField) -> RandomField:
    """``½(∇U + ∇Uᵀ)`` for a ``d``-component displacement."""
    d = U.domain.d
    if U.m != d:
        raise ValueError("symmetric gradient needs a d-component field")
    g = gradient(U)
    return g.with_values(sym_part(g.values, d))


def to_corner(u: RandomField) -> RandomField:
    """Nodal field evaluated at every cell corner (integrals unchanged)."""
    if u.loc == "corner":
        return u
    if u.loc != "node":
        raise ValueError("only nodal fields have corner values")
    vals = u.values[:, u.domain.corner_nodes.ravel(), :]
    return RandomField(u.domain, vals, "corner", u.weights, eps=u.eps)


def pointwise_norm(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(values * values, axis=-1))


def norm_p(u: RandomField, p: float = 2.0) -> float:
    """``(Σ_ω w_ω Σ_x vol·|u|^p)^{1/p}`` with Euclidean ``|·|`` over components."""
    if p <= 0:
        raise ValueError("p must be positive")
    q = u.domain.weights(u.loc)
    mag = pointwise_norm(u.values)
    if math.isinf(p):
        return float(mag.max())
    per = (mag**p) @ q
    return float(math.fsum(u.weights * per)) ** (1.0 / p)


def inner(u: RandomField, v: RandomField) -> float:
    """``⟨∫ u·v⟩``."""
    check_compatible(u, v)
    q = u.domain.weights(u.loc)
    per = np.einsum("wpm,wpm->wp", u.values, v.values) @ q
    return float(math.fsum(u.weights * per))


def stiffness(domain: Domain, cell_coef: np.ndarray | None = None) -> sp.csr_matrix:
    """``Gᵀ diag(vol·a) G`` for scalar fields; ``cell_coef`` defaults to 1."""
    G = domain.grad_matrix
    a = np.ones(domain.n_cells) if cell_coef is None else np.asarray(cell_coef, float)
    W = sp.diags(np.repeat(a * domain.vol, domain.d))
    return (G.T @ W @ G).tocsr()


def poincare_constant(domain: Domain, tol: float = 1e-12, maxiter: int = 1000) -> float:
    """Sharp discrete Poincaré constant ``sup ‖u‖₂/‖∇u‖₂`` over zero-trace nodal fields.

    Inverse power iteration for the smallest eigenvalue of the stiffness
    matrix relative to the lumped mass.
    """
    free = domain.free
    K = stiffness(domain)[free][:, free].tocsc()
    mass = domain.node_weights[free]
    lu = splu(K)
    x = np.ones(len(free))
    lam = np.inf
    for _ in range(maxiter):
        y = lu.solve(mass * x)
        y /= math.sqrt(y @ (mass * y))
        new = float(y @ (K @ y))
        x = y
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return 1.0 / math.sqrt(lam)


# -- export -----------------------------------------------------------------

_MAGIC = b"SUFD"
_LOC_CODE = {"node": 0, "cell": 1, "corner": 2}


def write_csv(u: RandomField, path) -> None:
    """Columns: realization, multi-index (node or cell), corner (corner layout only), components."""
    dom = u.domain
    if u.loc == "node":
        idx = dom.node_index
    else:
        idx = dom.cell_index[dom.owner_cell(u.loc)]
    header = ["realization"] + [f"i{k + 1}" for k in range(dom.d)]
    if u.loc == "corner":
        header.append("corner")
    header += [f"c{j}" for j in range(u.m)]
    corner = np.tile(np.arange(2**dom.d), dom.n_cells)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(u.M):
            for p in range(idx.shape[0]):
                row = [r] + idx[p].tolist()
                if u.loc == "corner":
                    row.append(int(corner[p]))
                w.writerow(row + [repr(float(x)) for x in u.values[r, p]])


def write_binary(u: RandomField, path) -> None:
    """Little-endian dump.

    Header: ``b"SUFD"``, then uint32 fields version=1, layout code
    (node 0, cell 1, corner 2), d, n_1..n_d, M, n_points, m; float64 box
    sides s_1..s_d. Body: M float64 weights, then values in C order
    ``(M, n_points, m)``.
    """
    dom = u.domain
    head = _MAGIC + struct.pack(
        f"<{4 + dom.d + 3}I",
        1,
        _LOC_CODE[u.loc],
        dom.d,
        0,
        *dom.n,
        u.M,
        u.values.shape[1],
        u.m,
    )
    head += struct.pack(f"<{dom.d}d", *dom.s)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(u.weights.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(u.values).astype("<f8").tobytes())


def read_binary(path) -> RandomField:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError("not a field dump")
    version, code, d, _ = struct.unpack_from("<4I", data, 4)
    if version != 1:
        raise ValueError(f"unsupported dump version {version}")
    off = 20
    n = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    M, npts, m = struct.unpack_from("<3I", data, off)
    off += 12
    s = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    w = np.frombuffer(data, "<f8", M, off)
    off += 8 * M
    vals = np.frombuffer(data, "<f8", M * npts * m, off).reshape(M, npts, m)
    loc = {v: k for k, v in _LOC_CODE.items()}[code]
    return RandomField(Domain(s, n), vals.copy(), loc, w.copy())


def corner_phase_weights(domain: Domain, cell_phase: np.ndarray, n_phases: int) -> np.ndarray:
    """``(n_nodes, n_phases)`` lumped weights ``Σ vol/2^d`` over adjacent cells of each phase."""
    W = np.zeros((domain.n_nodes, n_phases))
    cp = np.repeat(np.asarray(cell_phase), 2**domain.d)
    np.add.at(W, (domain.corner_nodes.ravel(), cp), domain.vol / 2**domain.d)
    return W


def tensor_sine(domain: Domain, amplitude: float = 1.0):
    """``amplitude·Π sin(π x_i / s_i)``: a zero-trace Dirichlet eigenfunction."""

    def f(x):
        return amplitude * np.prod(np.sin(np.pi * x / np.array(domain.s)), axis=1)

    return f


__all__ = [
    "Domain",
    "RandomField",
    "as_fraction",
    "check_compatible",
    "corner_phase_weights",
    "from_function",
    "gradient",
    "inner",
    "norm_p",
    "poincare_constant",
    "read_binary",
    "stiffness",
    "sym_gradient",
    "sym_part",
    "tensor_sine",
    "to_corner",
    "write_binary",
    "write_csv",
    "zeros",
]
