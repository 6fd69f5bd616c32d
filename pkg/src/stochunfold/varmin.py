"""ε-scale and homogenized minimization, convergence and quenched studies."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .cell import assemble_Ahom, assemble_Chom, corrector_convex, hom_matrix
from .energy import NodalEnergy, nodal_load
from .env import EnvironmentSpec, Plan, enumerate_or_sample, eval_env
from .grid import Domain, RandomField, as_fraction, gradient, norm_p
from .integrands import PowerLaw, Quadratic
from .potential import on_grid
from .results import StudyResult, parallel_map
from .unfold import UnfoldPlan, integral_oscillating, integral_unfolded, recovery_linear, two_scale_residual, unfold

KINDS = ("quadratic", "power", "elastic")


@dataclass(eq=False)
class EnergySpec:
    """Energy ``⟨∫ V(τ_{x/ε}ω, ∇u) − ℓ·u⟩`` with zero Dirichlet data.

    ``kind`` selects ``V``: ``quadratic`` is ``½A∇u·∇u``, ``power`` is
    ``a|∇u|^p/p`` and ``elastic`` is ``½a|∇ˢU|²`` for a ``d``-component
    displacement. ``load`` is a constant or a callable of points.
    """

    env: EnvironmentSpec
    kind: str = "quadratic"
    p: float = 2.0
    load: object = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown energy kind {self.kind!r}")
        if self.kind == "power" and self.p <= 1:
            raise ValueError("power-law energies need p > 1")
        if self.kind != "power":
            self.p = 2.0

    @property
    def m(self) -> int:
        return self.env.d if self.kind == "elastic" else 1

    def integrand(self):
        if self.kind == "quadratic":
            return Quadratic.scalar(self.env)
        if self.kind == "elastic":
            return Quadratic.elastic(self.env)
        return PowerLaw.from_env(self.env, self.p)


@dataclass
class Solution:
    u: RandomField
    value: float
    values: np.ndarray
    residuals: np.ndarray
    iterations: np.ndarray


def _energy_for(spec: EnergySpec, domain: Domain, cell_phase, V=None) -> NodalEnergy:
    V = spec.integrand() if V is None else V
    return NodalEnergy(domain, V, cell_phase, spec.m, nodal_load(domain, spec.load, spec.m))


def minimize_eps(spec: EnergySpec, domain: Domain, eps, plan: Plan | None = None, tol: float = 1e-10,
                 x0: RandomField | None = None, workers: int | None = 1) -> Solution:
    """Minimize ``E_ε`` realization by realization (the energy has no cross-ω coupling)."""
    plan = enumerate_or_sample(spec.env) if plan is None else plan
    cells = domain.coef_cells(eps)
    V = spec.integrand()

    def solve(i):
        r = plan.realizations[i]
        E = _energy_for(spec, domain, eval_env(r, cells), V)
        start = None if x0 is None else E.restrict(x0.values[i])
        res = E.minimize(start, tol=tol)
        return E.expand(res.x), res.value, res.residual, res.iterations

    out = parallel_map(solve, range(len(plan)), workers)
    vals = np.array([o[1] for o in out])
    u = RandomField(domain, np.stack([o[0] for o in out]), "node", plan.weights, eps=eps, dirichlet=True)
    value = math.fsum(w * v for w, v in zip(plan.weights, vals))
    return Solution(u, value, vals, np.array([o[2] for o in out]), np.array([o[3] for o in out]))


def energy_eps(spec: EnergySpec, u: RandomField, eps, plan: Plan) -> np.ndarray:
    """Per-realization ``E_ε(u)`` for a zero-trace nodal field."""
    dom = u.domain
    cells = dom.coef_cells(eps)
    V = spec.integrand()
    vals = []
    for i, r in enumerate(plan.realizations):
        E = _energy_for(spec, dom, eval_env(r, cells), V)
        vals.append(E.value(E.restrict(u.values[i])))
    return np.array(vals)


def as_hom_integrand(V_hom, m: int = 1, d: int | None = None):
    """Accept a matrix (quadratic ``½Hξ·ξ``) or any integrand object."""
    if isinstance(V_hom, (np.ndarray, list, tuple, float, int)):
        H = np.atleast_2d(np.asarray(V_hom, float))
        return Quadratic(H)
    return V_hom


def minimize_hom(domain: Domain, V_hom, load=0.0, m: int = 1, tol: float = 1e-10) -> Solution:
    """Minimize ``∫ V_hom(∇u) − ℓ·u`` over zero-trace nodal fields."""
    V = as_hom_integrand(V_hom, m)
    E = NodalEnergy(domain, V, np.zeros(domain.n_cells, dtype=np.int64), m, nodal_load(domain, load, m))
    res = E.minimize(tol=tol)
    u = RandomField(domain, E.expand(res.x)[None], "node", np.ones(1), dirichlet=True)
    return Solution(u, res.value, np.array([res.value]), np.array([res.residual]), np.array([res.iterations]))


def power_hom_modulus(env: EnvironmentSpec, p: float) -> float:
    """One-dimensional ``c`` with ``V_hom(F) = c|F|^p/p``: ``⟨a^{-1/(p-1)}⟩^{-(p-1)}``."""
    frac = env.phase_fractions()
    a = np.array([ph.a for ph in env.phases])
    return float(np.dot(frac, a ** (-1.0 / (p - 1)))) ** (-(p - 1))


def homogenized_integrand(spec: EnergySpec, k: int = 4):
    """``V_hom`` for the energy's environment.

    One-dimensional problems use the exact series formulas (valid for torus
    and i.i.d. laws alike). Higher-dimensional torus problems use corrector
    assembly; the power law is treated as isotropic, ``V_hom(F) =
    V_hom(|F| e₁)``, which is exact for quadratic energies only.
    """
    env = spec.env
    if env.d == 1 and spec.kind != "elastic":
        p = spec.p
        return PowerLaw([power_hom_modulus(env, p)], p, 1) if spec.kind == "power" else Quadratic(
            [[power_hom_modulus(env, 2.0)]]
        )
    if env.kind == "iid":
        raise ValueError("higher-dimensional i.i.d. environments need windowed correctors (rve_vhom)")
    if spec.kind == "quadratic":
        return Quadratic(assemble_Ahom(env, k=k))
    if spec.kind == "elastic":
        return Quadratic(assemble_Chom(env, k=k))
    e1 = np.zeros(env.d)
    e1[0] = 1.0
    val = corrector_convex(env, spec.integrand(), e1, k=k).value
    return PowerLaw([spec.p * val], spec.p, env.d)


def corrector_basis(spec: EnergySpec, k: int = 1) -> list:
    """Potentials ``χ_a`` with ``χ(F) = Σ F_a χ_a`` (quadratic energies, and power laws in 1D)."""
    env = spec.env
    if spec.kind == "power":
        if env.d != 1:
            raise ValueError("power-law correctors are nonlinear in F beyond one dimension")
        return [corrector_convex(env, spec.integrand(), [1.0], k=k).chi]
    _, cols = hom_matrix(env, spec.m, k)
    return cols


def corrector_profile(basis, grad_u: RandomField, eps, plan: Plan) -> RandomField:
    """Two-scale profile ``Σ_a ∂_a u(x)·χ_a(ω, y)`` as a cell field."""
    dom = grad_u.domain
    g = grad_u.values[0]
    out = None
    for a, pf in enumerate(basis):
        prof = on_grid(pf, dom, eps, plan, eta=lambda x, a=a: g[:, a])
        out = prof if out is None else out + prof
    return out


def _default_k(domain: Domain, eps_list, d: int, k: int | None) -> int:
    if k is not None:
        return k
    if d == 1:
        return 1
    g = [int(domain.cells_per_coef(e).min()) for e in eps_list]
    return max(1, min(4, math.gcd(*g)))


def convergence_study(spec: EnergySpec, domain: Domain, eps_list, plan: Plan | None = None, k: int | None = None,
                      tol: float = 1e-10, workers: int | None = 1) -> StudyResult:
    """Sweep ``ε`` and compare ε-minimizers with the homogenized minimizer.

    Columns: ``eps, energy_eps, energy_hom, gap, l2_error, mean_l2_error,
    ts_residual, recovery_energy, recovery_gap, transform_residual``.
    Flags: monotone energy gap (5% slack on the first halving), upper-bound
    consistency of the recovery energy, and the transformation identity.
    Two-scale and recovery columns need an exact torus plan and are NaN
    otherwise.
    """
    env = spec.env
    eps_list = [as_fraction(e) for e in eps_list]
    for e in eps_list:
        domain.cells_per_coef(e)
    plan = enumerate_or_sample(env) if plan is None else plan
    timings = {}
    t0 = time.perf_counter()
    k = _default_k(domain, eps_list, env.d, k)
    V_hom = homogenized_integrand(spec, k=k)
    hom = minimize_hom(domain, V_hom, spec.load, spec.m, tol)
    timings["homogenized"] = time.perf_counter() - t0
    exact = plan.exact and env.kind != "iid"
    basis = corrector_basis(spec, k) if exact else None
    grad_hom = gradient(hom.u)
    V = spec.integrand()
    cols = {c: [] for c in ("eps", "energy_eps", "energy_hom", "gap", "l2_error", "mean_l2_error", "ts_residual",
                            "recovery_energy", "recovery_gap", "transform_residual")}
    flags = {}
    for e in eps_list:
        t = time.perf_counter()
        sol = minimize_eps(spec, domain, e, plan, tol, workers=workers)
        uh = hom.u.broadcast(plan.weights)
        cols["eps"].append(str(e))
        cols["energy_eps"].append(sol.value)
        cols["energy_hom"].append(hom.value)
        cols["gap"].append(abs(sol.value - hom.value))
        cols["l2_error"].append(norm_p(sol.u - uh, spec.p))
        cols["mean_l2_error"].append(norm_p(sol.u.mean() - hom.u, spec.p))
        gu = gradient(sol.u)
        if exact:
            up = UnfoldPlan(domain, plan, e)
            prof = corrector_profile(basis, grad_hom, e, plan)
            target = grad_hom.broadcast(plan.weights) + prof
            cols["ts_residual"].append(two_scale_residual(gu, target, e, plan))
            lhs = integral_oscillating(V, gu, e, plan)
            rhs = integral_unfolded(V, unfold(gu, up), plan)
            cols["transform_residual"].append(abs(lhs - rhs))
            if spec.m == 1 and spec.kind == "quadratic":
                v = recovery_linear(prof, e, plan)
                r_eps = uh + v
                rec = float(np.dot(plan.weights, energy_eps(spec, r_eps, e, plan)))
                e0 = integral_unfolded(V, target, plan) + _load_term(spec, hom.u)
                cols["recovery_energy"].append(rec)
                cols["recovery_gap"].append(abs(rec - e0))
            else:
                cols["recovery_energy"].append(float("nan"))
                cols["recovery_gap"].append(float("nan"))
        else:
            for c in ("ts_residual", "transform_residual", "recovery_energy", "recovery_gap"):
                cols[c].append(float("nan"))
        timings[f"eps={e}"] = time.perf_counter() - t
    gaps = cols["gap"]
    flags["gap_monotone"] = all(
        gaps[i + 1] <= gaps[i] * (1.05 if i == 0 else 1.0) + 1e-13 for i in range(len(gaps) - 1)
    )
    if exact:
        flags["transformation_identity"] = max(cols["transform_residual"]) < 1e-12 * max(1.0, abs(hom.value))
        if spec.m == 1 and spec.kind == "quadratic":
            flags["limsup_upper_bound"] = all(
                ee <= rr + 1e-10 for ee, rr in zip(cols["energy_eps"], cols["recovery_energy"])
            )
    config = {"study": "convergence", "kind": spec.kind, "p": spec.p, "n": list(domain.n), "s": list(domain.s),
              "eps": [str(e) for e in eps_list], "M": len(plan), "k": k, "tol": tol, "env": env.to_dict()}
    return StudyResult("convergence-study", config, {"convergence": cols}, flags, timings)


def _load_term(spec: EnergySpec, u: RandomField) -> float:
    """``−∫ ℓ·u`` for a one-realization nodal field."""
    b = nodal_load(u.domain, spec.load, spec.m)
    if b is None:
        return 0.0
    return -float(np.sum(b * u.values[0]))


def quenched_study(spec: EnergySpec, domain: Domain, eps_list, seeds=32, sample_seed: int = 0, tol: float = 1e-10,
                   workers: int | None = 1) -> StudyResult:
    """Per-realization minimizers of an i.i.d. energy along an ε-sweep.

    Each sample is one fixed ω used at every ``ε``. Records, per ``ε``, the
    mean and standard deviation over samples of ``‖u_ε^ω − u_hom‖_{L^p(Q)}``
    and of the per-sample minimum, plus the largest pairwise distance.
    Flags assert that the mean distance and the mean energy gap shrink.
    """
    env = spec.env
    n = seeds if isinstance(seeds, int) else len(list(seeds))
    plan = enumerate_or_sample(env, M=n, seed=sample_seed) if env.kind == "iid" else enumerate_or_sample(env, M=n)
    eps_list = [as_fraction(e) for e in eps_list]
    for e in eps_list:
        domain.cells_per_coef(e)
    timings = {}
    t0 = time.perf_counter()
    V_hom = homogenized_integrand(spec)
    hom = minimize_hom(domain, V_hom, spec.load, spec.m, tol)
    timings["homogenized"] = time.perf_counter() - t0
    summary = {c: [] for c in ("eps", "energy_hom", "mean_energy", "std_energy", "mean_rel_energy_gap",
                               "mean_l2_distance", "std_l2_distance", "max_pairwise_l2")}
    scatter = {c: [] for c in ("eps", "seed", "l2_distance", "energy")}
    uq = np.ones(1)
    for e in eps_list:
        t = time.perf_counter()
        sol = minimize_eps(spec, domain, e, plan, tol, workers=workers)
        dists = []
        for i in range(len(plan)):
            one = RandomField(domain, sol.u.values[i : i + 1], "node", uq)
            dists.append(norm_p(one - hom.u, spec.p))
        dists = np.array(dists)
        pair = 0.0
        for i, j in itertools.combinations(range(len(plan)), 2):
            diff = RandomField(domain, sol.u.values[i : i + 1] - sol.u.values[j : j + 1], "node", uq)
            pair = max(pair, norm_p(diff, spec.p))
        summary["eps"].append(str(e))
        summary["energy_hom"].append(hom.value)
        summary["mean_energy"].append(float(np.mean(sol.values)))
        summary["std_energy"].append(float(np.std(sol.values, ddof=1)) if len(plan) > 1 else 0.0)
        summary["mean_rel_energy_gap"].append(abs(float(np.mean(sol.values)) - hom.value) / max(abs(hom.value), 1e-300))
        summary["mean_l2_distance"].append(float(np.mean(dists)))
        summary["std_l2_distance"].append(float(np.std(dists, ddof=1)) if len(plan) > 1 else 0.0)
        summary["max_pairwise_l2"].append(pair)
        for i, dval in enumerate(dists):
            scatter["eps"].append(str(e))
            scatter["seed"].append(i)
            scatter["l2_distance"].append(float(dval))
            scatter["energy"].append(float(sol.values[i]))
        timings[f"eps={e}"] = time.perf_counter() - t
    md = summary["mean_l2_distance"]
    mg = [abs(v - hom.value) for v in summary["mean_energy"]]
    flags = {
        "mean_distance_decreasing": all(md[i + 1] <= md[i] + 1e-13 for i in range(len(md) - 1)),
        "mean_energy_gap_decreasing": all(mg[i + 1] <= mg[i] + 1e-13 for i in range(len(mg) - 1)),
    }
    config = {"study": "quenched", "kind": spec.kind, "p": spec.p, "n": list(domain.n), "s": list(domain.s),
              "eps": [str(e) for e in eps_list], "samples": len(plan), "sample_seed": sample_seed, "tol": tol,
              "env": env.to_dict()}
    return StudyResult("quenched-study", config, {"quenched": summary, "scatter": scatter}, flags, timings)


__all__ = [
    "EnergySpec",
    "Solution",
    "convergence_study",
    "corrector_basis",
    "corrector_profile",
    "energy_eps",
    "homogenized_integrand",
    "minimize_eps",
    "minimize_hom",
    "power_hom_modulus",
    "quenched_study",
]
