"""Allen–Cahn gradient flows by minimizing movements.

The ε-system has dissipation ``R_ε(v) = ½⟨∫ r(x/ε)|v|²⟩`` and energy
``E_ε(u) = ⟨∫ A(x/ε)∇u·∇u + f(x/ε, u)⟩`` (no ½ on the gradient term, so
``A = Id, r = 1, f = 0`` gives ``u̇ = 2Δu``). In the ergodic limit ``A`` is
replaced by ``A_hom``, ``f`` by ``f_hom = ⟨f⟩`` and ``r`` by ``⟨r⟩``.

Each step solves ``u^{n+1} = argmin (1/τ)R(u − u^n) + E(u)``, which is
strongly convex once ``τ < 1/|Λ|`` where ``E − ΛR`` is convex. The
validator enforces the safer ``τ < 1/(2|Λ|)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cell import assemble_Ahom, f_hom
from .energy import NodalEnergy
from .env import EnvironmentSpec, Plan, enumerate_or_sample, eval_env
from .grid import Domain, RandomField, as_fraction, corner_phase_weights, from_function, norm_p
from .integrands import Quadratic
from .results import StudyResult, parallel_map
from .solvers import SolverError
from .varmin import EnergySpec, corrector_basis
from .unfold import recovery_nonlinear


class FlowError(RuntimeError):
    """A minimizing-movement step failed even after halving the step."""


@dataclass
class InitialDatum:
    """``amplitude·Π sin^power(π x_i/s_i)``; ``power = 2`` has a gradient vanishing on ∂Q."""

    amplitude: float = 0.8
    power: int = 2

    def __call__(self, x):
        x = np.atleast_2d(x)
        return self.amplitude * np.prod(np.sin(np.pi * x) ** self.power, axis=1)

    def grad(self, x):
        x = np.atleast_2d(x)
        s = np.sin(np.pi * x)
        c = np.cos(np.pi * x)
        base = s**self.power
        out = np.empty_like(x)
        for i in range(x.shape[1]):
            others = np.prod(np.delete(base, i, axis=1), axis=1)
            out[:, i] = self.amplitude * others * self.power * s[:, i] ** (self.power - 1) * c[:, i] * np.pi
        return out


@dataclass(eq=False)
class FlowSpec:
    """Parameters of an Allen–Cahn run.

    ``lam`` is a declared convexity modulus of the reaction (``f − (λ/2)y²``
    convex in every phase); by default the sharp per-phase value is used.
    ``C`` optionally bounds ``r`` within ``[1/C, C]``. ``p`` is the growth
    exponent of ``f``.
    """

    env: EnvironmentSpec
    T: float
    tau: float
    n: int = 128
    dirichlet: bool = True
    lam: float | None = None
    C: float | None = None
    p: float = 4.0
    u0: InitialDatum = field(default_factory=InitialDatum)

    def __post_init__(self):
        if self.T <= 0 or self.tau <= 0:
            raise ValueError("horizon and step must be positive")
        sharp = [ph.lam for ph in self.env.phases]
        if self.lam is not None and any(self.lam > s + 1e-12 for s in sharp):
            raise ValueError("declared lambda exceeds the convexity modulus of some phase")
        if self.C is not None:
            for ph in self.env.phases:
                if not (1.0 / self.C <= ph.r <= self.C):
                    raise ValueError(f"dissipation weight {ph.r} outside [1/C, C]")
        for ph in self.env.phases:
            deg = len(np.trim_zeros(np.asarray(ph.f, float), "b")) - 1
            if deg > 0 and deg > self.p:
                raise ValueError(f"reaction of degree {deg} exceeds the growth exponent p={self.p}")
        L = self.Lambda
        if L < 0 and self.tau >= 1.0 / (2.0 * abs(L)):
            raise ValueError(
                f"step tau={self.tau} violates tau < 1/(2|Lambda|) = {1.0 / (2.0 * abs(L)):.6g}"
            )

    @property
    def Lambda(self) -> float:
        """Largest ``Λ ≤ 0`` with ``E − ΛR`` convex: ``min_ph λ_ph / r_ph``."""
        lams = [self.lam if self.lam is not None else ph.lam for ph in self.env.phases]
        return min(0.0, min(lam / ph.r for lam, ph in zip(lams, self.env.phases)))

    @property
    def steps(self) -> int:
        return int(math.ceil(self.T / self.tau - 1e-9))

    def domain(self) -> Domain:
        return Domain.unit(self.env.d, self.n)


@dataclass
class _System:
    energy: NodalEnergy
    rweights: np.ndarray


def _eps_system(spec: FlowSpec, domain: Domain, cell_phase) -> _System:
    env = spec.env
    V = Quadratic(2.0 * Quadratic.scalar(env).A)
    reaction = [ph.f for ph in env.phases]
    E = NodalEnergy(domain, V, cell_phase, 1, None, reaction, spec.dirichlet)
    W = corner_phase_weights(domain, cell_phase, env.n_phases)
    r = np.array([ph.r for ph in env.phases])
    return _System(E, W @ r)


@dataclass
class HomData:
    A: np.ndarray
    f_coeffs: np.ndarray
    r: float
    lam: float


def hom_data(spec: FlowSpec, k: int = 4) -> HomData:
    env = spec.env
    if env.d == 1:
        frac = env.phase_fractions()
        A = np.array([[1.0 / float(np.dot(frac, [1.0 / ph.matrix(1)[0, 0] for ph in env.phases]))]])
    elif env.kind == "iid":
        raise ValueError("higher-dimensional i.i.d. flows need a windowed A_hom")
    else:
        A = assemble_Ahom(env, k=k)
    fh = f_hom(env, np.zeros(1))
    frac = env.phase_fractions()
    return HomData(A, fh.coeffs, float(np.dot(frac, [ph.r for ph in env.phases])), fh.lam)


def _hom_system(spec: FlowSpec, domain: Domain, hd: HomData) -> _System:
    E = NodalEnergy(domain, Quadratic(2.0 * hd.A), np.zeros(domain.n_cells, dtype=np.int64), 1, None,
                    [hd.f_coeffs], spec.dirichlet)
    return _System(E, domain.node_weights * hd.r)


def _step(sys: _System, x, tau: float, tol: float):
    """One movement; on failure two half steps; raises FlowError if those fail too."""
    E = sys.energy
    try:
        E.set_prox(sys.rweights, E.expand(x), tau)
        return E.minimize(x, tol=tol).x, [tau]
    except SolverError as first:
        try:
            y = x
            for _ in range(2):
                E.set_prox(sys.rweights, E.expand(y), tau / 2)
                y = E.minimize(y, tol=tol).x
            return y, [tau / 2, tau / 2]
        except SolverError as second:
            raise FlowError(f"step failed at tau={tau} ({first}) and tau/2 ({second})") from second
    finally:
        E.clear_prox()


def _dissipation(sys: _System, x_new, x_old, tau: float) -> float:
    dx = sys.energy.expand(x_new - x_old)[:, 0]
    return 0.5 * float(np.sum(sys.rweights * dx * dx)) / tau


def _systems(spec: FlowSpec, domain: Domain, eps, plan: Plan):
    if eps == "hom":
        return [_hom_system(spec, domain, hom_data(spec))]
    cells = domain.coef_cells(eps)
    return [_eps_system(spec, domain, eval_env(r, cells)) for r in plan.realizations]


def mm_step(u: RandomField, spec: FlowSpec, eps="hom", plan: Plan | None = None, tau: float | None = None,
            tol: float = 1e-11) -> RandomField:
    """One minimizing-movement step of every realization."""
    tau = spec.tau if tau is None else tau
    if eps != "hom":
        plan = enumerate_or_sample(spec.env) if plan is None else plan
    systems = _systems(spec, u.domain, eps, plan)
    out = np.zeros_like(u.values)
    for i, sys in enumerate(systems):
        x = sys.energy.restrict(u.values[i])
        y, _ = _step(sys, x, tau, tol)
        out[i] = sys.energy.expand(y)
    return u.with_values(out)


@dataclass
class Trajectory:
    """Time grid, fields, per-realization energies and dissipation increments.

    ``energies[n, ω]`` is ``E(u^n)``; ``dissipation[n, ω]`` is
    ``(1/τ)R(u^{n+1} − u^n)``; ``weights`` are the realization weights.
    """

    times: np.ndarray
    fields: list
    energies: np.ndarray
    dissipation: np.ndarray
    weights: np.ndarray
    taus: list

    @property
    def mean_energy(self) -> np.ndarray:
        return self.energies @ self.weights

    @property
    def mean_dissipation(self) -> np.ndarray:
        return self.dissipation @ self.weights

    def dissipation_slack(self) -> np.ndarray:
        """``E(u^{n+1}) + (1/τ)R(Δu) − E(u^n)`` per step and realization (≤ 0 when the inequality holds)."""
        return self.energies[1:] + self.dissipation - self.energies[:-1]


def integrate(spec: FlowSpec, eps="hom", u0: RandomField | None = None, plan: Plan | None = None,
              tol: float = 1e-11, workers: int | None = 1) -> Trajectory:
    """Run ``⌈T/τ⌉`` movements for the ε-system (``eps`` a scale) or the limit (``"hom"``)."""
    domain = spec.domain() if u0 is None else u0.domain
    if eps != "hom":
        domain.cells_per_coef(eps)
        plan = enumerate_or_sample(spec.env) if plan is None else plan
        weights = plan.weights
    else:
        weights = np.ones(1)
    if u0 is None:
        u0 = from_function(domain, spec.u0, "node", weights, dirichlet=spec.dirichlet)
    if u0.M == 1 and len(weights) > 1:
        u0 = u0.broadcast(weights)
    systems = _systems(spec, domain, eps, plan)
    N = spec.steps

    def run(i):
        sys = systems[i]
        E = sys.energy
        x = E.restrict(u0.values[i])
        xs, en, dis, taus = [x], [E.value(x)], [], []
        for _ in range(N):
            y, used = _step(sys, x, spec.tau, tol)
            en.append(E.value(y))
            dis.append(_dissipation(sys, y, x, spec.tau))
            taus.append(used)
            xs.append(y)
            x = y
        return xs, en, dis, taus

    out = parallel_map(run, range(len(systems)), workers)
    fields = []
    for n in range(N + 1):
        vals = np.stack([systems[i].energy.expand(out[i][0][n]) for i in range(len(systems))])
        fields.append(RandomField(domain, vals, "node", weights, eps=None if eps == "hom" else eps,
                                  dirichlet=spec.dirichlet))
    energies = np.array([o[1] for o in out]).T
    dissipation = np.array([o[2] for o in out]).T.reshape(N, len(systems))
    times = np.arange(N + 1) * spec.tau
    return Trajectory(times, fields, energies, dissipation, weights, [o[3] for o in out])


def energy_of(spec: FlowSpec, u: RandomField, eps="hom", plan: Plan | None = None) -> np.ndarray:
    """Per-realization energy of a nodal field under the ε-system or the limit."""
    systems = _systems(spec, u.domain, eps, plan)
    return np.array([s.energy.value(s.energy.restrict(u.values[i])) for i, s in enumerate(systems)])


def well_prepared(spec: FlowSpec, domain: Domain, eps, plan: Plan, k: int = 1) -> RandomField:
    """Recovery of ``(u0, χ(∇u0))`` built from the conductivity correctors."""
    basis = corrector_basis(EnergySpec(spec.env, "quadratic"), k=k)
    u0 = from_function(domain, spec.u0, "node", np.ones(1), dirichlet=spec.dirichlet)
    terms = [(pf, (lambda x, a=a: spec.u0.grad(x)[:, a])) for a, pf in enumerate(basis)]
    return recovery_nonlinear(u0, terms, eps, plan)


def evolutionary_convergence(spec: FlowSpec, eps_list, plan: Plan | None = None, tol: float = 1e-11,
                             workers: int | None = 1, fractions=(0.25, 0.5, 1.0)) -> StudyResult:
    """Compare ε-flows from well-prepared data with the homogenized flow.

    Per ``ε`` and sample time: ``‖u_ε(t) − u(t)‖₂`` over Ω×Q and
    ``|⟨E_ε(u_ε(t))⟩ − E_hom(u(t))|``. Flags require both to shrink at each
    halving (10% slack on the first), the initial energy gap to shrink and
    the discrete dissipation inequality to hold at every step.
    """
    env = spec.env
    plan = enumerate_or_sample(env) if plan is None else plan
    domain = spec.domain()
    eps_list = [as_fraction(e) for e in eps_list]
    for e in eps_list:
        domain.cells_per_coef(e)
    timings = {}
    t0 = time.perf_counter()
    hom = integrate(spec, "hom", tol=tol)
    timings["homogenized"] = time.perf_counter() - t0
    N = spec.steps
    idx = [int(round(f * N)) for f in fractions]
    evo = {c: [] for c in ("eps", "time", "l2_error", "energy_eps", "energy_hom", "energy_gap")}
    init = {c: [] for c in ("eps", "energy_eps0", "energy_hom0", "gap0")}
    steps = {c: [] for c in ("run", "step", "time", "energy", "dissipation_increment")}
    _append_steps(steps, "hom", hom)
    diss_ok = bool(np.all(hom.dissipation_slack() <= 1e-10))
    per_t = {i: [] for i in idx}
    per_e = {i: [] for i in idx}
    gaps0 = []
    for e in eps_list:
        t = time.perf_counter()
        u0 = well_prepared(spec, domain, e, plan)
        traj = integrate(spec, e, u0, plan, tol=tol, workers=workers)
        diss_ok &= bool(np.all(traj.dissipation_slack() <= 1e-10))
        g0 = abs(float(traj.mean_energy[0]) - float(hom.mean_energy[0]))
        gaps0.append(g0)
        init["eps"].append(str(e))
        init["energy_eps0"].append(float(traj.mean_energy[0]))
        init["energy_hom0"].append(float(hom.mean_energy[0]))
        init["gap0"].append(g0)
        _append_steps(steps, str(e), traj)
        for i in idx:
            uh = hom.fields[i].broadcast(plan.weights)
            err = norm_p(traj.fields[i] - uh, 2)
            ee, eh = float(traj.mean_energy[i]), float(hom.mean_energy[i])
            evo["eps"].append(str(e))
            evo["time"].append(float(traj.times[i]))
            evo["l2_error"].append(err)
            evo["energy_eps"].append(ee)
            evo["energy_hom"].append(eh)
            evo["energy_gap"].append(abs(ee - eh))
            per_t[i].append(err)
            per_e[i].append(abs(ee - eh))
        timings[f"eps={e}"] = time.perf_counter() - t

    def shrinking(seq):
        return all(seq[j + 1] < seq[j] * (1.1 if j == 0 else 1.0) for j in range(len(seq) - 1))

    flags = {
        "dissipation_inequality": diss_ok,
        "l2_error_decreasing": all(shrinking(per_t[i]) for i in idx),
        "energy_gap_decreasing": all(shrinking(per_e[i]) for i in idx),
        "well_prepared": all(gaps0[j + 1] <= gaps0[j] for j in range(len(gaps0) - 1)),
    }
    config = {"study": "flow", "T": spec.T, "tau": spec.tau, "n": spec.n, "dirichlet": spec.dirichlet,
              "eps": [str(e) for e in eps_list], "Lambda": spec.Lambda, "u0": {"amplitude": spec.u0.amplitude,
              "power": spec.u0.power}, "env": env.to_dict()}
    return StudyResult("flow", config, {"evolution": evo, "initial": init, "steps": steps}, flags, timings)


def _append_steps(table, run, traj: Trajectory):
    N = len(traj.times) - 1
    for n in range(N + 1):
        table["run"].append(run)
        table["step"].append(n)
        table["time"].append(float(traj.times[n]))
        table["energy"].append(float(traj.mean_energy[n]))
        table["dissipation_increment"].append(float(traj.mean_dissipation[n - 1]) if n > 0 else 0.0)


__all__ = [
    "FlowError",
    "FlowSpec",
    "HomData",
    "InitialDatum",
    "Trajectory",
    "energy_of",
    "evolutionary_convergence",
    "hom_data",
    "integrate",
    "mm_step",
    "well_prepared",
]
