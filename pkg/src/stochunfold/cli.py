"""Command-line entry point ``stoch-unfold``.

Every subcommand reads an optional JSON config (strict keys, see ``KEYS``),
writes its record to an output directory and exits with 0 when all checks
pass, 2 when a check fails (outputs are still written) or a solver gives
up, and 1 on usage or configuration errors. The output directory is ``--out``, else
``$STOCH_UNFOLD_OUT``, else ``./stoch-unfold-out``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .env import EnvironmentSpec, enumerate_or_sample
from .grid import Domain, as_fraction, write_binary, write_csv
from .results import StudyResult, emit_plotdata, default_workers, write_table

OUT_ENV = "STOCH_UNFOLD_OUT"
BUNDLED = "checkerboard_L2"

_ENERGY = {"env", "kind", "p", "load", "n", "tol", "k", "M", "sample_seed"}
KEYS = {
    "unfold-test": {"env", "n", "eps", "fields", "seed", "p", "tol"},
    "cell": {"env", "F", "p", "tol", "k"},
    "minimize": _ENERGY | {"eps"},
    "convergence-study": _ENERGY | {"eps"},
    "quenched-study": _ENERGY | {"eps", "seeds"},
    "flow": {"env", "T", "tau", "n", "eps", "lam", "C", "p", "amplitude", "power", "tol", "dirichlet", "k"},
    "korn": {"env", "trials", "p", "seed", "L"},
}


class ConfigError(ValueError):
    """Invalid command line or configuration."""


# -- configuration -----------------------------------------------------------


def load_config(path, command: str) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - KEYS[command]
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    return data, path.parent


def load_env(value, base: Path) -> EnvironmentSpec:
    """Environment from an inline object, a file path, or ``"bundled:<name>"``."""
    if value is None:
        value = f"bundled:{BUNDLED}"
    try:
        if isinstance(value, dict):
            return EnvironmentSpec.from_dict(value)
        if isinstance(value, str) and value.startswith("bundled:"):
            name = value.split(":", 1)[1]
            text = resources.files("stochunfold").joinpath("data", f"{name}.json").read_text()
            return EnvironmentSpec.from_dict(json.loads(text))
        p = Path(value)
        return EnvironmentSpec.load(p if p.is_absolute() else base / p)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load environment {value!r}: {exc}") from exc


def _eps_list(value, n: int, d: int) -> list:
    vals = value if isinstance(value, list) else [value]
    out = [as_fraction(v) for v in vals]
    dom = Domain.unit(d, n)
    for e in out:
        dom.cells_per_coef(e)
    return out


def _parse_vectors(text: str) -> list:
    return [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]


def _energy_spec(cfg, env):
    from .varmin import EnergySpec

    return EnergySpec(env, cfg.get("kind", "quadratic"), float(cfg.get("p", 2.0)), cfg.get("load", 1.0))


def _plan(cfg, env):
    if env.kind == "iid":
        return enumerate_or_sample(env, M=int(cfg.get("M", 32)), seed=int(cfg.get("sample_seed", 0)))
    return enumerate_or_sample(env)


# -- subcommands -------------------------------------------------------------


def cmd_unfold_test(cfg, base, args) -> StudyResult:
    from .integrands import PowerLaw, Quadratic
    from .unfold import identity_residuals

    env = load_env(cfg.get("env"), base)
    n = int(cfg.get("n", 8 if env.d > 1 else 16))
    eps = _eps_list(cfg.get("eps", ["1/2"]), n, env.d)
    tol = float(cfg.get("tol", 1e-12))
    integrands = [Quadratic.scalar(env), PowerLaw.from_env(env, float(cfg.get("p", 4.0)))]
    plan = enumerate_or_sample(env)
    dom = Domain.unit(env.d, n)
    table = {"eps": [], "identity": [], "field": [], "residual": []}
    t0 = time.perf_counter()
    for e in eps:
        for name, i, r in identity_residuals(dom, plan, e, int(cfg.get("fields", 50)), int(cfg.get("seed", 0)),
                                             integrands):
            table["eps"].append(str(e))
            table["identity"].append(name)
            table["field"].append(i)
            table["residual"].append(r)
    worst = {}
    for name, r in zip(table["identity"], table["residual"]):
        worst[name] = max(worst.get(name, 0.0), r)
    flags = {name: bool(r < tol) for name, r in worst.items()}
    print("identity,max_residual")
    for name, r in worst.items():
        print(f"{name},{r!r}")
    config = {"env": env.to_dict(), "n": n, "eps": [str(e) for e in eps], "tol": tol}
    return StudyResult("unfold-test", config, {"residuals": table}, flags,
                       {"identities": time.perf_counter() - t0})


def cmd_cell(cfg, base, args) -> StudyResult:
    from .cell import (AssemblyError, assemble_Ahom, check_voigt_reuss, corrector_convex, corrector_quadratic,
                       voigt_reuss)
    from .integrands import PowerLaw

    env = load_env(args.env or cfg.get("env"), base)
    Fs = _parse_vectors(args.F) if args.F else cfg.get("F")
    if Fs is None:
        e1 = np.zeros(env.d)
        e1[0] = 1.0
        Fs = [e1.tolist()]
    if Fs and not isinstance(Fs[0], list):
        Fs = [Fs]
    p = float(args.p if args.p is not None else cfg.get("p", 2.0))
    tol = float(args.tol if args.tol is not None else cfg.get("tol", 1e-10))
    k = int(args.k if args.k is not None else cfg.get("k", 4 if p == 2 else 1))
    table = {"F": [], "value": [], "iterations": [], "residual": []}
    seconds = []
    flags = {"converged": True}
    if p == 2:
        flags["voigt_reuss"] = True
        lo, hi = voigt_reuss(env)
    for F in Fs:
        F = np.asarray(F, float)
        if p == 2:
            res = corrector_quadratic(env, F, k=k, tol=min(tol, 1e-10))
            ok_res = res.residual <= max(tol, 1e-10)
            if not (F @ lo @ F - 1e-9 <= res.value <= F @ hi @ F + 1e-9):
                flags["voigt_reuss"] = False
        else:
            res = corrector_convex(env, PowerLaw.from_env(env, p), F, tol=tol, k=k)
            ok_res = res.residual <= tol
        flags["converged"] &= bool(ok_res)
        table["F"].append(" ".join(repr(float(v)) for v in F))
        table["value"].append(res.value)
        table["iterations"].append(res.iterations)
        table["residual"].append(res.residual)
        seconds.append(res.seconds)
    if p == 2 and env.kind != "iid":
        try:
            check_voigt_reuss(env, assemble_Ahom(env, k=k))
        except AssemblyError:
            flags["voigt_reuss"] = False
    config = {"env": env.to_dict(), "F": [list(map(float, F)) for F in Fs], "p": p, "tol": tol, "k": k}
    timings = {f"F{i}": float(t) for i, t in enumerate(seconds)}
    return StudyResult("cell", config, {"cell": table}, flags, timings)


def cmd_minimize(cfg, base, args) -> StudyResult:
    from .varmin import homogenized_integrand, minimize_eps, minimize_hom

    env = load_env(cfg.get("env"), base)
    spec = _energy_spec(cfg, env)
    n = int(cfg.get("n", 64))
    tol = float(cfg.get("tol", 1e-10))
    dom = Domain.unit(env.d, n)
    eps = cfg.get("eps", "hom")
    t0 = time.perf_counter()
    if eps == "hom":
        V = homogenized_integrand(spec, k=int(cfg.get("k", 4)))
        sol = minimize_hom(dom, V, spec.load, spec.m, tol=tol)
        weights = np.ones(1)
    else:
        eps = _eps_list(eps, n, env.d)[0]
        plan = _plan(cfg, env)
        sol = minimize_eps(spec, dom, eps, plan, tol=tol, workers=args.workers)
        weights = plan.weights
    table = {
        "realization": list(range(len(sol.values))),
        "weight": [float(w) for w in weights],
        "value": [float(v) for v in sol.values],
        "residual": [float(r) for r in sol.residuals],
        "iterations": [int(i) for i in sol.iterations],
    }
    flags = {"optimality": bool(np.all(np.asarray(sol.residuals) <= tol))}
    config = {"env": env.to_dict(), "kind": spec.kind, "p": spec.p, "n": n, "tol": tol, "eps": str(eps),
              "mean_value": sol.value}
    res = StudyResult("minimize", config, {"minimize": table}, flags, {"minimize": time.perf_counter() - t0})
    res._fields = sol.u  # written alongside the record
    return res


def cmd_convergence(cfg, base, args) -> StudyResult:
    from .varmin import convergence_study

    env = load_env(cfg.get("env"), base)
    spec = _energy_spec(cfg, env)
    n = int(cfg.get("n", 256))
    eps = _eps_list(cfg.get("eps", ["1/4", "1/8", "1/16", "1/32", "1/64"]), n, env.d)
    k = cfg.get("k")
    return convergence_study(spec, Domain.unit(env.d, n), eps, _plan(cfg, env), k=None if k is None else int(k),
                             tol=float(cfg.get("tol", 1e-10)), workers=args.workers)


def cmd_quenched(cfg, base, args) -> StudyResult:
    from .varmin import quenched_study

    env = load_env(cfg.get("env"), base)
    spec = _energy_spec(cfg, env)
    n = int(cfg.get("n", 256))
    eps = _eps_list(cfg.get("eps", ["1/8", "1/16", "1/32", "1/64"]), n, env.d)
    return quenched_study(spec, Domain.unit(env.d, n), eps, seeds=int(cfg.get("seeds", 32)),
                          sample_seed=int(cfg.get("sample_seed", 0)), tol=float(cfg.get("tol", 1e-10)),
                          workers=args.workers)


def cmd_flow(cfg, base, args) -> StudyResult:
    from .flow import FlowSpec, InitialDatum, evolutionary_convergence, integrate

    env = load_env(cfg.get("env"), base)
    T = float(args.T if args.T is not None else cfg.get("T", 0.2))
    tau = float(args.tau if args.tau is not None else cfg.get("tau", 0.01))
    n = int(cfg.get("n", 256))
    u0 = InitialDatum(float(cfg.get("amplitude", 0.8)), int(cfg.get("power", 2)))
    spec = FlowSpec(env, T, tau, n=n, dirichlet=bool(cfg.get("dirichlet", True)), lam=cfg.get("lam"),
                    C=cfg.get("C"), p=float(cfg.get("p", 4.0)), u0=u0)
    tol = float(cfg.get("tol", 1e-11))
    eps = args.eps if args.eps is not None else cfg.get("eps", "hom")
    if isinstance(eps, str) and eps != "hom":
        eps = [e for e in eps.split(",") if e.strip()]
    if eps == "hom":
        t0 = time.perf_counter()
        traj = integrate(spec, "hom", tol=tol)
        steps = {
            "step": list(range(len(traj.times))),
            "time": [float(t) for t in traj.times],
            "energy": [float(v) for v in traj.mean_energy],
            "dissipation_increment": [0.0] + [float(v) for v in traj.mean_dissipation],
        }
        energy = np.asarray(steps["energy"])
        flags = {
            "dissipation_inequality": bool(np.all(traj.dissipation_slack() <= 1e-10)),
            "energy_nonincreasing": bool(np.all(np.diff(energy) <= 1e-10)),
        }
        config = {"study": "flow", "T": T, "tau": tau, "n": n, "eps": "hom", "Lambda": spec.Lambda,
                  "env": env.to_dict()}
        return StudyResult("flow", config, {"steps": steps}, flags, {"homogenized": time.perf_counter() - t0})
    eps = _eps_list(eps, n, env.d)
    return evolutionary_convergence(spec, eps, enumerate_or_sample(env), tol=tol, workers=args.workers)


def cmd_korn(cfg, base, args) -> StudyResult:
    from .cell import korn_ratio

    env = load_env(cfg.get("env"), base)
    trials = int(cfg.get("trials", 500))
    p = float(cfg.get("p", 2.0))
    L = cfg.get("L")
    t0 = time.perf_counter()
    res = korn_ratio(env, trials, p=p, seed=int(cfg.get("seed", 0)), L=None if L is None else int(L))
    flags = {}
    if p == 2:
        flags["korn_bound"] = bool(res.max_ratio <= 2.0 + 1e-8)
        flags["fourier_agreement"] = bool(res.fourier_mismatch <= 1e-10)
    table = {"trial": list(range(len(res.ratios))), "ratio": [float(r) for r in res.ratios]}
    config = {"env": env.to_dict(), "trials": trials, "p": p, "max_ratio": res.max_ratio,
              "symbol_bound": res.symbol_bound, "fourier_mismatch": res.fourier_mismatch, "skipped": res.skipped}
    return StudyResult("korn", config, {"korn": table}, flags, {"korn": time.perf_counter() - t0})


COMMANDS = {
    "unfold-test": cmd_unfold_test,
    "cell": cmd_cell,
    "minimize": cmd_minimize,
    "convergence-study": cmd_convergence,
    "quenched-study": cmd_quenched,
    "flow": cmd_flow,
    "korn": cmd_korn,
}


# -- driver ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stoch-unfold", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--workers", type=int, default=None, help="worker threads (default: available cores)")
        sp.add_argument("--out", help="output directory (cell: a .csv path is also accepted)")
        if name == "cell":
            sp.add_argument("--env", help="environment file")
            sp.add_argument("--F", help="macroscopic gradients, e.g. '1,0;0,1'")
            sp.add_argument("--p", type=float)
            sp.add_argument("--tol", type=float)
            sp.add_argument("--k", type=int)
        if name == "flow":
            sp.add_argument("--spec", help="flow configuration file (alias of --config)")
            sp.add_argument("--eps", help="'hom' or a comma-separated list such as '1/8,1/16'")
            sp.add_argument("--T", type=float)
            sp.add_argument("--tau", type=float)
    return parser


def _write(result: StudyResult, out: Path, cell_csv: Path | None = None) -> None:
    result.save(out)
    fields = getattr(result, "_fields", None)
    if fields is not None:
        write_csv(fields, out / "u.csv")
        write_binary(fields, out / "u.bin")
    if cell_csv is not None:
        # the requested CSV carries wall time next to the deterministic columns
        cols = dict(result.tables["cell"])
        cols["wall_time"] = list(result.timings.values())
        cell_csv.parent.mkdir(parents=True, exist_ok=True)
        write_table(cell_csv, cols)
    try:
        emit_plotdata(result, out / "plotdata")
    except ValueError:
        pass  # no figure-style data for this record


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.workers is None:
        args.workers = default_workers()
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return 1
    config_path = args.config or getattr(args, "spec", None)
    out = args.out or os.environ.get(OUT_ENV) or "stoch-unfold-out"
    cell_csv = None
    if args.command == "cell" and out.endswith(".csv"):
        cell_csv = Path(out)
        out = str(cell_csv.parent / (cell_csv.stem + "_record"))
    try:
        cfg, base = load_config(config_path, args.command)
        result = COMMANDS[args.command](cfg, base, args)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        # a solver gave up: the study itself failed, not its configuration
        print(f"FAIL solver: {exc}", file=sys.stderr)
        return 2
    _write(result, Path(out), cell_csv)
    failed = [k for k, v in result.flags.items() if not v]
    for k, v in result.flags.items():
        print(f"{'PASS' if v else 'FAIL'} {k}", file=sys.stderr)
    return 2 if failed else 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
