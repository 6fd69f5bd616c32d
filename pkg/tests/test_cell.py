import numpy as np
import pytest

from _oracles import HARMONIC_1_4, KELLER_DYKHNE_1_4, TWO_CELL_P4_1_16, harmonic_mean, quadratic_two_site_min, two_cell_power
from stochunfold.cell import (
    AssemblyError,
    Ahom_refined,
    assemble_Ahom,
    assemble_Chom,
    check_voigt_reuss,
    corrector_convex,
    corrector_quadratic,
    extrapolate,
    f_hom,
    korn_ratio,
    korn_symbol_bound,
    rve_vhom,
    voigt_reuss,
)
from stochunfold.env import EnvironmentSpec, Phase, deterministic
from stochunfold.integrands import PowerLaw, Quadratic


def test_frozen_oracles_reproduce():
    assert abs(two_cell_power(1.0, 16.0, 4.0, 1.0) - TWO_CELL_P4_1_16) < 1e-15
    assert abs(harmonic_mean([1, 4], [0.5, 0.5]) - HARMONIC_1_4) < 1e-15


# -- corrector_quadratic ---------------------------------------------------------


def test_constant_conductivity_no_corrector():
    env = deterministic(2, Phase(2.5))
    chi, value = corrector_quadratic(env, [0.3, -1.2])
    assert np.abs(chi.chi).max() < 1e-14
    assert abs(value - 2.5 * (0.09 + 1.44)) < 1e-13


def test_1d_harmonic_mean(two_phase_1d):
    for k in (1, 2, 4):
        assert abs(corrector_quadratic(two_phase_1d, [1.0], k=k).value - HARMONIC_1_4) < 1e-12


def test_1d_random_torus_harmonic_mean():
    rng = np.random.default_rng(7)
    a = [0.5, 2.0, 7.0]
    cfg = rng.integers(0, 3, 9)
    env = EnvironmentSpec("torus", 1, tuple(Phase(v) for v in a), L=9, config=cfg)
    frac = np.bincount(cfg, minlength=3) / 9
    assert abs(corrector_quadratic(env, [1.0], k=1).value - harmonic_mean(a, frac)) < 1e-12


def test_brute_force_two_unknowns(two_phase_1d):
    value = corrector_quadratic(two_phase_1d, [1.0], k=1).value
    assert abs(value - quadratic_two_site_min(1.0, 4.0, 1.0)) < 1e-10


def test_potential_field_invariants(board_2d):
    chi = corrector_quadratic(board_2d, [1.0, 0.0], k=2).chi
    assert np.abs(chi.phi.mean(axis=0)).max() < 1e-14
    assert np.abs(chi.mean()).max() < 1e-14


def test_checkerboard_refinement_toward_keller_dykhne(board_2d):
    vals = [corrector_quadratic(board_2d, [1.0, 0.0], k=k).value for k in (1, 2, 4, 8)]
    # larger discrete spaces can only lower the infimum
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert abs(extrapolate(vals) - KELLER_DYKHNE_1_4) / KELLER_DYKHNE_1_4 < 0.02


def test_nested_refinement_monotone_1d():
    # in 1D the k-refined space contains the coarse one (linear interpolation of φ)
    rng = np.random.default_rng(3)
    env = EnvironmentSpec("torus", 1, (Phase(1.0), Phase(5.0), Phase(0.3)), L=5, config=rng.integers(0, 3, 5))
    v = [corrector_quadratic(env, [1.0], k=k).value for k in (1, 2, 4)]
    assert v[1] <= v[0] + 1e-12 and v[2] <= v[1] + 1e-12


def test_nested_period_doubling(torus_3x3):
    # the L-periodic potentials are the tiled subset of the 2L-periodic ones
    big = EnvironmentSpec("torus", 2, torus_3x3.phases, L=6, config=np.tile(torus_3x3.config, (2, 2)))
    for k in (1, 2):
        small_v = corrector_quadratic(torus_3x3, [0.6, 0.8], k=k).value
        big_v = corrector_quadratic(big, [0.6, 0.8], k=k).value
        assert big_v <= small_v + 1e-10 and abs(big_v - small_v) < 1e-10


def test_corrector_below_trial_fields(torus_3x3):
    from stochunfold.potential import PotentialField, site_phases

    F = np.array([0.6, 0.8])
    k = 2
    best = corrector_quadratic(torus_3x3, F, k=k)
    A = Quadratic.scalar(torus_3x3).A[site_phases(torus_3x3, k)]
    rng = np.random.default_rng(12)
    for scale in (1e-3, 1e-1, 1.0):
        phi = best.chi.phi + scale * rng.standard_normal(best.chi.phi.shape)
        xi = F + PotentialField.from_phi(torus_3x3, phi, k).chi
        assert np.einsum("ni,nij,nj->n", xi, A, xi).mean() >= best.value - 1e-12


def test_corrector_cg_residual(board_2d):
    res = corrector_quadratic(board_2d, [0.0, 1.0], k=4, tol=1e-12)
    assert res.residual <= 1e-10


# -- corrector_convex -------------------------------------------------------------


def test_convex_constant_modulus():
    env = deterministic(2, Phase(3.0))
    V = PowerLaw.from_env(env, 4.0)
    F = np.array([0.7, -0.4])
    res = corrector_convex(env, V, F)
    assert np.abs(res.chi.chi).max() < 1e-12
    assert abs(res.value - 3.0 * np.linalg.norm(F) ** 4 / 4) < 1e-12


def test_convex_two_cell_root_finding_oracle():
    env = EnvironmentSpec("torus", 1, (Phase(1.0), Phase(16.0)), L=2, config=[0, 1])
    res = corrector_convex(env, PowerLaw.from_env(env, 4.0), [1.0], tol=1e-12)
    assert abs(res.value - two_cell_power(1.0, 16.0, 4.0, 1.0)) < 1e-10
    assert abs(res.value - TWO_CELL_P4_1_16) < 1e-10


def test_convex_monotone_energy_history(two_phase_1d):
    res = corrector_convex(two_phase_1d, PowerLaw.from_env(two_phase_1d, 3.0), [2.0], tol=1e-11, k=2)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-14)
    assert res.residual <= 1e-11


def test_convex_quadratic_matches_cg(board_2d):
    V = Quadratic.scalar(board_2d)
    F = np.array([0.4, 1.1])
    a = corrector_convex(board_2d, V, F, k=2, tol=1e-12).value
    b = corrector_quadratic(board_2d, F, k=2).value
    assert abs(2 * a - b) < 1e-10  # integrand carries ½


def test_convex_vhom_midpoint_convexity(board_2d):
    V = PowerLaw.from_env(board_2d, 3.0)
    rng = np.random.default_rng(8)
    for _ in range(20):
        F1, F2 = rng.standard_normal(2), rng.standard_normal(2)
        m = corrector_convex(board_2d, V, (F1 + F2) / 2, k=1).value
        e = 0.5 * (corrector_convex(board_2d, V, F1, k=1).value + corrector_convex(board_2d, V, F2, k=1).value)
        assert m <= e + 1e-10


def test_vhom_at_zero(torus_3x3):
    for V in (PowerLaw.from_env(torus_3x3, 4.0), Quadratic.scalar(torus_3x3)):
        res = corrector_convex(torus_3x3, V, [0.0, 0.0])
        assert res.value == 0.0 and np.abs(res.chi.chi).max() == 0


def test_convex_rejects_wrong_inputs(board_2d):
    with pytest.raises(ValueError):
        corrector_convex(board_2d, PowerLaw.from_env(board_2d, 4.0), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        PowerLaw([1.0], 1.0, 2)


# -- assembly and bounds -------------------------------------------------------------


def test_ahom_deterministic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    H = assemble_Ahom(deterministic(2, Phase(1.0, A=A)))
    assert np.allclose(H, A, atol=1e-12)


def test_ahom_1d(two_phase_1d):
    assert abs(assemble_Ahom(two_phase_1d)[0, 0] - HARMONIC_1_4) < 1e-12


def test_ahom_checkerboard_isotropic(board_2d):
    ext, mats = Ahom_refined(board_2d)
    for M in mats:
        assert np.abs(M - M.T).max() < 1e-10
        check_voigt_reuss(board_2d, M)
        assert abs(M[0, 0] - M[1, 1]) < 1e-10
    assert np.abs(np.diag(ext) - KELLER_DYKHNE_1_4).max() / KELLER_DYKHNE_1_4 < 0.02
    # off-diagonal coupling of the one-sided difference shrinks with refinement
    off = [abs(M[0, 1]) for M in mats]
    assert all(b < a for a, b in zip(off, off[1:]))


def test_voigt_reuss_sandwich_many(torus_3x3):
    rng = np.random.default_rng(9)
    for _ in range(5):
        cfg = rng.integers(0, 3, 9)
        env = EnvironmentSpec("torus", 2, torus_3x3.phases, L=3, config=cfg)
        check_voigt_reuss(env, assemble_Ahom(env, k=2))


def test_voigt_reuss_violation_raises(board_2d):
    with pytest.raises(AssemblyError):
        check_voigt_reuss(board_2d, 10.0 * np.eye(2))
    lo, hi = voigt_reuss(board_2d)
    assert np.allclose(lo, 1.6 * np.eye(2)) and np.allclose(hi, 2.5 * np.eye(2))


def test_elastic_tensor_symmetric_and_positive(board_2d):
    C = assemble_Chom(board_2d, k=2)
    assert np.abs(C - C.T).max() < 1e-10
    ev = np.linalg.eigvalsh(C)
    assert ev.min() > -1e-10 and np.sum(ev > 1e-8) == 3  # three strain components in 2D


# -- f_hom -----------------------------------------------------------------------------


def test_fhom_examples():
    y = np.linspace(-3, 3, 601)
    single = deterministic(1, Phase(1.0))
    assert np.allclose(f_hom(single, y).values, 0.25 * (y**2 - 1) ** 2)
    f = (0.25, 0.0, -0.5, 0.0, 0.25)
    env = EnvironmentSpec("torus", 1, (Phase(1.0, f=f), Phase(1.0, f=tuple(2 * c for c in f))), L=2, config=[0, 1])
    fh = f_hom(env, y)
    assert np.allclose(fh.values, 1.5 * 0.25 * (y**2 - 1) ** 2, atol=1e-14)
    g = fh.values - 0.5 * fh.lam * y**2
    h = y[1] - y[0]
    assert np.min((g[2:] - 2 * g[1:-1] + g[:-2]) / h**2) >= -1e-10
    assert fh.lam == -2.0  # minimum of the per-phase moduli −1 and −2


# -- RVE ---------------------------------------------------------------------------------


def test_rve_deterministic():
    env = EnvironmentSpec("iid", 2, (Phase(3.0),), probs=[1.0])
    for L in (2, 4):
        res = rve_vhom(env, [1.0, 0.0], L, 4)
        assert res.std == 0.0 and abs(res.mean - 3.0) < 1e-12


def test_rve_1d_converges_to_harmonic(iid_1d):
    res = rve_vhom(iid_1d, [1.0], 256, 16)
    assert abs(res.mean - HARMONIC_1_4) < 3 * res.std / 4 + 0.02


def test_rve_fluctuations_decay(iid_2d):
    small = rve_vhom(iid_2d, [1.0, 0.0], 4, 64)
    large = rve_vhom(iid_2d, [1.0, 0.0], 16, 64)
    assert large.std < small.std


# -- Korn ----------------------------------------------------------------------------------


def test_korn_sharp_bound_and_fourier(board_2d):
    res = korn_ratio(board_2d, 200, seed=1, L=4)
    assert res.max_ratio <= 2.0 + 1e-8
    assert res.fourier_mismatch < 1e-10
    assert abs(korn_symbol_bound(2, 4) - 2.0) < 1e-12


def test_korn_diagonal_field_ratio_one():
    from stochunfold.integrands import sym_projector
    from stochunfold.potential import torus_diff

    L = 4
    x = np.arange(L)
    phi = np.zeros((L, L, 2))
    phi[:, :, 0] = np.sin(2 * np.pi * x / L)[:, None]  # varies only along its own axis
    D = torus_diff((L, L), 1, 2)
    chi = (D @ phi.reshape(-1, 2, order="F").ravel()).reshape(-1, 4)
    chis = chi @ sym_projector(2)
    assert abs(np.sum(chi**2) / np.sum(chis**2) - 1.0) < 1e-12


def test_korn_constant_phi_guarded():
    env = EnvironmentSpec("torus", 2, (Phase(1.0),), L=1, config=[0])
    res = korn_ratio(env, 5, L=1)  # a one-site torus has only constant φ
    assert res.skipped == 5 and np.isnan(res.max_ratio)


def test_korn_p_not_two_reports_only(board_2d):
    res = korn_ratio(board_2d, 50, p=4.0, seed=3, L=4)
    assert res.ratios.size == 50 and res.fourier_mismatch == 0.0
