import numpy as np
import pytest

from stochunfold.env import EnvironmentSpec, Phase
from stochunfold.integrands import PowerLaw, Quadratic, RadialTable, check_integrand, sym_projector


def _fd_check(V, q, n_phases, rng, h=1e-6, rtol=1e-6):
    xi = rng.standard_normal((20, q))
    ph = rng.integers(0, n_phases, 20)
    g = V.grad(ph, xi)
    H = V.hess(ph, xi)
    for i in range(q):
        e = np.zeros(q)
        e[i] = h
        fd_g = (V.value(ph, xi + e) - V.value(ph, xi - e)) / (2 * h)
        fd_H = (V.grad(ph, xi + e) - V.grad(ph, xi - e)) / (2 * h)
        assert np.allclose(fd_g, g[:, i], rtol=rtol, atol=rtol)
        assert np.allclose(fd_H, H[:, :, i], rtol=rtol, atol=rtol)


def test_quadratic_derivatives():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((2, 3, 3))
    V = Quadratic(M @ M.transpose(0, 2, 1))
    _fd_check(V, 3, 2, rng)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
@pytest.mark.parametrize("sym", [False, True])
def test_power_law_derivatives(p, sym):
    V = PowerLaw([1.0, 3.0], p, 4, sym=sym)
    _fd_check(V, 4, 2, np.random.default_rng(int(10 * p)))


def test_radial_table_derivatives():
    r = np.linspace(0, 3, 31)
    V = RadialTable(r, r ** 2 + 0.1 * r ** 4, q=2)
    rng = np.random.default_rng(3)
    _fd_check(V, 2, 1, rng, rtol=1e-4)
    # quadratic continuation past the table
    far = np.array([[5.0, 0.0]])
    assert np.isfinite(V.value([0], far)).all() and V.value([0], far)[0] > V.value([0], np.array([[3.0, 0.0]]))[0]


def test_radial_table_rejects_nonconvex():
    r = np.linspace(0, 2, 21)
    with pytest.raises(ValueError):
        RadialTable(r, np.sqrt(r), q=1)
    with pytest.raises(ValueError):
        RadialTable(r, -r, q=1)
    with pytest.raises(ValueError):
        RadialTable([0.0, 2.0, 1.0], [0, 1, 2], q=1)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        Quadratic([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        Quadratic([[-1.0]])


def test_power_law_validation():
    with pytest.raises(ValueError):
        PowerLaw([1.0], 1.0, 1)
    with pytest.raises(ValueError):
        PowerLaw([0.0], 2.0, 1)
    with pytest.raises(ValueError):
        PowerLaw([1.0], 2.0, 3, sym=True)


def test_sym_projector():
    for d in (1, 2, 3):
        P = sym_projector(d)
        assert np.allclose(P @ P, P) and np.allclose(P, P.T)
        assert round(np.trace(P)) == d * (d + 1) // 2


def test_elastic_kills_skew():
    env = EnvironmentSpec("torus", 2, (Phase(2.0),), L=1, config=[[0]])
    V = Quadratic.elastic(env)
    skew = np.array([[0.0, 1.0, -1.0, 0.0]])
    assert V.value([0], skew)[0] == 0.0


def test_power_law_value():
    V = PowerLaw([2.0], 4.0, 2)
    assert V.value([0], np.array([[1.0, 1.0]]))[0] == pytest.approx(2.0 * 4.0 / 4.0)


def test_check_integrand():
    check_integrand(PowerLaw([1.0], 2.0, 2), 2)
    with pytest.raises(ValueError):
        check_integrand(PowerLaw([1.0], 2.0, 2), 3)
    with pytest.raises(TypeError):
        check_integrand(object(), 1)
