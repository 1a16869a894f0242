import math

import numpy as np
import pytest
from scipy.optimize import brentq

from frgd.errors import FrgdError, ModelError, ResourceLimitError
from frgd.harmonic import HarmonicStructure, LevelAssembly
from frgd.spectral import (GDMeasure, build_m_delta, counting_exponent, discrete_spectrum,
                           mass_matrix, natural_measure, psi, solve_delta, spectral_radius)

from conftest import bundle


def parts(name):
    b = bundle(name)
    mu = b.measure if b.measure is not None else natural_measure(b.model)[0]
    return b.model, b.template.closed_form(b.model), mu


def test_spectral_radius_examples(rng):
    assert spectral_radius(np.eye(3))[0] == pytest.approx(1.0, abs=1e-12)
    assert spectral_radius([[0, 2], [2, 0]])[0] == pytest.approx(2.0, abs=1e-12)
    for _ in range(20):
        A = rng.uniform(0, 1, size=(5, 5))
        rho, v = spectral_radius(A)
        assert rho == pytest.approx(np.max(np.abs(np.linalg.eigvals(A))), abs=1e-9)
        assert np.all(v > 0) and np.allclose(A @ v, rho * v, atol=1e-9)
    assert spectral_radius(np.array([[0, 1], [0, 0]]))[0] == 0.0
    with pytest.raises(ValueError):
        spectral_radius([[1, -1], [0, 1]])


def test_m_delta_entries():
    m, h, mu = parts("interval")
    assert np.allclose(build_m_delta(m, h, mu, 0.7), [[2 * 0.25 ** 0.7]])
    m, h, mu = parts("sg")
    assert np.allclose(build_m_delta(m, h, mu, 1.3), [[3 * 0.2 ** 1.3]])
    m, h, mu = parts("vicsek_overlap")
    assert np.array_equal(build_m_delta(m, h, mu, 0.0), m.g.adjacency_counts())
    d = 0.6
    M = build_m_delta(m, h, mu, d)
    ref = np.zeros((2, 2))
    for k, e in enumerate(m.g.edges):
        ref[e.src, e.dst] += (h.factors[k] * mu.weights[k]) ** d
    assert np.allclose(M, ref, rtol=1e-14)


def test_delta_values():
    assert solve_delta(*parts("interval")) == pytest.approx(0.5, abs=1e-10)
    assert solve_delta(*parts("sg")) == pytest.approx(math.log(3) / math.log(5), abs=1e-8)


def test_delta_vicsek_cross_check():
    m, h, mu = parts("vicsek_overlap")
    d = solve_delta(m, h, mu)
    # independent root finder on the dense eigensolver
    f = lambda x: np.max(np.abs(np.linalg.eigvals(build_m_delta(m, h, mu, x)))) - 1
    assert d == pytest.approx(brentq(f, 1e-6, 10, xtol=1e-14), abs=1e-9)


@pytest.mark.parametrize("name", ["sg", "vicsek_overlap", "sg_open", "windmill"])
def test_psi_strictly_decreasing(name):
    m, h, mu = parts(name)
    vals = [psi(m, h, mu, x) for x in np.linspace(0, 5, 20)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_non_regular_delta_error():
    m, h, mu = parts("interval")
    bad = HarmonicStructure(h.laplacians, [2.0, 2.0])
    with pytest.raises(FrgdError):
        solve_delta(m, bad, mu)


def test_measure_validation():
    g = bundle("sg").model.g
    with pytest.raises(ModelError):
        GDMeasure([0.5, 0.3, 0.3], g)
    with pytest.raises(ModelError):
        GDMeasure([0.5, 0.5], g)
    mu, d = natural_measure(bundle("sg").model)
    assert np.allclose(mu.weights, 1 / 3) and d == pytest.approx(math.log(3) / math.log(2))


def test_neumann_ground_state():
    m, h, mu = parts("sg")
    s = discrete_spectrum(m, h, mu, 3, "neumann")
    assert s.eigenvalues[0] == 0.0 and s.eigenvalues[1] > 0
    assert np.all(np.diff(s.eigenvalues) >= 0)


def test_interval_eigenvalue_ratios():
    m, h, mu = parts("interval")
    lam = discrete_spectrum(m, h, mu, 8, "dirichlet").eigenvalues
    for k in range(1, 5):
        assert lam[k - 1] / lam[0] == pytest.approx(k * k, rel=0.05)


def test_dirichlet_below_neumann_and_residuals():
    m, h, mu = parts("vicsek_overlap")
    for n in (2, 3):
        d = discrete_spectrum(m, h, mu, n, "dirichlet")
        nn = discrete_spectrum(m, h, mu, n, "neumann")
        xs = np.concatenate([d.eigenvalues, nn.eigenvalues])
        # equal eigenvalues may differ in the last bits between the two solves
        assert np.all(d.counting(xs) <= nn.counting(xs * (1 + 1e-9)))
        assert len(nn.eigenvalues) - len(d.eigenvalues) == len(m.vertices(0, False))
    # generalized eigen-residual of the symmetric reduction
    asm = LevelAssembly(m, 0, 3)
    H, B = asm.H(h), mass_matrix(asm, mu)
    w, V = np.linalg.eigh(-(H / np.sqrt(B)[:, None]) / np.sqrt(B)[None, :])
    U = V / np.sqrt(B)[:, None]
    res = np.abs(-H @ U - (B[:, None] * U) * w[None, :]).max()
    assert res < 1e-8 * w.max()
    assert w.min() > -1e-8 * w.max()


@pytest.mark.parametrize("name", ["sg", "vicsek_overlap", "windmill"])
def test_mass_conservation(name):
    m, h, mu = parts(name)
    for n in (1, 2, 3):
        assert mass_matrix(LevelAssembly(m, m.g.root, n), mu).sum() == pytest.approx(1, abs=1e-9)


def test_dimension_cap():
    m, h, mu = parts("sg")
    with pytest.raises(ResourceLimitError):
        discrete_spectrum(m, h, mu, 9)
    with pytest.raises(ValueError):
        discrete_spectrum(m, h, mu, 2, "robin")


def test_counting_exponent_synthetic():
    k = np.arange(1, 400, dtype=float)
    assert counting_exponent(k ** 2)[0] == pytest.approx(0.5, abs=0.02)
    assert counting_exponent(k ** (1 / 0.7))[0] == pytest.approx(0.7, abs=0.02)
    with pytest.raises(ValueError):
        counting_exponent(np.arange(1, 30.0))


def test_csv_format():
    m, h, mu = parts("sg")
    text = discrete_spectrum(m, h, mu, 2, "neumann").to_csv()
    lines = text.splitlines()
    assert lines[0] == "index,eigenvalue" and lines[1].startswith("1,0")
    assert float(lines[2].split(",")[1]) == pytest.approx(
        discrete_spectrum(m, h, mu, 2, "neumann").eigenvalues[1], rel=1e-16)
