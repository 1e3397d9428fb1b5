import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import eval_chebyu

from schrotree.analysis import envelope_check
from schrotree.operators import embed, radial_reduce
from schrotree.propagation import evolve_radial
from schrotree.spectral.free import (
    band_edges, c_function, critical_profile, critical_profile_arccos, fh_direct, fh_radial,
    fh_radial_inverse, sigma, spherical_function, spherical_phi, symbol, tau,
)
from schrotree.tree_core import canonical_ray, homogeneous_ball

s_real = st.floats(-3, 3, allow_nan=False)


def raw_integral(q, lam, t, n):
    """Double-precision oracle for the unnormalised profile integral."""
    b = lam * math.sqrt(q) / (q + 1) * (1 - 2 * t)

    def f(z, part):
        val = np.exp(-1j * b * np.cos(z)) * spherical_phi(q, n, z) * np.sin(z)
        return val.real if part == 0 else val.imag

    re = quad(f, 0, math.pi, args=(0,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    im = quad(f, 0, math.pi, args=(1,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return complex(re, im)


def test_constants():
    assert tau(2) == pytest.approx(2 * math.pi / math.log(2))
    assert sigma(3) == pytest.approx(math.sqrt(3) / 8)
    lo, hi = band_edges(2)
    assert lo + hi == pytest.approx(2)
    assert symbol(2, 0.0) == pytest.approx(lo)
    assert symbol(2, tau(2) / 2) == pytest.approx(hi)


@given(s=s_real)
def test_symbol_periodic_and_even(s):
    assert symbol(2, s) == pytest.approx(symbol(2, -s), abs=1e-14)
    assert symbol(2, s) == pytest.approx(symbol(2, s + tau(2)), abs=1e-12)


@settings(max_examples=40)
@given(z=st.floats(0.05, math.pi - 0.05), j=st.integers(0, 15), q=st.integers(2, 5))
def test_phi_matches_chebyshev_u(z, j, q):
    c = math.cos(z)
    u_prev = eval_chebyu(j - 2, c) if j >= 2 else (-1.0 if j == 0 else 0.0)
    expected = math.sin(z) * (math.sqrt(q) * eval_chebyu(j, c) - u_prev / math.sqrt(q))
    expected /= q + 1 / q + 2 - 4 * c * c
    assert spherical_phi(q, j, z) == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_c_function_identities():
    s = np.linspace(0.1, 4.0, 9)
    assert np.allclose(c_function(2, s) + c_function(2, -s), 1.0)
    assert np.allclose(spherical_function(2, s, 0), 1.0)
    with pytest.raises(ValueError):
        c_function(2, 0.0)


@pytest.mark.parametrize("q", [2, 3])
def test_spherical_function_is_radial_eigenfunction(q):
    N = 10
    op = radial_reduce(q, N)
    n = np.arange(N + 1)
    for s in (0.3, 1.1, 2.0):
        phi = spherical_function(q, s, n)
        r = op.apply(phi) - symbol(q, s) * phi
        assert np.max(np.abs(r[:N])) < 1e-13


def test_critical_profile_normalised():
    prof = critical_profile(2, 1.0, (0.0, 1.0), 6)
    assert prof.at(0.0)[0] == pytest.approx(1.0, abs=1e-12)
    assert prof.rel_error.max() <= 1e-10


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0])
def test_critical_profile_against_quad_oracle(t):
    prof = critical_profile(2, 1.0, (t,), 5)
    norm = 1 / raw_integral(2, 1.0, 0.0, 0)
    for n in range(6):
        expected = norm * raw_integral(2, 1.0, t, n) * 2 ** (-n / 2) * np.exp(-1j * t)
        assert prof.values[0][n] == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("n", [0, 4])
def test_arccos_form_agrees(n):
    prof = critical_profile(2, 1.0, (0.0,), n)
    raw = critical_profile_arccos(2, n)
    assert prof.normalization * raw == pytest.approx(prof.values[0][n], rel=1e-9)


def test_two_time_symmetry():
    prof = critical_profile(2, 1.0, (0.0, 1.0), 12)
    assert np.allclose(prof.log_abs[0], prof.log_abs[1], rtol=0, atol=1e-9)
    k0 = envelope_check(prof.log_abs[0], 2).kappa
    k1 = envelope_check(prof.log_abs[1], 2).kappa
    assert k1 <= (1 + 1e-6) * k0


def test_midpoint_is_delta():
    prof = critical_profile(2, 1.0, (0.5,), 8)
    v = np.abs(prof.values[0])
    assert v[0] > 0.1
    assert np.all(v[1:] < 1e-12 * v[0])


def test_evolution_reproduces_later_profile():
    n_max = 40
    prof = critical_profile(2, 1.0, (0.0, 1.0), n_max)
    g1 = evolve_radial(radial_reduce(2, n_max), prof.values[0], 1.0, method="chebyshev", tol=1e-250)
    assert np.max(np.abs(g1[:13] - prof.values[1][:13])) < 1e-8


def test_time_derivative_matches_generator():
    t, h, n_max = 0.3, 1e-4, 10
    prof = critical_profile(2, 1.0, (t - h, t, t + h), n_max, tol=1e-13)
    du = (prof.values[2] - prof.values[0]) / (2 * h)
    rhs = -1j * radial_reduce(2, n_max).apply(prof.values[1])
    assert np.max(np.abs(du - rhs)[:n_max]) < 1e-6


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_eps_envelope_diverges(eps):
    prof = critical_profile(2, 1.0, (0.0,), 12)
    base = envelope_check(prof.log_abs[0], 2)
    fit = envelope_check(prof.log_abs[0], 2, eps=eps)
    gap = fit.log_ratios - base.log_ratios
    assert np.allclose(gap, fit.shells * math.log((2 + eps) / 2))
    assert np.all(np.diff(fit.log_ratios[3:]) > 0)
    assert fit.slope() > 0.5 * math.log((2 + eps) / 2)


def test_critical_profile_rejects_bad_input():
    with pytest.raises(ValueError):
        critical_profile(2, -1.0)
    with pytest.raises(ValueError):
        critical_profile(2, 1.0, (1.5,))


def test_fh_of_delta_is_one():
    table = fh_radial(2, [1.0])
    assert np.allclose(table.values, 1.0)


@pytest.mark.parametrize("q", [2, 3])
def test_fh_shell_round_trip(q):
    f = np.zeros(4)
    f[3] = 1.0
    back = fh_radial_inverse(fh_radial(q, f), 5)
    assert np.allclose(back, [0, 0, 0, 1, 0, 0], atol=1e-10)


def test_fh_direct_matches_radial():
    ball = homogeneous_ball(2, 5)
    ray = canonical_ray(ball)
    f = np.array([0.5, -1.0, 2.0, 0.0, 0.3, 1.5])
    table = fh_radial(2, f, n_nodes=16)
    direct = fh_direct(ball, ray, embed(ball, f), table.s)
    assert np.allclose(direct, table.values, atol=1e-12)


def test_fh_diagonalises_laplacian():
    # radial data: transform of L f equals m(s) times transform of f
    op = radial_reduce(2, 8)
    f = np.zeros(9)
    f[:4] = [1.0, 0.4, -0.2, 0.1]
    lf = op.apply(f)
    a, b = fh_radial(2, f), fh_radial(2, lf)
    assert np.allclose(b.values, symbol(2, a.s) * a.values, atol=1e-12)
