import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from schrotree.operators import (
    DiagonalPotential, KernelPotential, adjacency, branching_radial, combinatorial_laplacian, embed,
    export_coo, hamiltonian, laplacian, physicist_laplacian, radial_norm2, radial_operator_for,
    radial_reduce, restrict,
)
from schrotree.spectral.free import band_edges, symbol
from schrotree.tree_core import build_ball, busemann_all, canonical_ray, homogeneous_ball

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def naive_laplacian(ball, u):
    out = np.array(u, dtype=complex)
    for x in range(ball.size):
        out[x] -= sum(u[y] for y in ball.neighbors(x)) / ball.degree[x]
    return out


def test_adjacency_trivial_ball():
    assert adjacency(homogeneous_ball(2, 0)).dense().tolist() == [[0.0]]
    # true degrees: the lone root still carries deg = q + 1 on the diagonal
    assert physicist_laplacian(homogeneous_ball(2, 0)).dense().tolist() == [[3.0]]


def test_adjacency_interior_row_sums():
    ball = homogeneous_ball(3, 4)
    rows = np.asarray(adjacency(ball).matrix.sum(axis=1)).ravel()
    assert np.all(rows[ball.interior] == 4)


def test_adjacency_spectrum_in_band():
    ball = homogeneous_ball(2, 10)
    evals = np.linalg.eigvalsh(adjacency(ball).dense())
    assert np.max(np.abs(evals)) < 2 * np.sqrt(2) + 1e-12


def test_band_edge_gap_shrinks_with_radius():
    gaps = []
    for N in (4, 6, 8):
        evals = np.linalg.eigvalsh(adjacency(homogeneous_ball(2, N)).dense())
        gaps.append(2 * np.sqrt(2) - evals.max())
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_laplacian_matches_formula():
    rng = np.random.default_rng(0)
    for ball in (homogeneous_ball(2, 4), build_ball("branching", {"degrees": [3, 2, 5, 4, 3]}, 4)):
        u = rng.standard_normal(ball.size) + 1j * rng.standard_normal(ball.size)
        assert np.allclose(combinatorial_laplacian(ball).matvec(u), naive_laplacian(ball, u), atol=1e-14)


def test_laplacian_examples():
    ball = homogeneous_ball(2, 5)
    lap = combinatorial_laplacian(ball)
    delta = np.zeros(ball.size)
    delta[0] = 1
    assert lap.matvec(delta)[0] == pytest.approx(1.0)
    ones = lap.matvec(np.ones(ball.size))
    assert np.max(np.abs(ones[ball.interior])) < 1e-15


def test_free_eigenfunction_symbol():
    ball = homogeneous_ball(2, 8)
    h = busemann_all(ball, canonical_ray(ball))
    s = 0.3
    e0 = 2.0 ** (-(0.5 + 1j * s) * h)
    expected = 1 - 2 ** (0.5 + 1j * s) / 3 - 2 * 2 ** (-0.5 - 1j * s) / 3
    assert expected == pytest.approx(symbol(2, s), abs=1e-14)
    r = combinatorial_laplacian(ball).matvec(e0) - expected * e0
    assert np.max(np.abs(r[ball.interior])) < 1e-12


def test_physicist_relation_on_interior():
    ball = homogeneous_ball(3, 4)
    d = physicist_laplacian(ball).dense()
    l = combinatorial_laplacian(ball).dense()
    assert np.array_equal(d[ball.interior], 4 * l[ball.interior])


@settings(max_examples=30)
@given(st.data())
def test_physicist_positive(data):
    ball = homogeneous_ball(2, 3)
    u = data.draw(arrays(np.float64, ball.size, elements=finite))
    assert u @ physicist_laplacian(ball).dense() @ u >= -1e-9


@pytest.mark.parametrize("kind", ["combinatorial", "physicist"])
def test_hermitian_by_construction(kind):
    ball = build_ball("branching", {"degrees": [2, 3, 4, 2]}, 3)
    op = laplacian(ball, kind)
    assert op.hermiticity_defect() == 0.0
    pattern = (ball.adjacency_matrix + np.eye(ball.size)) != 0
    assert np.all((op.dense() != 0) <= pattern)


def test_laplacian_spectrum_near_band():
    lo, hi = band_edges(2)
    evals = np.linalg.eigvalsh(combinatorial_laplacian(homogeneous_ball(2, 9)).dense())
    assert evals.min() >= lo - 1e-12 and evals.max() <= hi + 1e-12


def test_hamiltonian_variants():
    ball = homogeneous_ball(2, 4)
    lap = laplacian(ball)
    assert hamiltonian(ball) is not None
    assert np.array_equal(hamiltonian(ball).dense(), lap.dense())
    shifted = hamiltonian(ball, potential=DiagonalPotential(np.full(ball.size, 0.7)))
    assert np.allclose(np.linalg.eigvalsh(shifted.dense()), np.linalg.eigvalsh(lap.dense()) + 0.7)
    support = np.array([0, 2, 5])
    vals = np.array([0.3, -1.0, 2.0])
    diag = np.zeros(ball.size)
    diag[support] = vals
    a = hamiltonian(ball, potential=KernelPotential.diagonal(support, vals)).dense()
    b = hamiltonian(ball, potential=DiagonalPotential(diag)).dense()
    assert np.allclose(a, b)


def test_kernel_support_escape():
    ball = homogeneous_ball(2, 2)
    with pytest.raises(ValueError):
        hamiltonian(ball, potential=KernelPotential.diagonal([0, ball.size], [1.0, 1.0]))
    with pytest.raises(ValueError):
        KernelPotential([0, 1], np.array([[0, 1], [2, 0]]))


def test_diagonal_potential_bound_and_interpolation():
    v = DiagonalPotential(np.array([[0.0, 1.0], [2.0, -1.0]]), times=[0.0, 1.0])
    assert v.bound == 2.0
    assert np.allclose(v.at(0.25), [0.5, 0.5])
    with pytest.raises(ValueError):
        DiagonalPotential(np.ones(3), bound=0.5)
    b = DiagonalPotential.bernoulli(100, 2.0, seed=4)
    assert set(np.unique(b.values)) <= {0.0, 2.0}
    assert np.array_equal(DiagonalPotential.bernoulli(10, 2.0, seed=4).values, b.values[:10])


@pytest.mark.parametrize("q,N", [(2, 12), (3, 7)])
def test_radial_reduction_commutes(q, N):
    ball = homogeneous_ball(q, N)
    op = radial_reduce(q, N)
    g = np.random.default_rng(q).standard_normal(N + 1)
    lhs = combinatorial_laplacian(ball).matvec(embed(ball, g))
    assert np.max(np.abs(lhs - embed(ball, op.apply(g)))) < 1e-13


def test_radial_reduction_formula():
    op = radial_reduce(2, 5)
    g = np.arange(1.0, 7.0)
    out = op.apply(g)
    assert out[0] == pytest.approx(g[0] - g[1])
    for n in range(1, 5):
        assert out[n] == pytest.approx(g[n] - (g[n - 1] + 2 * g[n + 1]) / 3)


def test_radial_reduction_branching():
    ball = build_ball("branching", {"degrees": [3, 2, 4, 5, 3, 2]}, 5)
    op = radial_operator_for(ball)
    g = np.random.default_rng(1).standard_normal(6)
    lhs = combinatorial_laplacian(ball).matvec(embed(ball, g))
    assert np.max(np.abs(lhs - embed(ball, op.apply(g)))) < 1e-14
    with pytest.raises(ValueError):
        branching_radial([3, 1, 3], 2)


@settings(max_examples=30)
@given(st.data())
def test_radial_isometry_and_quadratic_form(data):
    ball = homogeneous_ball(2, 6)
    op = radial_reduce(2, 6)
    g = data.draw(arrays(np.float64, 7, elements=finite))
    u = embed(ball, g)
    assert np.isclose(u @ u, radial_norm2(op, g), rtol=1e-12, atol=1e-12)
    lhs = u @ combinatorial_laplacian(ball).matvec(u)
    rhs = np.sum(op.shell_sizes * op.apply(g) * g)
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-9)
    assert np.allclose(restrict(ball, u), g, atol=1e-12)


def test_radial_symmetric_form():
    op = radial_reduce(3, 6)
    d, off = op.symmetric()
    sym = np.diag(d) + np.diag(off, 1) + np.diag(off, -1)
    w = np.sqrt(op.weights)
    assert np.allclose(sym, np.diag(w) @ op.dense() @ np.diag(1 / w))


def test_restrict_rejects_nonradial():
    ball = homogeneous_ball(2, 3)
    u = np.zeros(ball.size)
    u[1] = 1
    with pytest.raises(ValueError):
        restrict(ball, u)


def test_export_coo(tmp_path):
    ball = homogeneous_ball(2, 1)
    path = tmp_path / "op.txt"
    export_coo(combinatorial_laplacian(ball), path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# dim=4")
    assert lines[1].split()[:3] == ["0", "0", "1"]
