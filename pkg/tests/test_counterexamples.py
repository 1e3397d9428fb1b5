import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schrotree.counterexamples import (
    BranchingDesign, branching_eigenvector, closed_form, compact_eigenvectors, design_ball,
    design_degrees, dl_search, export_design, stationary_check, verify_eigen, verify_eigen_radial,
)
from schrotree.operators import combinatorial_laplacian, embed
from schrotree.tree_core import homogeneous_ball


def geometric(n):
    return [Fraction(1, 2 ** (k // 2)) for k in range(n + 1)]


def factorial(n):
    return [Fraction(1, math.factorial(k)) for k in range(n + 1)]


def test_constant_degree_three_eigenvector():
    design = BranchingDesign([Fraction(1), Fraction(1, 2)], [3] * 9)
    e = branching_eigenvector(design, 8)
    assert e[2] == Fraction(-1, 2) and e[4] == Fraction(1, 4) and e[6] == Fraction(-1, 8)
    assert all(x == 0 for x in e[1::2])
    assert all(e[n] == closed_form(design, n) for n in range(9))


def test_halving_decay_needs_only_degree_three():
    design = design_degrees(geometric(12), 12)
    assert design.degrees[1::2] == [3] * 6
    assert design.constraint_holds()


@pytest.mark.parametrize("table", [geometric, factorial])
def test_rates_below_target(table):
    design = design_degrees(table(16), 16)
    assert design.constraint_holds()
    assert all(rate <= 1 for _, _, rate in design.observed_rates())
    assert all(design.eigenvector[n] == closed_form(design, n) for n in range(17))


def test_factorial_degrees_grow():
    odd = design_degrees(factorial(14), 14).degrees[1::2]
    assert all(b > a for a, b in zip(odd, odd[1:]))


@settings(max_examples=30, deadline=None)
@given(rates=st.lists(st.integers(2, 9), min_size=3, max_size=8))
def test_random_tables_meet_constraint(rates):
    omega, w = [Fraction(1)], Fraction(1)
    for r in rates:
        w /= r
        omega += [w, w]
    design = design_degrees(omega, len(omega) - 1)
    assert design.constraint_holds()
    assert all(rate <= 1 for _, _, rate in design.observed_rates())


def test_design_rejects_bad_tables():
    for bad in ([], [1, 1, 1], [1, 2, 0.5], [1, 0, 0], [1, -0.5]):
        with pytest.raises(ValueError):
            design_degrees(bad, 4)
    design = design_degrees(geometric(6), 6)
    with pytest.raises(ValueError):
        branching_eigenvector(design, 7)


def test_odd_degrees_past_table_default_to_two():
    design = design_degrees(geometric(4), 8)
    assert design.degrees[5] == 2 and design.degrees[7] == 2
    assert design.degrees[::2] == [3] * 5


@pytest.mark.parametrize("table,N", [(geometric, 10), (factorial, 6)])
def test_eigen_residuals_exact(table, N):
    design = design_degrees(table(20), 20)
    assert verify_eigen(design_ball(design, N), design.eigenvector) <= 1e-14
    assert verify_eigen_radial(design, 20) <= 1e-14


def test_even_ball_carries_exact_eigenvector():
    design = design_degrees(geometric(8), 8)
    ball = design_ball(design, 8)
    u = embed(ball, np.array([float(x) for x in design.eigenvector]))
    r = combinatorial_laplacian(ball).matvec(u) - u
    assert np.max(np.abs(r)) <= 1e-14


def test_stationary_evolution():
    design = design_degrees(geometric(10), 10)
    stat = stationary_check(design, 10, 1.0)
    assert stat.error < 1e-8 and stat.shell_error < 1e-8 and stat.norm_drift < 1e-12
    with pytest.raises(ValueError):
        stationary_check(design, 9)


def test_export_design(tmp_path):
    design = design_degrees(geometric(6), 6)
    path = tmp_path / "design.csv"
    export_design(design, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,degree,omega,e,e_exact"
    assert lines[3].split(",")[-1] == "-1/2"
    meta = json.loads((tmp_path / "design.csv.json").read_text())
    assert meta["degrees"] == design.degrees and meta["constraint_holds"]


@pytest.fixture(scope="module")
def dl_report():
    return dl_search(2, 2, 4, 2, 6)


def test_dl_window_has_compact_eigenvectors(dl_report):
    from schrotree.tree_core import build_ball

    ball = build_ball("diestel_leader", {"q": 2, "r": 2}, dl_report.window)
    assert len(dl_report.found) >= 1
    for vec in dl_report.found:
        assert vec.residual < 1e-10
        assert np.max(np.abs(vec.vector[~ball.interior])) == 0.0
        assert np.linalg.norm(vec.vector) == pytest.approx(1.0)
    assert max(dl_report.reverified) < 1e-10


def test_tree_control_finds_none(dl_report):
    assert dl_report.control_found == 0


def test_compact_search_rejects_trivial_window():
    with pytest.raises(ValueError):
        compact_eigenvectors(homogeneous_ball(2, 0))
