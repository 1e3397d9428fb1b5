"""End-to-end acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -v tests/test_acceptance.py``; the lines appear in the
terminal even though pytest captures output.
"""

import copy
import time
from pathlib import Path

import numpy as np
import pytest

from schrotree.cli import run
from schrotree.experiments import DEFAULTS, RUNNERS
from schrotree.operators import combinatorial_laplacian
from schrotree.spectral.free import symbol, tau
from schrotree.spectral.green import free_eigenfunction
from schrotree.tree_core import canonical_ray, homogeneous_ball


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {number:2d} {title}: {detail}")
        return passed

    return emit


def run_experiments(names, out: Path):
    checks, started = [], time.perf_counter()
    for name in names:
        checks += RUNNERS[name](copy.deepcopy(DEFAULTS[name]), out / name, False)
    return checks, time.perf_counter() - started


def summarise(checks):
    failed = [c for c in checks if not c.passed]
    shown = failed or checks
    return "; ".join(f"{c.name} = {c.value:.3g}" for c in shown)


def criterion(report, number, title, names, tmp_path, budget=None):
    for name in names:
        (tmp_path / name).mkdir(parents=True, exist_ok=True)
    checks, elapsed = run_experiments(names, tmp_path)
    ok = all(c.passed for c in checks) and (budget is None or elapsed < budget)
    limit = f" (limit {budget:g}s)" if budget else ""
    assert report(number, title, ok, f"{summarise(checks)} [{elapsed:.1f}s{limit}]"), \
        [c.line() for c in checks]


def test_criterion_01_horocycle_census(report, tmp_path):
    criterion(report, 1, "horocycle census", ["geometry"], tmp_path, 5)


def test_criterion_02_symbol_identity(report):
    started = time.perf_counter()
    ball = homogeneous_ball(2, 8)
    ray = canonical_ray(ball)
    lap = combinatorial_laplacian(ball)
    worst = 0.0
    for s in np.linspace(-tau(2) / 2, tau(2) / 2, 16, endpoint=False) + 0.01:
        e0 = free_eigenfunction(ball, ray, s)
        r = lap.matvec(e0) - symbol(2, s) * e0
        worst = max(worst, float(np.max(np.abs(r[ball.interior]))))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-12 and elapsed < 5
    assert report(2, "symbol/eigenfunction identity", ok,
                  f"max interior residual = {worst:.3g} over 16 s [{elapsed:.1f}s (limit 5s)]")


def test_criterion_03_critical_sharpness(report, tmp_path):
    criterion(report, 3, "critical-solution sharpness", ["critical"], tmp_path, 30)


def test_criterion_04_propagator_cross_validation(report, tmp_path):
    criterion(report, 4, "propagator cross-validation", ["evolve"], tmp_path, 60)


def test_criterion_05_green_function(report, tmp_path):
    criterion(report, 5, "Green's function resolvent", ["green"], tmp_path, 10)


def test_criterion_06_deformed_machinery(report, tmp_path):
    criterion(report, 6, "deformed spectral machinery", ["deformed"], tmp_path)


def test_criterion_07_pp_ac_split(report, tmp_path):
    criterion(report, 7, "pp/ac demonstration", ["split"], tmp_path)


def test_criterion_08_persistence_interpolation(report, tmp_path):
    criterion(report, 8, "persistence, interpolation, commutator",
              ["persistence", "interpolation", "commutator"], tmp_path)


def test_criterion_09_carleman(report, tmp_path):
    criterion(report, 9, "Carleman inequality", ["carleman"], tmp_path, 120)


def test_criterion_10_observability_scan(report, tmp_path):
    criterion(report, 10, "observability scan", ["lambda-scan"], tmp_path)


def test_criterion_11_counterexamples(report, tmp_path):
    criterion(report, 11, "counterexamples", ["counterexample", "dl-search"], tmp_path)


def test_criterion_12_determinism(report, tmp_path):
    started = time.perf_counter()
    codes = [run(["all", "--seed", "5", "--out", str(tmp_path / tag)]) for tag in ("a", "b")]
    a = {p.relative_to(tmp_path / "a"): p.read_bytes() for p in (tmp_path / "a").rglob("*.csv")}
    b = {p.relative_to(tmp_path / "b"): p.read_bytes() for p in (tmp_path / "b").rglob("*.csv")}
    differing = sorted(str(k) for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    elapsed = time.perf_counter() - started
    ok = codes == [0, 0] and len(a) > 0 and not differing
    assert report(12, "determinism", ok,
                  f"{len(a)} CSVs compared, {len(differing)} differ, exit codes {codes} [{elapsed:.1f}s]"), differing
