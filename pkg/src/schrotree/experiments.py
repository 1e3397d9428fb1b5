"""Named experiments behind the CLI subcommands.

Each runner takes a resolved parameter dict and an output directory, writes
its CSV tables there and returns a list of :class:`Check`.  Runners never
touch the clock or global RNG state, so equal parameters give equal bytes.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis as an
from . import counterexamples as cx
from .io import write_csv
from .operators import (DiagonalPotential, KernelPotential, combinatorial_laplacian, embed,
                        hamiltonian, radial_reduce)
from .propagation import evolve_chebyshev, evolve_dense, evolve_radial, evolve_stepped, radial_trajectory
from .spectral.free import critical_profile
from .spectral.green import (DeformedSystem, evolution_phase, green_function, pp_ac_split,
                             spectral_parameter, strength_scan)
from .svg import line_plot
from .tree_core import busemann_all, canonical_ray, homogeneous_ball, horocycle_count


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.6g} ({self.limit})"


def _stable(values) -> float:
    """Largest relative deviation from the last (largest-radius) value."""
    ref = values[-1]
    return max(abs(v - ref) for v in values) / max(abs(ref), 1e-300) if len(values) > 1 else 0.0


def _bernoulli(scenario: str, dim: int, level: float, seed: int):
    if scenario == "free":
        return None
    if scenario == "bernoulli":
        return DiagonalPotential.bernoulli(dim, level, seed)
    raise ValueError(f"unknown potential scenario {scenario!r}")


# ---------------------------------------------------------------- experiments


def geometry(p, out: Path, plot=False):
    rows, mismatches = [], 0
    for q in p["q"]:
        ball = homogeneous_ball(q, p["ell_max"])
        h = busemann_all(ball, canonical_ray(ball))
        brute = Counter(zip(ball.depth.tolist(), h.tolist()))
        for ell in range(p["ell_max"] + 1):
            for k in range(-ell, ell + 1):
                closed = horocycle_count(q, ell, k)
                count = brute.get((ell, k), 0)
                mismatches += closed != count
                rows.append((q, ell, k, closed, count))
    write_csv(out / "horocycles.csv", ["q", "ell", "k", "closed_form", "brute_force"], rows)
    return [Check("horocycle census mismatches", mismatches == 0, mismatches, "== 0")]


def critical(p, out: Path, plot=False):
    q, lam, eps = p["q"], p["lam"], p["eps"]
    prof = critical_profile(q, lam, (0.0, 1.0), p["nmax"], p["tol"])
    n = np.arange(1, p["nmax"] + 1)
    rows, fits, viol = [], [], []
    for i, t in enumerate(prof.times):
        fits.append(an.envelope_check(prof.log_abs[i], q, lam, 0.0))
        viol.append(an.envelope_check(prof.log_abs[i], q, lam, eps))
        for k in range(p["nmax"] + 1):
            r0 = prof.log_abs[i, k] - an.envelope(q, lam, 0.0, k) if k else float("nan")
            re = prof.log_abs[i, k] - an.envelope(q, lam, eps, k) if k else float("nan")
            rows.append((t, k, prof.log_abs[i, k], prof.phase[i, k], r0, re, prof.rel_error[i, k]))
    write_csv(out / "critical.csv", ["t", "n", "log_abs", "phase", "log_ratio", "log_ratio_eps",
                                     "quad_rel_error"], rows)
    if plot:
        line_plot(out / "critical.svg",
                  {f"t={t:g}": (n, f.log_ratios) for t, f in zip(prof.times, fits)}
                  | {f"eps={eps:g}, t={t:g}": (n, f.log_ratios) for t, f in zip(prof.times, viol)},
                  "envelope log-ratio", "n", "log ratio")
    half = len(n) // 2
    drift = max(abs(an.EnvelopeFit(0, 0, f.log_ratios[half:], f.shells[half:]).slope()) for f in fits)
    target = math.log((2 + eps) / 2)
    slope_err = max(abs(f.slope() - target) / target for f in viol)
    return [
        Check("envelope constant finite at t=0 and t=1", all(math.isfinite(f.log_kappa) for f in fits),
              max(f.log_kappa for f in fits), "log kappa finite"),
        Check("tail growth of the envelope ratio", drift < 0.05, drift, "|slope| < 0.05 on n >= nmax/2"),
        Check("eps-envelope violation slope vs log((2+eps)/2)", slope_err < 0.1, slope_err,
              "relative error < 0.1"),
        Check("quadrature relative error", float(prof.rel_error.max()) <= p["tol"],
              float(prof.rel_error.max()), f"<= {p['tol']:g}"),
    ]


def evolve(p, out: Path, plot=False):
    q, N, t = p["q"], p["N"], p["t"]
    ball = homogeneous_ball(q, N)
    lap = combinatorial_laplacian(ball)
    rng = np.random.default_rng(p["seed"])
    u0 = rng.standard_normal(ball.size) + 1j * rng.standard_normal(ball.size)
    u0 /= np.linalg.norm(u0)
    dense = evolve_dense(lap, u0, t).amplitude
    cheb = evolve_chebyshev(lap, u0, t, tol=p["tol"]).amplitude
    back = evolve_chebyshev(lap, cheb, -t, tol=p["tol"]).amplitude
    delta = np.zeros(ball.size, dtype=complex)
    delta[0] = 1.0
    g = evolve_radial(radial_reduce(q, N), np.eye(N + 1)[0], t)
    rad = embed(ball, g)
    d_delta = evolve_dense(lap, delta, t).amplitude
    c_delta = evolve_chebyshev(lap, delta, t, tol=p["tol"]).amplitude
    traj = evolve_stepped(ball, u0, 0.0, t, p["dt"], record_states=False, every_step=True)
    values = {
        "dense_vs_chebyshev": float(np.max(np.abs(dense - cheb))),
        "dense_vs_radial": float(np.max(np.abs(d_delta - rad))),
        "chebyshev_vs_radial": float(np.max(np.abs(c_delta - rad))),
        "unitarity_drift_chebyshev": abs(float(np.linalg.norm(cheb)) - 1.0),
        "unitarity_drift_stepped": traj.norm_drift,
        "time_reversal": float(np.max(np.abs(back - u0))),
    }
    write_csv(out / "propagators.csv", ["quantity", "value"], sorted(values.items()))
    limits = {"dense_vs_chebyshev": 1e-8, "dense_vs_radial": 1e-8, "chebyshev_vs_radial": 1e-8,
              "unitarity_drift_chebyshev": 1e-10, "unitarity_drift_stepped": 1e-10, "time_reversal": 1e-9}
    return [Check(k, values[k] < lim, values[k], f"< {lim:g}") for k, lim in limits.items()]


def green(p, out: Path, plot=False):
    q = p["q"]
    ball = homogeneous_ball(q, p["N"])
    adj = ball.adjacency_matrix
    y = p["vertex"]
    dist = ball.distances_from(y)
    rows, worst = [], 0.0
    for s in np.linspace(p["s_min"], p["s_max"], p["n_s"]) + 1j * p["im_s"]:
        g = green_function(q, s, dist)
        r = spectral_parameter(q, s) * g - adj @ g
        r[y] -= 1.0
        res = float(np.max(np.abs(r[ball.interior])))
        worst = max(worst, res)
        rows.append((s.real, s.imag, res))
    write_csv(out / "green.csv", ["s_re", "s_im", "resolvent_residual"], rows)
    return [Check("resolvent residual (lambda_s - A0) G0 - delta", worst < 1e-8, worst, "< 1e-08")]


def deformed(p, out: Path, plot=False):
    q = p["q"]
    ball = homogeneous_ball(q, p["N"])
    ray = canonical_ray(ball)
    kernel = KernelPotential.random(np.asarray(p["support"]), p["strength"], p["seed"])
    system = DeformedSystem(ball, kernel, ray)
    adj = ball.adjacency_matrix
    w = kernel.to_sparse(ball.size) * (-(q + 1))
    rows, worst = [], 0.0
    for s in np.linspace(p["s_min"], p["s_max"], p["n_s"]) + p["eig_shift"]:
        sol = system.solve(s)
        r = adj @ sol.e + w @ sol.e - spectral_parameter(q, s) * sol.e
        res = float(np.max(np.abs(r[ball.interior])))
        worst = max(worst, res)
        rows.append((s, sol.condition, res))
    write_csv(out / "deformed_residuals.csv", ["s", "condition", "eigen_residual"], rows)

    zero = KernelPotential.diagonal(system.support, np.zeros(len(system.support)))
    w0 = 0.0
    for s in np.linspace(p["s_min"], p["s_max"], p["n_s"]):
        sol = DeformedSystem(ball, zero, ray).solve(s)
        w0 = max(w0, float(np.max(np.abs(sol.e - sol.e0))))

    rng = np.random.default_rng(p["seed"])
    f = np.zeros(ball.size, dtype=complex)
    inner = ball.depth <= p["data_radius"]
    f[inner] = rng.standard_normal(inner.sum()) + 1j * rng.standard_normal(inner.sum())
    t = p["t"]
    ft = evolve_dense(hamiltonian(ball, potential=kernel), f, t).amplitude
    grid = np.linspace(p["s_min"], p["s_max"], p["n_transform"]) + p["transform_shift"]
    before, after = system.transform(f, grid), system.transform(ft, grid)
    predicted = evolution_phase(q, before.s, t) * before.values
    law = float(np.max(np.abs(after.values - predicted)))
    write_csv(out / "deformed_transform.csv", ["s", "re_F0", "im_F0", "re_Ft", "im_Ft"],
              [(s, a.real, a.imag, b.real, b.imag) for s, a, b in zip(before.s, before.values, after.values)])
    return [
        Check("deformed eigen residual", worst < 1e-8, worst, "< 1e-08"),
        Check("W=0 reduction", w0 < 1e-14, w0, "< 1e-14"),
        Check("deformed transform evolution law", law < 1e-6, law, "< 1e-06"),
    ]


def split(p, out: Path, plot=False):
    ball = homogeneous_ball(p["q"], p["N"])
    free = pp_ac_split(ball, method=p["method"])
    strength, strong = strength_scan(ball, p["vertex"], p["start"], method=p["method"])
    rows = []
    for case, res in (("free", free), ("strong", strong)):
        for i, (lam, m, lab) in enumerate(zip(res.eigenvalues, res.boundary_mass, res.labels)):
            if lab != "band":
                rows.append((case, i, lam, m, lab))
    write_csv(out / "split.csv", ["case", "index", "eigenvalue", "boundary_mass", "label"], rows)
    write_csv(out / "split_summary.csv", ["case", "strength", "pp_count", "ambiguous_count"],
              [("free", 0.0, free.pp_count, len(free.ambiguous)),
               ("strong", strength, strong.pp_count, len(strong.ambiguous))])
    mass = float(strong.boundary_mass[strong.pp_indices].max()) if strong.pp_count else math.inf
    return [
        Check("free case pp eigenpairs", free.pp_count == 0, free.pp_count, "== 0"),
        Check("strong site pp eigenpairs", strong.pp_count >= 1, strong.pp_count, ">= 1"),
        Check("pp boundary mass", mass < 1e-6, mass, "< 1e-06"),
    ]


def persistence(p, out: Path, plot=False):
    rows, summary, checks, curves = [], [], [], {}
    for scenario in p["scenarios"]:
        constants = []
        for N in p["radii"]:
            ball = homogeneous_ball(p["q"], N)
            pot = _bernoulli(scenario, ball.size, p["level"], p["seed"])
            u0 = np.zeros(ball.size, dtype=complex)
            u0[0] = 1.0
            traj = evolve_stepped(ball, u0, 0.0, 1.0, p["dt"], potential=pot, record_states=False,
                                  every_step=True, tol=p["tol"])
            fit = an.weighted_persistence_check(traj, p["alpha"])
            constants.append(fit.constant)
            summary.append((scenario, N, fit.constant, float(traj.boundary_mass.max())))
            rows += [(scenario, N, t, v) for t, v in zip(fit.times, fit.series)]
            curves[f"{scenario} N={N}"] = (fit.times, fit.series)
        dev = _stable(constants)
        checks.append(Check(f"persistence constant stable ({scenario})", dev <= 0.05, dev, "<= 0.05"))
    write_csv(out / "persistence.csv", ["scenario", "N", "t", "log_weighted_norm2"], rows)
    write_csv(out / "persistence_constants.csv", ["scenario", "N", "C", "boundary_mass"], summary)
    if plot:
        line_plot(out / "persistence.svg", curves, "weighted norm", "t", "log H(t)")
    return checks


def interpolation(p, out: Path, plot=False):
    prof = critical_profile(p["q"], p["lam"], (0.0,), p["n_profile"], p["tol"])
    times = np.linspace(0.0, 1.0, p["n_times"])
    rows, summary, constants = [], [], []
    for N in p["radii"]:
        op = radial_reduce(p["q"], N)
        g0 = np.zeros(N + 1, dtype=complex)
        m = min(N, p["n_profile"]) + 1
        g0[:m] = prof.values[0][:m]
        traj = radial_trajectory(op, g0, times)
        fit = an.interpolation_check(traj, p["gamma"], p["b"])
        constants.append(fit.constant)
        summary.append((N, fit.constant, float(traj.boundary_mass.max())))
        rows += [(N, t, v) for t, v in zip(fit.times, fit.series)]
    write_csv(out / "interpolation.csv", ["N", "t", "log_H_b"], rows)
    write_csv(out / "interpolation_constants.csv", ["N", "C", "boundary_mass"], summary)
    dev = _stable(constants)
    return [Check("interpolation constant stable", dev <= 0.05, dev, "<= 0.05")]


def commutator(p, out: Path, plot=False):
    vals = [an.commutator_min_eig(homogeneous_ball(p["q"], N), p["gamma"], p["b"]) for N in p["radii"]]
    write_csv(out / "commutator.csv", ["N", "min_eigenvalue"], list(zip(p["radii"], vals)))
    dev = _stable(vals)
    return [
        Check("commutator minimum eigenvalue positive", min(vals) > 0, min(vals), "> 0"),
        Check("commutator minimum eigenvalue stable", dev <= 0.05, dev, "<= 0.05"),
    ]


def carleman(p, out: Path, plot=False):
    R = p["R"]
    ball = homogeneous_ball(p["q"], int(math.ceil(R)))
    setup = an.CarlemanSetup.build(R, p["gamma"], p["eps"])
    rows, worst_margin, worst_change = [], math.inf, 0.0
    for seed in range(p["seed"], p["seed"] + p["draws"]):
        coarse = an.carleman_verify(ball, an.carleman_instance(ball, setup, seed, p["n_times"]), setup)
        fine = an.carleman_verify(ball, an.carleman_instance(ball, setup, seed, 2 * p["n_times"]), setup)
        # margins live in units of exp(log_scale); bring the coarse one to the fine scale
        coarse_margin = coarse.margin * math.exp(coarse.log_scale - fine.log_scale)
        change = abs(fine.margin - coarse_margin) / max(abs(fine.margin), 1e-300)
        worst_margin = min(worst_margin, coarse.margin, fine.margin)
        worst_change = max(worst_change, change)
        rows.append((seed, fine.log_scale, fine.lhs, fine.rhs, fine.relative_margin,
                     coarse.relative_margin, change))
    write_csv(out / "carleman.csv", ["seed", "log_scale", "lhs", "rhs", "relative_margin",
                                     "relative_margin_coarse", "refinement_change"], rows)
    write_csv(out / "carleman_setup.csv", ["key", "value"], sorted(setup.as_dict().items()))
    scan = an.carleman_threshold_scan(p["q"], p["R_scan"], p["scan_draws"], p["seed"], p["n_times"],
                                      p["eps"], p["gamma"])
    write_csv(out / "carleman_threshold.csv", ["R", "min_margin", "all_hold"], scan)
    return [
        Check("Carleman margin", worst_margin >= 0, worst_margin, ">= 0"),
        Check("time-grid refinement change", worst_change < 0.01, worst_change, "< 0.01"),
    ]


def lambda_scan(p, out: Path, plot=False):
    ball = homogeneous_ball(p["q"], p["N"])
    x0 = int(ball.shell_offsets[2])
    R = np.arange(p["R_min"], p["R_max"] + 1)
    rows, summary, checks, curves = [], [], [], {}
    for scenario in p["scenarios"]:
        pot = _bernoulli(scenario, ball.size, p["level"], p["seed"])
        scan = an.lower_bound_scan(ball, x0, R, p["eta"], pot, p["dt"])
        rows += [(scenario, r, v) for r, v in zip(scan.R, scan.log_lambda)]
        summary.append((scenario, scan.slope, scan.intercept, scan.log_c, scan.meta["boundary_mass"]))
        curves[scenario] = (scan.R * np.log(scan.R), scan.log_lambda)
        ok = 0.8 <= scan.slope <= 1 + p["eta"]
        checks.append(Check(f"lambda(R) slope ({scenario})", ok, scan.slope, f"in [0.8, {1 + p['eta']:g}]"))
        checks.append(Check(f"lambda(R) boundary mass ({scenario})", scan.meta["boundary_mass"] < 1e-8,
                            scan.meta["boundary_mass"], "< 1e-08"))
    write_csv(out / "lambda.csv", ["scenario", "R", "log_lambda"], rows)
    write_csv(out / "lambda_fit.csv", ["scenario", "slope", "intercept", "log_c", "boundary_mass"], summary)
    if plot:
        line_plot(out / "lambda.svg", curves, "observability scan", "R log R", "log lambda(R)")
    return checks


def _omega_table(kind: str, n: int):
    if kind == "geometric":
        return [Fraction(1, 2 ** (k // 2)) for k in range(n + 1)]
    if kind == "factorial":
        return [Fraction(1, math.factorial(k)) for k in range(n + 1)]
    raise ValueError(f"unknown decay table {kind!r}")


def counterexample(p, out: Path, plot=False):
    n = max(p["N_full"], p["N_radial"])
    design = cx.design_degrees(_omega_table(p["omega"], n), n)
    exact = all(design.eigenvector[k] == cx.closed_form(design, k) for k in range(n + 1))
    full = cx.verify_eigen(cx.design_ball(design, p["N_full"]), design.eigenvector)
    radial = cx.verify_eigen_radial(design, p["N_radial"])
    stat = cx.stationary_check(design, p["N_full"], p["t"], p["dt"])
    bounded = all(r[2] <= 1 for r in design.observed_rates())
    cx.export_design(design, out / "design.csv")
    write_csv(out / "stationary.csv", ["quantity", "value"],
              [("error", stat.error), ("norm_drift", stat.norm_drift), ("shell_error", stat.shell_error)])
    return [
        Check("recursion equals closed form", exact, float(not exact), "exact"),
        Check("degree constraint", design.constraint_holds() and bounded, float(not bounded), "holds"),
        Check("branching eigen residual (ball)", full <= 1e-14, full, "<= 1e-14"),
        Check("branching eigen residual (radial)", radial <= 1e-14, radial, "<= 1e-14"),
        Check("stationary evolution error", stat.error < 1e-8, stat.error, "< 1e-08"),
        Check("stationary shell magnitudes", stat.shell_error < 1e-8, stat.shell_error, "< 1e-08"),
    ]


def dl_search(p, out: Path, plot=False):
    rep = cx.dl_search(p["q"], p["r"], p["N"], p["control_q"], p["control_N"], p["threshold"])
    rows = [(i, v.eigenvalue, v.support_radius, v.residual, again)
            for i, (v, again) in enumerate(zip(rep.found, rep.reverified))]
    write_csv(out / "dl_eigenvectors.csv",
              ["index", "eigenvalue", "support_radius", "residual", "reverified_residual"], rows)
    vec_rows = []
    for i, v in enumerate(rep.found):
        for x in np.flatnonzero(np.abs(v.vector) > p["threshold"]):
            vec_rows.append((i, int(x), v.vector[x]))
    write_csv(out / "dl_vectors.csv", ["index", "vertex", "value"], vec_rows)
    worst = max([v.residual for v in rep.found] + rep.reverified, default=0.0)
    return [
        Check("DL compact eigenvectors found", len(rep.found) >= 1, len(rep.found), ">= 1"),
        Check("DL residuals incl. larger window", worst < p["threshold"], worst, f"< {p['threshold']:g}"),
        Check("tree control finds none", rep.control_found == 0, rep.control_found, "== 0"),
    ]


DEFAULTS = {
    "geometry": {"q": [2, 3], "ell_max": 8},
    "critical": {"q": 2, "lam": 1.0, "nmax": 12, "tol": 1e-10, "eps": 0.5},
    "evolve": {"q": 2, "N": 7, "t": 1.0, "tol": 1e-13, "dt": 1 / 32, "seed": 1},
    "green": {"q": 2, "N": 10, "vertex": 0, "im_s": 0.2, "s_min": -1.5, "s_max": 1.5, "n_s": 8},
    "deformed": {"q": 2, "N": 8, "support": [0, 1, 2, 4, 5], "strength": 1.0, "seed": 3,
                 "s_min": -4.0, "s_max": 4.0, "n_s": 9, "eig_shift": 0.05, "n_transform": 17, "transform_shift": 0.01,
                 "t": 0.25, "data_radius": 2},
    "split": {"q": 2, "N": 8, "vertex": 0, "start": 0.25, "method": "dense"},
    "persistence": {"q": 2, "radii": [10, 12, 14], "alpha": 1.0, "dt": 1 / 32, "tol": 1e-250,
                    "scenarios": ["free", "bernoulli"], "level": 1.0, "seed": 5},
    "interpolation": {"q": 2, "lam": 1.0, "radii": [10, 12, 14], "gamma": 1.0, "b": 0.8,
                      "n_profile": 40, "n_times": 33, "tol": 1e-10},
    "commutator": {"q": 2, "radii": [10, 12, 14], "gamma": 1.0, "b": 0.8},
    "carleman": {"q": 2, "R": 6.0, "gamma": 0.5, "eps": 0.5, "draws": 20, "seed": 7, "n_times": 200,
                 "R_scan": [3.0, 4.0, 5.0], "scan_draws": 3},
    "lambda-scan": {"q": 2, "N": 15, "R_min": 5, "R_max": 12, "eta": 0.5, "dt": 1 / 32,
                    "scenarios": ["free", "bernoulli"], "level": 1.0, "seed": 11},
    "counterexample": {"omega": "geometric", "N_full": 12, "N_radial": 20, "t": 1.0, "dt": 1 / 32},
    "dl-search": {"q": 2, "r": 2, "N": 4, "control_q": 2, "control_N": 6, "threshold": 1e-10},
}

RUNNERS = {
    "geometry": geometry, "critical": critical, "evolve": evolve, "green": green,
    "deformed": deformed, "split": split, "persistence": persistence,
    "interpolation": interpolation, "commutator": commutator, "carleman": carleman,
    "lambda-scan": lambda_scan, "counterexample": counterexample, "dl-search": dl_search,
}

HELP = {
    "geometry": "horocycle counts: closed form against brute force",
    "critical": "critical solution values and envelope ratios",
    "evolve": "dense / Chebyshev / radial propagator cross-checks",
    "green": "resolvent identity for the free Green's function",
    "deformed": "deformed eigenfunctions and their transform",
    "split": "pure-point / band split of a perturbed Laplacian",
    "persistence": "weighted persistence constant across radii",
    "interpolation": "log-convex interpolation constant across radii",
    "commutator": "commutator lower bound across radii",
    "carleman": "Carleman inequality on seeded instances",
    "lambda-scan": "observability scan lambda(R)",
    "counterexample": "rapidly branching tree eigenvector and stationary solution",
    "dl-search": "finitely supported eigenvectors on a Diestel-Leader window",
}
