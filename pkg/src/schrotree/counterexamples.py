"""Non-homogeneous graphs where unique continuation fails.

Two families:

* rapidly branching trees.  A degree sequence ``d_n`` is chosen so that the
  radial recursion ``e(n+1) = -e(n-1)/(d_n - 1)``, ``e(0) = 1``, ``e(1) = 0``
  produces an eigenvector of ``𝓛`` with eigenvalue 1 decaying at least like a
  prescribed ``ω``.  Then ``u(t) = e^{-it} e`` is a stationary solution that
  is just as small at every time.
* Diestel–Leader windows, where a numeric null-space search turns up
  finitely supported eigenvectors.  The same search on a tree finds nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .io import write_csv, write_json
from .operators import branching_radial, embed, laplacian
from .propagation import evolve_stepped
from .tree_core import BRANCHING, DIESTEL_LEADER, GraphBall, build_ball

DEFAULT_EVEN_DEGREE = 3
COMPACT_THRESHOLD = 1e-10
CLUSTER_TOL = 1e-9


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


@dataclass
class BranchingDesign:
    omega: list
    degrees: list
    eigenvector: list = field(default_factory=list)

    @property
    def radius(self) -> int:
        return len(self.degrees) - 1

    def products(self) -> list:
        """``P_p = Π_{k≤p} (d_{2k-1} - 1)`` for ``p = 0, 1, ...`` while defined."""
        out, prod = [Fraction(1)], Fraction(1)
        for n in range(1, len(self.degrees), 2):
            prod *= self.degrees[n] - 1
            out.append(prod)
        return out

    def constraint_holds(self) -> bool:
        prods = self.products()
        return all(prods[p] * self.omega[2 * p] >= 1
                   for p in range(1, len(prods)) if 2 * p < len(self.omega))

    def observed_rates(self) -> list:
        """``(n, |e(n)|, |e(n)|/ω_n)`` on even shells; the last column is at most 1."""
        rows = []
        for n in range(0, min(len(self.eigenvector), len(self.omega)), 2):
            mag = abs(self.eigenvector[n])
            rows.append((n, float(mag), float(mag / self.omega[n])))
        return rows


def design_degrees(omega, N: int, even_degree: int = DEFAULT_EVEN_DEGREE) -> BranchingDesign:
    """Greedy degree sequence ``d_0..d_N`` meeting ``Π (d_{2k-1}-1) ≥ 1/ω_{2p}``.

    Odd-index degrees are the smallest integers ``≥ 2`` keeping the running
    product above the target; odd degrees with no target in the table get 2.
    Even-index degrees (never seen by the recursion) are ``even_degree``.
    """
    omega = [_exact(w) for w in omega]
    if not omega:
        raise ValueError("empty decay table")
    if any(w <= 0 for w in omega):
        raise ValueError("decay table must be positive")
    if any(b > a for a, b in zip(omega, omega[1:])) or len(omega) < 2 or omega[-1] >= omega[0]:
        raise ValueError("decay table must decrease towards zero")
    if N < 0:
        raise ValueError("N must be nonnegative")
    degrees, prod = [], Fraction(1)
    for n in range(N + 1):
        if n % 2 == 0:
            degrees.append(int(even_degree))
            continue
        p = (n + 1) // 2
        if 2 * p < len(omega):
            need = 1 / (omega[2 * p] * prod)
            d = max(2, math.ceil(need) + 1)
        else:
            d = 2
        degrees.append(d)
        prod *= d - 1
    design = BranchingDesign(omega, degrees)
    design.eigenvector = branching_eigenvector(design, N)
    return design


def branching_eigenvector(design: BranchingDesign, N: int) -> list:
    """Exact radial eigenvector ``e(0..N)`` as fractions."""
    if N > design.radius:
        raise ValueError(f"design only covers depth {design.radius}")
    e = [Fraction(1), Fraction(0)][: N + 1]
    for n in range(1, N):
        e.append(-e[n - 1] / (design.degrees[n] - 1))
    return e


def closed_form(design: BranchingDesign, n: int) -> Fraction:
    """``e(2p) = (-1)^p Π 1/(d_{2k-1} - 1)``, and zero on odd shells."""
    if n % 2:
        return Fraction(0)
    p = n // 2
    out = Fraction((-1) ** p)
    for k in range(1, p + 1):
        out /= design.degrees[2 * k - 1] - 1
    return out


def design_ball(design: BranchingDesign, N: int | None = None, budget: int | None = None) -> GraphBall:
    N = design.radius if N is None else N
    kwargs = {} if budget is None else {"budget": budget}
    return build_ball(BRANCHING, {"degrees": design.degrees[: N + 1]}, N, **kwargs)


def verify_eigen(ball: GraphBall, e, eigenvalue: float = 1.0) -> float:
    """``max |(𝓛 - λ) embed(e)|`` over interior vertices."""
    u = embed(ball, np.array([float(x) for x in e[: ball.radius + 1]]))
    r = laplacian(ball).matvec(u) - eigenvalue * u
    return float(np.max(np.abs(r[ball.interior]), initial=0.0))


def verify_eigen_radial(design: BranchingDesign, N: int | None = None, eigenvalue: float = 1.0) -> float:
    """Same residual through the radial reduction; cheap for large ``N``."""
    N = design.radius if N is None else N
    op = branching_radial(design.degrees, N)
    g = np.array([float(x) for x in design.eigenvector[: N + 1]])
    r = op.apply(g) - eigenvalue * g
    return float(np.max(np.abs(r[:-1]), initial=0.0))


@dataclass
class StationaryCheck:
    error: float
    shell_error: float
    norm_drift: float


def stationary_check(design: BranchingDesign, N: int, t: float = 1.0, dt: float = 1 / 32) -> StationaryCheck:
    """Evolve ``embed(e)`` to ``t`` and compare with ``e^{-it} embed(e)``.

    ``N`` must be even: then ``e(N-1) = 0`` and the truncated ball carries the
    eigenvector exactly, boundary rows included."""
    if N % 2:
        raise ValueError("stationary check needs an even radius")
    ball = design_ball(design, N)
    u0 = embed(ball, np.array([float(x) for x in design.eigenvector[: N + 1]])).astype(complex)
    traj = evolve_stepped(ball, u0, 0.0, t, dt, record_states=True)
    u1 = traj.states[-1]
    expected = np.exp(-1j * t) * u0
    err = float(np.max(np.abs(u1 - expected)))
    shells0 = np.array([np.max(np.abs(u0[ball.shell(n)])) for n in range(N + 1)])
    shells1 = np.array([np.max(np.abs(u1[ball.shell(n)])) for n in range(N + 1)])
    return StationaryCheck(err, float(np.max(np.abs(shells1 - shells0))), traj.norm_drift)


def export_design(design: BranchingDesign, path) -> None:
    """CSV table plus a JSON sidecar with the design metadata."""
    rows = []
    for n, d in enumerate(design.degrees):
        e = design.eigenvector[n] if n < len(design.eigenvector) else Fraction(0)
        w = design.omega[n] if n < len(design.omega) else None
        rows.append((n, d, "" if w is None else float(w), float(e), str(e)))
    write_csv(path, ["n", "degree", "omega", "e", "e_exact"], rows)
    meta = {"degrees": design.degrees, "omega": [str(w) for w in design.omega],
            "even_degree_default": DEFAULT_EVEN_DEGREE, "constraint_holds": design.constraint_holds()}
    write_json(str(path) + ".json", meta)


# ------------------------------------------------------------ compact search


@dataclass
class CompactEigenvector:
    eigenvalue: float
    vector: np.ndarray
    support_radius: int
    residual: float
    labels: np.ndarray = field(repr=False, default=None)


def compact_eigenvectors(ball: GraphBall, threshold: float = COMPACT_THRESHOLD) -> list:
    """Eigenvectors of ``𝓛`` on ``ball`` vanishing on the outer shell.

    Diagonalise the interior block, then within each eigenvalue cluster keep
    the combinations annihilated by the interior→boundary coupling; those
    extend by zero to eigenvectors of the whole ball.
    """
    core = np.flatnonzero(ball.interior)
    outer = np.flatnonzero(~ball.interior)
    if len(core) == 0:
        raise ValueError("window too small: no interior core")
    lap = laplacian(ball).native().toarray()
    evals, evecs = np.linalg.eigh(lap[np.ix_(core, core)])
    coupling = lap[np.ix_(outer, core)]
    found, i = [], 0
    while i < len(evals):
        j = i
        while j + 1 < len(evals) and evals[j + 1] - evals[i] < CLUSTER_TOL:
            j += 1
        basis = evecs[:, i:j + 1]
        _, sv, vh = np.linalg.svd(coupling @ basis)
        for k in range(basis.shape[1]):
            if k < len(sv) and sv[k] >= threshold:
                continue
            v = np.zeros(ball.size)
            v[core] = basis @ vh[k]
            lam = float(np.mean(evals[i:j + 1]))
            res = float(np.max(np.abs(lap @ v - lam * v)))
            if res >= threshold:
                continue
            big = np.abs(v) > threshold * np.max(np.abs(v))
            radius = int(ball.depth[big].max())
            labels = ball.labels[big] if ball.labels is not None else None
            found.append(CompactEigenvector(lam, v, radius, res, labels))
        i = j + 1
    return found


def dl_compact_eigenfunctions(q: int, r: int, N: int, threshold: float = COMPACT_THRESHOLD) -> list:
    return compact_eigenvectors(build_ball(DIESTEL_LEADER, {"q": q, "r": r}, N), threshold)


def reverify(vec: CompactEigenvector, small: GraphBall, large: GraphBall) -> float:
    """Residual of ``vec`` transplanted from ``small`` into ``large`` by vertex label."""
    if small.labels is None or large.labels is None:
        index = np.arange(small.size)
    else:
        where = {tuple(lab): i for i, lab in enumerate(large.labels.tolist())}
        index = np.array([where[tuple(lab)] for lab in small.labels.tolist()])
    v = np.zeros(large.size)
    v[index] = vec.vector
    r = laplacian(large).matvec(v) - vec.eigenvalue * v
    return float(np.max(np.abs(r)))


@dataclass
class SearchReport:
    window: int
    found: list
    reverified: list
    control_found: int


def dl_search(q: int = 2, r: int = 2, N: int = 4, control_q: int = 2, control_N: int = 6,
              threshold: float = COMPACT_THRESHOLD) -> SearchReport:
    """Search a DL window, re-check each hit on the window ``N + 2``, and run the tree control."""
    small = build_ball(DIESTEL_LEADER, {"q": q, "r": r}, N)
    found = compact_eigenvectors(small, threshold)
    large = build_ball(DIESTEL_LEADER, {"q": q, "r": r}, N + 2) if found else None
    again = [reverify(v, small, large) for v in found]
    control = build_ball("homogeneous", {"q": control_q}, control_N)
    return SearchReport(N, found, again, len(compact_eigenvectors(control, threshold)))
