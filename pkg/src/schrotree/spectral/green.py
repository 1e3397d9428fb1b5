"""Resolvent kernel of ``A_0`` and the spectral theory of compact perturbations.

``G_0(s, d) = q^{(-1/2+is)d} / (q^{1/2-is} - q^{-1/2+is})`` inverts
``λ_s - A_0`` (so ``(A_0 - λ_s) G_0 = -δ``).  With ``W = -(q+1)v`` the
perturbed operator is ``𝓛 + 𝓥 = I - (A_0 + W)/(q+1)``, and the deformed
eigenfunctions solve ``(A_0 + W) e = λ_s e``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import SingularSystemError
from ..operators import KernelPotential, hamiltonian
from ..propagation import DENSE_BUDGET, boundary_mass
from ..tree_core import GraphBall, busemann_all
from .free import SpectralTable, band_edges, symbol

GREEN_DENOMINATOR_FLOOR = 1e-12
CONDITION_LIMIT = 1e12


def spectral_parameter(q: int, s) -> complex:
    """``λ_s = q^{1/2+is} + q^{1/2-is}``."""
    s = complex(s)
    return q ** (0.5 + 1j * s) + q ** (0.5 - 1j * s)


def green_function(q: int, s, d):
    s = complex(s)
    denom = q ** (0.5 - 1j * s) - q ** (-0.5 + 1j * s)
    if abs(denom) < GREEN_DENOMINATOR_FLOOR:
        raise SingularSystemError("Green's function denominator vanishes", condition=math.inf)
    return q ** ((-0.5 + 1j * s) * np.asarray(d)) / denom


def free_eigenfunction(ball: GraphBall, ray, s) -> np.ndarray:
    """``e_0(s, w, x) = q^{-(1/2 - is) h_w(x)}``."""
    h = busemann_all(ball, ray)
    return ball.q ** (-(0.5 - 1j * complex(s)) * h)


def _distance_block(ball: GraphBall, support) -> np.ndarray:
    """Distances from every ball vertex to each vertex of ``support`` (M × |K|)."""
    return np.stack([ball.distances_from(int(y)) for y in support], axis=1)


@dataclass
class DeformedEigenfunction:
    s: float
    a: np.ndarray
    e: np.ndarray
    e0: np.ndarray
    condition: float


class DeformedSystem:
    """Caches the geometry needed to solve for ``(a, e)`` at many ``s``."""

    def __init__(self, ball: GraphBall, kernel: KernelPotential, ray):
        if ball.kind != "homogeneous":
            raise ValueError("deformed eigenfunctions need a homogeneous ball")
        self.ball = ball
        self.kernel = kernel
        self.ray = np.asarray(ray)
        self.q = ball.q
        self.support = kernel.support
        self.w = -(self.q + 1) * kernel.matrix
        self.dist = _distance_block(ball, self.support)
        self.dist_kk = self.dist[self.support]
        self.h = busemann_all(ball, ray)

    def solve(self, s) -> DeformedEigenfunction:
        q = self.q
        e0 = q ** (-(0.5 - 1j * complex(s)) * self.h)
        k = len(self.support)
        if k == 0 or not np.any(self.w):
            return DeformedEigenfunction(s, e0[self.support].copy(), e0.copy(), e0, 1.0)
        g_kk = green_function(q, s, self.dist_kk)
        system = np.eye(k) - g_kk @ self.w
        cond = float(np.linalg.cond(system))
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise SingularSystemError(f"deformed system singular at s={s}", condition=cond)
        a = np.linalg.solve(system, e0[self.support])
        e = e0 + green_function(q, s, self.dist) @ (self.w @ a)
        return DeformedEigenfunction(s, a, e, e0, cond)

    def transform(self, f, s_grid, pole_guard: float = 1e10) -> SpectralTable:
        """``F~(s) = Σ_x f(x) conj(e(s, w, x))``; near-pole ``s`` are dropped and recorded."""
        f = np.asarray(f, dtype=complex)
        kept, values, excluded, conds = [], [], [], []
        for s in np.asarray(s_grid, dtype=float):
            try:
                sol = self.solve(s)
            except SingularSystemError:
                excluded.append(float(s))
                continue
            if sol.condition > pole_guard:
                excluded.append(float(s))
                continue
            kept.append(s)
            conds.append(sol.condition)
            values.append(np.sum(f * sol.e.conj()))
        return SpectralTable(self.q, np.array(kept), np.ones(len(kept)), np.array(values, dtype=complex),
                             {"excluded": excluded, "max_condition": max(conds, default=1.0)})


def deformed_eigenfunction(ball: GraphBall, kernel: KernelPotential, ray, s) -> DeformedEigenfunction:
    return DeformedSystem(ball, kernel, ray).solve(s)


def deformed_fh(ball: GraphBall, kernel: KernelPotential, ray, f, s_grid) -> SpectralTable:
    return DeformedSystem(ball, kernel, ray).transform(f, s_grid)


# ---------------------------------------------------------------- pp / ac split


@dataclass
class SplitResult:
    eigenvalues: np.ndarray
    boundary_mass: np.ndarray
    labels: list
    pp_indices: np.ndarray
    band: tuple[float, float]
    eigenvectors: np.ndarray = field(repr=False)
    margin: float = 1e-3
    threshold: float = 1e-6

    @property
    def pp_count(self) -> int:
        return len(self.pp_indices)

    @property
    def ambiguous(self) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab == "ambiguous"], dtype=int)


def pp_ac_split(ball: GraphBall, potential=None, margin: float = 1e-3,
                threshold: float = 1e-6, method: str = "auto", k: int = 6) -> SplitResult:
    """Eigensolve of ``𝓛 + 𝓥`` with out-of-band / localisation flags.

    Labels: ``"pp"`` (outside the band by ``margin`` and boundary mass below
    ``threshold``), ``"ambiguous"`` (outside the band but not localised) and
    ``"band"``.  ``method="dense"`` resolves the full spectrum; ``"sparse"``
    only the ``k`` extreme eigenpairs on each side, which is where
    out-of-band states live.  ``"auto"`` picks dense up to the dense budget.
    """
    op = hamiltonian(ball, potential=potential)
    if method == "auto":
        method = "dense" if ball.size <= DENSE_BUDGET else "sparse"
    if method == "dense":
        if ball.size > DENSE_BUDGET:
            raise ValueError(f"ball of {ball.size} vertices too large for a dense split")
        evals, evecs = np.linalg.eigh(op.matrix.toarray())
    elif method == "sparse":
        from scipy.sparse.linalg import eigsh

        k = min(k, ball.size - 2)
        # fixed start vector keeps ARPACK (and hence every output) reproducible
        v0 = np.random.default_rng(0).standard_normal(ball.size)
        lo_vals, lo_vecs = eigsh(op.matrix, k=k, which="SA", tol=1e-12, v0=v0)
        hi_vals, hi_vecs = eigsh(op.matrix, k=k, which="LA", tol=1e-12, v0=v0)
        evals = np.r_[lo_vals, hi_vals]
        evecs = np.hstack([lo_vecs, hi_vecs])
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]
    else:
        raise ValueError(f"unknown method {method!r}")
    lo, hi = band_edges(ball.q)
    masses = np.array([boundary_mass(evecs[:, i], ball) for i in range(len(evals))])
    labels = []
    for lam, m in zip(evals, masses):
        outside = lam < lo - margin or lam > hi + margin
        if not outside:
            labels.append("band")
        elif m < threshold:
            labels.append("pp")
        else:
            labels.append("ambiguous")
    pp = np.array([i for i, lab in enumerate(labels) if lab == "pp"], dtype=int)
    return SplitResult(evals, masses, labels, pp, (lo, hi), evecs, margin, threshold)


def strength_scan(ball: GraphBall, vertex: int = 0, start: float = 0.25, factor: float = 2.0,
                  max_strength: float = 1e3, **kwargs):
    """Increase a single-site kernel until a pp eigenpair appears.

    Returns ``(strength, SplitResult)``; raises if none appears below
    ``max_strength``."""
    v = start
    while v <= max_strength:
        res = pp_ac_split(ball, KernelPotential.diagonal([vertex], [v]), **kwargs)
        if res.pp_count:
            return v, res
        v *= factor
    raise ValueError(f"no pp eigenpair up to strength {max_strength}")


def evolution_phase(q: int, s, t: float) -> complex:
    """``exp(-i m(s) t)``, the multiplier of the (deformed) transform."""
    return np.exp(-1j * symbol(q, s) * t)
