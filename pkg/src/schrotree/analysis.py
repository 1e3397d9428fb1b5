"""Decay diagnostics, weighted norms, commutator and Carleman checks, ``λ(R)``.

Everything that can underflow is kept as a logarithm.  Functions that
consume a time evolution take a :class:`~schrotree.propagation.Trajectory`
and only use its per-shell masses, so radial and full-ball trajectories
are interchangeable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson, trapezoid
from scipy.special import logsumexp
from scipy.sparse.linalg import eigsh

from .errors import TaintedError
from .operators import combinatorial_laplacian
from .propagation import Trajectory, evolve_stepped
from .tree_core import GraphBall, homogeneous_ball


# ---------------------------------------------------------------- envelopes


def envelope(q: int, lam: float, eps: float, n):
    """log of ``n^{-1/2} (e λ / ((2+ε)(q+1) n))^n``."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("envelope is defined for n >= 1")
    return -0.5 * np.log(n) + n * np.log(math.e * lam / ((2 + eps) * (q + 1) * n))


@dataclass
class EnvelopeFit:
    kappa: float
    log_kappa: float
    log_ratios: np.ndarray
    shells: np.ndarray

    def slope(self) -> float:
        """Least-squares slope of the log-ratio series against ``n``."""
        return float(np.polyfit(self.shells, self.log_ratios, 1)[0])


def envelope_check(log_abs, q: int, lam: float = 1.0, eps: float = 0.0,
                   tainted=None) -> EnvelopeFit:
    """Fit ``κ`` in ``|u(n)| <= κ · envelope(n)`` over untainted shells ``n >= 1``.

    ``log_abs[n]`` is ``log max_{|x|=n} |u(x)|`` (``-inf`` for zero shells).
    """
    log_abs = np.asarray(log_abs, dtype=float)
    n = np.arange(1, len(log_abs))
    ok = np.ones(len(n), dtype=bool) if tainted is None else ~np.asarray(tainted)[1:]
    if not ok.any():
        raise TaintedError("every shell is tainted")
    ratios = log_abs[1:][ok] - envelope(q, lam, eps, n[ok])
    log_kappa = float(np.max(ratios))
    return EnvelopeFit(math.exp(log_kappa) if log_kappa < 700 else math.inf, log_kappa, ratios, n[ok])


def shell_log_max(ball: GraphBall, u) -> np.ndarray:
    mags = np.abs(np.asarray(u))
    out = np.full(ball.radius + 1, -np.inf)
    np.maximum.at(out, ball.depth, np.log(np.where(mags > 0, mags, 1e-320)))
    out[np.bincount(ball.depth, weights=mags, minlength=ball.radius + 1) == 0] = -np.inf
    return out


@dataclass
class WeightedNorm:
    log_value: float
    log_terms: np.ndarray

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709 else math.inf

    @property
    def overflow(self) -> bool:
        return self.log_value >= 709

    def increments_decreasing_from(self) -> int | None:
        """First shell after which log-terms decrease monotonically, if any."""
        d = np.diff(self.log_terms)
        for n0 in range(len(d)):
            if np.all(d[n0:] < 0):
                return n0
        return None

    def increments_increasing_from(self) -> int | None:
        d = np.diff(self.log_terms)
        for n0 in range(len(d)):
            if np.all(d[n0:] > 0):
                return n0
        return None


def weighted_norm_mu(log_abs, shell_sizes, mu: float) -> WeightedNorm:
    """``Σ_x e^{2μ|x|log(|x|+1)} |u(x)|²`` for radial data given as ``log|u(n)|``."""
    log_abs = np.asarray(log_abs, dtype=float)
    n = np.arange(len(log_abs))
    terms = np.log(np.asarray(shell_sizes, dtype=float)) + 2 * mu * n * np.log(n + 1) + 2 * log_abs
    return WeightedNorm(float(logsumexp(terms)), terms)


def weighted_norm_state(ball: GraphBall, u, mu: float) -> WeightedNorm:
    """Same as :func:`weighted_norm_mu` for an arbitrary (non-radial) state."""
    mass = np.bincount(ball.depth, weights=np.abs(np.asarray(u)) ** 2, minlength=ball.radius + 1)
    n = np.arange(ball.radius + 1)
    with np.errstate(divide="ignore"):
        terms = 2 * mu * n * np.log(n + 1) + np.log(mass)
    return WeightedNorm(float(logsumexp(terms)), terms)


# ---------------------------------------------------------------- weights


def weight_psi_alpha(alpha: float, depth, t):
    """``(1+|x|)^{α|x|/(1+t)}``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    depth = np.asarray(depth, dtype=float)
    return np.exp(alpha * depth / (1 + np.asarray(t)) * np.log1p(depth))


def log_weight_psi_alpha(alpha: float, depth, t):
    depth = np.asarray(depth, dtype=float)
    return alpha * depth / (1 + np.asarray(t)) * np.log1p(depth)


def weight_phi_b(gamma: float, b: float, n):
    """``φ_b(n) = γ(1+n) log^b(1+n)`` (the exponent, not ``e^{φ_b}``)."""
    if not 0.5 < b < 1:
        raise ValueError("b must lie in (1/2, 1)")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n = np.asarray(n, dtype=float)
    return gamma * (1 + n) * np.log1p(n) ** b


def phi_b_convexity(gamma: float, b: float, n_max: int = 500) -> np.ndarray:
    """``sinh(2Δφ_b(n+1)) - sinh(2Δφ_b(n))`` for ``n = 1..n_max``."""
    phi = weight_phi_b(gamma, b, np.arange(n_max + 2))
    step = np.sinh(2 * np.diff(phi))
    return step[1:] - step[:-1]


# ---------------------------------------------------------------- persistence & interpolation


@dataclass
class FitReport:
    constant: float
    series: np.ndarray
    times: np.ndarray
    meta: dict = field(default_factory=dict)


def _check_taint(traj: Trajectory, threshold):
    if traj.tainted(threshold):
        raise TaintedError(f"trajectory boundary mass {traj.boundary_mass.max():.2e} above alarm")


def weighted_persistence_check(traj: Trajectory, alpha: float = 1.0,
                               taint_threshold: float | None = None) -> FitReport:
    """Smallest ``C`` with ``‖ψ_α(t)u(t)‖² <= e^{Ct} ‖ψ_α(0)u(0)‖²`` on the time grid."""
    _check_taint(traj, taint_threshold)
    n = np.arange(traj.radius + 1)
    logs = np.array([
        logsumexp(2 * log_weight_psi_alpha(alpha, n, t) + _safe_log(m))
        for t, m in zip(traj.times, traj.shell_mass)
    ])
    t = traj.times
    pos = t > 0
    ratios = (logs[pos] - logs[0]) / (t[pos] - t[0])
    return FitReport(float(max(ratios.max(initial=-np.inf), 0.0)), logs, t,
                     {"alpha": alpha, "log_H0": float(logs[0])})


def _safe_log(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(x)


def interpolation_check(traj: Trajectory, gamma: float = 1.0, b: float = 0.8,
                        taint_threshold: float | None = None) -> FitReport:
    """Smallest ``C`` with ``H_b(t) <= e^{Ct(1-t)} H_b(0)^{1-t} H_b(1)^t``.

    ``traj.times`` must span ``[0, 1]``.  The constant is the maximum of
    the required value over interior times (it may be negative, e.g. for a
    strictly log-convex ``H_b``).
    """
    _check_taint(traj, taint_threshold)
    t = traj.times
    if not (np.isclose(t[0], 0) and np.isclose(t[-1], 1)):
        raise ValueError("trajectory must start at t=0 and end at t=1")
    n = np.arange(traj.radius + 1)
    phi = weight_phi_b(gamma, b, n)
    logs = np.array([logsumexp(2 * phi + _safe_log(m)) for m in traj.shell_mass])
    inner = (t > 0) & (t < 1)
    tt = t[inner]
    need = (logs[inner] - (1 - tt) * logs[0] - tt * logs[-1]) / (tt * (1 - tt))
    return FitReport(float(need.max()), logs, t, {"gamma": gamma, "b": b, "required": need})


def interpolation_holds(report: FitReport, constant: float) -> bool:
    need = report.meta["required"]
    return bool(np.all(need <= constant + 1e-12))


# ---------------------------------------------------------------- commutator


def commutator_matrix(ball: GraphBall, gamma: float = 1.0, b: float = 0.8) -> sp.csr_matrix:
    """``[𝓢, 𝓐]`` for the weight ``e^{φ_b}``, restricted to interior vertices.

    Entries are ``(q+1)^{-2} Σ_{y~x, y~z} sinh(2φ(y) - φ(x) - φ(z))``; for
    interior ``x, z`` every common neighbour lies in the ball, so the
    restriction is exact.
    """
    if ball.kind != "homogeneous":
        raise ValueError("commutator bound is stated on homogeneous trees")
    q = ball.q
    phi = weight_phi_b(gamma, b, ball.depth) if gamma > 0 else np.zeros(ball.size)
    return _commutator_from_weight(ball, phi, q)


def _commutator_from_weight(ball, phi, q):
    a = ball.adjacency_matrix.tocoo()
    d = phi[a.col] - phi[a.row]
    if np.max(np.abs(d), initial=0) > 700:
        raise OverflowError("weight differences overflow sinh; reduce the radius")
    sh = sp.csr_matrix((np.sinh(d), (a.row, a.col)), shape=a.shape)
    ch = sp.csr_matrix((np.cosh(d), (a.row, a.col)), shape=a.shape)
    full = (sh @ ch - ch @ sh) / (q + 1) ** 2
    idx = np.flatnonzero(ball.interior)
    return full[idx][:, idx].tocsr()


def commutator_min_eig(ball: GraphBall, gamma: float = 1.0, b: float = 0.8,
                       dense_limit: int = 3000) -> float:
    m = commutator_matrix(ball, gamma, b)
    if m.shape[0] == 0:
        return 0.0
    if m.nnz == 0:
        return 0.0
    if m.shape[0] <= dense_limit:
        return float(np.linalg.eigvalsh(m.toarray())[0])
    v0 = np.random.default_rng(0).standard_normal(m.shape[0])
    return float(eigsh(m, k=1, which="SA", tol=1e-12, v0=v0)[0][0])


def commutator_min_eig_weight(ball: GraphBall, phi) -> float:
    """Minimum eigenvalue for an arbitrary radial weight ``φ(n)``."""
    m = _commutator_from_weight(ball, np.asarray(phi, dtype=float)[ball.depth], ball.q)
    if m.nnz == 0:
        return 0.0
    return float(np.linalg.eigvalsh(m.toarray())[0])


# ---------------------------------------------------------------- Carleman


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1 / s[pos])
    return out


def smoothstep(s):
    """C^∞ step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    a, b = _bump(s), _bump(1 - np.asarray(s, dtype=float))
    return a / (a + b)


def default_profile(eps: float):
    """Time profile equal to ``2 + 1/ε`` on ``[3/8, 5/8]`` and 0 off ``(1/4, 3/4)``."""
    top = 2 + 1 / eps

    def phi(t):
        t = np.asarray(t, dtype=float)
        return top * np.where(t <= 0.5, smoothstep(8 * (t - 0.25)), smoothstep(8 * (0.75 - t)))

    return phi


def _sup_norms(phi, n=20001):
    t = np.linspace(0, 1, n)
    v = phi(t)
    d1 = np.gradient(v, t, edge_order=2)
    d2 = np.gradient(d1, t, edge_order=2)
    return float(np.max(np.abs(v))), float(np.max(np.abs(d1))), float(np.max(np.abs(d2)))


@dataclass
class CarlemanSetup:
    R: float
    alpha: float
    beta: float
    gamma: float
    eps: float
    phi: object = field(repr=False)
    sup_phi: float = 0.0
    sup_dphi: float = 0.0
    sup_d2phi: float = 0.0

    @classmethod
    def build(cls, R: float, gamma: float | None = None, eps: float = 0.5, alpha: float | None = None):
        """``gamma`` defaults to ``ε/2 + ε²``, which clears ``1/(2β) = ε/2``."""
        beta = 1 / eps
        gamma = eps / 2 + eps ** 2 if gamma is None else gamma
        if gamma <= 1 / (2 * beta):
            raise ValueError("gamma must exceed 1/(2 beta)")
        alpha_min = gamma * R * math.log(R)
        alpha = alpha_min if alpha is None else alpha
        if alpha < alpha_min * (1 - 1e-12):
            raise ValueError("alpha must be at least gamma R log R")
        phi = default_profile(eps)
        s0, s1, s2 = _sup_norms(phi)
        return cls(R, alpha, beta, gamma, eps, phi, s0, s1, s2)

    def theta(self, n):
        """Spatial cutoff: 1 for ``n <= R-1``, 0 for ``n >= R``."""
        return smoothstep(self.R - np.asarray(n, dtype=float))

    def mu(self, s):
        """Cutoff: 0 for ``s <= 1/ε``, 1 for ``s >= 1/ε + 1``."""
        return smoothstep(np.asarray(s, dtype=float) - 1 / self.eps)

    def as_dict(self) -> dict:
        return {"R": self.R, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "eps": self.eps, "sup_phi": self.sup_phi, "sup_dphi": self.sup_dphi,
                "sup_d2phi": self.sup_d2phi}


@dataclass
class CarlemanResult:
    lhs: float
    rhs: float
    log_scale: float
    n_times: int

    @property
    def margin(self) -> float:
        """``RHS - LHS`` in units of ``exp(log_scale)``."""
        return self.rhs - self.lhs

    @property
    def relative_margin(self) -> float:
        return self.margin / self.rhs if self.rhs else 0.0


def carleman_instance(ball: GraphBall, setup: CarlemanSetup, seed: int, n_times: int = 400,
                      modes: int = 4) -> np.ndarray:
    """Seeded admissible ``g(x, t)`` on a uniform grid of ``n_times + 1`` points.

    ``g = θ^R(|x|) μ(|x|/R + φ(t)) Σ_k c_{x,k} sin(kπt)`` with complex
    Gaussian ``c``; the coefficients depend only on the seed, so refining
    the grid samples the same function.
    """
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((ball.size, modes)) + 1j * rng.standard_normal((ball.size, modes))
    t = np.linspace(0, 1, n_times + 1)
    field_t = np.sin(np.outer(t, np.arange(1, modes + 1)) * math.pi) @ c.T
    depth = ball.depth
    window = setup.theta(depth)[None, :] * setup.mu(depth[None, :] / setup.R + setup.phi(t)[:, None])
    return window * field_t


def carleman_verify(ball: GraphBall, g, setup: CarlemanSetup) -> CarlemanResult:
    """Evaluate both sides of the weighted inequality for ``g`` sampled on ``[0, 1]``.

    The operator is ``i∂_t - 𝓛`` (the sign making free solutions exact
    zeros under our convention ``i∂_t u = 𝓛u``); ``∂_t`` is a second-order
    centred difference and time integrals use the trapezoid rule.
    """
    g = np.asarray(g, dtype=complex)
    nt = g.shape[0] - 1
    t = np.linspace(0, 1, nt + 1)
    if not g.any():
        return CarlemanResult(0.0, 0.0, 0.0, nt)
    q, R, alpha, beta = ball.q, setup.R, setup.alpha, setup.beta
    depth = ball.depth.astype(float)
    phit = setup.phi(t)
    level = depth[None, :] / R + phit[:, None]
    support = np.abs(g) > 0
    if np.any(support & (level < beta - 1e-12)):
        raise ValueError("g violates the support condition |x|/R + φ(t) >= β")
    if np.any(support[0]) or np.any(support[-1]):
        raise ValueError("g must vanish at t=0 and t=1")
    if np.any(np.abs(g[:, ball.depth >= ball.radius]) > 0):
        raise ValueError("g must vanish on the outer shell so 𝓛g is exact")

    lap = combinatorial_laplacian(ball).native()
    dg = np.gradient(g, t, axis=0, edge_order=2)
    pg = 1j * dg - (lap @ g.T).T

    expo = 2 * alpha * level ** 2
    w_shell1 = 2 * alpha * (1 / R + phit) ** 2
    sinh_factor = np.sinh(4 * alpha / R * (1 / (2 * R) + phit))
    one = ball.depth == 1
    far = ball.depth >= 1

    with np.errstate(divide="ignore"):
        log_lhs_t = logsumexp(expo[:, far] + 2 * np.log(np.abs(g[:, far]) + 0.0), axis=1)
        log_p_t = logsumexp(expo + 2 * np.log(np.abs(pg)), axis=1)
        log_c_t = logsumexp(2 * np.log(np.abs(g[:, one])), axis=1) + w_shell1
    scale = float(np.nanmax(np.r_[log_lhs_t, log_p_t, log_c_t][np.isfinite(np.r_[log_lhs_t, log_p_t, log_c_t])]))
    lhs_t = np.exp(log_lhs_t - scale)
    p_t = np.exp(log_p_t - scale)
    c_t = np.exp(log_c_t - scale) * sinh_factor
    factor = math.sinh(2 * alpha / R ** 2) * math.cosh(4 * alpha * beta / R)
    lhs = factor * trapezoid(lhs_t, t)
    rhs = (q + 1) ** 2 * trapezoid(p_t, t) + trapezoid(c_t, t)
    return CarlemanResult(float(lhs), float(rhs), scale, nt)


def carleman_threshold_scan(q: int, R_grid, draws: int = 5, seed: int = 0, n_times: int = 200,
                            eps: float = 0.5, gamma: float | None = None) -> list:
    """``(R, min margin, all hold)`` per radius; the empirical admissibility threshold
    is the smallest ``R`` from which every later row holds."""
    rows = []
    for R in R_grid:
        ball = homogeneous_ball(q, int(math.ceil(R)))
        setup = CarlemanSetup.build(R, gamma, eps)
        margins = [carleman_verify(ball, carleman_instance(ball, setup, s, n_times), setup).margin
                   for s in range(seed, seed + draws)]
        rows.append((float(R), float(min(margins)), bool(min(margins) >= 0)))
    return rows


# ---------------------------------------------------------------- λ(R)


def lambda_R(traj: Trajectory, R: float, scale: float = 1.0,
             taint_threshold: float | None = None) -> float:
    """``(∫_0^1 Σ_{⌊R⌋-1 <= |x| <= ⌊R⌋+1} |u|² dt)^{1/2}`` by Simpson's rule."""
    _check_taint(traj, taint_threshold)
    r = int(math.floor(R))
    if traj.radius < r + 2:
        raise TaintedError(f"trajectory radius {traj.radius} too small for R={R}")
    if not (np.isclose(traj.times[0], 0) and np.isclose(traj.times[-1], 1)):
        raise ValueError("trajectory must cover [0, 1]")
    band = traj.shell_mass[:, max(r - 1, 0): r + 2].sum(axis=1)
    return math.sqrt(simpson(band, x=traj.times)) * scale


@dataclass
class LowerBoundScan:
    R: np.ndarray
    log_lambda: np.ndarray
    slope: float
    intercept: float
    eta: float
    normalization: float
    total_mass: float
    meta: dict = field(default_factory=dict)

    @property
    def within_bound(self) -> bool:
        return self.slope <= 1 + self.eta

    @property
    def log_c(self) -> float:
        """Best constant for the bound ``log λ >= log c - (1+η) R log R``."""
        return float(np.min(self.log_lambda + (1 + self.eta) * self.R * np.log(self.R)))


def fit_slope(R, log_lambda):
    """Least squares ``log λ = a - s · R log R``; returns ``(s, a)``."""
    x = np.asarray(R, dtype=float) * np.log(R)
    coef = np.polyfit(x, np.asarray(log_lambda), 1)
    return float(-coef[0]), float(coef[1])


def lower_bound_scan(ball: GraphBall, x0: int, R_grid, eta: float = 0.5, potential=None,
                     dt: float = 1 / 32, tol: float = 1e-250, u0=None) -> LowerBoundScan:
    """Evolve ``u0`` (default ``δ_{x0}``), normalise on ``[3/8, 5/8]`` at ``x0`` and fit ``λ(R)``."""
    if ball.depth[x0] != 2:
        raise ValueError("x0 must lie on the sphere of radius 2")
    if u0 is None:
        u0 = np.zeros(ball.size, dtype=complex)
        u0[x0] = 1.0
    u0 = np.asarray(u0, dtype=complex)
    traj = evolve_stepped(ball, u0, 0.0, 1.0, dt, potential=potential, record_states=False,
                          every_step=True, probes=[x0], tol=tol)
    t = traj.times
    sel = (t >= 3 / 8 - 1e-12) & (t <= 5 / 8 + 1e-12)
    local = simpson(np.abs(traj.probe_values[sel, 0]) ** 2, x=t[sel])
    if local <= 0:
        raise ValueError("normalisation unreachable: u vanishes near x0")
    scale = 1 / math.sqrt(local)
    R = np.asarray(R_grid, dtype=float)
    lams = np.array([lambda_R(traj, r, scale) for r in R])
    slope, intercept = fit_slope(R, np.log(lams))
    total = math.sqrt(simpson(traj.shell_mass.sum(axis=1), x=t)) * scale
    return LowerBoundScan(R, np.log(lams), slope, intercept, eta, scale, total,
                          {"dt": dt, "boundary_mass": float(traj.boundary_mass.max()),
                           "potential_bound": getattr(potential, "bound", 0.0),
                           "radius": ball.radius})


# ---------------------------------------------------------------- report


@dataclass
class DecayReport:
    times: np.ndarray
    shell_log_max: np.ndarray
    envelope_log_ratio: np.ndarray
    kappa: float
    weighted: dict = field(default_factory=dict)
    lambda_table: dict = field(default_factory=dict)
    tainted: np.ndarray | None = None

    def rows(self):
        for i, t in enumerate(self.times):
            for n in range(self.shell_log_max.shape[1]):
                ratio = self.envelope_log_ratio[i, n - 1] if n >= 1 else float("nan")
                yield (t, n, self.shell_log_max[i, n], ratio)


def decay_report(times, shell_log_max, q: int, lam: float = 1.0, eps: float = 0.0) -> DecayReport:
    shell_log_max = np.atleast_2d(np.asarray(shell_log_max, dtype=float))
    ratios, kappas = [], []
    for row in shell_log_max:
        fit = envelope_check(row, q, lam, eps)
        full = row[1:] - envelope(q, lam, eps, np.arange(1, len(row)))
        ratios.append(full)
        kappas.append(fit.log_kappa)
    return DecayReport(np.asarray(times), shell_log_max, np.array(ratios), float(np.exp(max(kappas))))
