"""Closed-form spectral objects of the free Laplacian on ``T_q``.

Conventions: ``z = s log q``; for real ``s`` the symbol is
``1 - (2 sqrt(q)/(q+1)) cos z``.  The critical profile is

    u(n, t) = C q^(-n/2) e^(-i lam t) ∫_0^π exp(i a (2t - 1) cos z) φ_n(z) sin z dz,

with ``a = lam sqrt(q)/(q+1)`` and ``C`` fixed by ``u(0, 0) = 1``.  For
large ``n`` the integral is a tiny number obtained from O(1) integrand
values, so it is evaluated in multiprecision with a working precision
chosen from the expected magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np
from mpmath.calculus.quadrature import GaussLegendre

from ..errors import ConvergenceError, PrecisionError
from ..tree_core import horocycle_count

LOG_UNDERFLOW = math.log(1e-290)
MAX_DPS = 800


def tau(q: int) -> float:
    return 2 * math.pi / math.log(q)


def sigma(q: int) -> float:
    return math.sqrt(q) / (2 * (q + 1))


def band_edges(q: int) -> tuple[float, float]:
    """Continuous spectrum of ``𝓛`` on ``T_q``."""
    w = 2 * math.sqrt(q) / (q + 1)
    return 1 - w, 1 + w


def symbol(q: int, s):
    """Fourier–Helgason multiplier ``1 - 2σ(q^{is} + q^{-is})`` of ``𝓛``."""
    s = np.asarray(s)
    qis = np.exp(1j * s * math.log(q))
    m = 1 - 2 * sigma(q) * (qis + 1 / qis)
    if np.isrealobj(s):
        m = m.real
    return m[()] if m.ndim == 0 else m


def spherical_phi(q: int, j, z):
    num = math.sqrt(q) * np.sin(np.multiply(z, np.add(j, 1))) - np.sin(
        np.multiply(z, np.subtract(j, 1))
    ) / math.sqrt(q)
    return num / (q + 1 / q - 2 * np.cos(2 * np.asarray(z)))


def c_function(q: int, s):
    s = np.asarray(s, dtype=float)
    z = s * math.log(q)
    near = np.minimum(np.abs(np.sin(z)), 1.0)
    if np.any(near < 1e-12):
        raise ValueError("c-function is singular at s in {0, ±τ/2}")
    qis = np.exp(1j * z)
    val = (math.sqrt(q) / (q + 1)) * (math.sqrt(q) * qis - 1 / (math.sqrt(q) * qis)) / (
        qis - 1 / qis
    )
    return val[()] if val.ndim == 0 else val


def spherical_function(q: int, s, n):
    """``q^{-n/2}(c(s) q^{isn} + c(-s) q^{-isn})``, the radial eigenfunction at ``n``."""
    s = np.asarray(s, dtype=float)
    n = np.asarray(n)
    z = s * math.log(q)
    val = q ** (-n / 2) * (
        c_function(q, s) * np.exp(1j * z * n) + c_function(q, -s) * np.exp(-1j * z * n)
    )
    return val


# ---------------------------------------------------------------- critical profile


@dataclass
class CriticalProfile:
    """Radial values of the critical solution, with quadrature diagnostics.

    ``log_abs`` and ``phase`` are always valid; ``values`` is the complex128
    view and holds 0 (with ``underflow`` set) where ``|u|`` is below 1e-290.
    """

    q: int
    lam: float
    times: np.ndarray
    n_max: int
    tol: float
    log_abs: np.ndarray
    phase: np.ndarray
    normalization: complex
    panels: np.ndarray
    rel_error: np.ndarray
    dps: np.ndarray
    raw: list = field(repr=False, default_factory=list)

    @property
    def values(self) -> np.ndarray:
        mag = np.where(self.underflow, 0.0, np.exp(np.maximum(self.log_abs, LOG_UNDERFLOW)))
        return mag * np.exp(1j * self.phase)

    @property
    def underflow(self) -> np.ndarray:
        return self.log_abs < LOG_UNDERFLOW

    def at(self, t: float) -> np.ndarray:
        idx = int(np.flatnonzero(np.isclose(self.times, t))[0])
        return self.values[idx]


def _log_magnitude_estimate(q, b, n):
    """log of the leading Bessel term of the integral (used only to pick precision)."""
    b = max(abs(b), 1e-8)
    return math.log(math.pi) - 0.5 * math.log(q) + n * math.log(b / 2) - math.lgamma(n + 1)


@lru_cache(maxsize=64)
def _gl_nodes(degree: int, dps: int):
    with mpmath.workdps(dps):
        return GaussLegendre(mpmath.mp).calc_nodes(degree, mpmath.mp.prec)


def _panel_rule(a, b, degree, dps, panels):
    nodes = _gl_nodes(degree, dps)
    h = (b - a) / panels
    xs, ws = [], []
    for p in range(panels):
        lo = a + p * h
        for x, w in nodes:
            xs.append(lo + (x + 1) * h / 2)
            ws.append(w * h / 2)
    return xs, ws


def _critical_integrals(q, lam, t, n_max, tol, max_panels, degree=6):
    """Raw integrals I(n, t) for n = 0..n_max at one time, in multiprecision."""
    a = lam * math.sqrt(q) / (q + 1)
    b = a * (1 - 2 * t)
    need = -min(_log_magnitude_estimate(q, b, n) for n in range(n_max + 1)) / math.log(10)
    dps = int(30 + max(need, 0) - math.log10(tol))
    if dps > MAX_DPS:
        raise PrecisionError(f"n_max={n_max} needs {dps} digits, beyond {MAX_DPS}")
    floor = [mpmath.mpf(10) ** (-(dps - 15))]
    with mpmath.workdps(dps):
        qm = mpmath.mpf(q)
        sq = mpmath.sqrt(qm)
        bm = mpmath.mpf(lam) * sq / (qm + 1) * (1 - 2 * mpmath.mpf(t))

        def integrate(panels):
            xs, ws = _panel_rule(mpmath.mpf(0), mpmath.pi, degree, dps, panels)
            acc = [mpmath.mpc(0)] * (n_max + 1)
            for x, w in zip(xs, ws):
                base = w * mpmath.expjpi(-bm * mpmath.cos(x) / mpmath.pi) * mpmath.sin(x)
                base /= qm + 1 / qm - 2 * mpmath.cos(2 * x)
                # sin(k x) for k = -1..n_max+1 by the three-term recurrence
                s_prev, s_cur = -mpmath.sin(x), mpmath.mpf(0)
                two_c = 2 * mpmath.cos(x)
                sines = [s_prev, s_cur]
                for _ in range(n_max + 2):
                    s_prev, s_cur = s_cur, two_c * s_cur - s_prev
                    sines.append(s_cur)
                # sines[k + 1] = sin(k x)
                for n in range(n_max + 1):
                    acc[n] += base * (sq * sines[n + 2] - sines[n] / sq)
            return acc

        panels = 2
        prev = integrate(panels)
        while True:
            panels *= 2
            cur = integrate(panels)
            errs = [abs(c - p) / max(abs(c), floor[0]) for c, p in zip(cur, prev)]
            worst = max(errs)
            if worst < tol:
                return cur, panels, [float(e) for e in errs], dps
            if panels >= max_panels:
                raise ConvergenceError(
                    f"critical profile quadrature stalled at relative error {float(worst):.2e}",
                    achieved=float(worst),
                )
            prev = cur


def critical_profile(q: int, lam: float = 1.0, times=(0.0, 1.0), n_max: int = 12,
                     tol: float = 1e-10, max_panels: int = 64) -> CriticalProfile:
    """Evaluate the critical solution on shells ``0..n_max`` at the given times."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any((times < 0) | (times > 1)):
        raise ValueError("times must lie in [0, 1]")
    norm_raw, _, _, _ = _critical_integrals(q, lam, 0.0, 0, tol, max_panels)
    with mpmath.workdps(40):
        normalization = 1 / norm_raw[0]
    nt = len(times)
    log_abs = np.empty((nt, n_max + 1))
    phase = np.empty((nt, n_max + 1))
    rel = np.empty((nt, n_max + 1))
    panels = np.empty(nt, dtype=int)
    dps = np.empty(nt, dtype=int)
    raw = []
    for i, t in enumerate(times):
        vals, panels[i], errs, dps[i] = _critical_integrals(q, lam, t, n_max, tol, max_panels)
        raw.append(vals)
        rel[i] = errs
        with mpmath.workdps(int(dps[i])):
            for n, v in enumerate(vals):
                u = normalization * v * mpmath.mpf(q) ** (-mpmath.mpf(n) / 2) * mpmath.expj(-lam * t)
                log_abs[i, n] = float(mpmath.log(abs(u))) if u != 0 else -np.inf
                phase[i, n] = float(mpmath.arg(u))
    return CriticalProfile(
        q=q, lam=lam, times=times, n_max=n_max, tol=tol, log_abs=log_abs, phase=phase,
        normalization=complex(normalization), panels=panels, rel_error=rel, dps=dps, raw=raw,
    )


def critical_profile_arccos(q: int, n: int, lam: float = 1.0, tol: float = 1e-12,
                            max_nodes: int = 4096) -> complex:
    """Raw (``C = 1``) value at ``t = 0`` from the ``s = cos z`` form.

    After the substitution the integrand is ``√(1-s²)`` times a smooth
    function built from Chebyshev polynomials of the second kind, so a
    Chebyshev–Gauss rule of the second kind integrates it spectrally.
    """
    a = lam * math.sqrt(q) / (q + 1)
    need = -_log_magnitude_estimate(q, a, n) / math.log(10)
    dps = int(30 + max(need, 0) - math.log10(tol))
    if dps > MAX_DPS:
        raise PrecisionError(f"n={n} needs {dps} digits, beyond {MAX_DPS}")
    with mpmath.workdps(dps):
        qm = mpmath.mpf(q)
        sq = mpmath.sqrt(qm)
        am = mpmath.mpf(lam) * sq / (qm + 1)

        def smooth_part(s):
            # U_{n} and U_{n-2}, with U_{-1} = 0 and U_{-2} = -1
            u = {-2: mpmath.mpf(-1), -1: mpmath.mpf(0), 0: mpmath.mpf(1)}
            for k in range(1, n + 1):
                u[k] = 2 * s * u[k - 1] - u[k - 2]
            return (sq * u[n] - u[n - 2] / sq) / (qm + 1 / qm + 2 - 4 * s * s)

        def rule(k_nodes):
            acc = mpmath.mpc(0)
            h = mpmath.pi / (k_nodes + 1)
            for k in range(1, k_nodes + 1):
                s = mpmath.cos(k * h)
                acc += h * mpmath.sin(k * h) ** 2 * mpmath.expj(-am * s) * smooth_part(s)
            return acc

        k_nodes = 16
        prev = rule(k_nodes)
        floor = mpmath.mpf(10) ** (-(dps - 15))
        while True:
            k_nodes = 2 * k_nodes + 1
            cur = rule(k_nodes)
            if abs(cur - prev) <= tol * max(abs(cur), floor):
                return complex(cur * qm ** (-mpmath.mpf(n) / 2))
            if k_nodes > max_nodes:
                raise ConvergenceError("arccos-form quadrature did not converge")
            prev = cur


# ---------------------------------------------------------------- radial Helgason–Fourier


@dataclass
class SpectralTable:
    """Values of a transform on quadrature nodes in ``s ∈ [-τ/2, τ/2)``."""

    q: int
    s: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def plancherel_nodes(q: int, n_nodes: int = 256):
    """Gauss–Legendre nodes on ``[-τ/2, τ/2]`` (even count, so ``s = 0`` is avoided)."""
    if n_nodes % 2:
        n_nodes += 1
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    half = tau(q) / 2
    return x * half, w * half


@lru_cache(maxsize=None)
def plancherel_constant(q: int, n_nodes: int = 256) -> float:
    """Normalises the ``|c(s)|^{-2} ds`` density so that ``δ_o`` round-trips exactly."""
    s, w = plancherel_nodes(q, n_nodes)
    density = 1 / np.abs(c_function(q, s)) ** 2
    return float(1 / np.sum(w * density * spherical_function(q, s, 0).real))


def fh_radial(q: int, f, n_nodes: int = 256) -> SpectralTable:
    """Helgason–Fourier transform of a finitely supported radial profile ``f(n)``.

    Summed over horocycle–sphere intersections, so it does not depend on the ray.
    """
    f = np.asarray(f, dtype=complex)
    s, w = plancherel_nodes(q, n_nodes)
    logq = math.log(q)
    values = np.zeros_like(s, dtype=complex)
    for ell, fl in enumerate(f):
        if fl == 0:
            continue
        for k in range(-ell, ell + 1):
            c = horocycle_count(q, ell, k)
            if c:
                values += fl * c * np.exp(-(0.5 + 1j * s) * k * logq)
    return SpectralTable(q, s, w, values, {"n_nodes": len(s)})


def fh_direct(ball, ray, u, s):
    """Vertex-sum Helgason–Fourier transform ``Σ_x u(x) q^{-(1/2+is)h_w(x)}``."""
    from ..tree_core import busemann_all

    h = busemann_all(ball, ray)
    s = np.atleast_1d(np.asarray(s))
    kern = np.exp(-np.outer(0.5 + 1j * s, h) * math.log(ball.q))
    return kern @ np.asarray(u, dtype=complex)


def fh_radial_inverse(table: SpectralTable, n_max: int) -> np.ndarray:
    """Radial inversion against the calibrated Plancherel density."""
    q = table.q
    kappa = plancherel_constant(q, len(table.s))
    table.meta["plancherel_constant"] = kappa
    density = kappa / np.abs(c_function(q, table.s)) ** 2
    n = np.arange(n_max + 1)
    phis = spherical_function(q, table.s[None, :], n[:, None])
    return (phis * (table.weights * density * table.values)[None, :]).sum(axis=1)
