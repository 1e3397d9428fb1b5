"""Adjacency, Laplacians, potentials and the radial reduction.

Every operator is stored in a symmetric frame ``M`` together with a
positive diagonal similarity ``s`` so that the native operator is
``diag(1/s) M diag(s)``.  For the adjacency matrix and ``Δ`` the scale is
trivial.  For ``𝓛 = I - D^{-1}A`` it is ``s = sqrt(deg)``, which is
constant on homogeneous balls, so there the native and symmetric forms
coincide.

Truncation is Dirichlet: boundary rows keep the ``1/deg`` normalisation of
the infinite graph and simply lose the missing neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .tree_core import BRANCHING, HOMOGENEOUS, GraphBall

COMBINATORIAL = "combinatorial"
PHYSICIST = "physicist"
NO_LAPLACIAN = "none"


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    matrix: sp.csr_matrix
    scale: np.ndarray | None = None
    name: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trivial_scale(self) -> bool:
        return self.scale is None or np.ptp(self.scale) == 0

    def to_symmetric(self, u):
        """Map a native-frame vector into the symmetric frame."""
        return u if self.scale is None else self.scale * u

    def from_symmetric(self, v):
        return v if self.scale is None else v / self.scale

    def matvec(self, u):
        """Apply the native operator."""
        return self.from_symmetric(self.matrix @ self.to_symmetric(u))

    def native(self) -> sp.csr_matrix:
        if self.scale is None:
            return self.matrix
        return (sp.diags(1 / self.scale) @ self.matrix @ sp.diags(self.scale)).tocsr()

    def dense(self) -> np.ndarray:
        return self.native().toarray()

    def plus_diagonal(self, values, name=None) -> "HermitianOperator":
        mat = (self.matrix + sp.diags(np.asarray(values))).tocsr()
        return HermitianOperator(mat, self.scale, name or self.name)

    def gershgorin(self) -> tuple[float, float]:
        """Enclosure of the (real) spectrum from Gershgorin discs."""
        m = self.matrix.tocsr()
        diag = m.diagonal().real
        radius = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(m.diagonal())
        return float(np.min(diag - radius)), float(np.max(diag + radius))

    def hermiticity_defect(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0


def adjacency(ball: GraphBall) -> HermitianOperator:
    return HermitianOperator(ball.adjacency_matrix.astype(float), None, "adjacency")


def combinatorial_laplacian(ball: GraphBall) -> HermitianOperator:
    """``𝓛u(x) = u(x) - (1/deg x) Σ_{y~x} u(y)`` with infinite-graph degrees."""
    if not ball.is_tree and ball.kind != "diestel_leader":
        raise ValueError(f"unsupported ball kind {ball.kind!r}")
    a = ball.adjacency_matrix
    inv_sqrt = 1 / np.sqrt(ball.degree.astype(float))
    sym = sp.identity(ball.size, format="csr") - sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt)
    scale = None if np.ptp(ball.degree) == 0 else np.sqrt(ball.degree.astype(float))
    return HermitianOperator(sym.tocsr(), scale, COMBINATORIAL)


def physicist_laplacian(ball: GraphBall) -> HermitianOperator:
    """``Δ = Deg - A`` with infinite-graph degrees."""
    mat = sp.diags(ball.degree.astype(float)) - ball.adjacency_matrix
    return HermitianOperator(mat.tocsr(), None, PHYSICIST)


def laplacian(ball: GraphBall, kind: str = COMBINATORIAL) -> HermitianOperator:
    if kind == COMBINATORIAL:
        return combinatorial_laplacian(ball)
    if kind == PHYSICIST:
        return physicist_laplacian(ball)
    if kind == NO_LAPLACIAN:
        return HermitianOperator(sp.csr_matrix((ball.size, ball.size)), None, NO_LAPLACIAN)
    raise ValueError(f"unknown laplacian kind {kind!r}")


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True, eq=False)
class DiagonalPotential:
    """``V(x, t)`` sampled on a uniform time grid, linearly interpolated.

    ``values`` has shape ``(M,)`` for a static field or ``(T, M)`` together
    with ``times`` of length ``T``.
    """

    values: np.ndarray
    times: np.ndarray | None = None
    bound: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim == 2:
            if self.times is None or len(self.times) != vals.shape[0]:
                raise ValueError("time-dependent potential needs one time per row")
            object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        sup = float(np.max(np.abs(vals))) if vals.size else 0.0
        if self.bound is None:
            object.__setattr__(self, "bound", sup)
        elif sup > self.bound * (1 + 1e-12):
            raise ValueError(f"potential sup {sup} exceeds declared bound {self.bound}")

    @property
    def time_dependent(self) -> bool:
        return self.values.ndim == 2

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def at(self, t: float) -> np.ndarray:
        if not self.time_dependent:
            return self.values
        ts = self.times
        if t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        i = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    @classmethod
    def from_function(cls, func, dim, times, bound=None):
        """Sample ``func(t) -> array(M)`` on ``times``."""
        times = np.asarray(times, dtype=float)
        table = np.stack([np.broadcast_to(func(t), (dim,)) for t in times])
        return cls(table, times, bound)

    @classmethod
    def bernoulli(cls, dim, level, seed, p=0.5):
        """i.i.d. values in ``{0, level}`` per vertex, time independent."""
        rng = np.random.default_rng(seed)
        vals = level * (rng.random(dim) < p)
        return cls(vals, None, abs(level), {"seed": seed, "p": p, "level": level})


@dataclass(frozen=True, eq=False)
class KernelPotential:
    """Finitely supported hermitian kernel ``v(x, y)`` on ``K × K``."""

    support: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=np.int64)
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (len(sup), len(sup)):
            raise ValueError("kernel matrix must be |K| x |K|")
        if len(np.unique(sup)) != len(sup):
            raise ValueError("support has repeated vertices")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-14 * max(1.0, np.abs(mat).max(initial=0)):
            raise ValueError("kernel is not hermitian")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "matrix", (mat + mat.conj().T) / 2)

    def to_sparse(self, dim: int) -> sp.csr_matrix:
        if len(self.support) and (self.support.max() >= dim or self.support.min() < 0):
            raise ValueError("kernel support escapes the ball")
        rows, cols = np.meshgrid(self.support, self.support, indexing="ij")
        return sp.csr_matrix((self.matrix.ravel(), (rows.ravel(), cols.ravel())), shape=(dim, dim))

    @classmethod
    def diagonal(cls, support, values):
        return cls(support, np.diag(np.asarray(values, dtype=complex)))

    @classmethod
    def random(cls, support, strength, seed):
        rng = np.random.default_rng(seed)
        k = len(support)
        g = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
        h = (g + g.conj().T) / 2
        return cls(support, strength * h / max(np.abs(np.linalg.eigvalsh(h)).max(), 1e-300))


def hamiltonian(ball: GraphBall, laplacian_kind: str = COMBINATORIAL, potential=None,
                t: float = 0.0) -> HermitianOperator:
    """``H(t) = 𝓛 (or Δ) + V(·, t)`` or ``+ v`` for a kernel potential."""
    lap = laplacian(ball, laplacian_kind)
    if potential is None:
        return lap
    if isinstance(potential, DiagonalPotential):
        if potential.dim != ball.size:
            raise ValueError("potential dimension does not match the ball")
        return lap.plus_diagonal(potential.at(t), f"{lap.name}+V")
    if isinstance(potential, KernelPotential):
        kern = potential.to_sparse(ball.size)
        if lap.scale is not None:
            s = lap.scale[potential.support]
            if np.ptp(s) != 0:
                raise ValueError("kernel potentials need constant degree on their support")
        return HermitianOperator((lap.matrix + kern).tocsr(), lap.scale, f"{lap.name}+v")
    raise TypeError(f"unsupported potential {type(potential).__name__}")


# ---------------------------------------------------------------- radial reduction


@dataclass(frozen=True, eq=False)
class RadialOperator:
    """Native tridiagonal action of ``𝓛`` on radial profiles ``g(0..N)``.

    The native matrix is ``diag(diag) + diag(upper, 1) + diag(lower, -1)``;
    the last row has no outward coupling (Dirichlet at ``n = N``).
    """

    diag: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    shell_sizes: np.ndarray
    degrees: np.ndarray

    @property
    def radius(self) -> int:
        return len(self.diag) - 1

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def apply(self, g):
        g = np.asarray(g)
        out = self.diag * g
        out[:-1] += self.upper * g[1:]
        out[1:] += self.lower * g[:-1]
        return out

    @property
    def weights(self) -> np.ndarray:
        """Self-adjointness weights ``|S_n| deg_n``."""
        return self.shell_sizes * self.degrees

    def symmetric(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of ``W^{1/2} L W^{-1/2}``."""
        return self.diag.copy(), -np.sqrt(self.upper * self.lower)

    def plus_diagonal(self, v) -> "RadialOperator":
        return RadialOperator(self.diag + np.asarray(v), self.upper, self.lower,
                              self.shell_sizes, self.degrees)


def _radial_from_degrees(degrees, radius):
    d = np.asarray(degrees[: radius + 1], dtype=float)
    children = np.r_[d[0], d[1:] - 1]
    sizes = np.ones(radius + 1)
    for n in range(radius):
        sizes[n + 1] = sizes[n] * children[n]
    upper = -children[:radius] / d[:radius]
    lower = -1 / d[1:]
    return RadialOperator(np.ones(radius + 1), upper, lower, sizes, d)


def radial_reduce(q: int, radius: int) -> RadialOperator:
    return _radial_from_degrees([q + 1] * (radius + 1), radius)


def branching_radial(degrees, radius: int) -> RadialOperator:
    if any(int(d) < 2 for d in degrees[: radius + 1]):
        raise ValueError("all degrees must be at least 2")
    return _radial_from_degrees(degrees, radius)


def radial_operator_for(ball: GraphBall) -> RadialOperator:
    if ball.kind == HOMOGENEOUS:
        return radial_reduce(ball.q, ball.radius)
    if ball.kind == BRANCHING:
        return branching_radial(ball.params["degrees"], ball.radius)
    raise ValueError("radial reduction needs a tree ball")


def embed(ball: GraphBall, g) -> np.ndarray:
    """Spread the radial profile ``g(n)`` over the spheres ``S_n``."""
    g = np.asarray(g)
    if len(g) != ball.radius + 1:
        raise ValueError("profile length must be radius + 1")
    return g[ball.depth]


def restrict(ball: GraphBall, u, tol: float = 1e-10) -> np.ndarray:
    """Sphere averages of ``u``; raises if ``u`` is not radial to ``tol``."""
    u = np.asarray(u)
    sizes = ball.sphere_sizes
    g = np.bincount(ball.depth, weights=u.real, minlength=ball.radius + 1) / sizes
    if np.iscomplexobj(u):
        g = g + 1j * np.bincount(ball.depth, weights=u.imag, minlength=ball.radius + 1) / sizes
    dev = np.max(np.abs(u - g[ball.depth]), initial=0.0)
    scale = max(np.max(np.abs(u), initial=0.0), 1e-300)
    if dev > tol * scale:
        raise ValueError(f"state is not radial (deviation {dev:.2e})")
    return g


def radial_norm2(op: RadialOperator, g) -> float:
    """``Σ_n |S_n| |g(n)|²``, the squared norm of the embedded state."""
    return float(np.sum(op.shell_sizes * np.abs(g) ** 2))


def export_coo(op: HermitianOperator, path) -> None:
    """Write the native matrix as ``row col re im`` lines."""
    m = op.native().tocoo()
    data = np.asarray(m.data, dtype=complex)
    order = np.lexsort((m.col, m.row))
    lines = [f"# dim={op.dim} nnz={m.nnz} name={op.name}"]
    lines += [
        f"{r} {c} {d.real:.17g} {d.imag:.17g}"
        for r, c, d in zip(m.row[order], m.col[order], data[order])
    ]
    Path(path).write_text("\n".join(lines) + "\n")
