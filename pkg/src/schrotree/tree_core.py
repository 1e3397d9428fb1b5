"""Truncated rooted graphs and the horocycle geometry of homogeneous trees.

Vertices are numbered breadth-first from the root (index 0).  For the two
tree kinds the children of a vertex are contiguous and every shell
``S_n`` occupies the index range ``ball.shell(n)``, so radial reductions
are plain slices.  Indices are stable under increasing the radius: the
first ``|B_N|`` vertices of a radius-``N'`` ball are the radius-``N``
ball.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import BudgetExceeded

DEFAULT_VERTEX_BUDGET = 2_000_000

HOMOGENEOUS = "homogeneous"
BRANCHING = "branching"
DIESTEL_LEADER = "diestel_leader"


@dataclass(frozen=True, eq=False)
class GraphBall:
    """A finite ball of one of the supported infinite graphs.

    ``degree`` holds the degree of each vertex in the *infinite* graph; the
    Laplacian normalisations use it so that boundary rows are the
    compression of the infinite operator (Dirichlet truncation).
    """

    kind: str
    params: dict
    radius: int
    depth: np.ndarray
    parent: np.ndarray
    edges: np.ndarray
    degree: np.ndarray
    shell_offsets: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.depth.shape[0])

    @property
    def is_tree(self) -> bool:
        return self.kind in (HOMOGENEOUS, BRANCHING)

    @property
    def q(self) -> int:
        return int(self.params["q"])

    def shell(self, n: int) -> slice:
        """Index range of the sphere ``S_n``."""
        return slice(int(self.shell_offsets[n]), int(self.shell_offsets[n + 1]))

    @cached_property
    def sphere_sizes(self) -> np.ndarray:
        return np.diff(self.shell_offsets)

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        m = self.size
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        a = sp.coo_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(m, m))
        return a.tocsr()

    @cached_property
    def ball_degree(self) -> np.ndarray:
        """Number of neighbours present inside the ball."""
        return np.diff(self.adjacency_matrix.indptr)

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of vertices whose full neighbourhood lies in the ball."""
        return self.ball_degree == self.degree

    def neighbors(self, x: int) -> np.ndarray:
        a = self.adjacency_matrix
        return a.indices[a.indptr[x]:a.indptr[x + 1]]

    @cached_property
    def _child_table(self):
        m = self.size
        counts = np.zeros(m, dtype=np.int64)
        np.add.at(counts, self.parent[1:], 1)
        # BFS order makes children of consecutive parents consecutive
        start = np.zeros(m, dtype=np.int64)
        start[1:] = np.cumsum(counts)[:-1]
        return start + 1, counts

    def children(self, x: int) -> np.ndarray:
        start, counts = self._child_table
        return np.arange(start[x], start[x] + counts[x])

    def distances_from(self, y: int) -> np.ndarray:
        """Graph distance inside the ball from vertex ``y`` to every vertex."""
        dist = sp.csgraph.shortest_path(
            self.adjacency_matrix, unweighted=True, indices=[y], directed=False
        )[0]
        return dist.astype(np.int64)


def _tree_child_counts(kind, params, radius):
    if kind == HOMOGENEOUS:
        q = int(params["q"])
        return [q + 1] + [q] * (radius - 1), [q + 1] * (radius + 1)
    degrees = [int(d) for d in params["degrees"]]
    if len(degrees) < radius + 1:
        raise ValueError(
            f"degree sequence has {len(degrees)} entries, needs {radius + 1}"
        )
    return [degrees[0]] + [d - 1 for d in degrees[1:radius]], degrees[: radius + 1]


def _build_tree(kind, params, radius, budget):
    counts, degrees = _tree_child_counts(kind, params, radius)
    sizes = [1]
    for c in counts[:radius]:
        sizes.append(sizes[-1] * c)
        if sum(sizes) > budget:
            raise BudgetExceeded(
                f"ball of radius {radius} exceeds vertex budget {budget}"
            )
    offsets = np.zeros(radius + 2, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    m = int(offsets[-1])
    depth = np.repeat(np.arange(radius + 1), sizes)
    parent = np.full(m, -1, dtype=np.int64)
    for n in range(radius):
        lo, hi = offsets[n + 1], offsets[n + 2]
        parent[lo:hi] = offsets[n] + np.arange(hi - lo) // counts[n]
    edges = np.stack([parent[1:], np.arange(1, m)], axis=1)
    degree = np.asarray(degrees, dtype=np.int64)[depth]
    return GraphBall(kind, dict(params), radius, depth, parent, edges, degree, offsets)


def _build_diestel_leader(q, r, radius, budget):
    tq = build_ball(HOMOGENEOUS, {"q": q}, radius, budget=budget)
    tr = build_ball(HOMOGENEOUS, {"q": r}, radius, budget=budget)
    hq = busemann_all(tq, canonical_ray(tq))
    hr = busemann_all(tr, canonical_ray(tr))
    by_height = {}
    for y in range(tr.size):
        by_height.setdefault(int(hr[y]), []).append(y)
    pairs = [(x, y) for x in range(tq.size) for y in by_height.get(-int(hq[x]), ())]
    if len(pairs) > budget:
        raise BudgetExceeded(f"DL window of radius {radius} exceeds vertex budget")
    index = {p: i for i, p in enumerate(pairs)}

    def up(tree, h, x):
        # neighbours of x one step higher on the horocycle scale
        nbrs = [int(tree.parent[x])] if x else []
        nbrs += list(tree.children(x))
        return [z for z in nbrs if h[z] == h[x] + 1]

    def down(tree, h, x):
        nbrs = [int(tree.parent[x])] if x else []
        nbrs += list(tree.children(x))
        return [z for z in nbrs if h[z] == h[x] - 1]

    adj = [[] for _ in pairs]
    for i, (x, y) in enumerate(pairs):
        for x2 in up(tq, hq, x):
            for y2 in down(tr, hr, y):
                j = index[(x2, y2)]
                adj[i].append(j)
                adj[j].append(i)

    # BFS from the base point (root, root) fixes the vertex order
    order, dist, par = [], {0: 0}, {0: -1}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        order.append(i)
        for j in sorted(adj[i]):
            if j not in dist:
                dist[j] = dist[i] + 1
                par[j] = i
                queue.append(j)
    new = {old: k for k, old in enumerate(order)}
    depth = np.array([dist[o] for o in order], dtype=np.int64)
    parent = np.array([new[par[o]] if par[o] >= 0 else -1 for o in order], dtype=np.int64)
    edges = sorted(
        {(min(new[i], new[j]), max(new[i], new[j])) for i in order for j in adj[i]}
    )
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    labels = np.array([pairs[o] for o in order], dtype=np.int64)
    offsets = np.searchsorted(depth, np.arange(depth.max() + 2))
    degree = np.full(len(order), q + r, dtype=np.int64)
    return GraphBall(
        DIESTEL_LEADER, {"q": q, "r": r}, radius, depth, parent, edges, degree,
        offsets, labels=labels,
    )


def build_ball(kind: str, params: dict, radius: int, budget: int = DEFAULT_VERTEX_BUDGET) -> GraphBall:
    """Build a truncated ball.

    kind : ``"homogeneous"`` (params ``q``), ``"branching"`` (params
        ``degrees``, the degree ``d_n`` of vertices at depth ``n``) or
        ``"diestel_leader"`` (params ``q``, ``r``; the window keeps pairs
        whose components lie within ``radius`` of the two tree roots).
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if kind == HOMOGENEOUS:
        if int(params["q"]) < 2:
            raise ValueError("q must be at least 2")
        return _build_tree(kind, params, radius, budget)
    if kind == BRANCHING:
        degrees = list(params["degrees"])
        if any(int(d) < 2 for d in degrees[: radius + 1]):
            raise ValueError("all degrees must be at least 2")
        return _build_tree(kind, {"degrees": [int(d) for d in degrees]}, radius, budget)
    if kind == DIESTEL_LEADER:
        q, r = int(params["q"]), int(params["r"])
        if q < 2 or r < 2:
            raise ValueError("q and r must be at least 2")
        return _build_diestel_leader(q, r, radius, budget)
    raise ValueError(f"unknown ball kind {kind!r}")


def homogeneous_ball(q: int, radius: int, budget: int = DEFAULT_VERTEX_BUDGET) -> GraphBall:
    return build_ball(HOMOGENEOUS, {"q": q}, radius, budget=budget)


def ball_size(q: int, radius: int) -> int:
    """``|B_N|`` for the homogeneous tree."""
    if radius == 0:
        return 1
    return 1 + (q + 1) * (q**radius - 1) // (q - 1)


def canonical_ray(ball: GraphBall) -> np.ndarray:
    """The geodesic ray that always steps to the lowest-index child."""
    if not ball.is_tree:
        raise ValueError("canonical_ray needs a tree ball")
    ray = [0]
    for _ in range(ball.radius):
        kids = ball.children(ray[-1])
        if len(kids) == 0:
            break
        ray.append(int(kids[0]))
    return np.asarray(ray, dtype=np.int64)


def confluence_depth(ball: GraphBall, ray: np.ndarray) -> np.ndarray:
    """``|x ∧ w|`` for every vertex."""
    on_ray = np.zeros(ball.size, dtype=bool)
    on_ray[ray] = True
    conf = np.zeros(ball.size, dtype=np.int64)
    for n in range(1, ball.radius + 1):
        sl = ball.shell(n)
        conf[sl] = conf[ball.parent[sl]]
        idx = np.arange(sl.start, sl.stop)
        conf[idx[on_ray[sl]]] = n
    return conf


def busemann_all(ball: GraphBall, ray: np.ndarray) -> np.ndarray:
    """``h_w(x) = |x| - 2|x ∧ w|`` for every vertex."""
    return ball.depth - 2 * confluence_depth(ball, ray)


def busemann(ball: GraphBall, ray: np.ndarray, x: int) -> int:
    on_ray = set(int(v) for v in ray)
    y = int(x)
    while y not in on_ray:
        y = int(ball.parent[y])
    return int(ball.depth[x] - 2 * ball.depth[y])


def horocycle_count(q: int, ell: int, k: int) -> int:
    """Number of vertices of ``S_ell`` on the horocycle of height ``k``."""
    if ell < 0:
        return 0
    if k >= 0:
        if ell == k:
            return q**k
        p, rem = divmod(ell - k, 2)
        return (q - 1) * q ** (k + p - 1) if rem == 0 and p >= 1 else 0
    kk = -k
    if ell == kk:
        return 1
    p, rem = divmod(ell - kk, 2)
    return (q - 1) * q ** (p - 1) if rem == 0 and p >= 1 else 0


def horocycle_members(ball: GraphBall, ray: np.ndarray, k: int) -> np.ndarray:
    return np.flatnonzero(busemann_all(ball, ray) == k)


def sisters(ball: GraphBall, x: int) -> np.ndarray:
    """Other children of the parent of ``x``."""
    if x == 0:
        return np.empty(0, dtype=np.int64)
    kids = ball.children(int(ball.parent[x]))
    return kids[kids != x]


def export_edgelist(ball: GraphBall, path) -> None:
    """Write ``u v`` lines with a ``#`` header naming kind and parameters."""
    params = " ".join(f"{k}={v}" for k, v in sorted(ball.params.items()))
    lines = [f"# kind={ball.kind} radius={ball.radius} vertices={ball.size} {params}"]
    lines += [f"{u} {v}" for u, v in ball.edges]
    Path(path).write_text("\n".join(lines) + "\n")
