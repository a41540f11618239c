"""Graph construction: synthetic families and edge-list ingestion.

All graphs are simple, undirected, connected, with node ids exactly
``0..n-1``.  Random families retry generation with derived sub-seeds until a
connected draw is found (bounded retry count, recorded on the result).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GraphError
from .ioutil import dump_json, sha256_of_text

__all__ = [
    "Graph",
    "GraphSpec",
    "generate",
    "load_edge_list",
    "shortest_path_distances",
    "save_edge_list",
    "default_geometric_radius",
    "MAX_CONNECTIVITY_RETRIES",
]

# Random families are redrawn with fresh sub-seeds at most this many times.
MAX_CONNECTIVITY_RETRIES = 100

RANDOM_FAMILIES = frozenset({"erdos_renyi", "geometric", "sbm"})
FAMILIES = frozenset(
    {
        "complete",
        "ring",
        "star",
        "grid2d",
        "hypercube",
        "erdos_renyi",
        "geometric",
        "sbm",
        "edge_list",
    }
)


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Graph:
    """A connected simple undirected graph on nodes ``0..n-1``.

    Attributes
    ----------
    n : int
        Node count (>= 2).
    edges : tuple[(int, int), ...]
        Sorted unordered pairs (u < v), no self-edges, no duplicates.
    positions : ndarray of shape (n, 2), optional
        Euclidean node positions (geometric family only).
    family, seed, retries :
        Provenance of the construction, recorded for export sidecars.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    positions: np.ndarray | None = field(default=None, compare=False)
    family: str | None = None
    seed: int | None = None
    retries: int = 0

    @cached_property
    def degrees(self) -> np.ndarray:
        """Per-node degree vector."""
        d = np.zeros(self.n, dtype=np.int64)
        for u, v in self.edges:
            d[u] += 1
            d[v] += 1
        return d

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Adjacency lists, sorted ascending."""
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(ns)) for ns in nbrs)

    def adjacency_matrix(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix."""
        a = np.zeros((self.n, self.n), dtype=float)
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a

    def content_hash(self) -> str:
        """Stable hash of (n, edge set); identifies the topology."""
        payload = f"{self.n}|" + ";".join(f"{u},{v}" for u, v in self.edges)
        return sha256_of_text(payload)

    def is_bipartite(self) -> bool:
        """Two-color the graph by BFS; True iff no odd cycle exists."""
        color = np.full(self.n, -1, dtype=np.int8)
        color[0] = 0
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for w in self.neighbors[u]:
                if color[w] == -1:
                    color[w] = 1 - color[u]
                    queue.append(w)
                elif color[w] == color[u]:
                    return False
        return True


@dataclass(frozen=True)
class GraphSpec:
    """Declarative description of a graph to generate.

    Family-specific parameters: ``grid2d(rows, cols)``, ``hypercube(dim)``,
    ``erdos_renyi(n, q)``, ``geometric(n, radius)``,
    ``sbm(cluster_sizes, prob_matrix)``, ``edge_list(path)``.  ``seed`` feeds
    the RNG of random families and is ignored by deterministic ones.
    """

    family: str
    n: int | None = None
    rows: int | None = None
    cols: int | None = None
    dim: int | None = None
    q: float | None = None
    radius: float | None = None
    cluster_sizes: tuple[int, ...] | None = None
    prob_matrix: tuple[tuple[float, ...], ...] | None = None
    path: str | None = None
    seed: int | None = None


# --------------------------------------------------------------------------- #
# Internal helpers
# --------------------------------------------------------------------------- #


def _check_connected(n: int, neighbors: list[list[int]]) -> bool:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for w in neighbors[u]:
            if not seen[w]:
                seen[w] = True
                count += 1
                queue.append(w)
    return count == n


def _finalize(
    n: int,
    edge_set: set[tuple[int, int]],
    *,
    family: str | None,
    seed: int | None,
    retries: int = 0,
    positions: np.ndarray | None = None,
    require_connected: bool = True,
) -> Graph:
    if n < 2:
        raise GraphError(f"need at least 2 nodes, got n={n}")
    for u, v in edge_set:
        if u == v:
            raise GraphError(f"self-edge rejected: ({u}, {v})")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge ({u}, {v}) outside node range 0..{n - 1}")
    edges = tuple(sorted((min(u, v), max(u, v)) for u, v in edge_set))
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    if require_connected and not _check_connected(n, nbrs):
        raise GraphError(f"graph with n={n} is not connected")
    return Graph(
        n=n, edges=edges, positions=positions, family=family, seed=seed, retries=retries
    )


def default_geometric_radius(n: int) -> float:
    """Connectivity-threshold radius sqrt(2 ln n / n), scaled by 1.1."""
    return 1.1 * math.sqrt(2.0 * math.log(n) / n)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise GraphError(message)


def _need_n(spec: GraphSpec) -> int:
    _require(spec.n is not None, f"family '{spec.family}' requires n")
    return int(spec.n)  # type: ignore[arg-type]


# --------------------------------------------------------------------------- #
# Family builders (one connected attempt each; random ones may raise)
# --------------------------------------------------------------------------- #


def _complete(n: int) -> set[tuple[int, int]]:
    return {(u, v) for u in range(n) for v in range(u + 1, n)}


def _ring(n: int) -> set[tuple[int, int]]:
    _require(n >= 3, "ring requires n >= 3")
    return {(u, (u + 1) % n) for u in range(n)}


def _star(n: int) -> set[tuple[int, int]]:
    _require(n >= 3, "star requires n >= 3")
    return {(0, v) for v in range(1, n)}


def _grid2d(rows: int, cols: int) -> set[tuple[int, int]]:
    _require(rows >= 1 and cols >= 1 and rows * cols >= 2, "grid2d needs rows*cols >= 2")
    edges = set()
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                edges.add((u, u + 1))
            if r + 1 < rows:
                edges.add((u, u + cols))
    return edges


def _hypercube(dim: int) -> set[tuple[int, int]]:
    _require(dim >= 1, "hypercube requires dim >= 1")
    n = 1 << dim
    return {(u, u ^ (1 << b)) for u in range(n) for b in range(dim) if u < (u ^ (1 << b))}


def _erdos_renyi(n: int, q: float, rng: np.random.Generator) -> set[tuple[int, int]]:
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.shape[0]) < q
    return {(int(a), int(b)) for a, b in zip(iu[mask], ju[mask])}


def _geometric(
    n: int, radius: float, rng: np.random.Generator
) -> tuple[set[tuple[int, int]], np.ndarray]:
    pos = rng.random((n, 2))
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    iu, ju = np.triu_indices(n, k=1)
    mask = dist[iu, ju] <= radius
    return {(int(a), int(b)) for a, b in zip(iu[mask], ju[mask])}, pos


def _sbm(
    cluster_sizes: tuple[int, ...],
    prob_matrix: tuple[tuple[float, ...], ...],
    rng: np.random.Generator,
) -> tuple[int, set[tuple[int, int]]]:
    sizes = [int(s) for s in cluster_sizes]
    _require(all(s > 0 for s in sizes), "sbm cluster sizes must be positive")
    k = len(sizes)
    p = np.asarray(prob_matrix, dtype=float)
    _require(p.shape == (k, k), "sbm prob_matrix shape must match cluster count")
    _require(np.allclose(p, p.T), "sbm prob_matrix must be symmetric")
    _require(bool(np.all((p >= 0.0) & (p <= 1.0))), "sbm probabilities must be in [0,1]")
    n = sum(sizes)
    membership = np.repeat(np.arange(k), sizes)
    iu, ju = np.triu_indices(n, k=1)
    probs = p[membership[iu], membership[ju]]
    mask = rng.random(iu.shape[0]) < probs
    return n, {(int(a), int(b)) for a, b in zip(iu[mask], ju[mask])}


# --------------------------------------------------------------------------- #
# Public operations
# --------------------------------------------------------------------------- #


def generate(spec: GraphSpec) -> Graph:
    """Build a connected graph from `spec`.

    Deterministic families are built directly.  Random families draw with
    sub-seeds derived from ``spec.seed`` and retry on disconnected draws, up to
    :data:`MAX_CONNECTIVITY_RETRIES` attempts; the retry count is recorded on
    the returned graph.
    """
    fam = spec.family
    if fam not in FAMILIES:
        raise GraphError(f"unknown graph family '{fam}' (expected one of {sorted(FAMILIES)})")

    if fam == "edge_list":
        _require(spec.path is not None, "edge_list family requires path")
        g, _ = load_edge_list(spec.path)  # type: ignore[arg-type]
        return g

    if fam == "complete":
        n = _need_n(spec)
        return _finalize(n, _complete(n), family=fam, seed=spec.seed)
    if fam == "ring":
        n = _need_n(spec)
        return _finalize(n, _ring(n), family=fam, seed=spec.seed)
    if fam == "star":
        n = _need_n(spec)
        return _finalize(n, _star(n), family=fam, seed=spec.seed)
    if fam == "grid2d":
        _require(spec.rows is not None and spec.cols is not None, "grid2d requires rows and cols")
        rows, cols = int(spec.rows), int(spec.cols)  # type: ignore[arg-type]
        return _finalize(rows * cols, _grid2d(rows, cols), family=fam, seed=spec.seed)
    if fam == "hypercube":
        if spec.dim is not None:
            dim = int(spec.dim)
        else:
            n = _need_n(spec)
            dim = round(math.log2(n)) if n > 0 else 0
            _require(n >= 2 and (1 << dim) == n, "hypercube requires dim, or n a power of 2")
        return _finalize(1 << dim, _hypercube(dim), family=fam, seed=spec.seed)

    # Random families: rejection-sample connected draws with derived sub-seeds.
    root = np.random.SeedSequence(spec.seed if spec.seed is not None else 0)
    children = root.spawn(MAX_CONNECTIVITY_RETRIES)
    last_error: GraphError | None = None
    for attempt in range(MAX_CONNECTIVITY_RETRIES):
        rng = np.random.default_rng(children[attempt])
        positions: np.ndarray | None = None
        try:
            if fam == "erdos_renyi":
                n = _need_n(spec)
                _require(spec.q is not None and 0.0 < spec.q <= 1.0, "erdos_renyi requires q in (0,1]")
                edge_set = _erdos_renyi(n, float(spec.q), rng)  # type: ignore[arg-type]
            elif fam == "geometric":
                n = _need_n(spec)
                radius = spec.radius if spec.radius is not None else default_geometric_radius(n)
                _require(0.0 < radius <= math.sqrt(2.0), "geometric requires radius in (0, sqrt(2)]")
                edge_set, positions = _geometric(n, float(radius), rng)
            else:  # sbm
                _require(
                    spec.cluster_sizes is not None and spec.prob_matrix is not None,
                    "sbm requires cluster_sizes and prob_matrix",
                )
                n, edge_set = _sbm(spec.cluster_sizes, spec.prob_matrix, rng)  # type: ignore[arg-type]
            return _finalize(
                n,
                edge_set,
                family=fam,
                seed=spec.seed,
                retries=attempt,
                positions=positions,
            )
        except GraphError as exc:
            if "not connected" in str(exc):
                last_error = exc
                continue
            raise
    raise GraphError(
        f"no connected draw for family '{fam}' within {MAX_CONNECTIVITY_RETRIES} retries "
        f"(last error: {last_error})"
    )


def load_edge_list(path: str | Path) -> tuple[Graph, dict[int, int]]:
    """Parse a whitespace-separated `u v` edge-list file.

    Lines starting with ``#`` are comments.  Node ids are remapped to a dense
    ``0..n-1`` range in first-appearance order; the original->dense mapping is
    returned alongside the graph.  Self-edges and malformed lines are rejected
    with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise GraphError(f"edge-list file not found: {path}")
    mapping: dict[int, int] = {}
    edge_set: set[tuple[int, int]] = set()

    def dense(orig: int) -> int:
        if orig not in mapping:
            mapping[orig] = len(mapping)
        return mapping[orig]

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'u v', got {stripped!r}")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-integer node id in {stripped!r}") from None
            if a == b:
                raise GraphError(f"{path}:{lineno}: self-edge rejected: {a} {b}")
            u, v = dense(a), dense(b)
            edge_set.add((min(u, v), max(u, v)))
    if len(mapping) < 2:
        raise GraphError(f"{path}: fewer than 2 nodes in edge list")
    g = _finalize(len(mapping), edge_set, family="edge_list", seed=None)
    return g, mapping


def shortest_path_distances(g: Graph) -> np.ndarray:
    """All-pairs hop distances by BFS from every node.

    Returns a symmetric integer matrix with zero diagonal.
    """
    n = g.n
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            du = dist[s, u]
            for w in g.neighbors[u]:
                if dist[s, w] < 0:
                    dist[s, w] = du + 1
                    queue.append(w)
    return dist


def save_edge_list(g: Graph, path: str | Path) -> None:
    """Write `u v` lines plus a JSON sidecar with provenance metadata."""
    path = Path(path)
    lines = [f"{u} {v}" for u, v in g.edges]
    from .ioutil import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")
    sidecar = {
        "n": g.n,
        "family": g.family,
        "seed": g.seed,
        "retries": g.retries,
        "edge_count": len(g.edges),
        "hash": g.content_hash(),
    }
    dump_json(path.with_suffix(path.suffix + ".json"), sidecar)
