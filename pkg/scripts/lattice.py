from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import GeometryError

DEFAULT_DIMENSION_CAP = 8.0


@dataclass(frozen=True, eq=False)
class LatticeGraph:
    """Finite connected graph with all-pairs graph distances.

    Sites are opaque identifiers; every other module works with the dense
    index of a site in ``vertices``.
    """

    vertices: tuple
    edges: frozenset
    distance: np.ndarray

    @property
    def size(self):
        return len(self.vertices)

    @property
    def all_sites(self):
        return frozenset(range(len(self.vertices)))

    def index(self, site):
        try:
            return self._lookup()[site]
        except (KeyError, TypeError):
            raise GeometryError(f"site not in graph: {site!r}") from None

    def label(self, index):
        return self.vertices[index]

    def _lookup(self):
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {site: i for i, site in enumerate(self.vertices)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def neighbors(self, i):
        return [j for j in range(self.size) if self.distance[i, j] == 1]

    def diameter(self):
        return int(self.distance.max()) if self.size else 0


@dataclass(frozen=True)
class DimensionFit:
    d: float
    c_gamma_cap: float


def _bfs(n, adjacency, start):
    dist = np.full(n, -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def build_graph(vertices, edges):
    vertices = tuple(vertices)
    if not vertices:
        raise GeometryError("graph needs at least one vertex")
    lookup = {site: i for i, site in enumerate(vertices)}
    if len(lookup) != len(vertices):
        raise GeometryError("duplicate site identifiers")

    pairs = set()
    adjacency = [[] for _ in vertices]
    for u, v in edges:
        if u not in lookup or v not in lookup:
            raise GeometryError(f"edge ({u!r}, {v!r}) references a site not in graph")
        a, b = lookup[u], lookup[v]
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in pairs:
            continue
        pairs.add(key)
        adjacency[a].append(b)
        adjacency[b].append(a)

    n = len(vertices)
    distance = np.vstack([_bfs(n, adjacency, i) for i in range(n)])
    if (distance < 0).any():
        raise GeometryError("graph is not connected")
    distance.setflags(write=False)
    return LatticeGraph(vertices=vertices, edges=frozenset(pairs), distance=distance)


def chain(length):
    if length < 1:
        raise GeometryError("chain length must be positive")
    sites = list(range(1, length + 1))
    return build_graph(sites, zip(sites[:-1], sites[1:]))


def ring(length):
    if length < 3:
        raise GeometryError("ring needs at least 3 sites")
    sites = list(range(1, length + 1))
    edges = list(zip(sites[:-1], sites[1:])) + [(sites[-1], sites[0])]
    return build_graph(sites, edges)


def grid(width, height):
    if width < 1 or height < 1:
        raise GeometryError("grid sides must be positive")
    sites = [(x, y) for y in range(1, height + 1) for x in range(1, width + 1)]
    edges = []
    for x, y in sites:
        if x < width:
            edges.append(((x, y), (x + 1, y)))
        if y < height:
            edges.append(((x, y), (x, y + 1)))
    return build_graph(sites, edges)


def explicit(edge_list, n_vertices=None):
    edge_list = [(int(u), int(v)) for u, v in edge_list]
    if n_vertices is None:
        n_vertices = 1 + max((max(u, v) for u, v in edge_list), default=0)
    return build_graph(range(n_vertices), edge_list)


def read_edge_list(path):
    edges = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise GeometryError(f"{path}:{lineno}: expected 'u v', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return explicit(edges)


def region(graph, sites):
    return frozenset(graph.index(site) for site in sites)


def labels(graph, z):
    return [graph.label(i) for i in sorted(z)]


def _check_index(graph, x):
    if not isinstance(x, (int, np.integer)) or not 0 <= x < graph.size:
        raise GeometryError(f"site not in graph: {x!r}")


def ball(graph, x, r):
    _check_index(graph, x)
    if r < 0:
        raise ValueError("radius must be nonnegative")
    return frozenset(np.flatnonzero(graph.distance[x] <= r).tolist())


def distance_to(graph, z):
    if not z:
        raise GeometryError("empty region")
    return graph.distance[sorted(z)].min(axis=0)


def fatten(graph, z, r):
    if r < 0:
        raise ValueError("radius must be nonnegative")
    return frozenset(np.flatnonzero(distance_to(graph, z) <= r).tolist())


def complement(graph, z):
    return graph.all_sites - frozenset(z)


def boundary(graph, z):
    z = frozenset(z)
    rest = complement(graph, z)
    if not z or not rest:
        return frozenset()
    return fatten(graph, z, 1) & fatten(graph, rest, 1)


def region_distance(graph, a, b):
    if not a or not b:
        raise GeometryError("empty region")
    return int(graph.distance[np.ix_(sorted(a), sorted(b))].min())


def region_diameter(graph, z):
    if not z:
        return 0
    idx = sorted(z)
    return int(graph.distance[np.ix_(idx, idx)].max())


def ball_sizes(graph):
    """Table ``sizes[x, r] = |B_r(x)|`` for r = 0..diameter."""
    diam = graph.diameter()
    radii = np.arange(diam + 1)
    return (graph.distance[:, :, None] <= radii[None, None, :]).sum(axis=1)


def fit_dimension(graph, d_candidates, cap=DEFAULT_DIMENSION_CAP):
    sizes = ball_sizes(graph)
    diam = graph.diameter()
    best = {}
    for d in d_candidates:
        if d <= 0:
            raise ValueError("dimension candidates must be positive")
        if diam == 0:
            # C_gamma stays positive on a single vertex
            best[d] = 1.0
            continue
        radii = np.arange(1, diam + 1, dtype=float)
        excess = (sizes[:, 1:] - 1) / radii[None, :] ** d
        best[d] = float(excess.max())

    admissible = [(c, d) for d, c in best.items() if c <= cap]
    if not admissible:
        summary = ", ".join(f"d={d}: C={c:.4g}" for d, c in best.items())
        raise GeometryError(f"no dimension candidate within cap {cap}: {summary}")
    c_gamma, d = min(admissible, key=lambda item: (item[0], item[1]))
    return DimensionFit(d=float(d), c_gamma_cap=float(c_gamma))


def satisfies_dimension(graph, fit):
    sizes = ball_sizes(graph)
    for r in range(1, sizes.shape[1]):
        if (sizes[:, r] > 1 + fit.c_gamma_cap * r ** fit.d + 1e-12).any():
            return False
    return True
