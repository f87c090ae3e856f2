import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from sng_dbscan.dataset_io import Dataset
from sng_dbscan.errors import ContractError, ParameterError
from sng_dbscan.utils import DOMAIN_GRAPH, substream

logger = logging.getLogger(__name__)

# rows per task when building graphs; keeps a dense distance block around 32 MB
_BLOCK_CELLS = 1 << 22
_SAMPLE_BLOCK = 2048


class DistanceKind(str, Enum):
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    COSINE = "cosine"
    CALLBACK = "callback"


_CDIST_METRIC = {
    DistanceKind.EUCLIDEAN: "euclidean",
    DistanceKind.MANHATTAN: "cityblock",
    DistanceKind.COSINE: "cosine",
}


@dataclass(frozen=True)
class DistanceSpec:
    """
    Distance used to decide ε-edges.

    `CALLBACK` wraps an arbitrary symmetric, non-negative function of two
    D-vectors; `dim` is the dimensionality the callback was written for.
    Cosine distance is 1 - cosine similarity and rejects zero vectors.
    """

    kind: DistanceKind = DistanceKind.EUCLIDEAN
    callback: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    dim: Optional[int] = None

    def __post_init__(self):
        try:
            kind = DistanceKind(self.kind)
        except ValueError:
            valid = ", ".join(k.value for k in DistanceKind if k != DistanceKind.CALLBACK)
            raise ParameterError(f"unknown distance {self.kind!r}; expected one of {valid}")
        object.__setattr__(self, "kind", kind)
        if kind == DistanceKind.CALLBACK and self.callback is None:
            raise ParameterError("a callback distance needs a callable")
        if kind != DistanceKind.CALLBACK and self.callback is not None:
            raise ParameterError(f"{kind.value} distance does not take a callback")

    @classmethod
    def from_name(cls, name: str) -> "DistanceSpec":
        return cls(kind=str(name).strip().lower())

    @classmethod
    def precomputed(cls, callback, dim: int) -> "DistanceSpec":
        return cls(kind=DistanceKind.CALLBACK, callback=callback, dim=dim)

    def check(self, points: np.ndarray) -> None:
        if self.kind == DistanceKind.COSINE:
            zero_rows = np.flatnonzero(~np.any(points != 0.0, axis=1))
            if zero_rows.size:
                raise ContractError(
                    f"cosine distance is undefined for zero vectors (row {int(zero_rows[0])})"
                )
        if self.kind == DistanceKind.CALLBACK and self.dim is not None:
            if points.shape[1] != self.dim:
                raise ContractError(
                    f"callback distance expects D={self.dim}, data has D={points.shape[1]}"
                )

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """(len(a), len(b)) matrix of distances."""
        if self.kind != DistanceKind.CALLBACK:
            d = cdist(a, b, metric=_CDIST_METRIC[self.kind])
            if self.kind == DistanceKind.COSINE:
                np.maximum(d, 0.0, out=d)
            return d
        d = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                d[i, j] = float(self.callback(a[i], b[j]))
        if d.size and (not np.isfinite(d).all() or d.min() < 0.0):
            raise ContractError("callback distance returned a negative or non-finite value")
        return d


@dataclass(frozen=True)
class SampledGraph:
    """
    Undirected graph in CSR form: the neighbors of v are
    `neighbors[offsets[v]:offsets[v + 1]]`, sorted, distinct, never v itself.

    `distance_evaluations` counts the ordered (vertex, candidate) comparisons
    made while building the graph.
    """

    n: int
    offsets: np.ndarray
    neighbors: np.ndarray
    distance_evaluations: int = 0

    @classmethod
    def from_edges(cls, n: int, a, b, distance_evaluations: int = 0) -> "SampledGraph":
        """Deduplicates and symmetrizes an edge list; self-loops are dropped."""
        a = np.asarray(a, dtype=np.int64).reshape(-1)
        b = np.asarray(b, dtype=np.int64).reshape(-1)
        if a.size and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n):
            raise ContractError(f"edge endpoint outside 0..{n - 1}")
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keep = lo != hi
        keys = np.unique(lo[keep] * n + hi[keep])
        u, v = keys // n, keys % n

        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        order = np.lexsort((dst, src))
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
        return cls(n, offsets, dst[order], int(distance_evaluations))

    @classmethod
    def complete(cls, n: int) -> "SampledGraph":
        u, v = np.triu_indices(n, k=1)
        return cls.from_edges(n, u, v)

    @property
    def edge_count(self) -> int:
        return int(self.neighbors.size // 2)

    def degree(self) -> np.ndarray:
        return np.diff(self.offsets)

    def adjacency(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]

    def directed_edges(self) -> Tuple[np.ndarray, np.ndarray]:
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.degree())
        return src, self.neighbors

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Undirected edges (u, v) with u < v, sorted lexicographically."""
        src, dst = self.directed_edges()
        upper = src < dst
        return src[upper], dst[upper]

    def subgraph(self, vertices) -> "SampledGraph":
        vertices = np.unique(np.asarray(vertices, dtype=np.int64))
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[vertices] = np.arange(vertices.size)
        u, v = self.edges()
        keep = (remap[u] >= 0) & (remap[v] >= 0)
        return SampledGraph.from_edges(vertices.size, remap[u[keep]], remap[v[keep]])

    def adjacency_bytes(self) -> int:
        return int(self.offsets.nbytes + self.neighbors.nbytes)

    def write_edge_list(self, path: str) -> None:
        u, v = self.edges()
        with open(path, "w", encoding="utf-8") as f:
            f.write("".join(f"{a} {b}\n" for a, b in zip(u.tolist(), v.tolist())))


class UnionFind:
    """
    Disjoint sets over 0..n-1. Roots are always linked under the smaller index,
    so the root of every set is its smallest member.
    """

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = int(parent[x])
        return int(x)

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        lo, hi = min(ra, rb), max(ra, rb)
        self.parent[hi] = lo
        return True

    def roots(self) -> np.ndarray:
        self._compress()
        return self.parent.copy()

    @property
    def n_sets(self) -> int:
        return int(np.count_nonzero(self.parent == np.arange(self.parent.size)))

    def union_edges(self, a, b) -> None:
        """Unions every pair (a[i], b[i]) in vectorised hooking rounds."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        while a.size:
            self._compress()
            ra = self.parent[a]
            rb = self.parent[b]
            differ = ra != rb
            if not differ.any():
                break
            a, b, ra, rb = a[differ], b[differ], ra[differ], rb[differ]
            np.minimum.at(self.parent, np.maximum(ra, rb), np.minimum(ra, rb))

    def _compress(self) -> None:
        while True:
            grand = self.parent[self.parent]
            if np.array_equal(grand, self.parent):
                return
            self.parent = grand


def check_eps(eps: float) -> float:
    if isinstance(eps, bool):
        raise ParameterError(f"eps must be a positive real, got {eps!r}")
    try:
        eps = float(eps)
    except (TypeError, ValueError):
        raise ParameterError(f"eps must be a positive real, got {eps!r}")
    if not (eps > 0.0 and math.isfinite(eps)):
        raise ParameterError(f"eps must be a positive real, got {eps}")
    return eps


def check_rate(s: float) -> float:
    if isinstance(s, bool):
        raise ParameterError(f"rate must lie in (0, 1], got {s!r}")
    try:
        s = float(s)
    except (TypeError, ValueError):
        raise ParameterError(f"rate must lie in (0, 1], got {s!r}")
    if not 0.0 < s <= 1.0:
        raise ParameterError(f"rate must lie in (0, 1], got {s}")
    return s


def partners_per_vertex(n: int, s: float) -> int:
    """⌈s·n⌉ capped at n - 1."""
    return min(int(math.ceil(s * n)), n - 1)


def edge_inclusion_rate(n: int, s: float) -> float:
    """Probability that a given ε-edge survives sampling from either endpoint."""
    if n < 2:
        return 0.0
    q = partners_per_vertex(n, s) / (n - 1)
    return 1.0 - (1.0 - q) ** 2


def _full_block(points, lo, hi, eps, dist):
    d = dist.pairwise(points[lo:hi], points)
    rows, cols = np.nonzero(d <= eps)
    rows = rows + lo
    upper = cols > rows
    return rows[upper], cols[upper]


def build_full_graph(
    data: Dataset, eps: float, dist: DistanceSpec = DistanceSpec(), n_jobs: Optional[int] = None
) -> SampledGraph:
    """Exact ε-neighborhood graph by all-pairs thresholding."""
    eps = check_eps(eps)
    points = data.points
    dist.check(points)
    n = points.shape[0]
    start = time.time()

    block = max(1, _BLOCK_CELLS // n)
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_full_block)(points, lo, min(lo + block, n), eps, dist)
        for lo in range(0, n, block)
    )
    u = np.concatenate([r[0] for r in results]) if results else np.empty(0, np.int64)
    v = np.concatenate([r[1] for r in results]) if results else np.empty(0, np.int64)
    graph = SampledGraph.from_edges(n, u, v, distance_evaluations=n * (n - 1))
    logger.debug(
        "Built full graph: n=%d, edges=%d [took %.3f s]", n, graph.edge_count, time.time() - start
    )
    return graph


def _sample_block(points, lo, hi, m, eps, dist, seed):
    n = points.shape[0]
    src_parts, dst_parts = [], []
    evaluations = 0
    for x in range(lo, hi):
        rng = substream(seed, x, DOMAIN_GRAPH)
        draws = rng.choice(n - 1, size=m, replace=False)
        partners = draws + (draws >= x)
        d = dist.pairwise(points[x : x + 1], points[partners])[0]
        evaluations += partners.size
        hit = partners[d <= eps]
        if hit.size:
            src_parts.append(np.full(hit.size, x, dtype=np.int64))
            dst_parts.append(hit.astype(np.int64))
    if not src_parts:
        return np.empty(0, np.int64), np.empty(0, np.int64), evaluations
    return np.concatenate(src_parts), np.concatenate(dst_parts), evaluations


def build_sampled_graph(
    data: Dataset,
    eps: float,
    s: float,
    dist: DistanceSpec = DistanceSpec(),
    seed: int = 0,
    n_jobs: Optional[int] = None,
) -> SampledGraph:
    """
    Every vertex x draws ⌈s·n⌉ distinct partners (never itself, at most n - 1)
    from its own counter-based stream of `seed`; {x, y} becomes an edge when
    d(x, y) <= eps. With s = 1 this is the exact ε-neighborhood graph.
    """
    eps = check_eps(eps)
    s = check_rate(s)
    points = data.points
    dist.check(points)
    n = points.shape[0]
    m = partners_per_vertex(n, s)
    if m >= n - 1:
        return build_full_graph(data, eps, dist, n_jobs=n_jobs)

    start = time.time()
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_sample_block)(points, lo, min(lo + _SAMPLE_BLOCK, n), m, eps, dist, seed)
        for lo in range(0, n, _SAMPLE_BLOCK)
    )
    u = np.concatenate([r[0] for r in results])
    v = np.concatenate([r[1] for r in results])
    evaluations = sum(r[2] for r in results)
    graph = SampledGraph.from_edges(n, u, v, distance_evaluations=evaluations)
    logger.debug(
        "Built sampled graph: n=%d, partners=%d, edges=%d [took %.3f s]",
        n,
        m,
        graph.edge_count,
        time.time() - start,
    )
    return graph


def _active_mask(n: int, active) -> np.ndarray:
    if active is None:
        return np.ones(n, dtype=bool)
    active = np.asarray(active)
    if active.dtype == bool:
        if active.shape != (n,):
            raise ContractError(f"active mask has shape {active.shape}, expected ({n},)")
        return active
    mask = np.zeros(n, dtype=bool)
    if active.size and (active.min() < 0 or active.max() >= n):
        raise ContractError(f"active vertex outside 0..{n - 1}")
    mask[active.astype(np.int64)] = True
    return mask


def connected_components(g: SampledGraph, active=None) -> np.ndarray:
    """
    Component id per active vertex (-1 for inactive ones). Two active vertices
    share an id iff a path of active vertices joins them; ids are numbered in
    order of each component's smallest vertex.
    """
    mask = _active_mask(g.n, active)
    u, v = g.edges()
    keep = mask[u] & mask[v]
    sets = UnionFind(g.n)
    sets.union_edges(u[keep], v[keep])

    labels = np.full(g.n, -1, dtype=np.int64)
    if mask.any():
        _, inverse = np.unique(sets.roots()[mask], return_inverse=True)
        labels[mask] = inverse
    return labels


def is_connected(g: SampledGraph) -> bool:
    return g.n <= 1 or int(connected_components(g).max()) == 0


def _stoer_wagner(weights: np.ndarray) -> int:
    w = np.array(weights, dtype=np.int64, copy=True)
    n = w.shape[0]
    alive = np.ones(n, dtype=bool)
    best = None
    for _ in range(n - 1):
        vertices = np.flatnonzero(alive)
        start = vertices[0]
        in_a = ~alive
        in_a[start] = True
        key = w[start].copy()
        prev = last = start
        cut_of_phase = 0
        # maximum adjacency ordering; ties go to the smallest index
        for _ in range(vertices.size - 1):
            nxt = int(np.argmax(np.where(in_a, -1, key)))
            cut_of_phase = int(key[nxt])
            in_a[nxt] = True
            key += w[nxt]
            prev, last = last, nxt
        if best is None or cut_of_phase < best:
            best = cut_of_phase
        if best == 0:
            break
        w[prev] += w[last]
        w[:, prev] += w[:, last]
        w[prev, prev] = 0
        w[last] = 0
        w[:, last] = 0
        alive[last] = False
    return int(best)


def min_cut(g: SampledGraph) -> int:
    """Global min-cut (Stoer-Wagner); 0 for a disconnected graph."""
    if g.n < 2:
        raise ContractError(f"min-cut needs at least 2 vertices, got {g.n}")
    if not is_connected(g):
        return 0
    weights = np.zeros((g.n, g.n), dtype=np.int64)
    src, dst = g.directed_edges()
    weights[src, dst] = 1
    return _stoer_wagner(weights)
