import logging
import math
import numbers
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sng_dbscan.dataset_io import NOISE, Clustering, Dataset, Role
from sng_dbscan.errors import ParameterError
from sng_dbscan.graph_core import (
    DistanceSpec,
    SampledGraph,
    build_full_graph,
    build_sampled_graph,
    check_eps,
    check_rate,
    connected_components,
)

logger = logging.getLogger(__name__)


def check_min_pts(min_pts) -> int:
    if isinstance(min_pts, bool) or not isinstance(min_pts, numbers.Integral):
        if isinstance(min_pts, float) and min_pts.is_integer():
            min_pts = int(min_pts)
        else:
            raise ParameterError(f"min_pts must be a positive integer, got {min_pts!r}")
    if min_pts < 1:
        raise ParameterError(f"min_pts must be a positive integer, got {min_pts}")
    return int(min_pts)


@dataclass(frozen=True)
class SngParams:
    eps: float = field(metadata={"help": "Neighborhood radius ε."})
    min_pts: int = field(metadata={"help": "Degree threshold for core points."})
    rate: float = field(default=1.0, metadata={"help": "Sampling rate s in (0, 1]."})
    seed: int = field(default=0, metadata={"help": "Seed of the per-vertex substreams."})
    dist: DistanceSpec = field(
        default_factory=DistanceSpec, metadata={"help": "Distance used for ε-edges."}
    )

    def __post_init__(self):
        object.__setattr__(self, "eps", check_eps(self.eps))
        object.__setattr__(self, "min_pts", check_min_pts(self.min_pts))
        object.__setattr__(self, "rate", check_rate(self.rate))
        object.__setattr__(self, "seed", int(self.seed))
        if isinstance(self.dist, str):
            object.__setattr__(self, "dist", DistanceSpec.from_name(self.dist))


def scale_min_pts(min_pts: int, rate: float) -> int:
    """max(2, ⌊min_pts·s⌋): carries a full-graph MinPts over to rate s."""
    return max(2, int(math.floor(check_min_pts(min_pts) * check_rate(rate))))


def _relabel_by_first_member(assignment: np.ndarray) -> np.ndarray:
    clustered = np.flatnonzero(assignment != NOISE)
    if clustered.size == 0:
        return assignment
    ids, first = np.unique(assignment[clustered], return_index=True)
    rank = np.empty(ids.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(ids.size)
    lookup = np.full(int(ids.max()) + 1, NOISE, dtype=np.int64)
    lookup[ids] = rank
    relabelled = assignment.copy()
    relabelled[clustered] = lookup[assignment[clustered]]
    return relabelled


def cluster_graph(g: SampledGraph, min_pts: int) -> Clustering:
    """
    DBSCAN on a given neighborhood graph.

    Vertices of degree >= min_pts are Core; components of the core-induced
    subgraph are the clusters. A non-core vertex with at least one core
    neighbor becomes Border and joins the cluster whose smallest core vertex
    has the lowest index. Everything else is Noise. Ids are finally renumbered
    by each cluster's smallest member.
    """
    min_pts = check_min_pts(min_pts)
    core = g.degree() >= min_pts
    components = connected_components(g, core)

    assignment = np.full(g.n, NOISE, dtype=np.int64)
    assignment[core] = components[core]
    role = np.full(g.n, Role.NOISE, dtype=np.int8)
    role[core] = Role.CORE

    src, dst = g.directed_edges()
    attach = ~core[src] & core[dst]
    if attach.any():
        unset = np.iinfo(np.int64).max
        best = np.full(g.n, unset, dtype=np.int64)
        np.minimum.at(best, src[attach], components[dst[attach]])
        border = best != unset
        assignment[border] = best[border]
        role[border] = Role.BORDER

    return Clustering(_relabel_by_first_member(assignment), role)


@dataclass(frozen=True)
class ClusterRun:
    """A clustering together with the graph it came from and the run's wall time."""

    clustering: Clustering
    graph: SampledGraph
    wall_ms: float

    @property
    def n(self) -> int:
        return self.clustering.n

    @property
    def edge_count(self) -> int:
        return self.graph.edge_count

    @property
    def distance_evaluations(self) -> int:
        return self.graph.distance_evaluations

    @property
    def adjacency_bytes(self) -> int:
        return self.graph.adjacency_bytes()


def _run(g: SampledGraph, min_pts: int, start: float) -> ClusterRun:
    clustering = cluster_graph(g, min_pts)
    return ClusterRun(clustering=clustering, graph=g, wall_ms=(time.time() - start) * 1000.0)


def run_sng_dbscan(data: Dataset, p: SngParams, n_jobs: Optional[int] = None) -> ClusterRun:
    start = time.time()
    g = build_sampled_graph(data, p.eps, p.rate, p.dist, seed=p.seed, n_jobs=n_jobs)
    run = _run(g, p.min_pts, start)
    logger.info(
        "SNG-DBSCAN n=%d rate=%g: %d clusters, %d noise, %d edges [took %.3f s]",
        data.n,
        p.rate,
        run.clustering.n_clusters,
        run.clustering.noise_count,
        run.edge_count,
        run.wall_ms / 1000.0,
    )
    return run


def run_dbscan_exact(
    data: Dataset,
    eps: float,
    min_pts: int,
    dist: DistanceSpec = DistanceSpec(),
    n_jobs: Optional[int] = None,
) -> ClusterRun:
    start = time.time()
    min_pts = check_min_pts(min_pts)
    g = build_full_graph(data, eps, dist, n_jobs=n_jobs)
    run = _run(g, min_pts, start)
    logger.info(
        "DBSCAN n=%d: %d clusters, %d noise, %d edges [took %.3f s]",
        data.n,
        run.clustering.n_clusters,
        run.clustering.noise_count,
        run.edge_count,
        run.wall_ms / 1000.0,
    )
    return run


def sng_dbscan(data: Dataset, p: SngParams, n_jobs: Optional[int] = None) -> Clustering:
    return run_sng_dbscan(data, p, n_jobs=n_jobs).clustering


def dbscan_exact(
    data: Dataset,
    eps: float,
    min_pts: int,
    dist: DistanceSpec = DistanceSpec(),
    n_jobs: Optional[int] = None,
) -> Clustering:
    return run_dbscan_exact(data, eps, min_pts, dist, n_jobs=n_jobs).clustering
