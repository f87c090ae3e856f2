from sng_dbscan.clusterer import SngParams, dbscan_exact, run_sng_dbscan, sng_dbscan
from sng_dbscan.dataset_io import NOISE, Clustering, Dataset, Role
from sng_dbscan.graph_core import DistanceSpec, SampledGraph
from sng_dbscan.metrics import ami, ari, contingency, hausdorff

__all__ = [
    "NOISE",
    "Clustering",
    "Dataset",
    "DistanceSpec",
    "Role",
    "SampledGraph",
    "SngParams",
    "ami",
    "ari",
    "contingency",
    "dbscan_exact",
    "hausdorff",
    "run_sng_dbscan",
    "sng_dbscan",
]
