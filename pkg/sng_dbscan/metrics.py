from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple, Union

import numpy as np
from scipy.stats import entropy as shannon_entropy
from scipy.stats import hypergeom
from sklearn.metrics.cluster import adjusted_rand_score, contingency_matrix, mutual_info_score

from sng_dbscan.dataset_io import NOISE, Clustering
from sng_dbscan.errors import ContractError, ParameterError
from sng_dbscan.graph_core import DistanceSpec

_BLOCK_CELLS = 1 << 22


class NoisePolicy(str, Enum):
    OWN_CLUSTER = "own-cluster"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class ContingencyTable:
    """k_pred x k_true co-occurrence counts n_ij."""

    counts: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def labels(self) -> Tuple[np.ndarray, np.ndarray]:
        """(pred, truth) label vectors, row and column indices, that reproduce the table."""
        rows, cols = np.nonzero(self.counts)
        repeats = self.counts[rows, cols]
        return np.repeat(rows, repeats), np.repeat(cols, repeats)


def _policy(noise_policy) -> NoisePolicy:
    try:
        return NoisePolicy(noise_policy)
    except ValueError:
        valid = ", ".join(p.value for p in NoisePolicy)
        raise ParameterError(f"unknown noise policy {noise_policy!r}; expected one of {valid}")


def contingency(
    pred: Union[Clustering, np.ndarray],
    truth,
    noise_policy: Union[str, NoisePolicy] = NoisePolicy.OWN_CLUSTER,
) -> ContingencyTable:
    """
    Co-occurrence counts of predicted and true labels. Predicted noise (-1)
    either forms one extra predicted cluster or is dropped from both vectors.
    """
    policy = _policy(noise_policy)
    pred = pred.assignment if isinstance(pred, Clustering) else np.asarray(pred)
    pred = pred.astype(np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractError(f"label vectors differ in length: {pred.size} vs {truth.size}")
    if truth.size and truth.min() < 0:
        raise ContractError("truth labels must be non-negative")
    if pred.size and pred.min() < NOISE:
        raise ContractError(f"predicted labels below {NOISE} are not valid cluster ids")

    noise = pred == NOISE
    if policy == NoisePolicy.EXCLUDE:
        pred, truth = pred[~noise], truth[~noise]
    elif noise.any():
        pred = pred.copy()
        pred[noise] = pred.max() + 1 if (~noise).any() else 0

    if pred.size == 0:
        return ContingencyTable(np.zeros((0, 0), dtype=np.int64))
    # rows follow the sorted predicted ids, columns the sorted true ids
    return ContingencyTable(np.asarray(contingency_matrix(pred, truth), dtype=np.int64))


def ari(t: ContingencyTable) -> float:
    """Hubert-Arabie adjusted Rand index; 1.0 when both partitions agree on every pair."""
    if t.n < 2:
        raise ContractError(f"ARI needs at least 2 points, got {t.n}")
    pred, truth = t.labels()
    return float(adjusted_rand_score(truth, pred))


def entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() <= 0:
        return 0.0
    return float(shannon_entropy(counts))


def mutual_information(t: ContingencyTable) -> float:
    if t.n == 0:
        return 0.0
    return float(mutual_info_score(None, None, contingency=t.counts))


def expected_mutual_information(t: ContingencyTable) -> float:
    """E[MI] under the hypergeometric model with the table's margins fixed."""
    n = t.n
    if n == 0:
        return 0.0
    emi = 0.0
    for ai in t.row_sums.tolist():
        for bj in t.col_sums.tolist():
            nij = np.arange(max(1, ai + bj - n), min(ai, bj) + 1, dtype=np.float64)
            if nij.size == 0:
                continue
            term = (nij / n) * np.log(n * nij / (ai * bj))
            emi += float((term * hypergeom.pmf(nij, n, ai, bj)).sum())
    return emi


def ami(t: ContingencyTable) -> float:
    """
    Adjusted mutual information with the arithmetic-mean normalizer; 0.0 when
    the normalizer equals E[MI] (both partitions trivial).
    """
    if t.n < 1:
        raise ContractError("AMI needs at least 1 point")
    emi = expected_mutual_information(t)
    denominator = 0.5 * (entropy(t.row_sums) + entropy(t.col_sums)) - emi
    if abs(denominator) <= np.finfo(np.float64).eps:
        return 0.0
    return min(1.0, float((mutual_information(t) - emi) / denominator))


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("Hausdorff distance needs two non-empty point sets")
    return x


def hausdorff(a, b, dist: DistanceSpec = DistanceSpec()) -> float:
    a = _as_points(a)
    b = _as_points(b)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"point sets differ in dimension: {a.shape[1]} vs {b.shape[1]}")

    block = max(1, _BLOCK_CELLS // b.shape[0])
    a_to_b = 0.0
    b_to_a = np.full(b.shape[0], np.inf)
    for lo in range(0, a.shape[0], block):
        d = dist.pairwise(a[lo : lo + block], b)
        a_to_b = max(a_to_b, float(d.min(axis=1).max()))
        np.minimum(b_to_a, d.min(axis=0), out=b_to_a)
    return max(a_to_b, float(b_to_a.max()))


def score(pred, truth, noise_policy=NoisePolicy.OWN_CLUSTER) -> Dict[str, float]:
    t = contingency(pred, truth, noise_policy)
    return {"ari": ari(t), "ami": ami(t)}
