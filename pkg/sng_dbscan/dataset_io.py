import csv
import logging
import os
import struct
import time
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Optional

import numpy as np
from filelock import FileLock

from sng_dbscan.errors import (
    ContractError,
    DatasetFormatError,
    EmptyInputError,
    ParameterError,
)

logger = logging.getLogger(__name__)

NOISE = -1

BINARY_MAGIC = b"SNGD"
BINARY_VERSION = 1
_BINARY_HEADER = struct.Struct("<4sBQQ")


class Role(IntEnum):
    NOISE = 0
    BORDER = 1
    CORE = 2


@dataclass(frozen=True)
class Dataset:
    """n x D point matrix with optional ground-truth labels."""

    points: np.ndarray
    truth_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.ascontiguousarray(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ContractError(
                f"points must be an n x D matrix with n, D >= 1, got shape {points.shape}"
            )
        if not np.isfinite(points).all():
            raise ContractError("points contain NaN or infinite values")
        object.__setattr__(self, "points", points)

        if self.truth_labels is not None:
            labels = np.asarray(self.truth_labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != points.shape[0]:
                raise ContractError(
                    f"truth_labels has length {labels.shape[0]}, expected {points.shape[0]}"
                )
            if labels.size and labels.min() < 0:
                raise ContractError("truth_labels must be non-negative")
            object.__setattr__(self, "truth_labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.truth_labels is None else self.truth_labels[indices]
        return Dataset(self.points[indices], labels)


@dataclass(frozen=True)
class Clustering:
    """
    Per-point cluster ids (NOISE for unclustered points) and Core/Border/Noise roles.

    Cluster ids always form the contiguous range 0..k-1.
    """

    assignment: np.ndarray
    role: np.ndarray

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64).reshape(-1)
        role = np.asarray(self.role, dtype=np.int8).reshape(-1)
        if assignment.shape != role.shape:
            raise ContractError(
                f"assignment ({assignment.size}) and role ({role.size}) lengths differ"
            )
        noise = role == Role.NOISE
        if np.any(assignment[noise] != NOISE):
            raise ContractError("noise points must carry the noise sentinel")
        if np.any(assignment[~noise] < 0):
            raise ContractError("core and border points must carry a cluster id")
        if not np.isin(role, [r.value for r in Role]).all():
            raise ContractError("role values must be Core, Border or Noise")
        used = np.unique(assignment[~noise])
        if used.size and (used[0] != 0 or used[-1] != used.size - 1):
            raise ContractError("cluster ids must form a contiguous range 0..k-1")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "role", role)

    @property
    def n(self) -> int:
        return self.assignment.size

    @property
    def n_clusters(self) -> int:
        clustered = self.assignment[self.assignment != NOISE]
        return int(clustered.max()) + 1 if clustered.size else 0

    @property
    def noise_count(self) -> int:
        return int(np.count_nonzero(self.assignment == NOISE))

    @property
    def core_mask(self) -> np.ndarray:
        return self.role == Role.CORE

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster_id)

    def clustered_indices(self) -> np.ndarray:
        return np.flatnonzero(self.assignment != NOISE)


def load_csv(
    path: str, label_column: Optional[int] = None, header: bool = False
) -> Dataset:
    rows: List[List[float]] = []
    labels: List[int] = []
    label_ids: Dict[str, int] = {}
    width = None

    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f)
        for line_no, row in enumerate(reader, start=1):
            if header and line_no == 1:
                continue
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if width is None:
                width = len(row)
                if label_column is not None and not 0 <= label_column < width:
                    raise ParameterError(
                        f"label_column must lie in [0, {width}), got {label_column}"
                    )
                if label_column is not None and width < 2:
                    raise DatasetFormatError(
                        "a label column needs at least one feature column", line_no
                    )
            elif len(row) != width:
                raise DatasetFormatError(
                    f"ragged row: expected {width} columns, got {len(row)}", line_no
                )

            values = []
            for j, cell in enumerate(row):
                if j == label_column:
                    key = cell.strip()
                    labels.append(label_ids.setdefault(key, len(label_ids)))
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise DatasetFormatError(
                        f"non-numeric value {cell.strip()!r} in column {j}", line_no
                    )
                if not np.isfinite(value):
                    raise DatasetFormatError(
                        f"non-finite value {cell.strip()!r} in column {j}", line_no
                    )
                values.append(value)
            rows.append(values)

    if not rows:
        raise EmptyInputError(f"{path} contains no data rows")

    truth = np.asarray(labels, dtype=np.int64) if label_column is not None else None
    return Dataset(np.asarray(rows, dtype=np.float64), truth)


def save_csv(dataset: Dataset, path: str) -> None:
    """Writes points with 17 significant digits; truth labels become the last column."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        for i in range(dataset.n):
            cells = ["%.17g" % v for v in dataset.points[i].tolist()]
            if dataset.truth_labels is not None:
                cells.append(str(int(dataset.truth_labels[i])))
            f.write(",".join(cells) + "\n")


def save_binary(dataset: Dataset, path: str) -> None:
    with open(path, "wb") as f:
        f.write(_BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, dataset.n, dataset.dim))
        f.write(dataset.points.astype("<f8", copy=False).tobytes(order="C"))


def load_binary(path: str) -> Dataset:
    with open(path, "rb") as f:
        head = f.read(_BINARY_HEADER.size)
        if len(head) < _BINARY_HEADER.size:
            raise EmptyInputError(f"{path} is too short for an SNGD header")
        magic, version, n, dim = _BINARY_HEADER.unpack(head)
        if magic != BINARY_MAGIC:
            raise DatasetFormatError(f"{path} does not start with the SNGD magic bytes")
        if version != BINARY_VERSION:
            raise DatasetFormatError(f"unsupported SNGD version {version}")
        if n == 0 or dim == 0:
            raise EmptyInputError(f"{path} holds an empty {n} x {dim} matrix")
        payload = f.read()

    expected = n * dim * 8
    if len(payload) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} payload bytes for {n} x {dim}, got {len(payload)}"
        )
    points = np.frombuffer(payload, dtype="<f8").reshape(n, dim).astype(np.float64)
    return Dataset(points)


def is_binary(path: str) -> bool:
    with open(path, "rb") as f:
        return f.read(len(BINARY_MAGIC)) == BINARY_MAGIC


def load_dataset(
    path: str,
    label_column: Optional[int] = None,
    header: bool = False,
    cache_dir: Optional[str] = None,
    overwrite_cache: bool = False,
) -> Dataset:
    """
    Loads an SNGD or CSV file. CSV inputs are cached as SNGD (plus a label
    sidecar) under `cache_dir` so repeated benchmark runs skip parsing.
    """
    if is_binary(path):
        return load_binary(path)
    if cache_dir is None:
        return load_csv(path, label_column=label_column, header=header)

    os.makedirs(cache_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(path))[0]
    cached_file = os.path.join(
        cache_dir, f"cached_{stem}_label{label_column}_header{int(header)}.sngd"
    )
    cached_labels = cached_file + ".labels"

    with FileLock(cached_file + ".lock"):
        fresh = (
            os.path.exists(cached_file)
            and os.path.getmtime(cached_file) >= os.path.getmtime(path)
            and (label_column is None or os.path.exists(cached_labels))
        )
        if fresh and not overwrite_cache:
            start = time.time()
            dataset = load_binary(cached_file)
            if label_column is not None:
                dataset = Dataset(dataset.points, load_labels(cached_labels))
            logger.info(
                f"Loading points from cached file {cached_file} [took %.3f s]",
                time.time() - start,
            )
            return dataset

        logger.info(f"No cache file. Parsing {path}")
        dataset = load_csv(path, label_column=label_column, header=header)
        start = time.time()
        save_binary(dataset, cached_file)
        if dataset.truth_labels is not None:
            save_labels(dataset.truth_labels, cached_labels)
        logger.info(
            f"Saving points into cached file {cached_file} [took {time.time() - start:.3f} s]"
        )
        return dataset


def save_labels(labels, path: str) -> None:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("".join(f"{v}\n" for v in labels.tolist()))


def save_clustering(clustering: Clustering, path: str) -> None:
    """One line per point: the cluster id, or -1 for noise."""
    save_labels(clustering.assignment, path)


def load_labels(path: str) -> np.ndarray:
    labels = []
    with open(path, "r", encoding="utf-8-sig") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if text == "":
                continue
            try:
                labels.append(int(text))
            except ValueError:
                raise DatasetFormatError(f"expected an integer label, got {text!r}", line_no)
    if not labels:
        raise EmptyInputError(f"{path} contains no labels")
    return np.asarray(labels, dtype=np.int64)


def load_clustering(path: str) -> np.ndarray:
    """Reads a labels file written by save_clustering; noise stays -1."""
    labels = load_labels(path)
    if labels.min() < NOISE:
        raise DatasetFormatError(f"{path}: labels below {NOISE} are not valid cluster ids")
    return labels
