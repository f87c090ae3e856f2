import os
import struct

import numpy as np
import pytest

from sng_dbscan.dataset_io import (
    NOISE,
    Clustering,
    Dataset,
    Role,
    is_binary,
    load_binary,
    load_clustering,
    load_csv,
    load_dataset,
    load_labels,
    save_binary,
    save_clustering,
    save_csv,
)
from sng_dbscan.errors import ContractError, DatasetFormatError, EmptyInputError


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_csv_reads_points(tmp_path):
    data = load_csv(write(tmp_path, "a.csv", "0,0\n1,0\n"))
    assert data.n == 2
    assert data.dim == 2
    assert data.truth_labels is None
    np.testing.assert_array_equal(data.points, [[0.0, 0.0], [1.0, 0.0]])


def test_load_csv_maps_labels_in_first_appearance_order(tmp_path):
    data = load_csv(write(tmp_path, "a.csv", "0,0,a\n1,0,b\n1,1,a\n"), label_column=2)
    np.testing.assert_array_equal(data.truth_labels, [0, 1, 0])
    assert data.dim == 2


def test_label_mapping_follows_row_permutation(tmp_path):
    rows = ["0,0,x", "1,0,y", "2,0,z", "3,0,x"]
    a = load_csv(write(tmp_path, "a.csv", "\n".join(rows) + "\n"), label_column=2)
    b = load_csv(write(tmp_path, "b.csv", "\n".join(reversed(rows)) + "\n"), label_column=2)
    # same partition, possibly different ids
    pairs = {(int(x), int(y)) for x, y in zip(a.truth_labels, b.truth_labels[::-1])}
    assert len(pairs) == len(set(a.truth_labels.tolist()))


def test_load_csv_reports_ragged_row_line(tmp_path):
    with pytest.raises(DatasetFormatError) as info:
        load_csv(write(tmp_path, "a.csv", "0,0\n1\n"))
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_load_csv_rejects_non_numeric_cell(tmp_path):
    with pytest.raises(DatasetFormatError) as info:
        load_csv(write(tmp_path, "a.csv", "0,0\n1,abc\n"))
    assert info.value.line == 2


def test_load_csv_rejects_empty_file(tmp_path):
    with pytest.raises(EmptyInputError):
        load_csv(write(tmp_path, "a.csv", ""))


def test_load_csv_skips_header(tmp_path):
    data = load_csv(write(tmp_path, "a.csv", "x,y\n0,1\n"), header=True)
    np.testing.assert_array_equal(data.points, [[0.0, 1.0]])


def test_csv_round_trip_is_exact(tmp_path, rng):
    original = Dataset(rng.normal(size=(20, 3)), rng.integers(0, 4, size=20))
    path = str(tmp_path / "a.csv")
    save_csv(original, path)
    loaded = load_csv(path, label_column=3)
    np.testing.assert_array_equal(loaded.points, original.points)
    # ids are remapped by first appearance, the partition is unchanged
    _, expected = np.unique(original.truth_labels, return_inverse=True)
    assert len(set(zip(expected.tolist(), loaded.truth_labels.tolist()))) == len(set(expected))


def test_binary_layout_is_bit_exact(tmp_path):
    data = Dataset(np.array([[1.0, 2.0], [3.0, 4.5]]))
    path = str(tmp_path / "a.sngd")
    save_binary(data, path)
    raw = open(path, "rb").read()
    assert raw[:4] == b"SNGD"
    assert raw[4] == 1
    assert struct.unpack("<QQ", raw[5:21]) == (2, 2)
    assert struct.unpack("<4d", raw[21:]) == (1.0, 2.0, 3.0, 4.5)
    assert is_binary(path)
    np.testing.assert_array_equal(load_binary(path).points, data.points)


def test_load_binary_rejects_truncated_payload(tmp_path):
    path = str(tmp_path / "a.sngd")
    save_binary(Dataset(np.ones((3, 2))), path)
    with open(path, "r+b") as f:
        f.truncate(os.path.getsize(path) - 8)
    with pytest.raises(DatasetFormatError):
        load_binary(path)


def test_load_dataset_caches_csv(tmp_path):
    path = write(tmp_path, "pts.csv", "0,0,a\n1,0,b\n")
    cache_dir = str(tmp_path / "cache")
    first = load_dataset(path, label_column=2, cache_dir=cache_dir)
    cached = [f for f in os.listdir(cache_dir) if f.endswith(".sngd")]
    assert cached == ["cached_pts_label2_header0.sngd"]
    second = load_dataset(path, label_column=2, cache_dir=cache_dir)
    np.testing.assert_array_equal(first.points, second.points)
    np.testing.assert_array_equal(second.truth_labels, [0, 1])


@pytest.mark.parametrize(
    "assignment, role, expected",
    [
        ([0, 0, NOISE], [Role.CORE, Role.BORDER, Role.NOISE], "0\n0\n-1\n"),
        ([NOISE], [Role.NOISE], "-1\n"),
        ([1, 0], [Role.CORE, Role.CORE], "1\n0\n"),
    ],
)
def test_save_clustering_format(tmp_path, assignment, role, expected):
    path = tmp_path / "labels"
    clustering = Clustering(np.array(assignment), np.array(role))
    save_clustering(clustering, str(path))
    assert path.read_text(encoding="utf-8") == expected
    np.testing.assert_array_equal(load_clustering(str(path)), assignment)


def test_load_labels_reports_bad_line(tmp_path):
    with pytest.raises(DatasetFormatError) as info:
        load_labels(write(tmp_path, "l", "0\n1\nx\n"))
    assert info.value.line == 3


def test_dataset_rejects_non_finite_values():
    with pytest.raises(ContractError):
        Dataset(np.array([[0.0, np.nan]]))


def test_dataset_rejects_wrong_label_length():
    with pytest.raises(ContractError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]))


def test_clustering_requires_noise_sentinel():
    with pytest.raises(ContractError):
        Clustering(np.array([0, 0]), np.array([Role.CORE, Role.NOISE]))


def test_clustering_requires_contiguous_ids():
    with pytest.raises(ContractError):
        Clustering(np.array([0, 2]), np.array([Role.CORE, Role.CORE]))


def test_clustering_summary():
    c = Clustering(np.array([1, 0, NOISE, 1]), np.array([2, 2, 0, 1]))
    assert c.n_clusters == 2
    assert c.noise_count == 1
    np.testing.assert_array_equal(c.members(1), [0, 3])
    np.testing.assert_array_equal(c.clustered_indices(), [0, 1, 3])
