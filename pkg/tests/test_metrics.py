import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from sklearn.metrics import adjusted_mutual_info_score, adjusted_rand_score

from sng_dbscan.dataset_io import NOISE, Clustering, Role
from sng_dbscan.errors import ContractError, ParameterError
from sng_dbscan.graph_core import DistanceSpec
from sng_dbscan.metrics import (
    ContingencyTable,
    ami,
    ari,
    contingency,
    expected_mutual_information,
    hausdorff,
    mutual_information,
    score,
)

PRED = [0, 0, 1, 1, 1, 1]
TRUTH = [0, 0, 0, 1, 1, 1]


def brute_force_ari(pred, truth):
    n = len(pred)
    index = sum_a = sum_b = 0
    for i, j in itertools.combinations(range(n), 2):
        same_a = pred[i] == pred[j]
        same_b = truth[i] == truth[j]
        sum_a += same_a
        sum_b += same_b
        index += same_a and same_b
    total = math.comb(n, 2)
    expected = Fraction(sum_a * sum_b, total)
    maximum = Fraction(sum_a + sum_b, 2)
    if maximum == expected:
        return 1.0 if index == expected else 0.0
    return float((index - expected) / (maximum - expected))


def exact_emi(table):
    n = table.n
    emi = 0.0
    for ai in table.row_sums.tolist():
        for bj in table.col_sums.tolist():
            for nij in range(max(1, ai + bj - n), min(ai, bj) + 1):
                p = Fraction(math.comb(ai, nij) * math.comb(n - ai, bj - nij), math.comb(n, bj))
                emi += float(p) * nij / n * math.log(n * nij / (ai * bj))
    return emi


def test_contingency_identical_is_diagonal():
    t = contingency([0, 0, 1, 1], [0, 0, 1, 1])
    np.testing.assert_array_equal(t.counts, [[2, 0], [0, 2]])
    assert t.n == 4


def test_contingency_noise_own_cluster():
    t = contingency([0, NOISE], [0, 1], "own-cluster")
    np.testing.assert_array_equal(t.counts, [[1, 0], [0, 1]])


def test_contingency_noise_excluded():
    t = contingency([0, NOISE], [0, 1], "exclude")
    np.testing.assert_array_equal(t.counts, [[1]])


def test_contingency_all_noise_is_one_cluster():
    t = contingency([NOISE, NOISE, NOISE], [0, 1, 1])
    np.testing.assert_array_equal(t.counts, [[1, 2]])


def test_contingency_accepts_clustering():
    c = Clustering(np.array([0, 0, NOISE]), np.array([Role.CORE, Role.BORDER, Role.NOISE]))
    t = contingency(c, [1, 1, 0])
    np.testing.assert_array_equal(t.counts, [[0, 2], [1, 0]])
    pred, truth = t.labels()
    np.testing.assert_array_equal(contingency(pred, truth).counts, t.counts)


def test_contingency_errors():
    with pytest.raises(ContractError):
        contingency([0, 1], [0, 1, 1])
    with pytest.raises(ContractError):
        contingency([0, 1], [0, -1])
    with pytest.raises(ParameterError):
        contingency([0, 1], [0, 1], "drop")


def test_ari_examples():
    assert ari(contingency([0, 1, 1, 0], [1, 0, 0, 1])) == 1.0
    assert ari(contingency([0, 0, 0, 0], [0, 0, 1, 1])) == 0.0
    assert ari(contingency(PRED, TRUTH)) == pytest.approx(12 / 37, abs=1e-12)


def test_identical_trivial_partitions_score_ari_one_ami_zero():
    t = contingency([0, 0, 0], [5, 5, 5])
    assert ari(t) == 1.0
    assert ami(t) == 0.0
    assert ami(contingency([0], [0])) == 0.0


def test_ari_needs_two_points():
    with pytest.raises(ContractError):
        ari(contingency([0], [0]))


def test_ari_matches_pair_counting(rng):
    for _ in range(200):
        n = int(rng.integers(2, 31))
        pred = rng.integers(0, int(rng.integers(1, 5)), size=n).tolist()
        truth = rng.integers(0, int(rng.integers(1, 5)), size=n).tolist()
        assert ari(contingency(pred, truth)) == pytest.approx(brute_force_ari(pred, truth), abs=1e-10)


def test_ami_examples():
    assert ami(contingency([0, 0, 1, 1, 2], [3, 3, 1, 1, 0])) == pytest.approx(1.0)
    assert ami(contingency([0] * 6, TRUTH)) == 0.0
    t = contingency(PRED, TRUTH)
    assert expected_mutual_information(t) == pytest.approx(exact_emi(t), rel=1e-10)


def test_expected_mutual_information_matches_direct_sum(rng):
    for _ in range(20):
        n = int(rng.integers(5, 40))
        t = contingency(rng.integers(0, 4, size=n), rng.integers(0, 3, size=n))
        assert expected_mutual_information(t) == pytest.approx(exact_emi(t), rel=1e-9, abs=1e-12)


def test_scores_match_sklearn(rng):
    for _ in range(20):
        n = int(rng.integers(10, 200))
        pred = rng.integers(0, 5, size=n)
        truth = rng.integers(0, 4, size=n)
        if np.unique(pred).size < 2 or np.unique(truth).size < 2:
            continue
        t = contingency(pred, truth)
        assert ari(t) == pytest.approx(adjusted_rand_score(truth, pred), abs=1e-10)
        expected = adjusted_mutual_info_score(truth, pred, average_method="arithmetic")
        assert ami(t) == pytest.approx(expected, abs=1e-8)


def test_scores_are_symmetric_and_relabel_invariant(rng):
    pred = rng.integers(0, 4, size=80)
    truth = rng.integers(0, 3, size=80)
    base = score(pred, truth)
    swapped = score(truth, pred)
    relabelled = score(np.array([7, 2, 9, 4])[pred], np.array([1, 0, 5])[truth])
    for name in ("ari", "ami"):
        assert swapped[name] == pytest.approx(base[name], abs=1e-12)
        assert relabelled[name] == pytest.approx(base[name], abs=1e-12)


def test_mutual_information_of_independent_table():
    t = ContingencyTable(np.array([[2, 2], [2, 2]]))
    assert mutual_information(t) == pytest.approx(0.0, abs=1e-12)


def test_score_respects_noise_policy():
    pred = [0, 0, 1, 1, NOISE, NOISE]
    truth = [0, 0, 1, 1, 2, 2]
    assert score(pred, truth, "own-cluster")["ari"] == 1.0
    assert score(pred, truth, "exclude")["ari"] == 1.0
    assert score([NOISE] * 4, [0, 0, 1, 1])["ari"] == 0.0


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ([[0.0], [1.0]], [[0.0], [1.0]], 0.0),
        ([[0.0]], [[3.0]], 3.0),
        ([[0.0], [1.0]], [[0.0], [5.0]], 4.0),
    ],
)
def test_hausdorff_examples(a, b, expected):
    assert hausdorff(a, b) == pytest.approx(expected)
    assert hausdorff(b, a) == pytest.approx(expected)


def test_hausdorff_errors():
    with pytest.raises(ContractError):
        hausdorff(np.empty((0, 2)), [[0.0, 0.0]])
    with pytest.raises(ContractError):
        hausdorff([[0.0, 0.0]], [[0.0, 0.0, 0.0]])


def test_hausdorff_triangle_inequality(rng):
    for _ in range(30):
        a, b, c = (rng.normal(size=(int(rng.integers(1, 20)), 2)) for _ in range(3))
        assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-12


def test_hausdorff_with_manhattan_distance():
    d = hausdorff([[0.0, 0.0]], [[1.0, 2.0]], DistanceSpec.from_name("manhattan"))
    assert d == pytest.approx(3.0)


def exact_ami(table):
    def h(counts):
        n = counts.sum()
        return -sum(c / n * math.log(c / n) for c in counts.tolist() if c)

    n = table.n
    mi = sum(
        c / n * math.log(n * c / (a * b))
        for (i, j), c in np.ndenumerate(table.counts)
        if c
        for a, b in [(table.row_sums[i], table.col_sums[j])]
    )
    emi = exact_emi(table)
    denominator = 0.5 * (h(table.row_sums) + h(table.col_sums)) - emi
    return 0.0 if abs(denominator) < 1e-15 else (mi - emi) / denominator


def test_ami_matches_direct_summation(rng):
    for _ in range(200):
        n = int(rng.integers(1, 31))
        pred = rng.integers(0, int(rng.integers(1, 5)), size=n)
        truth = rng.integers(0, int(rng.integers(1, 5)), size=n)
        t = contingency(pred, truth)
        assert ami(t) == pytest.approx(min(1.0, exact_ami(t)), abs=1e-10)


def test_ami_never_exceeds_one(rng):
    for _ in range(50):
        labels = rng.integers(0, int(rng.integers(2, 6)), size=int(rng.integers(2, 40)))
        assert ami(contingency(labels, labels)) <= 1.0
