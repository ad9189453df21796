import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avterrain.evaluation import (apply_mapping, classification_report, contingency_table,
                                  map_clusters_to_classes, nmi)

from oracles import best_permutation_matches, nmi_definition


def test_nmi_identical_and_renamed():
    assert nmi([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert nmi([5, 5, 2, 2], [0, 0, 1, 1]) == pytest.approx(1.0, abs=1e-12)


def test_nmi_constant_vs_balanced():
    assert nmi([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0
    assert nmi([0, 0, 1, 1], [3, 3, 3, 3]) == 0.0
    assert nmi([1, 1, 1], [2, 2, 2]) == 1.0


def test_nmi_matches_definition_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 80))
        p = rng.integers(0, int(rng.integers(1, 6)), n)
        t = rng.integers(0, int(rng.integers(1, 6)), n)
        assert nmi(p, t) == pytest.approx(nmi_definition(list(p), list(t)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
def test_nmi_bounded_and_symmetric(pairs):
    p = [a for a, _ in pairs]
    t = [b for _, b in pairs]
    v = nmi(p, t)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(nmi(t, p), abs=1e-12)
    assert 0.0 <= nmi(p, t, average="arithmetic") <= 1.0


def test_arithmetic_never_exceeds_geometric():
    rng = np.random.default_rng(1)
    p, t = rng.integers(0, 3, 40), rng.integers(0, 4, 40)
    assert nmi(p, t, "arithmetic") <= nmi(p, t) + 1e-12
    with pytest.raises(ValueError):
        nmi(p, t, "max")


def test_nmi_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        nmi([0, 1], [0])
    with pytest.raises(ValueError):
        nmi([], [])


def test_contingency_total():
    table, pv, tv = contingency_table([0, 0, 2, 2, 2], [1, 1, 1, 0, 0])
    assert table.sum() == 5
    np.testing.assert_array_equal(table, [[0, 2], [2, 1]])
    np.testing.assert_array_equal(pv, [0, 2])
    np.testing.assert_array_equal(tv, [0, 1])


def test_mapping_examples():
    assert map_clusters_to_classes([[9, 1], [2, 8]]) == {0: 0, 1: 1}
    assert map_clusters_to_classes([[0, 5], [5, 0]]) == {0: 1, 1: 0}
    with pytest.raises(ValueError):
        map_clusters_to_classes(np.zeros((0, 0)))


def test_mapping_matches_permutation_oracle():
    rng = np.random.default_rng(2)
    for _ in range(30):
        table = rng.integers(0, 20, (4, 4))
        mapping = map_clusters_to_classes(table)
        assert sum(table[r, c] for r, c in mapping.items()) == best_permutation_matches(table)


def test_more_clusters_than_classes_leaves_unmapped():
    pred = [0, 0, 1, 1, 2]
    truth = [0, 0, 1, 1, 1]
    np.testing.assert_array_equal(apply_mapping(pred, truth), [0, 0, 1, 1, -1])


def test_report_perfect():
    rep = classification_report([0, 0, 1, 1], [0, 0, 1, 1])
    assert rep.accuracy == 1.0
    assert all(c.precision == c.recall == c.f1 == 1.0 for c in rep.classes)


def test_report_zero_denominator_flagged():
    rep = classification_report([0, 0, 0], [0, 0, 1], class_names=["grass", "asphalt"])
    asphalt = rep.classes[1]
    assert asphalt.precision == 0.0 and asphalt.flagged
    assert rep.accuracy == pytest.approx(2 / 3)
    assert "*" in rep.to_text()


def test_report_values_and_weighted_recall():
    pred = [0, 1, 1, 1, 0, 0]
    truth = [0, 0, 1, 1, 1, 1]
    rep = classification_report(pred, truth)
    c0, c1 = rep.classes
    assert c0.precision == pytest.approx(1 / 3) and c0.recall == pytest.approx(1 / 2)
    assert c1.precision == pytest.approx(2 / 3) and c1.recall == pytest.approx(1 / 2)
    assert rep.weighted_recall == pytest.approx(rep.accuracy)
    d = rep.to_dict()
    assert d["n_frames"] == 6 and len(d["classes"]) == 2


def test_report_length_mismatch():
    with pytest.raises(ValueError):
        classification_report([0], [0, 1])
