import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drawdet.geometry import (Box, ContractError, InvalidBoxError, Klass, ScoredBox, from_corner, iou, iou_matrix,
                              nms, to_corner)

from conftest import random_box, random_scored
from oracles import greedy_nms, iou_scalar


def test_corner_conversion():
    assert to_corner(Box(1, 1, 2, 2)) == (0, 0, 2, 2)
    with pytest.raises(InvalidBoxError):
        from_corner(0, 0, 0, 1)
    with pytest.raises(InvalidBoxError):
        Box(0, 0, -1, 1)


dyadic = st.integers(-2 ** 20, 2 ** 20).map(lambda k: k / 1024)
pos_dyadic = st.integers(1, 2 ** 20).map(lambda k: k / 1024)


@given(dyadic, dyadic, pos_dyadic, pos_dyadic)
def test_corner_roundtrip_exact(cx, cy, w, h):
    b = Box(cx, cy, w, h)
    assert from_corner(*to_corner(b)) == b


def test_iou_examples():
    a = Box(1, 1, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(10, 10, 2, 2)) == 0.0
    assert iou(from_corner(0, 0, 2, 2), from_corner(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)
    # edge-touching boxes have zero overlap
    assert iou(from_corner(0, 0, 1, 1), from_corner(1, 0, 2, 1)) == 0.0


def test_iou_properties(rng):
    for _ in range(500):
        a, b = random_box(rng), random_box(rng)
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert v == pytest.approx(iou_scalar(a, b), abs=1e-12)
        assert iou(a, a) == 1.0


def test_iou_matrix_matches_scalar(rng):
    boxes = [random_box(rng) for _ in range(12)]
    arr = np.array([to_corner(b) for b in boxes])
    m = iou_matrix(arr, arr)
    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            assert m[i, j] == iou(a, b)


def test_nms_small_cases():
    a = ScoredBox(Box(5, 5, 4, 4), 0.9, Klass.FACE)
    assert nms([a], 0.5) == [a]
    b = ScoredBox(Box(5, 5, 4, 4), 0.8, Klass.FACE)
    assert nms([b, a], 0.5) == [a]
    assert nms([], 0.5) == []


def test_nms_chain():
    # b overlaps a and c; a and c do not overlap: greedy keeps a and c.
    a = ScoredBox(from_corner(0, 0, 10, 10), 0.9, Klass.BODY)
    b = ScoredBox(from_corner(4, 0, 14, 10), 0.8, Klass.BODY)
    c = ScoredBox(from_corner(9, 0, 19, 10), 0.7, Klass.BODY)
    assert nms([c, b, a], 0.3) == greedy_nms([c, b, a], 0.3) == [a, c]


def test_nms_rejects_mixed_classes():
    with pytest.raises(ContractError):
        nms([ScoredBox(Box(1, 1, 1, 1), 0.5, Klass.FACE), ScoredBox(Box(1, 1, 1, 1), 0.5, Klass.BODY)], 0.5)


def test_nms_equal_scores_stable():
    boxes = [ScoredBox(Box(5, 5, 4, 4), 0.5, Klass.FACE), ScoredBox(Box(5.5, 5, 4, 4), 0.5, Klass.FACE)]
    assert nms(boxes, 0.3) == [boxes[0]]


def test_nms_matches_oracle_on_random_instances(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        cands = random_scored(rng, n, size=40.0, tie_prob=0.2)
        thresh = float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0, rng.uniform()]))
        got = nms(cands, thresh)
        assert got == greedy_nms(cands, thresh)
        assert set(map(id, got)) <= set(map(id, cands))
        for i in range(len(got)):
            for j in range(i + 1, len(got)):
                assert iou(got[i].box, got[j].box) <= thresh
        assert all(got[i].score >= got[i + 1].score for i in range(len(got) - 1))
