"""Smoke tests for the _promptseg extension module.

Each test recomputes the expected value in plain numpy/python, independent of
the C++ implementation.
"""
import itertools
import math

import numpy as np
import pytest

import _promptseg as ps


def test_box_metrics_match_hand_computation():
    a = ps.NormBox(cx=1.0 / 3, cy=1.0 / 3, w=2.0 / 3, h=2.0 / 3)  # [0,2]^2 in a 3-frame
    b = ps.NormBox(cx=2.0 / 3, cy=2.0 / 3, w=2.0 / 3, h=2.0 / 3)  # [1,3]^2
    assert ps.box_iou(a, b) == pytest.approx(1.0 / 7.0)
    assert ps.box_giou(a, b) == pytest.approx(1.0 / 7.0 - 2.0 / 9.0)
    assert ps.l1_box(a, b) == pytest.approx(2.0 / 3.0)


def test_box_from_mask_pixel_edges():
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[2:5, 3:7] = 1
    box = ps.box_from_mask(mask)
    assert box.cx == pytest.approx(0.5)
    assert box.cy == pytest.approx(0.35)
    assert box.w == pytest.approx(0.4)
    assert box.h == pytest.approx(0.3)


def brute_force_min_cost(cost):
    n, m = cost.shape
    best = math.inf
    for perm in itertools.permutations(range(n), m):
        total = sum(cost[q, t] for t, q in enumerate(perm))
        best = min(best, total)
    return best


def test_hungarian_matches_python_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m = rng.integers(1, 6)
        n = m + rng.integers(0, 3)
        cost = rng.normal(size=(n, m))
        result = ps.hungarian_assign(cost)
        assert result["total_cost"] == pytest.approx(brute_force_min_cost(cost), abs=1e-9)
        assert len(result["pairs"]) == m
        queries = [q for q, _ in result["pairs"]]
        assert len(set(queries)) == m


def test_loss_scalars():
    ln2 = math.log(2.0)
    assert ps.focal_bce(0.5, 1) == pytest.approx(0.25 * 0.25 * ln2)
    assert ps.presence_loss(0.5, 1) == pytest.approx(10 * ln2)
    assert ps.focal_match_cost(0.5) == pytest.approx(0.25 * 0.25 * ln2 - 0.75 * 0.25 * ln2)
    assert ps.total_loss(1.0, 0.5, 2.0) == pytest.approx(4.0)


def test_dice_loss_and_metrics_against_numpy():
    rng = np.random.default_rng(11)
    probs = rng.random((6, 6))
    gt = (rng.random((6, 6)) > 0.5).astype(np.uint8)
    expected = 1 - (2 * (probs * gt).sum() + 1.0) / (probs.sum() + gt.sum() + 1.0)
    assert ps.dice_loss(probs, gt, 1.0) == pytest.approx(expected)

    pred = (rng.random((6, 6)) > 0.5).astype(np.uint8)
    inter = np.logical_and(pred, gt).sum()
    dice_np = 2 * inter / (pred.sum() + gt.sum())
    iou_np = inter / np.logical_or(pred, gt).sum()
    assert ps.dice(pred, gt) == pytest.approx(dice_np)
    assert ps.iou(pred, gt) == pytest.approx(iou_np)
    assert ps.dice(pred, gt) >= ps.iou(pred, gt)


def test_schedules():
    assert ps.llrd_rate(12, 5e-5) == pytest.approx(5e-5)
    assert ps.llrd_rate(1, 5e-5) == pytest.approx(5e-5 * 0.85**11)
    assert ps.lr_at_step(1, 1.0, warmup=100) == pytest.approx(0.01)
    assert ps.lr_at_step(400, 1.0, warmup=100) == pytest.approx(0.5)


def test_split_is_deterministic_and_partitions():
    ids = [f"s{i:03d}" for i in range(40)]
    train, val = ps.split_train_val(ids, 0.85, 42)
    train2, val2 = ps.split_train_val(list(reversed(ids)), 0.85, 42)
    assert train == train2 and val == val2  # sorted before shuffling
    assert len(train) == 34 and len(val) == 6
    assert sorted(train + val) == ids


def test_embeddings_and_canonicalization():
    v1 = ps.embed_concept("polyp", dim=32)
    v2 = ps.embed_concept("polyp", dim=32)
    assert v1 == v2
    assert np.linalg.norm(v1) == pytest.approx(1.0)
    assert ps.embed_concept("lung", dim=32) != v1
    assert ps.canonicalize_concept("  Left   Lung ") == "left lung"
