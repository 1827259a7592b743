import numpy as np
import pytest

from oracles import nms_subset_oracle, two_nn_ratio_oracle
from planocomp.detect import (
    DetectParams,
    MatchParams,
    count_inside,
    detect_product,
    filter_boxes,
    match_features,
    match_indices,
    nms,
    score_and_suppress,
    tau_alpha,
)
from planocomp.model import CandidateBox, FeatureSet, ProductModel, iou


def model(w=100, h=200, n=100, dim=4, label="A"):
    rng = np.random.default_rng(0)
    return ProductModel(label, w, h, FeatureSet(rng.uniform(0, 1, (n, 2)), rng.normal(size=(n, dim))))


def test_tau_alpha_schedule():
    assert tau_alpha(1.0) == pytest.approx(0.75)
    assert tau_alpha(0.75) == pytest.approx(0.80)
    assert tau_alpha(1e-12) == pytest.approx(0.95)
    assert MatchParams(alpha=1.0).tau_alpha == pytest.approx(0.75)
    with pytest.raises(ValueError):
        tau_alpha(0.0)
    with pytest.raises(ValueError):
        tau_alpha(1.5)


def fs(xy, desc):
    return FeatureSet(np.asarray(xy, float), np.asarray(desc, float))


def test_ratio_test_boundaries():
    m = fs([[0, 0]], [[0.0, 0.0]])
    scene = fs([[1, 1], [2, 2], [3, 3]], [[0.5, 0.0], [0.0, 1.0], [5.0, 5.0]])
    assert len(match_features(m, scene, 0.75)) == 1  # 0.5 < 0.75 * 1.0
    scene = fs([[1, 1], [2, 2]], [[0.8, 0.0], [0.0, 1.0]])
    assert len(match_features(m, scene, 0.75)) == 0  # 0.8 >= 0.75


def test_matching_needs_two_scene_features():
    m = fs([[0, 0]], [[0.0, 0.0]])
    assert len(match_features(m, fs([[1, 1]], [[0.1, 0.0]]), 0.9)) == 0
    assert len(match_features(m, FeatureSet.empty(2), 0.9)) == 0


def test_matching_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        match_features(fs([[0, 0]], [[0.0, 0.0]]), fs([[0, 0], [1, 1]], [[0.0], [1.0]]), 0.8)


def test_matching_agrees_with_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(50):
        md = rng.normal(size=(10, 8))
        sd = np.concatenate([md[:5] + rng.normal(scale=0.3, size=(5, 8)), rng.normal(size=(45, 8))])
        tau = rng.uniform(0.5, 0.95)
        got = set(match_indices(fs(np.zeros((10, 2)), md), fs(np.zeros((50, 2)), sd), tau).tolist())
        assert got == two_nn_ratio_oracle(md.tolist(), sd.tolist(), tau)


def test_matching_is_monotone_in_tau_and_bounded():
    rng = np.random.default_rng(2)
    md, sd = rng.normal(size=(30, 4)), rng.normal(size=(20, 4))
    m, s = fs(np.zeros((30, 2)), md), fs(np.zeros((20, 2)), sd)
    prev = set()
    for tau in np.linspace(0.3, 0.99, 15):
        cur = set(match_indices(m, s, tau).tolist())
        assert prev <= cur
        assert len(cur) <= min(len(m), len(s))
        prev = cur


def test_filter_boxes_geometry_and_confidence():
    mdl = model(100, 200)
    assert filter_boxes([CandidateBox(0.9, 500, 300, 40, 200)], mdl) == []
    boxes = [CandidateBox(0.9, 100, 200, 100, 200), CandidateBox(0.5, 300, 200, 90, 210),
             CandidateBox(0.036, 500, 200, 100, 200)]
    kept = filter_boxes(boxes, mdl)
    assert kept == boxes[:2]  # threshold 0.045 drops the third
    only = filter_boxes([CandidateBox(0.9, 300, 400, 100, 200)], mdl)[0]
    assert only.top_left == (250, 300) and only.center == (300, 400)
    assert filter_boxes([], mdl) == []


def test_filter_bounds_are_inclusive():
    mdl = model(100, 200)
    edge = [CandidateBox(1.0, 0, 0, 50, 100), CandidateBox(1.0, 0, 0, 200, 400)]
    assert filter_boxes(edge, mdl) == edge
    # aspect 4x the reference but width/height inside bounds
    assert filter_boxes([CandidateBox(1.0, 0, 0, 200, 100)], mdl) == []


def test_confidence_threshold_uses_geometry_survivors():
    mdl = model(100, 200)
    boxes = [CandidateBox(100.0, 0, 0, 10, 10), CandidateBox(0.5, 0, 0, 100, 200)]
    assert filter_boxes(boxes, mdl) == [boxes[1]]


def test_score_and_suppress_examples():
    mdl = model(n=100)
    empty = FeatureSet.empty(4)
    assert score_and_suppress([CandidateBox(0.9, 50, 100, 100, 200)], empty, mdl) == []
    xy = np.column_stack([np.linspace(10, 90, 20), np.full(20, 100.0)])
    matched = fs(xy, np.zeros((20, 4)))
    a = CandidateBox(0.9, 50, 100, 100, 200)
    b = CandidateBox(0.8, 50, 100, 100, 200)
    out = score_and_suppress([b, a], matched, mdl)
    assert len(out) == 1 and out[0].weight == pytest.approx(20 / 100 * 0.9)


def test_weak_threshold_is_strict():
    mdl = model(n=100)
    box = CandidateBox(1.0, 50, 50, 100, 100)
    five = fs(np.full((5, 2), 50.0), np.zeros((5, 4)))
    six = fs(np.full((6, 2), 50.0), np.zeros((6, 4)))
    assert score_and_suppress([box], five, mdl) == []
    assert len(score_and_suppress([box], six, mdl)) == 1


def test_zero_feature_model_drops_everything():
    mdl = ProductModel("Z", 10, 10, FeatureSet.empty(4))
    assert score_and_suppress([CandidateBox(1, 5, 5, 10, 10)], fs([[5, 5]], [[0, 0, 0, 0]]), mdl) == []


def test_feature_counting_includes_edges():
    xy = np.array([[0, 0], [10, 10], [10, 0], [5, 5], [10.0001, 5]])
    assert count_inside(xy, (0, 0, 10, 10)) == 4


def test_nms_against_subset_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(0, 9))
        xy = rng.uniform(0, 60, (n, 2))
        wh = rng.uniform(10, 40, (n, 2))
        boxes = [(x, y, x + w, y + h) for (x, y), (w, h) in zip(xy, wh)]
        weights = rng.uniform(0.01, 1, n).tolist()
        kept = nms(boxes, weights, 0.5)
        assert set(kept) == nms_subset_oracle(boxes, weights, 0.5)
        for i in kept:
            for j in kept:
                if i != j:
                    assert iou(boxes[i], boxes[j]) <= 0.5


def test_nms_identical_boxes():
    assert nms([(0, 0, 10, 10), (0, 0, 10, 10)], [0.9, 0.8]) == [0]
    assert nms([(0, 0, 10, 10), (0, 0, 10, 10)], [0.8, 0.9]) == [1]


def test_detect_product_end_to_end():
    rng = np.random.default_rng(4)
    mdl = ProductModel("A", 40, 80, FeatureSet(rng.uniform(0, 40, (30, 2)) , rng.normal(size=(30, 16))))
    # two instances, each showing the model features shifted and slightly perturbed
    xy, desc = [], []
    for k, x0 in enumerate((100, 300)):
        idx = np.arange(k, 30, 2)
        xy.append(mdl.features.xy[idx] + [x0 - 20, 60])
        desc.append(mdl.features.descriptors[idx] + rng.normal(scale=0.05, size=(len(idx), 16)))
    clutter = rng.normal(size=(40, 16)) * 3
    scene = FeatureSet(np.vstack(xy + [rng.uniform(0, 400, (40, 2))]), np.vstack(desc + [clutter]))
    cands = [CandidateBox(0.9, 100, 100, 40, 80), CandidateBox(0.85, 300, 100, 40, 80),
             CandidateBox(0.5, 104, 102, 42, 80), CandidateBox(0.01, 200, 100, 40, 80)]
    dets = detect_product(cands, scene, mdl, tau=0.75)
    assert sorted(round(d.center[0]) for d in dets) == [100, 300]
    assert all(d.label == "A" and d.weight > 0 for d in dets)
