"""Turn detector candidates and local features into weighted product detections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from planocomp.model import Box, CandidateBox, Detection, FeatureSet, ProductModel, iou


@dataclass(frozen=True)
class DetectParams:
    """Tunable constants of the detection stage.

    The ratio-test threshold is ``tau_base - tau_slope * alpha``.
    """

    tau_base: float = 0.95
    tau_slope: float = 0.2
    size_ratio: float = 2.0
    confidence_fraction: float = 0.05
    min_feature_fraction: float = 0.05
    nms_iou: float = 0.5

    def tau(self, alpha: float) -> float:
        return tau_alpha(alpha, self.tau_base, self.tau_slope)


def tau_alpha(alpha: float, base: float = 0.95, slope: float = 0.2) -> float:
    """Ratio-test threshold for iteration parameter ``alpha`` in (0, 1]."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    tau = base - slope * alpha
    if not 0 < tau < 1:
        raise ValueError(f"threshold {tau} outside (0, 1)")
    return tau


@dataclass(frozen=True)
class MatchParams:
    alpha: float = 1.0
    tau_base: float = 0.95
    tau_slope: float = 0.2

    @property
    def tau_alpha(self) -> float:
        return tau_alpha(self.alpha, self.tau_base, self.tau_slope)


def match_indices(model_feats: FeatureSet, scene_feats: FeatureSet, tau: float) -> np.ndarray:
    """Sorted scene indices that win a ratio test for some model feature."""
    if len(scene_feats) < 2 or len(model_feats) == 0:
        return np.zeros(0, dtype=int)
    if model_feats.dim != scene_feats.dim:
        raise ValueError(f"descriptor dimensions differ: {model_feats.dim} vs {scene_feats.dim}")
    dist = cdist(model_feats.descriptors, scene_feats.descriptors)
    two = np.argpartition(dist, 1, axis=1)[:, :2]
    rows = np.arange(len(dist))[:, None]
    d2 = dist[rows, two]
    order = np.argsort(d2, axis=1)
    nearest = two[rows[:, 0], order[:, 0]]
    d_first = d2[rows[:, 0], order[:, 0]]
    d_second = d2[rows[:, 0], order[:, 1]]
    keep = d_first < tau * d_second
    return np.unique(nearest[keep])


def match_features(model_feats: FeatureSet, scene_feats: FeatureSet, tau: float) -> FeatureSet:
    """Brute-force 2-NN matching with a ratio test.

    For each model feature the two nearest scene descriptors (Euclidean) are
    found; the nearest one is kept when ``d1 < tau * d2``. A scene feature
    claimed by several model features is returned once, so the result never
    exceeds either input in size.
    """
    return scene_feats.subset(match_indices(model_feats, scene_feats, tau))


def filter_boxes(
    candidates: Sequence[CandidateBox], model: ProductModel, params: DetectParams = DetectParams()
) -> list[CandidateBox]:
    """Keep candidates whose size and aspect fit the product, then drop weak ones.

    Width, height and aspect ratio must each lie within a factor
    ``params.size_ratio`` of the reference (bounds inclusive). Survivors below
    ``confidence_fraction`` of the best surviving confidence are dropped.
    """
    k = params.size_ratio
    w_j, h_j, a_j = model.width_ref, model.height_ref, model.aspect
    geo = [
        c
        for c in candidates
        if w_j / k <= c.width <= w_j * k
        and h_j / k <= c.height <= h_j * k
        and a_j / k <= c.width / c.height <= a_j * k
    ]
    if not geo:
        return []
    tau_b = params.confidence_fraction * max(c.confidence for c in geo)
    return [c for c in geo if c.confidence >= tau_b]


def nms(boxes: Sequence[Box], weights: Sequence[float], max_iou: float = 0.5) -> list[int]:
    """Greedy non-maximum suppression.

    Returns indices of kept boxes in descending weight order; equal weights
    resolve by input order.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-weights[i], i))
    kept: list[int] = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) <= max_iou for j in kept):
            kept.append(i)
    return kept


def count_inside(xy: np.ndarray, box: Box) -> int:
    x1, y1, x2, y2 = box
    return int(np.count_nonzero((xy[:, 0] >= x1) & (xy[:, 0] <= x2) & (xy[:, 1] >= y1) & (xy[:, 1] <= y2)))


def score_and_suppress(
    candidates: Sequence[CandidateBox],
    matched: FeatureSet,
    model: ProductModel,
    params: DetectParams = DetectParams(),
) -> list[Detection]:
    """Weight each candidate by the matched features it encloses and suppress overlaps."""
    L = model.n_features
    if L == 0:
        return []
    scored: list[tuple[CandidateBox, float]] = []
    for c in candidates:
        s = count_inside(matched.xy, c.box)
        if s > params.min_feature_fraction * L:
            w = s / L * c.confidence
            if w > 0:
                scored.append((c, w))
    keep = nms([c.box for c, _ in scored], [w for _, w in scored], params.nms_iou)
    return [
        Detection(model.label, scored[i][0].top_left, scored[i][0].bottom_right, scored[i][1], scored[i][0].center)
        for i in keep
    ]


def detect_product(
    candidates: Sequence[CandidateBox],
    scene: FeatureSet,
    model: ProductModel,
    tau: float,
    params: DetectParams = DetectParams(),
    prefiltered: bool = False,
) -> list[Detection]:
    """Full per-product detection: box filtering, matching, scoring and NMS."""
    boxes = list(candidates) if prefiltered else filter_boxes(candidates, model, params)
    if not boxes:
        return []
    matched = match_features(model.features, scene, tau)
    return score_and_suppress(boxes, matched, model, params)
