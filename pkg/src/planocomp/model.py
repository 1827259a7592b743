"""Shared domain types and the detection-to-planogram conversion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

# Reserved labels for alignment gaps. The angle brackets keep them out of any
# catalog, which rejects labels of this form.
GAP_REF = "<gap:ref>"  # reference side has nothing here: extra detected group
GAP_DET = "<gap:det>"  # detected side has nothing here: missing reference group
GAP_LABELS = frozenset({GAP_REF, GAP_DET})

Box = tuple[float, float, float, float]  # (x1, y1, x2, y2)


def _check_label(label: str) -> None:
    if not label or label in GAP_LABELS or (label.startswith("<") and label.endswith(">")):
        raise ValueError(f"invalid product label {label!r}")


@dataclass(frozen=True)
class LocalFeature:
    x: float
    y: float
    descriptor: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoint positions and descriptors stored as parallel arrays.

    Attributes:
        xy: ``(N, 2)`` float array of keypoint pixel coordinates.
        descriptors: ``(N, D)`` float array, one row per keypoint.
    """

    xy: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self) -> None:
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        desc = np.asarray(self.descriptors, dtype=float)
        if desc.ndim != 2 or desc.shape[0] != xy.shape[0]:
            raise ValueError(f"descriptor array {desc.shape} does not match {xy.shape[0]} keypoints")
        xy.setflags(write=False)
        desc.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "descriptors", desc)

    @classmethod
    def empty(cls, dim: int) -> FeatureSet:
        return cls(np.zeros((0, 2)), np.zeros((0, dim)))

    @classmethod
    def from_features(cls, features: Iterable[LocalFeature], dim: int | None = None) -> FeatureSet:
        feats = list(features)
        if not feats:
            return cls.empty(dim or 0)
        xy = np.array([(f.x, f.y) for f in feats], dtype=float)
        desc = np.array([f.descriptor for f in feats], dtype=float)
        return cls(xy, desc)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __iter__(self) -> Iterator[LocalFeature]:
        for (x, y), d in zip(self.xy, self.descriptors):
            yield LocalFeature(float(x), float(y), tuple(float(v) for v in d))

    def subset(self, index: np.ndarray | Sequence[int]) -> FeatureSet:
        index = np.asarray(index)
        return FeatureSet(self.xy[index], self.descriptors[index])

    def within_x(self, intervals: Sequence[tuple[float, float]]) -> FeatureSet:
        """Keypoints whose x coordinate lies in any of the closed intervals."""
        mask = np.zeros(len(self), dtype=bool)
        for lo, hi in intervals:
            mask |= (self.xy[:, 0] >= lo) & (self.xy[:, 0] <= hi)
        return self.subset(np.flatnonzero(mask))

    def to_dict(self) -> dict:
        return {
            "xy": self.xy.tolist(),
            "descriptors": self.descriptors.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping, dim: int | None = None) -> FeatureSet:
        if not data.get("xy"):
            return cls.empty(dim if dim is not None else int(data.get("dim", 0)))
        return cls(np.array(data["xy"], dtype=float), np.array(data["descriptors"], dtype=float))


@dataclass(frozen=True, eq=False)
class ProductModel:
    """Per-SKU template: reference size in pixels and its local features."""

    label: str
    width_ref: float
    height_ref: float
    features: FeatureSet

    def __post_init__(self) -> None:
        _check_label(self.label)
        if self.width_ref <= 0 or self.height_ref <= 0:
            raise ValueError(f"{self.label}: reference size must be positive")

    @property
    def aspect(self) -> float:
        return self.width_ref / self.height_ref

    @property
    def n_features(self) -> int:
        return len(self.features)


class Catalog(Mapping[str, ProductModel]):
    """Label-indexed set of product models sharing one descriptor dimension."""

    def __init__(self, products: Iterable[ProductModel], descriptor_dim: int | None = None):
        self._products: dict[str, ProductModel] = {}
        for p in products:
            if p.label in self._products:
                raise ValueError(f"duplicate label {p.label!r} in catalog")
            self._products[p.label] = p
        dims = {p.features.dim for p in self._products.values() if len(p.features)}
        if descriptor_dim is not None:
            dims.add(descriptor_dim)
        if len(dims) > 1:
            raise ValueError(f"catalog mixes descriptor dimensions {sorted(dims)}")
        self.descriptor_dim = dims.pop() if dims else 0

    def __getitem__(self, label: str) -> ProductModel:
        return self._products[label]

    def __iter__(self) -> Iterator[str]:
        return iter(self._products)

    def __len__(self) -> int:
        return len(self._products)

    def to_dict(self) -> dict:
        return {
            "format": "planocomp-catalog",
            "version": 1,
            "descriptor_dim": self.descriptor_dim,
            "products": [
                {
                    "label": p.label,
                    "width_ref": p.width_ref,
                    "height_ref": p.height_ref,
                    "features": [
                        {"x": f.x, "y": f.y, "descriptor": list(f.descriptor)} for f in p.features
                    ],
                }
                for p in self._products.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Catalog:
        dim = int(data.get("descriptor_dim", 0))
        products = []
        for rec in data["products"]:
            feats = FeatureSet.from_features(
                (LocalFeature(f["x"], f["y"], tuple(f["descriptor"])) for f in rec.get("features", [])),
                dim=dim,
            )
            if len(feats) == 0:
                feats = FeatureSet.empty(dim)
            products.append(ProductModel(rec["label"], float(rec["width_ref"]), float(rec["height_ref"]), feats))
        return cls(products, descriptor_dim=dim or None)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> Catalog:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CandidateBox:
    """Raw detector output: confidence and center-size geometry in pixels."""

    confidence: float
    center_x: float
    center_y: float
    width: float
    height: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("candidate box must have positive size")
        if self.confidence < 0:
            raise ValueError("confidence must be nonnegative")

    @property
    def top_left(self) -> tuple[float, float]:
        return (self.center_x - self.width / 2, self.center_y - self.height / 2)

    @property
    def bottom_right(self) -> tuple[float, float]:
        return (self.center_x + self.width / 2, self.center_y + self.height / 2)

    @property
    def center(self) -> tuple[float, float]:
        return (self.center_x, self.center_y)

    @property
    def box(self) -> Box:
        return (*self.top_left, *self.bottom_right)


@dataclass(frozen=True)
class Detection:
    """A labelled, weighted product detection."""

    label: str
    top_left: tuple[float, float]
    bottom_right: tuple[float, float]
    weight: float = 1.0
    center: tuple[float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        (x1, y1), (x2, y2) = self.top_left, self.bottom_right
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate detection box {self.top_left}-{self.bottom_right}")
        if self.center is None:
            object.__setattr__(self, "center", ((x1 + x2) / 2, (y1 + y2) / 2))
        cx, cy = self.center
        if not (x1 <= cx <= x2 and y1 <= cy <= y2):
            raise ValueError("detection center lies outside its box")
        if self.weight <= 0:
            raise ValueError("detection weight must be positive")

    @classmethod
    def from_box(cls, label: str, box: Box, weight: float = 1.0) -> Detection:
        x1, y1, x2, y2 = box
        return cls(label, (x1, y1), (x2, y2), weight)

    @property
    def box(self) -> Box:
        return (*self.top_left, *self.bottom_right)

    def to_dict(self) -> dict:
        return {"label": self.label, "box": list(self.box), "weight": self.weight}

    @classmethod
    def from_dict(cls, data: Mapping) -> Detection:
        return cls.from_box(data["label"], tuple(data["box"]), float(data.get("weight", 1.0)))


@dataclass(frozen=True)
class PlanogramGroup:
    """A run of identical products, or an alignment gap when ``label`` is a sentinel."""

    label: str
    quantity: int
    span: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.label in GAP_LABELS:
            if self.quantity != 0 or self.span is not None:
                raise ValueError("gap sentinels carry quantity 0 and no span")
        elif self.quantity < 1:
            raise ValueError(f"group {self.label!r} needs quantity >= 1")
        if self.span is not None and self.span[0] > self.span[1]:
            raise ValueError(f"inverted span {self.span}")

    @property
    def is_gap(self) -> bool:
        return self.label in GAP_LABELS

    def to_dict(self) -> dict:
        d: dict = {"label": self.label, "quantity": self.quantity}
        if self.span is not None:
            d["span"] = list(self.span)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> PlanogramGroup:
        span = data.get("span")
        return cls(data["label"], int(data["quantity"]), tuple(span) if span is not None else None)


GAP_REF_GROUP = PlanogramGroup(GAP_REF, 0)
GAP_DET_GROUP = PlanogramGroup(GAP_DET, 0)


@dataclass(frozen=True)
class PlanogramSeq:
    """Left-to-right sequence of planogram groups for one rack.

    Adjacent real groups must carry distinct labels; gap sentinels may sit
    anywhere, which lets aligned sequences reuse this type.
    """

    groups: tuple[PlanogramGroup, ...] = ()

    def __post_init__(self) -> None:
        groups = tuple(self.groups)
        object.__setattr__(self, "groups", groups)
        real = [g for g in groups if not g.is_gap]
        for a, b in zip(real, real[1:]):
            if a.label == b.label:
                raise ValueError(f"adjacent groups share label {a.label!r}; merge them")
        # Span order is not enforced: groups are ordered by box centers, and a
        # wide box can start left of a narrower predecessor.

    @classmethod
    def of(cls, *pairs: tuple[str, int]) -> PlanogramSeq:
        """Shorthand: ``PlanogramSeq.of(("A", 2), ("B", 1))``."""
        return cls(tuple(PlanogramGroup(label, q) for label, q in pairs))

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self) -> Iterator[PlanogramGroup]:
        return iter(self.groups)

    def __getitem__(self, i: int) -> PlanogramGroup:
        return self.groups[i]

    @property
    def labels(self) -> list[str]:
        return [g.label for g in self.groups]

    @property
    def total_quantity(self) -> int:
        return sum(g.quantity for g in self.groups)

    def pairs(self) -> list[tuple[str, int]]:
        return [(g.label, g.quantity) for g in self.groups]

    def to_list(self) -> list[dict]:
        return [g.to_dict() for g in self.groups]

    @classmethod
    def from_list(cls, data: Iterable[Mapping]) -> PlanogramSeq:
        return cls(tuple(PlanogramGroup.from_dict(d) for d in data))


def obj_to_planogram(detections: Iterable[Detection]) -> PlanogramSeq:
    """Sort detections left to right and merge runs of equal labels.

    Ties on center x are broken by label, then center y, so the result does
    not depend on input order.
    """
    ordered = sorted(detections, key=lambda d: (d.center[0], d.label, d.center[1]))
    groups: list[PlanogramGroup] = []
    for det in ordered:
        if groups and groups[-1].label == det.label:
            last = groups[-1]
            assert last.span is not None
            groups[-1] = PlanogramGroup(last.label, last.quantity + 1, (last.span[0], det.bottom_right[0]))
        else:
            groups.append(PlanogramGroup(det.label, 1, (det.top_left[0], det.bottom_right[0])))
    return PlanogramSeq(tuple(groups))


def iou(box1: Box, box2: Box) -> float:
    """Intersection over union of two ``(x1, y1, x2, y2)`` boxes; 0 for zero-area input."""
    ax1, ay1, ax2, ay2 = box1
    bx1, by1, bx2, by2 = box2
    area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
    area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)
