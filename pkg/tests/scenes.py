"""Hand-built rack scenes with exact control over feature geometry."""

from __future__ import annotations

import numpy as np

from planocomp.ingest.imaging import RackImage
from planocomp.model import CandidateBox, FeatureSet, ProductModel
from planocomp.providers import DetectorProvider, FeatureProvider

DIM = 16


def product(label, w=80, h=200, n=40, seed=0):
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])
    return ProductModel(label, w, h, FeatureSet(xy, rng.normal(size=(n, DIM)) * 5))


class Scene:
    """Accumulates candidate boxes and scene features for one rack."""

    def __init__(self, width=1600, height=400, seed=0):
        self.width, self.height = width, height
        self.rng = np.random.default_rng(seed)
        self.boxes: list[CandidateBox] = []
        self.xy: list[np.ndarray] = []
        self.desc: list[np.ndarray] = []

    def place(self, model: ProductModel, x0: float, y0: float = 100.0, ratio: float | None = None,
              conf: float = 0.9, visible=None):
        """Put one instance with its top-left at (x0, y0).

        With ``ratio`` set, every feature copy gets a decoy so that the
        nearest/second-nearest distance ratio is exactly ``ratio``.
        """
        f = model.features if visible is None else model.features.subset(visible)
        xy = f.xy + [x0, y0]
        if ratio is None:
            desc = f.descriptors + self.rng.normal(scale=0.01, size=f.descriptors.shape)
            self.xy.append(xy)
            self.desc.append(desc)
        else:
            e1 = np.zeros(DIM)
            e1[0] = 1.0
            e2 = np.zeros(DIM)
            e2[1] = 1.0
            self.xy.append(xy)
            self.desc.append(f.descriptors + ratio * e1)
            decoy_xy = np.column_stack([np.full(len(f), 5.0), np.full(len(f), 5.0)])
            self.xy.append(decoy_xy)
            self.desc.append(f.descriptors + e2)
        self.boxes.append(
            CandidateBox(conf, x0 + model.width_ref / 2, y0 + model.height_ref / 2, model.width_ref, model.height_ref)
        )

    def clutter(self, n=50):
        self.xy.append(self.rng.uniform(0, [self.width, self.height], (n, 2)))
        self.desc.append(self.rng.normal(size=(n, DIM)) * 5)

    def features(self) -> FeatureSet:
        if not self.xy:
            return FeatureSet.empty(DIM)
        return FeatureSet(np.vstack(self.xy), np.vstack(self.desc))

    def rack(self, key="rack"):
        return RackImage(key, np.zeros((self.height, self.width), np.uint8))


class FixedDetector(DetectorProvider):
    def __init__(self, boxes):
        self.boxes = list(boxes)
        self.calls = 0

    def candidates(self, rack):
        self.calls += 1
        return list(self.boxes)


class FixedFeatures(FeatureProvider):
    dim = DIM

    def __init__(self, fs):
        self.fs = fs
        self.calls = 0

    def extract(self, rack):
        self.calls += 1
        return self.fs
