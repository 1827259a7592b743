"""Detector and feature-extractor interfaces, with file-backed and OpenCV implementations.

The pipeline only sees :class:`DetectorProvider` and :class:`FeatureProvider`.
Oracle implementations read precomputed outputs from JSON files keyed by
rack image key; the OpenCV adapters run a YOLOv5 ONNX export and SIFT.
"""

from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Mapping

import numpy as np

from planocomp.ingest.imaging import DETECTOR_SIDE, LetterboxTransform, RackImage, pad_for_detector
from planocomp.model import CandidateBox, FeatureSet, ProductModel


class ProviderError(RuntimeError):
    """A detector or feature provider could not produce output for an image."""


class DetectorProvider(ABC):
    input_size: tuple[int, int] = (DETECTOR_SIDE, DETECTOR_SIDE)

    @abstractmethod
    def candidates(self, rack: RackImage) -> list[CandidateBox]:
        """All candidate boxes for a rack, in rack pixel coordinates."""


class FeatureProvider(ABC):
    dim: int

    @abstractmethod
    def extract(self, rack: RackImage) -> FeatureSet:
        """Local features of a rack image, positions in rack pixel coordinates."""


def _load_json(source: str | Path | Mapping) -> Mapping:
    if isinstance(source, Mapping):
        return source
    return json.loads(Path(source).read_text())


class OracleDetector(DetectorProvider):
    """Reads candidate boxes from ``{"images": {key: [[cs, cx, cy, w, h], ...]}}``."""

    def __init__(self, source: str | Path | Mapping):
        data = _load_json(source)
        self._boxes = {
            key: [CandidateBox(*map(float, rec)) for rec in recs] for key, recs in data["images"].items()
        }

    def candidates(self, rack: RackImage) -> list[CandidateBox]:
        try:
            return list(self._boxes[rack.key])
        except KeyError:
            raise ProviderError(f"no oracle boxes for image {rack.key!r}") from None

    @staticmethod
    def dump(images: Mapping[str, list[CandidateBox]]) -> dict:
        return {
            "format": "planocomp-oracle-boxes",
            "images": {
                k: [[c.confidence, c.center_x, c.center_y, c.width, c.height] for c in v]
                for k, v in images.items()
            },
        }


class OracleFeatures(FeatureProvider):
    """Reads keypoints from ``{"dim": D, "images": {key: {"xy": ..., "descriptors": ...}}}``."""

    def __init__(self, source: str | Path | Mapping):
        data = _load_json(source)
        self.dim = int(data["dim"])
        self._sets = {k: FeatureSet.from_dict(v, self.dim) for k, v in data["images"].items()}

    def extract(self, rack: RackImage) -> FeatureSet:
        try:
            return self._sets[rack.key]
        except KeyError:
            raise ProviderError(f"no oracle features for image {rack.key!r}") from None

    @staticmethod
    def dump(dim: int, images: Mapping[str, FeatureSet]) -> dict:
        return {
            "format": "planocomp-oracle-features",
            "dim": dim,
            "images": {k: v.to_dict() for k, v in images.items()},
        }


class Serialized(DetectorProvider, FeatureProvider):
    """Lock-guarded facade for providers that are not safe to share between threads."""

    def __init__(self, inner: DetectorProvider | FeatureProvider):
        self._inner = inner
        self._lock = threading.Lock()
        self.dim = getattr(inner, "dim", 0)
        self.input_size = getattr(inner, "input_size", (DETECTOR_SIDE, DETECTOR_SIDE))

    def candidates(self, rack: RackImage) -> list[CandidateBox]:
        with self._lock:
            return self._inner.candidates(rack)  # type: ignore[union-attr]

    def extract(self, rack: RackImage) -> FeatureSet:
        with self._lock:
            return self._inner.extract(rack)  # type: ignore[union-attr]


def decode_yolo_output(
    output: np.ndarray, transform: LetterboxTransform, conf_floor: float = 1e-3
) -> list[CandidateBox]:
    """Convert a raw YOLOv5 head output to candidates in source pixels.

    ``output`` has shape ``(1, N, 5 + C)`` or ``(N, 5 + C)`` with rows
    ``cx, cy, w, h, objectness, class scores...`` in detector pixels. The
    confidence is objectness times the best class score.
    """
    rows = np.asarray(output, dtype=float).reshape(-1, output.shape[-1])
    if rows.shape[1] > 5:
        conf = rows[:, 4] * rows[:, 5:].max(axis=1)
    else:
        conf = rows[:, 4]
    out = []
    for (cx, cy, w, h), cs in zip(rows[:, :4], conf):
        if cs < conf_floor or w <= 0 or h <= 0:
            continue
        sx, sy = transform.inverse(cx, cy)
        out.append(CandidateBox(float(cs), sx, sy, w / transform.scale, h / transform.scale))
    return out


class OnnxDetector(DetectorProvider):
    """Runs a YOLOv5 ONNX export through OpenCV's DNN module."""

    def __init__(self, model_path: str | Path, side: int = DETECTOR_SIDE, conf_floor: float = 1e-3):
        import cv2

        path = Path(model_path)
        if not path.is_file():
            raise ProviderError(f"ONNX model not found: {path}")
        self._net = cv2.dnn.readNetFromONNX(str(path))
        self.side = side
        self.input_size = (side, side)
        self.conf_floor = conf_floor

    def candidates(self, rack: RackImage) -> list[CandidateBox]:
        import cv2

        img = rack.pixels if rack.pixels.ndim == 3 else np.repeat(rack.pixels[..., None], 3, axis=2)
        padded, transform = pad_for_detector(img, self.side)
        blob = cv2.dnn.blobFromImage(padded, 1 / 255.0, (self.side, self.side), swapRB=True, crop=False)
        self._net.setInput(blob)
        try:
            out = self._net.forward()
        except cv2.error as e:
            raise ProviderError(f"inference failed for {rack.key}: {e}") from e
        return decode_yolo_output(out, transform, self.conf_floor)


class SiftFeatures(FeatureProvider):
    """OpenCV SIFT keypoints and 128-D descriptors."""

    dim = 128

    def __init__(self, max_features: int = 0):
        import cv2

        self._sift = cv2.SIFT_create(nfeatures=max_features)

    def extract_array(self, pixels: np.ndarray) -> FeatureSet:
        import cv2

        gray = pixels if pixels.ndim == 2 else cv2.cvtColor(pixels, cv2.COLOR_BGR2GRAY)
        kps, desc = self._sift.detectAndCompute(np.ascontiguousarray(gray, dtype=np.uint8), None)
        if desc is None or not kps:
            return FeatureSet.empty(self.dim)
        return FeatureSet(np.array([k.pt for k in kps]), desc.astype(float))

    def extract(self, rack: RackImage) -> FeatureSet:
        return self.extract_array(rack.pixels)

    def product_model(self, label: str, image: np.ndarray) -> ProductModel:
        """Build a catalog entry from a product's reference image."""
        h, w = image.shape[:2]
        return ProductModel(label, float(w), float(h), self.extract_array(image))
