"""Rack splitting and detector letterboxing for full shelf images."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

RACK_HEIGHT = 400
DETECTOR_SIDE = 640


@dataclass(frozen=True, eq=False)
class RackImage:
    """One rack cut from a shelf image.

    Attributes:
        key: stable identifier, ``"<image digest>:<rack index>"`` for uploads.
        pixels: ``(H, W)`` or ``(H, W, 3)`` uint8 array in rack coordinates.
        source_rows: ``(y0, y1)`` rows of the shelf image this rack came from.
    """

    key: str
    pixels: np.ndarray
    source_rows: tuple[int, int] = (0, 0)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def strip_bounds(height: int, rack_count: int) -> list[tuple[int, int]]:
    """Row intervals tiling ``[0, height)`` into ``rack_count`` near-equal strips."""
    if rack_count < 1:
        raise ValueError("rack_count must be >= 1")
    if rack_count > height:
        raise ValueError(f"cannot split {height} rows into {rack_count} racks")
    edges = [round(i * height / rack_count) for i in range(rack_count + 1)]
    return list(zip(edges[:-1], edges[1:]))


def split_racks(
    image: np.ndarray, rack_count: int, key: str = "", target_height: int = RACK_HEIGHT
) -> list[RackImage]:
    """Cut a shelf image into horizontal racks, each rescaled to ``target_height`` rows."""
    racks = []
    for i, (y0, y1) in enumerate(strip_bounds(image.shape[0], rack_count)):
        strip = image[y0:y1]
        h, w = strip.shape[:2]
        if h != target_height:
            new_w = max(1, round(w * target_height / h))
            interp = cv2.INTER_AREA if h > target_height else cv2.INTER_LINEAR
            strip = cv2.resize(strip, (new_w, target_height), interpolation=interp)
        racks.append(RackImage(f"{key}:{i}", np.ascontiguousarray(strip), (y0, y1)))
    return racks


@dataclass(frozen=True)
class LetterboxTransform:
    """Maps rack pixels to detector-input pixels: ``p' = scale * p + offset``."""

    scale: float
    offset_x: float
    offset_y: float

    def forward(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale + self.offset_x, y * self.scale + self.offset_y

    def inverse(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.offset_x) / self.scale, (y - self.offset_y) / self.scale

    def box_to_source(self, box: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        x1, y1 = self.inverse(box[0], box[1])
        x2, y2 = self.inverse(box[2], box[3])
        return x1, y1, x2, y2

    def box_to_detector(self, box: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        x1, y1 = self.forward(box[0], box[1])
        x2, y2 = self.forward(box[2], box[3])
        return x1, y1, x2, y2


def pad_for_detector(
    image: np.ndarray,
    side: int = DETECTOR_SIDE,
    blur_size: int = 5,
    blur_sigma: float = 1.0,
    pad_value: int = 114,
) -> tuple[np.ndarray, LetterboxTransform]:
    """Denoise, scale the longer side to ``side`` and pad symmetrically to a square."""
    if blur_size:
        image = cv2.GaussianBlur(image, (blur_size, blur_size), blur_sigma, borderType=cv2.BORDER_REPLICATE)
    h, w = image.shape[:2]
    scale = side / max(w, h)
    nw, nh = min(side, round(w * scale)), min(side, round(h * scale))
    if (nw, nh) != (w, h):
        image = cv2.resize(image, (nw, nh), interpolation=cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR)
    top = (side - nh) // 2
    left = (side - nw) // 2
    padded = cv2.copyMakeBorder(
        image, top, side - nh - top, left, side - nw - left, cv2.BORDER_CONSTANT, value=(pad_value,) * 3
    )
    return padded, LetterboxTransform(scale, float(left), float(top))
