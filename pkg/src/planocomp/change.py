"""Low-resolution change gate run on the camera node before a full capture."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

QVGA = (320, 240)


@dataclass(frozen=True, eq=False)
class GrayFrame:
    """Grayscale frame; ``pixels`` has shape ``(height, width)``, values in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2-D frame, got shape {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def constant(cls, value: float, width: int = QVGA[0], height: int = QVGA[1]) -> GrayFrame:
        return cls(np.full((height, width), float(value)))

    @classmethod
    def read(cls, path: str | Path) -> GrayFrame:
        """Load an 8-bit grayscale image (PGM, PNG, JPEG...)."""
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("L")))

    def write_pgm(self, path: str | Path) -> None:
        Image.fromarray(np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8), mode="L").save(
            path, format="PPM"
        )


@dataclass(frozen=True)
class ChangeParams:
    """Thresholds for the change gate.

    Attributes:
        pixel_threshold: per-pixel change measure above which a pixel counts
            as changed, in radians.
        change_fraction_threshold: fraction of changed pixels at or above
            which the frame counts as changed.
        blur_size: odd Gaussian kernel side.
        blur_sigma: Gaussian standard deviation in pixels.
    """

    pixel_threshold: float = 0.15
    change_fraction_threshold: float = 0.02
    blur_size: int = 5
    blur_sigma: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.pixel_threshold < math.pi / 4:
            raise ValueError("pixel_threshold must lie in (0, pi/4)")
        if not 0 < self.change_fraction_threshold < 1:
            raise ValueError("change_fraction_threshold must lie in (0, 1)")
        if self.blur_size < 3 or self.blur_size % 2 == 0:
            raise ValueError("blur_size must be odd and >= 3")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(pixels: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication at the borders."""
    k = gaussian_kernel_1d(size, sigma)
    r = size // 2
    out = np.pad(np.asarray(pixels, dtype=float), r, mode="edge")
    h, w = out.shape
    rows = sum(k[i] * out[:, i : w - 2 * r + i] for i in range(size))
    return sum(k[i] * rows[i : h - 2 * r + i, :] for i in range(size))


def preprocess(frame: GrayFrame, params: ChangeParams = ChangeParams()) -> GrayFrame:
    return GrayFrame(gaussian_blur(frame.pixels, params.blur_size, params.blur_sigma))


def pixel_change_measure(a, b):
    """Angular change measure ``|pi/4 - atan2(a, b)|`` in [0, pi/4].

    Works on scalars or arrays. Computed as ``pi/4 - atan2(min, max)`` so the
    result is bitwise symmetric in its arguments; two zero pixels give 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    out = np.where(hi > 0, math.pi / 4 - np.arctan2(lo, np.where(hi > 0, hi, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def detect_change(
    reference: GrayFrame, live: GrayFrame, params: ChangeParams = ChangeParams()
) -> tuple[bool, float]:
    """Compare two preprocessed frames.

    Returns:
        ``(changed, changed_fraction)`` where ``changed_fraction`` is the share
        of pixels whose change measure exceeds ``params.pixel_threshold``.
    """
    if reference.pixels.shape != live.pixels.shape:
        raise ValueError(f"frame sizes differ: {reference.pixels.shape} vs {live.pixels.shape}")
    measure = pixel_change_measure(live.pixels, reference.pixels)
    fraction = float(np.count_nonzero(measure > params.pixel_threshold)) / measure.size
    return fraction >= params.change_fraction_threshold, fraction
