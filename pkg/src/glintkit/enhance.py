"""Grayscale conversion and small-bright-structure amplification.

Produces the enhanced image that candidate extraction thresholds, plus the
connected-component blobs themselves. All outputs are deterministic for a
given input and parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .geometry import PointPx

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class GrayImage:
    """2D grayscale raster with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 2:
            raise ValueError(f"expected 2D data, got shape {d.shape}")
        if d.size == 0:
            raise ValueError("empty image")
        if not np.isfinite(d).all():
            raise ValueError("non-finite intensities")
        if float(d.min()) < 0.0 or float(d.max()) > 1.0:
            raise ValueError("intensities outside [0, 1]")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def to_gray(raster: np.ndarray) -> GrayImage:
    """Convert an 8/16-bit grayscale or 8-bit RGB raster to a GrayImage."""
    arr = np.asarray(raster)
    if arr.ndim == 3:
        if arr.shape[2] not in (3, 4):
            raise ValueError(f"expected RGB(A) raster, got shape {arr.shape}")
        rgb = arr[..., :3].astype(np.float64)
        if arr.dtype == np.uint8:
            rgb /= 255.0
        elif arr.dtype == np.uint16:
            rgb /= 65535.0
        r, g, b = LUMA_WEIGHTS
        gray = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    elif arr.ndim == 2:
        if arr.dtype == np.uint8:
            gray = arr.astype(np.float64) / 255.0
        elif arr.dtype == np.uint16:
            gray = arr.astype(np.float64) / 65535.0
        else:
            gray = arr.astype(np.float64)
    else:
        raise ValueError(f"unsupported raster shape {arr.shape}")
    return GrayImage(np.clip(gray, 0.0, 1.0))


@dataclass(frozen=True)
class EnhanceParams:
    method: str = "tophat"  # tophat | dog | highpass
    kernel_px: int = 5
    dog_sigma_ratio: float = 2.0
    clahe_enabled: bool = False
    clahe_clip: float = 2.0
    clahe_tiles: int = 8
    denoise_enabled: bool = False

    def __post_init__(self):
        if self.method not in ("tophat", "dog", "highpass"):
            raise ValueError(f"unknown enhancement method {self.method!r}")
        if self.kernel_px < 3 or self.kernel_px % 2 == 0:
            raise ValueError(f"kernel_px must be odd and >= 3, got {self.kernel_px}")
        if self.dog_sigma_ratio <= 1:
            raise ValueError("dog_sigma_ratio must be > 1")


def disk_footprint(kernel_px: int) -> np.ndarray:
    """Binary disk of diameter kernel_px (odd), the tophat/open structuring element."""
    r = kernel_px // 2
    yy, xx = np.ogrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy <= r * r).astype(np.uint8)


def _minmax_normalize(data: np.ndarray) -> np.ndarray:
    lo = float(data.min())
    hi = float(data.max())
    if hi - lo < 1e-12:
        return np.zeros_like(data)
    return (data - lo) / (hi - lo)


def enhance_small_structures(img: GrayImage, p: EnhanceParams) -> GrayImage:
    """Amplify small bright structures; output is min-max normalized to [0, 1]."""
    data = img.data.astype(np.float32)

    if p.denoise_enabled:
        data = cv2.medianBlur(data, 3)

    if p.method == "tophat":
        kernel = disk_footprint(p.kernel_px)
        opened = cv2.morphologyEx(data, cv2.MORPH_OPEN, kernel, borderType=cv2.BORDER_REPLICATE)
        out = data - opened
    elif p.method == "dog":
        sigma1 = p.kernel_px / 6.0
        sigma2 = sigma1 * p.dog_sigma_ratio
        g1 = cv2.GaussianBlur(data, (0, 0), sigma1)
        g2 = cv2.GaussianBlur(data, (0, 0), sigma2)
        out = np.maximum(g1 - g2, 0.0)
    else:  # highpass
        blurred = cv2.blur(data, (p.kernel_px, p.kernel_px))
        out = np.maximum(data - blurred, 0.0)

    if p.clahe_enabled:
        span = float(out.max()) - float(out.min())
        if span > 1e-12:
            as16 = np.round((out - out.min()) / span * 65535.0).astype(np.uint16)
            clahe = cv2.createCLAHE(clipLimit=p.clahe_clip, tileGridSize=(p.clahe_tiles, p.clahe_tiles))
            out = clahe.apply(as16).astype(np.float32) / 65535.0

    return GrayImage(_minmax_normalize(out.astype(np.float64)))


@dataclass(frozen=True)
class Blob:
    """A connected bright component of the thresholded enhanced image."""

    pixels: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1) inclusive
    centroid: PointPx
    peak: float
    mean: float = 0.0
    perimeter: float = field(default=4.0)


def nearest_rank_percentile(data: np.ndarray, percentile: float) -> float:
    """Percentile as an actual data value, ranks rounded upward (no interpolation)."""
    return float(np.percentile(data, percentile, method="higher"))


def threshold_and_components(
    img: GrayImage,
    percentile: float,
    open_radius_px: int = 0,
    min_area_px: float = 1,
    max_area_px: float | None = None,
) -> tuple[list[Blob], int]:
    """Percentile threshold, morphological cleanup, 8-connected components.

    Returns (blobs, raw_count) where raw_count is the component count
    before the area filter. Exact-zero pixels never enter the foreground;
    after min-max normalization they carry no structure.
    """
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {percentile}")
    data = img.data
    if max_area_px is None:
        max_area_px = 0.005 * data.size

    thresh = nearest_rank_percentile(data, percentile)
    mask = (data >= thresh) & (data > 0)
    if open_radius_px > 0 and mask.any():
        kernel = disk_footprint(2 * open_radius_px + 1)
        mask = cv2.morphologyEx(mask.astype(np.uint8), cv2.MORPH_OPEN, kernel).astype(bool)

    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return [], 0

    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    wsum = np.bincount(flat, weights=data.ravel(), minlength=n + 1)[1:]
    yy, xx = np.indices(data.shape)
    cx = np.bincount(flat, weights=(data * xx).ravel(), minlength=n + 1)[1:] / wsum
    cy = np.bincount(flat, weights=(data * yy).ravel(), minlength=n + 1)[1:] / wsum
    peaks = ndimage.maximum(data, labels, index=np.arange(1, n + 1))
    perims = _boundary_edge_counts(labels, n)
    slices = ndimage.find_objects(labels)

    blobs = []
    for i in range(n):
        if not (min_area_px <= areas[i] <= max_area_px):
            continue
        sl = slices[i]
        bbox = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)
        blobs.append(
            Blob(
                pixels=int(areas[i]),
                bbox=bbox,
                centroid=PointPx(float(cx[i]), float(cy[i])),
                peak=float(peaks[i]),
                mean=float(wsum[i] / areas[i]),
                perimeter=float(perims[i]),
            )
        )
    return blobs, int(n)


def _boundary_edge_counts(labels: np.ndarray, n: int) -> np.ndarray:
    """Per-label count of pixel edges facing a different label or the image border."""
    counts = np.zeros(n + 1, dtype=np.int64)
    padded = np.pad(labels, 1, mode="constant", constant_values=0)
    core = padded[1:-1, 1:-1]
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        neighbor = padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
        edge = (core != 0) & (neighbor != core)
        counts += np.bincount(core[edge], minlength=n + 1)
    return counts[1:]
