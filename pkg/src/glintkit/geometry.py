"""2D point utilities and similarity-transform fitting.

Everything here is pure and stateless. Points cross the API as PointPx
values or anything `as_xy` understands; internally all math runs on
(N, 2) float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateSet(ValueError):
    """Point set cannot support the requested fit (coincident / too few)."""


class DegenerateTriplet(ValueError):
    """Source triplet is collinear or nearly so."""


# Triangle area below this fraction of (longest side)^2 counts as collinear.
COLLINEAR_AREA_EPS = 1e-6


@dataclass(frozen=True, slots=True)
class PointPx:
    """A 2D point in pixel units."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


def as_xy(points) -> np.ndarray:
    """Coerce a sequence of PointPx / (x, y) pairs / array to an (N, 2) float array."""
    if isinstance(points, np.ndarray):
        pts = np.asarray(points, dtype=float)
    else:
        pts = np.array([(p.x, p.y) if isinstance(p, PointPx) else (p[0], p[1]) for p in points], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (N, 2) points, got shape {pts.shape}")
    return pts


def _normalize_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = math.remainder(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


@dataclass(frozen=True, slots=True)
class SimilarityTransform:
    """Scale/rotation/translation (+ optional mirror) in 2D.

    Applies as ``p' = t + s * R(rotation) * M * p`` where M reflects about
    the y-axis (x -> -x) when mirror is set. Keeping the mirror as a flag
    (rather than a negative scale) preserves the scale > 0 invariant.
    """

    scale: float
    rotation: float
    translation: tuple[float, float]
    mirror: bool = False

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")
        object.__setattr__(self, "rotation", _normalize_angle(float(self.rotation)))
        tx, ty = self.translation
        if not (math.isfinite(tx) and math.isfinite(ty)):
            raise ValueError("non-finite translation")
        object.__setattr__(self, "translation", (float(tx), float(ty)))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(scale=1.0, rotation=0.0, translation=(0.0, 0.0), mirror=False)

    def matrix(self) -> np.ndarray:
        """2x2 linear part s * R * M."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        a = self.scale * np.array([[c, -s], [s, c]])
        if self.mirror:
            a[:, 0] = -a[:, 0]
        return a

    def apply(self, points) -> np.ndarray:
        pts = as_xy(points)
        return pts @ self.matrix().T + np.asarray(self.translation)

    def apply_point(self, p) -> PointPx:
        xy = self.apply([p])[0]
        return PointPx(float(xy[0]), float(xy[1]))

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        if self.mirror:
            rot = self.rotation
            c, s = math.cos(rot), math.sin(rot)
            lin = inv_scale * np.array([[-c, -s], [-s, c]])  # (1/s) R(rot) M
        else:
            rot = -self.rotation
            c, s = math.cos(rot), math.sin(rot)
            lin = inv_scale * np.array([[c, -s], [s, c]])
        t = -lin @ np.asarray(self.translation)
        return SimilarityTransform(inv_scale, rot, (float(t[0]), float(t[1])), self.mirror)

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying `inner` first, then self."""
        rot = self.rotation + (-inner.rotation if self.mirror else inner.rotation)
        t = self.apply([inner.translation])[0]
        return SimilarityTransform(
            self.scale * inner.scale,
            rot,
            (float(t[0]), float(t[1])),
            self.mirror ^ inner.mirror,
        )


@dataclass(frozen=True)
class NormalizedSet:
    """Zero-mean, unit-RMS point set plus the map back to original units."""

    points: np.ndarray  # (N, 2), centroid 0, RMS radius 1
    centroid: PointPx
    rms: float


def normalize_points(points) -> NormalizedSet:
    """Shift to zero mean and scale to unit RMS radius.

    Raises DegenerateSet for fewer than 2 points or all-coincident input.
    """
    pts = as_xy(points)
    if len(pts) < 2:
        raise DegenerateSet(f"need >= 2 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    rms = math.sqrt(float(np.mean(np.sum(centered**2, axis=1))))
    if rms < 1e-12:
        raise DegenerateSet("zero RMS radius (all points coincident)")
    return NormalizedSet(centered / rms, PointPx(float(centroid[0]), float(centroid[1])), rms)


def _fit_complex(src: np.ndarray, dst: np.ndarray) -> tuple[complex, complex, float]:
    """Least-squares zd = a*zs + b over corresponding points.

    Returns (a, b, ssr). The complex form is the exact closed-form 2D
    similarity solution.
    """
    zs = src[:, 0] + 1j * src[:, 1]
    zd = dst[:, 0] + 1j * dst[:, 1]
    ms, md = zs.mean(), zd.mean()
    zs_c, zd_c = zs - ms, zd - md
    denom = float(np.sum(np.abs(zs_c) ** 2))
    if denom < 1e-24:
        raise DegenerateSet("source points all coincident")
    a = complex(np.sum(zd_c * np.conj(zs_c)) / denom)
    b = md - a * ms
    ssr = float(np.sum(np.abs(zd - (a * zs + b)) ** 2))
    return a, b, ssr


def _transform_from_complex(a: complex, b: complex, mirror: bool) -> SimilarityTransform:
    scale = abs(a)
    if scale < 1e-15:
        raise DegenerateSet("degenerate fit (zero scale)")
    return SimilarityTransform(scale, math.atan2(a.imag, a.real), (b.real, b.imag), mirror)


def fit_similarity_lsq(src, dst, allow_mirror: bool = False) -> SimilarityTransform:
    """Closed-form least-squares similarity mapping src onto dst.

    With allow_mirror the reflected solution is also evaluated and the
    branch with lower sum of squared residuals wins.
    """
    s = as_xy(src)
    d = as_xy(dst)
    if s.shape != d.shape:
        raise ValueError(f"src/dst shape mismatch: {s.shape} vs {d.shape}")
    if len(s) < 2:
        raise DegenerateSet(f"need >= 2 pairs, got {len(s)}")

    a, b, ssr = _fit_complex(s, d)
    if not allow_mirror:
        return _transform_from_complex(a, b, mirror=False)

    s_ref = s.copy()
    s_ref[:, 0] = -s_ref[:, 0]
    try:
        a_m, b_m, ssr_m = _fit_complex(s_ref, d)
    except DegenerateSet:
        return _transform_from_complex(a, b, mirror=False)
    if ssr_m < ssr:
        return _transform_from_complex(a_m, b_m, mirror=True)
    return _transform_from_complex(a, b, mirror=False)


def triangle_area(pts: np.ndarray) -> float:
    """Unsigned area of the triangle spanned by 3 points."""
    (x0, y0), (x1, y1), (x2, y2) = pts
    return 0.5 * abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def signed_polygon_area(pts: np.ndarray) -> float:
    """Signed (shoelace) area; sign flips under reflection."""
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_collinear(pts: np.ndarray, area_eps: float = COLLINEAR_AREA_EPS) -> bool:
    sides = [
        float(np.hypot(*(pts[i] - pts[j])))
        for i, j in ((0, 1), (1, 2), (2, 0))
    ]
    longest = max(sides)
    if longest <= 0:
        return True
    return triangle_area(pts) < area_eps * longest**2


def fit_similarity_exact3(src, dst, allow_mirror: bool = False) -> SimilarityTransform:
    """Similarity fit from exactly 3 correspondences.

    Maps each src point to its dst point exactly when the triangles are
    exactly similar; otherwise the least-squares fit over the 3 pairs.
    """
    s = as_xy(src)
    d = as_xy(dst)
    if len(s) != 3 or len(d) != 3:
        raise ValueError("exact-3 fit requires exactly 3 point pairs")
    if is_collinear(s):
        raise DegenerateTriplet("source triplet is (near-)collinear")
    return fit_similarity_lsq(s, d, allow_mirror=allow_mirror)


@dataclass(frozen=True)
class ResidualStats:
    per_point: np.ndarray
    median: float
    max: float


def residual_stats(t: SimilarityTransform, src, dst) -> ResidualStats:
    """Euclidean residuals ||t(src_i) - dst_i||; even-count median uses the midpoint."""
    s = as_xy(src)
    d = as_xy(dst)
    if s.shape != d.shape:
        raise ValueError(f"src/dst length mismatch: {len(s)} vs {len(d)}")
    if len(s) < 1:
        raise ValueError("need >= 1 pair")
    res = np.hypot(*(t.apply(s) - d).T)
    return ResidualStats(res, float(np.median(res)), float(res.max()))
