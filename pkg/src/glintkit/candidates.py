"""Controlled over-detection of plausible glints.

Feature extraction and appearance scoring, geometric support voting,
adaptive fallback passes, merge-dedup, pooling, and spatial gating. All
tie-breaks are fully specified (score descending, then (y, x) ascending)
so identical inputs always produce identical candidate lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from scipy import ndimage

from .enhance import Blob, EnhanceParams, GrayImage, enhance_small_structures, threshold_and_components
from .geometry import PointPx, normalize_points
from .templates import Template

LOCAL_CONTRAST_CAP = 10.0
DOG_RESPONSE_CAP = 0.5


@dataclass(frozen=True)
class CandidateFeatures:
    area: float = 0.0
    peak: float = 0.0
    mean_intensity: float = 0.0
    compactness: float = 1.0
    local_contrast: float = 0.0
    dog_response: float = 0.0


@dataclass(frozen=True)
class Candidate:
    center: PointPx
    score: float
    features: CandidateFeatures = CandidateFeatures()

    def __post_init__(self):
        if self.score < 0:
            raise ValueError("candidate score must be >= 0")


@dataclass(frozen=True)
class ScoreWeights:
    peak: float = 0.35
    mean: float = 0.15
    compactness: float = 0.30
    area: float = 0.20
    local_contrast: float = 0.0
    dog: float = 0.0

    @classmethod
    def for_mode(cls, mode: str) -> "ScoreWeights":
        if mode == "basic":
            return cls()
        if mode == "contrast_support":
            # Basic weights rescaled to sum 0.7, contrast terms get the rest.
            return cls(peak=0.245, mean=0.105, compactness=0.21, area=0.14, local_contrast=0.15, dog=0.15)
        raise ValueError(f"unknown score mode {mode!r}")


@dataclass(frozen=True)
class FallbackParams:
    enabled: bool = True
    pcts: tuple[float, ...] = (99.0, 98.0, 97.0)
    pass_max: int = 4
    target: int = 8
    kernel_add: float = 2.0

    def __post_init__(self):
        if list(self.pcts) != sorted(self.pcts, reverse=True):
            raise ValueError("fallback percentiles must be non-increasing")
        if self.target < 1:
            raise ValueError("fallback target must be >= 1")


@dataclass(frozen=True)
class GateParams:
    border_margin_px: float = 3.0
    annulus_inner_k: float = 0.2
    annulus_outer_k: float = 2.5
    min_k: int = 3
    force: bool = False
    default_pupil_radius_px: float = 40.0


@dataclass(frozen=True)
class DetectParams:
    percentile: float = 99.0
    score_mode: str = "basic"  # basic | contrast_support
    score_weights: ScoreWeights | None = None
    area_nominal_px2: float = 12.0
    area_sigma_px2: float = 10.0
    support_m: int = 20
    support_tol: float = 0.08
    support_w: float = 0.10
    fallback: FallbackParams = field(default_factory=FallbackParams)
    cand_merge_eps: float = 4.0
    pool_n_max: int = 12
    gates: GateParams = field(default_factory=GateParams)
    open_radius_px: int = 0
    min_area_px: float = 1.0
    max_area_px: float | None = None

    def __post_init__(self):
        if self.score_mode not in ("basic", "contrast_support"):
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        if self.cand_merge_eps <= 0:
            raise ValueError("cand_merge_eps must be > 0")
        if self.score_weights is None:
            object.__setattr__(self, "score_weights", ScoreWeights.for_mode(self.score_mode))


@dataclass
class PupilState:
    """Per-recording pupil estimate; the only stateful piece of the pipeline."""

    center: PointPx | None = None
    radius: float | None = None
    valid: bool = False
    last_good_center: PointPx | None = None

    def observe(self, center: PointPx | None, radius: float | None, ok: bool) -> None:
        self.center = center
        self.radius = radius
        self.valid = bool(ok and center is not None and radius is not None)
        if self.valid:
            self.last_good_center = center


def _cand_sort_key(c: Candidate):
    return (-c.score, c.center.y, c.center.x)


def compute_blob_features(b: Blob, img: GrayImage, want_contrast: bool) -> CandidateFeatures:
    compactness = 4 * math.pi * b.pixels / max(b.perimeter, 1e-9) ** 2
    compactness = min(max(compactness, 1e-9), 1.0)
    lc = dog = 0.0
    if want_contrast:
        lc = _local_contrast(b, img.data)
        dog = _dog_response(b, img.data)
    return CandidateFeatures(
        area=float(b.pixels),
        peak=float(b.peak),
        mean_intensity=float(b.mean),
        compactness=float(compactness),
        local_contrast=lc,
        dog_response=dog,
    )


def _local_contrast(b: Blob, data: np.ndarray) -> float:
    """(mean inside - mean of a 2-px surrounding ring) / (ring + 0.01), capped to [0, 1]."""
    x0, y0, x1, y1 = b.bbox
    h, w = data.shape
    ox0, oy0 = max(x0 - 2, 0), max(y0 - 2, 0)
    ox1, oy1 = min(x1 + 2, w - 1), min(y1 + 2, h - 1)
    outer = data[oy0 : oy1 + 1, ox0 : ox1 + 1]
    inner = data[y0 : y1 + 1, x0 : x1 + 1]
    ring_sum = float(outer.sum() - inner.sum())
    ring_n = outer.size - inner.size
    mean_ring = ring_sum / ring_n if ring_n > 0 else 0.0
    contrast = (b.mean - mean_ring) / (mean_ring + 0.01)
    return min(max(contrast / LOCAL_CONTRAST_CAP, 0.0), 1.0)


def _dog_response(b: Blob, data: np.ndarray, sigma1: float = 1.2, sigma2: float = 2.4) -> float:
    """Center-surround Gaussian response sampled at the blob centroid."""
    cx, cy = b.centroid.x, b.centroid.y
    r = int(math.ceil(3 * sigma2))
    h, w = data.shape
    ix, iy = int(round(cx)), int(round(cy))
    x0, x1 = max(ix - r, 0), min(ix + r, w - 1)
    y0, y1 = max(iy - r, 0), min(iy + r, h - 1)
    win = data[y0 : y1 + 1, x0 : x1 + 1]
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    g1 = np.exp(-d2 / (2 * sigma1**2))
    g2 = np.exp(-d2 / (2 * sigma2**2))
    resp = float((win * g1).sum() / g1.sum() - (win * g2).sum() / g2.sum())
    return min(max(resp / DOG_RESPONSE_CAP, 0.0), 1.0)


def score_features(
    f: CandidateFeatures,
    mode: str,
    weights: ScoreWeights,
    area_nominal: float = 12.0,
    area_sigma: float = 10.0,
) -> float:
    area_term = math.exp(-((f.area - area_nominal) ** 2) / (2 * area_sigma**2))
    score = (
        weights.peak * f.peak
        + weights.mean * f.mean_intensity
        + weights.compactness * f.compactness
        + weights.area * area_term
    )
    if mode == "contrast_support":
        score += weights.local_contrast * f.local_contrast + weights.dog * f.dog_response
    return score


def score_blob(
    b: Blob,
    img: GrayImage,
    mode: str = "basic",
    weights: ScoreWeights | None = None,
    area_nominal: float = 12.0,
    area_sigma: float = 10.0,
) -> float:
    """Fixed-weight appearance score favoring bright, compact, peak-like blobs."""
    if weights is None:
        weights = ScoreWeights.for_mode(mode)
    f = compute_blob_features(b, img, want_contrast=(mode == "contrast_support"))
    return score_features(f, mode, weights, area_nominal, area_sigma)


def support_vote(
    cands: list[Candidate],
    template: Template,
    m: int,
    tol: float,
    w: float,
) -> list[Candidate]:
    """Boost scores of candidates whose pair ratios echo the template geometry.

    Among the top-m candidates in normalized coordinate space, each
    candidate's support is the number of pairs whose pivot-edge ratio
    matches some template ratio within tol. Candidates outside the top-m
    are returned unchanged.
    """
    if len(cands) < 3:
        return list(cands)
    if m < 3:
        raise ValueError("support_m must be >= 3")

    order = sorted(range(len(cands)), key=lambda i: _cand_sort_key(cands[i]))
    top = order[: min(m, len(cands))]
    pts = normalize_points([cands[i].center for i in top]).points
    ratios = template.ratio_index.ratios

    def has_match(r: float) -> bool:
        j = int(np.searchsorted(ratios, r))
        for jj in (j - 1, j):
            if 0 <= jj < len(ratios) and abs(float(ratios[jj]) - r) <= tol:
                return True
        return j < len(ratios) and abs(float(ratios[j]) - r) <= tol

    n = len(top)
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    support = np.zeros(n, dtype=int)
    for ci in range(n):
        others = [i for i in range(n) if i != ci]
        for ai in range(len(others)):
            for bi in range(ai + 1, len(others)):
                da, db = d[ci, others[ai]], d[ci, others[bi]]
                lo, hi = (da, db) if da <= db else (db, da)
                if hi < 1e-12:
                    continue
                if has_match(float(lo / hi)):
                    support[ci] += 1

    max_support = int(support.max()) if support.max() > 0 else 1
    out = list(cands)
    for rank, i in enumerate(top):
        mult = 1.0 + w * support[rank] / max_support
        out[i] = replace(cands[i], score=cands[i].score * mult)
    return out


def detect_one_pass(
    img: GrayImage,
    enhance_params: EnhanceParams,
    detect_params: DetectParams,
    template: Template | None = None,
    percentile_override: float | None = None,
    kernel_override: int | None = None,
) -> tuple[list[Candidate], list[float], int]:
    """enhance -> threshold -> components -> score (+ support voting)."""
    ep = enhance_params
    if kernel_override is not None:
        ep = replace(ep, kernel_px=_round_odd(kernel_override))
    enhanced = enhance_small_structures(img, ep)
    pct = detect_params.percentile if percentile_override is None else percentile_override
    blobs, raw = threshold_and_components(
        enhanced,
        pct,
        open_radius_px=detect_params.open_radius_px,
        min_area_px=detect_params.min_area_px,
        max_area_px=detect_params.max_area_px,
    )
    mode = detect_params.score_mode
    weights = detect_params.score_weights
    cands = []
    for b in blobs:
        f = compute_blob_features(b, enhanced, want_contrast=(mode == "contrast_support"))
        s = score_features(f, mode, weights, detect_params.area_nominal_px2, detect_params.area_sigma_px2)
        cands.append(Candidate(center=b.centroid, score=s, features=f))
    if mode == "contrast_support" and template is not None:
        cands = support_vote(cands, template, detect_params.support_m, detect_params.support_tol, detect_params.support_w)
    return cands, [c.score for c in cands], raw


def _round_odd(k: float) -> int:
    ki = max(int(round(k)), 3)
    return ki if ki % 2 == 1 else ki + 1


def merge_dedup_keep_best(cands: list[Candidate], eps: float) -> list[Candidate]:
    """Greedy non-maximum suppression keeping the best-scored representative."""
    if eps <= 0:
        raise ValueError("merge eps must be > 0")
    kept: list[Candidate] = []
    for c in sorted(cands, key=_cand_sort_key):
        if all(math.hypot(c.center.x - k.center.x, c.center.y - k.center.y) > eps for k in kept):
            kept.append(c)
    return kept


def pool_top_n(cands: list[Candidate], n_max: int) -> list[Candidate]:
    if n_max < 1:
        raise ValueError("pool size must be >= 1")
    return sorted(cands, key=_cand_sort_key)[:n_max]


def adaptive_fallback_detect(
    img: GrayImage,
    enhance_params: EnhanceParams,
    detect_params: DetectParams,
    template: Template | None = None,
) -> tuple[list[Candidate], int]:
    """One detection pass plus relaxed fallback passes until the pool is full.

    Returns (merged candidates, number of fallback passes executed).
    """
    fb = detect_params.fallback
    cands, _, raw = detect_one_pass(img, enhance_params, detect_params, template)
    passes = 0
    if not fb.enabled or raw >= fb.target:
        return cands, passes
    pool = cands
    for i in range(1, fb.pass_max + 1):
        pct = fb.pcts[min(i - 1, len(fb.pcts) - 1)]
        kernel = enhance_params.kernel_px + i * fb.kernel_add
        extra, _, _ = detect_one_pass(
            img, enhance_params, detect_params, template,
            percentile_override=pct, kernel_override=kernel,
        )
        passes = i
        pool = merge_dedup_keep_best(pool + extra, detect_params.cand_merge_eps)
        if len(pool) >= fb.target:
            break
    return pool, passes


def gate_candidates(
    cands: list[Candidate],
    gates: GateParams,
    frame_size: tuple[int, int],
    pupil: PupilState | None,
) -> list[Candidate]:
    """Border gate, then pupil-centered annulus gate (guarded by min_k unless forced).

    Only removes candidates; never reorders or rescores.
    """
    w, h = frame_size
    m = gates.border_margin_px
    out = [c for c in cands if min(c.center.x, c.center.y, w - 1 - c.center.x, h - 1 - c.center.y) >= m]

    center, radius = _gate_center_radius(pupil, gates)
    if center is None or radius is None or radius <= 0:
        return out
    lo, hi = gates.annulus_inner_k * radius, gates.annulus_outer_k * radius
    ringed = [c for c in out if lo <= math.hypot(c.center.x - center.x, c.center.y - center.y) <= hi]
    if len(ringed) >= gates.min_k or gates.force:
        return ringed
    return out


def _gate_center_radius(pupil: PupilState | None, gates: GateParams):
    if pupil is None:
        return None, None
    if pupil.valid:
        return pupil.center, pupil.radius
    if pupil.last_good_center is not None:
        return pupil.last_good_center, gates.default_pupil_radius_px
    return None, None


def resolve_pupil_roi(pupil: PupilState, fail_policy: str) -> tuple[str, PointPx | None]:
    """Decide how to proceed given the current pupil estimate.

    Returns (action, roi_center): action is "use", "full", or "skip".
    """
    if fail_policy not in ("last_good", "full", "skip"):
        raise ValueError(f"unknown pupil fail policy {fail_policy!r}")
    if pupil.valid:
        return "use", pupil.center
    if fail_policy == "last_good":
        if pupil.last_good_center is not None:
            return "use", pupil.last_good_center
        return "full", None
    if fail_policy == "skip":
        return "skip", None
    return "full", None


def compute_pupil_roi(img: GrayImage, center: PointPx, side_px: float) -> tuple[GrayImage, tuple[int, int]]:
    """Fixed-size square ROI around center, clipped to frame bounds.

    Returns (sub image, (dx, dy) offset of the ROI origin in the full frame).
    """
    half = int(round(side_px / 2))
    h, w = img.data.shape
    x0 = min(max(int(round(center.x)) - half, 0), max(w - 1, 0))
    y0 = min(max(int(round(center.y)) - half, 0), max(h - 1, 0))
    x1 = min(x0 + 2 * half, w)
    y1 = min(y0 + 2 * half, h)
    x0 = max(x1 - 2 * half, 0)
    y0 = max(y1 - 2 * half, 0)
    return GrayImage(img.data[y0:y1, x0:x1]), (x0, y0)


def map_to_full_and_in_bounds(
    cands: list[Candidate],
    offset: tuple[int, int],
    frame_size: tuple[int, int],
) -> list[Candidate]:
    """Shift ROI-space candidates back to full-frame coordinates; drop out-of-bounds."""
    dx, dy = offset
    w, h = frame_size
    out = []
    for c in cands:
        x, y = c.center.x + dx, c.center.y + dy
        if 0 <= x <= w - 1 and 0 <= y <= h - 1:
            out.append(replace(c, center=PointPx(x, y)))
    return out


def darkest_region_pupil(img: GrayImage) -> tuple[PointPx | None, float | None, bool]:
    """Label-free fallback pupil detector: darkest-region centroid after heavy blur.

    Not competitive with a real pupil detector; exists so the pipeline can
    run on datasets without pupil labels.
    """
    data = img.data.astype(np.float32)
    h, w = data.shape
    sigma = max(min(h, w) / 40.0, 2.0)
    blurred = cv2.GaussianBlur(data, (0, 0), sigma)
    iy, ix = np.unravel_index(int(np.argmin(blurred)), blurred.shape)
    lo, hi = float(blurred.min()), float(blurred.max())
    if hi - lo < 1e-9:
        return None, None, False
    mask = blurred <= lo + 0.15 * (hi - lo)
    labels, _ = ndimage.label(mask)
    region = labels == labels[iy, ix]
    area = int(region.sum())
    if not (0.0005 * data.size <= area <= 0.25 * data.size):
        return None, None, False
    ys, xs = np.nonzero(region)
    center = PointPx(float(xs.mean()), float(ys.mean()))
    radius = math.sqrt(area / math.pi)
    return center, radius, True
