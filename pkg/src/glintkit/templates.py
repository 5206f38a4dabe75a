"""LED-layout templates: construction, the triplet ratio index, and bank scoring.

A template is a normalized (zero-mean, unit-RMS) 2D layout of LED
reflection positions with persistent integer identities. The ratio index
precomputes every pivot-edge distance ratio for range queries during
matcher seeding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import DegenerateSet, as_xy, fit_similarity_lsq, normalize_points

TEMPLATE_SCHEMA_VERSION = 1


class LedIdMismatch(ValueError):
    """Input constellations do not share one LED id set."""


@dataclass(frozen=True)
class Template:
    """K normalized LED positions with identities."""

    points: np.ndarray  # (K, 2), zero-mean, unit-RMS
    led_ids: tuple[int, ...]
    layout_name: str = "unnamed"
    provenance_images: tuple[str, ...] = ()

    def __post_init__(self):
        pts = as_xy(self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "led_ids", tuple(int(i) for i in self.led_ids))
        if len(self.led_ids) != len(pts):
            raise ValueError("led_ids length must match point count")
        if len(set(self.led_ids)) != len(self.led_ids):
            raise ValueError("led_ids must be unique")
        if len(pts) < 3:
            raise ValueError(f"template needs K >= 3 LEDs, got {len(pts)}")
        ns = normalize_points(pts)
        if not np.allclose(ns.points, pts, atol=1e-9) or abs(ns.rms - 1) > 1e-9:
            raise ValueError("template points must be zero-mean with unit RMS radius")

    @property
    def k(self) -> int:
        return len(self.led_ids)

    def point_of(self, led_id: int) -> np.ndarray:
        return self.points[self.led_ids.index(led_id)]

    @cached_property
    def ratio_index(self) -> "RatioIndex":
        return build_ratio_index(self)


@dataclass(frozen=True)
class RatioEntry:
    ratio: float  # in (0, 1]
    pivot_id: int
    a_id: int  # numerator (closer) edge endpoint
    b_id: int


@dataclass(frozen=True)
class RatioIndex:
    """All pivot-edge distance ratios of a template, sorted for range queries."""

    entries: tuple[RatioEntry, ...]
    ratios: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rs = np.array([e.ratio for e in self.entries], dtype=float)
        if np.any(np.diff(rs) < 0):
            raise ValueError("entries must be sorted ascending by ratio")
        object.__setattr__(self, "ratios", rs)


def build_ratio_index(t: Template) -> RatioIndex:
    """One entry per (pivot, unordered pair) triplet, ratio = min/max pivot edge."""
    pts = t.points
    k = t.k
    dists = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    if np.any(dists[~np.eye(k, dtype=bool)] < 1e-12):
        raise DegenerateSet("template has coincident points")
    entries = []
    for p in range(k):
        others = [i for i in range(k) if i != p]
        for ai in range(len(others)):
            for bi in range(ai + 1, len(others)):
                a, b = others[ai], others[bi]
                da, db = dists[p, a], dists[p, b]
                if da > db or (da == db and t.led_ids[a] > t.led_ids[b]):
                    a, b = b, a
                    da, db = db, da
                entries.append(RatioEntry(float(da / db), t.led_ids[p], t.led_ids[a], t.led_ids[b]))
    entries.sort(key=lambda e: (e.ratio, e.pivot_id, e.a_id, e.b_id))
    return RatioIndex(tuple(entries))


def query_ratio_index(idx: RatioIndex, r: float, tol: float) -> list[RatioEntry]:
    """All entries with |ratio - r| <= tol, via binary search."""
    lo = int(np.searchsorted(idx.ratios, r - tol, side="left"))
    hi = int(np.searchsorted(idx.ratios, r + tol, side="right"))
    return list(idx.entries[lo:hi])


@dataclass(frozen=True)
class RatioTolPolicy:
    """Effective ratio tolerance: base, optionally widened when few candidates."""

    base: float = 0.10
    adaptive: bool = False
    kappa: float = 4.0
    tol_min: float = 0.05
    tol_max: float = 0.15


def effective_ratio_tol(policy: RatioTolPolicy, n_cands: int) -> float:
    if not policy.adaptive:
        return policy.base
    tol = policy.base * (1.0 + policy.kappa / max(n_cands, 1))
    return min(max(tol, policy.tol_min), policy.tol_max)


def _as_constellation(c) -> dict[int, np.ndarray]:
    out = {}
    for led_id, p in c.items():
        xy = as_xy([p])[0]
        out[int(led_id)] = xy
    return out


def build_template(
    constellations,
    method: str = "procrustes",
    layout_name: str = "unnamed",
    provenance_images: tuple[str, ...] = (),
) -> Template:
    """Aggregate labeled constellations into one normalized template.

    `constellations` is a sequence of {led_id: point} mappings sharing one
    id set. `median` takes the coordinate-wise median of the normalized
    inputs; `procrustes` iteratively aligns them to a running mean shape.
    """
    if method not in ("median", "procrustes"):
        raise ValueError(f"unknown aggregation method {method!r}")
    consts = [_as_constellation(c) for c in constellations]
    if not consts:
        raise ValueError("need at least one constellation")
    ids = sorted(consts[0])
    for c in consts[1:]:
        if sorted(c) != ids:
            raise LedIdMismatch(f"LED id sets differ: {sorted(c)} vs {ids}")
    if len(ids) < 3:
        raise ValueError("constellations need >= 3 LEDs")

    stacks = []
    for c in consts:
        pts = np.array([c[i] for i in ids], dtype=float)
        stacks.append(normalize_points(pts).points)

    if method == "median" or len(stacks) == 1:
        agg = np.median(np.stack(stacks), axis=0)
    else:
        agg = _procrustes_mean(stacks)

    pts = normalize_points(agg).points
    return Template(pts, tuple(ids), layout_name=layout_name, provenance_images=tuple(provenance_images))


def _procrustes_mean(stacks: list[np.ndarray], tol: float = 1e-8, max_iter: int = 50) -> np.ndarray:
    """Generalized Procrustes mean, orientation anchored to the first input."""
    mean = stacks[0]
    for _ in range(max_iter):
        aligned = []
        for pts in stacks:
            t = fit_similarity_lsq(pts, mean, allow_mirror=False)
            aligned.append(t.apply(pts))
        new_mean = normalize_points(np.mean(np.stack(aligned), axis=0)).points
        moved = float(np.max(np.hypot(*(new_mean - mean).T)))
        mean = new_mean
        if moved < tol:
            break
    return mean


@dataclass(frozen=True)
class TemplateBank:
    templates: tuple[Template, ...]

    def __post_init__(self):
        if not self.templates:
            raise ValueError("template bank must be non-empty")


def score_match_result(result, eps: float, lam: float = 0.5) -> float:
    """Bank-selection score: inliers dominant, residual consistency as tiebreaker."""
    if result is None:
        return -math.inf
    return result.inliers - lam * result.median_residual / eps


def save_template(t: Template, path) -> None:
    rec = {
        "schema": TEMPLATE_SCHEMA_VERSION,
        "layout_name": t.layout_name,
        "K": t.k,
        "led_ids": list(t.led_ids),
        "points": [[float(x), float(y)] for x, y in t.points],
        "provenance_images": list(t.provenance_images),
    }
    Path(path).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def load_template(path) -> Template:
    rec = json.loads(Path(path).read_text())
    if rec.get("schema") != TEMPLATE_SCHEMA_VERSION:
        raise ValueError(f"unsupported template schema {rec.get('schema')!r}")
    return Template(
        np.array(rec["points"], dtype=float),
        tuple(rec["led_ids"]),
        layout_name=rec.get("layout_name", "unnamed"),
        provenance_images=tuple(rec.get("provenance_images", ())),
    )
