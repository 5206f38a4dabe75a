"""Identity-preserving correspondence between pooled candidates and a template.

The primary matcher seeds similarity hypotheses from ratio-consistent
candidate triplets, grows them by tolerance-gated assignment with
refitting, and selects the winner by a 4-level key. RANSAC and
star-voting baselines plus a hybrid wrapper share the same finalize path
and gates, so results are comparable. Failure (no valid hypothesis) is a
legitimate per-frame outcome, returned as None.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .candidates import Candidate
from .geometry import (
    DegenerateSet,
    DegenerateTriplet,
    SimilarityTransform,
    fit_similarity_exact3,
    fit_similarity_lsq,
    normalize_points,
    residual_stats,
    signed_polygon_area,
)
from .templates import RatioIndex, RatioTolPolicy, Template, effective_ratio_tol

INFEASIBLE = 1e9


@dataclass(frozen=True)
class SlaParams:
    eps: float = 6.0
    ratio_tol: RatioTolPolicy = field(default_factory=RatioTolPolicy)
    pivot_p: int = 6
    max_seeds_per_pivot: int = 16
    max_seeds: int = 64
    grow_resid_max: float | None = None  # defaults to eps
    min_inliers: int = 3
    scale_gate: tuple[float, float] = (5.0, 200.0)
    semantic_prior: bool = False
    mirror_reject: bool = True
    assignment_mode: str = "hungarian"  # greedy | hungarian
    seed_w_app: float = 0.5
    seed_w_res: float = 0.5
    star_dist_tol: float = 0.08
    ransac_iterations: int = 256

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")
        if not self.scale_gate[0] < self.scale_gate[1]:
            raise ValueError("scale gate must satisfy s_min < s_max")
        if self.assignment_mode not in ("greedy", "hungarian"):
            raise ValueError(f"unknown assignment mode {self.assignment_mode!r}")

    @property
    def grow_gate(self) -> float:
        return self.eps if self.grow_resid_max is None else self.grow_resid_max


@dataclass(frozen=True)
class MatchResult:
    assignment: dict[int, int]  # led_id -> candidate index
    transform: SimilarityTransform
    inliers: int
    median_residual: float
    max_residual: float
    appearance_sum: float
    cost: float
    matcher: str = "sla"

    def __post_init__(self):
        if self.inliers != len(self.assignment):
            raise ValueError("inliers must equal assignment size")
        vals = list(self.assignment.values())
        if len(set(vals)) != len(vals):
            raise ValueError("assignment must be injective over candidates")


@dataclass(frozen=True)
class VetoResult:
    hard_veto: bool
    penalty: float = 0.0


def semantic_mirror_veto(
    template: Template,
    transform: SimilarityTransform,
    matched_points: dict[int, tuple[float, float]],
    p: SlaParams,
) -> VetoResult:
    """Mirror rejection plus the 5-LED layout prior.

    `matched_points` maps led ids to their hypothesized image positions
    (a seed triplet or a full assignment). The hard semantic veto fires
    when the id-ordered polygon flips orientation relative to the
    template; the soft penalty grows with angular-order disagreement
    around the centroid.
    """
    if p.mirror_reject and transform.mirror:
        return VetoResult(hard_veto=True)
    if not p.semantic_prior or template.k != 5 or len(matched_points) < 3:
        return VetoResult(hard_veto=False)

    leds = sorted(matched_points)
    img_pts = np.array([matched_points[i] for i in leds], dtype=float)
    tpl_pts = np.array([template.point_of(i) for i in leds], dtype=float)
    area_img = signed_polygon_area(img_pts)
    area_tpl = signed_polygon_area(tpl_pts)
    if area_img * area_tpl < 0:
        return VetoResult(hard_veto=True)

    penalty = _angular_order_penalty(tpl_pts, img_pts)
    return VetoResult(hard_veto=False, penalty=penalty)


def _angular_order_penalty(tpl_pts: np.ndarray, img_pts: np.ndarray) -> float:
    """Fraction of LEDs out of cyclic angular order around the centroid."""
    n = len(tpl_pts)
    if n < 3:
        return 0.0

    def ring(pts):
        c = pts.mean(axis=0)
        ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
        return list(np.argsort(ang, kind="stable"))

    ref, hyp = ring(tpl_pts), ring(img_pts)
    best = 0
    for shift in range(n):
        rotated = hyp[shift:] + hyp[:shift]
        best = max(best, sum(1 for a, b in zip(ref, rotated) if a == b))
    return (n - best) / n


def _cand_arrays(cands: list[Candidate]) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([[c.center.x, c.center.y] for c in cands], dtype=float)
    scores = np.array([c.score for c in cands], dtype=float)
    return pts, scores


def _pivot_order(pts: np.ndarray, scores: np.ndarray) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], pts[i, 1], pts[i, 0]))


class _IndexArrays:
    """Ratio-index entries unpacked to arrays for batched seeding."""

    def __init__(self, template: Template, idx: RatioIndex):
        led_pos = {i: template.point_of(i) for i in template.led_ids}
        self.ratios = idx.ratios
        self.trip_ids = np.array([(e.pivot_id, e.a_id, e.b_id) for e in idx.entries], dtype=int)
        self.trip_pts = np.array(
            [[led_pos[e.pivot_id], led_pos[e.a_id], led_pos[e.b_id]] for e in idx.entries], dtype=float
        )
        src = self.trip_pts
        # Collinearity mask per entry, scale-invariant.
        area = 0.5 * np.abs(
            (src[:, 1, 0] - src[:, 0, 0]) * (src[:, 2, 1] - src[:, 0, 1])
            - (src[:, 2, 0] - src[:, 0, 0]) * (src[:, 1, 1] - src[:, 0, 1])
        )
        sides = np.stack(
            [
                np.hypot(*(src[:, 0] - src[:, 1]).T),
                np.hypot(*(src[:, 1] - src[:, 2]).T),
                np.hypot(*(src[:, 2] - src[:, 0]).T),
            ]
        ).max(axis=0)
        self.valid = area >= 1e-6 * sides**2
        self.zs = src[..., 0] + 1j * src[..., 1]  # (E, 3)
        self.tpl_orient = np.sign(
            (src[:, 1, 0] - src[:, 0, 0]) * (src[:, 2, 1] - src[:, 0, 1])
            - (src[:, 2, 0] - src[:, 0, 0]) * (src[:, 1, 1] - src[:, 0, 1])
        )


@dataclass(frozen=True)
class _Seed:
    quality: float
    transform: SimilarityTransform
    matched: dict[int, int]  # led_id -> candidate index
    pivot_index: int
    order_key: tuple


def _batched_exact3(zs: np.ndarray, zd: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares zd = a*zs + b for many source triplets against one dst triple.

    Returns (a, b, residual medians), with degenerate rows marked NaN.
    """
    ms = zs.mean(axis=1)
    md = zd.mean()
    zsc = zs - ms[:, None]
    zdc = zd[None, :] - md
    denom = np.sum(np.abs(zsc) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.sum(zdc * np.conj(zsc), axis=1) / denom
    b = md - a * ms
    res = np.abs(a[:, None] * zs + b[:, None] - zd[None, :])
    med = np.median(res, axis=1)
    bad = (denom < 1e-24) | ~np.isfinite(med) | (np.abs(a) < 1e-15)
    med = med.copy()
    med[bad] = np.nan
    return a, b, med


def _collect_seeds(
    template: Template,
    ia: _IndexArrays,
    pts: np.ndarray,
    scores: np.ndarray,
    p: SlaParams,
    tau: float,
) -> list[_Seed]:
    n = len(pts)
    pivots = _pivot_order(pts, scores)[: min(p.pivot_p, n)]
    zc = pts[:, 0] + 1j * pts[:, 1]
    allow_mirror = not p.mirror_reject
    seeds: list[_Seed] = []

    for pv_pos, pv in enumerate(pivots):
        per_pivot: list[_Seed] = []
        others = [i for i in range(n) if i != pv]
        d_pv = np.abs(zc[others] - zc[pv])
        for ai, a in enumerate(others):
            if d_pv[ai] < 1e-9:
                continue
            for bi, b in enumerate(others):
                if a == b or d_pv[bi] < 1e-9:
                    continue
                r = float(d_pv[ai] / d_pv[bi])
                lo = int(np.searchsorted(ia.ratios, r - tau, side="left"))
                hi = int(np.searchsorted(ia.ratios, r + tau, side="right"))
                if lo >= hi:
                    continue
                sel = slice(lo, hi)
                valid = ia.valid[sel]
                if not valid.any():
                    continue
                zd = np.array([zc[pv], zc[a], zc[b]])
                za, zb, med = _batched_exact3(ia.zs[sel], zd)
                if allow_mirror:
                    za_m, zb_m, med_m = _batched_exact3(-np.conj(ia.zs[sel]), zd)
                    better = np.nan_to_num(med_m, nan=np.inf) < np.nan_to_num(med, nan=np.inf)
                else:
                    better = np.zeros(len(med), dtype=bool)

                if p.semantic_prior and template.k == 5:
                    dst_orient = np.sign(
                        (pts[a, 0] - pts[pv, 0]) * (pts[b, 1] - pts[pv, 1])
                        - (pts[b, 0] - pts[pv, 0]) * (pts[a, 1] - pts[pv, 1])
                    )
                    flip = ia.tpl_orient[sel] * dst_orient < 0
                else:
                    flip = np.zeros(len(med), dtype=bool)

                app = float((scores[pv] + scores[a] + scores[b]) / 3.0)
                ids = ia.trip_ids[sel]
                for k in range(hi - lo):
                    use_mirror = bool(better[k])
                    resid = med_m[k] if use_mirror else med[k]
                    if not valid[k] or not np.isfinite(resid):
                        continue
                    if use_mirror and p.mirror_reject:
                        continue
                    if flip[k] and not use_mirror:
                        continue  # hard semantic veto at seed stage
                    av = (za_m[k], zb_m[k]) if use_mirror else (za[k], zb[k])
                    quality = p.seed_w_app * app - p.seed_w_res * float(resid) / p.eps
                    t = SimilarityTransform(
                        abs(av[0]),
                        math.atan2(av[0].imag, av[0].real),
                        (av[1].real, av[1].imag),
                        use_mirror,
                    )
                    matched = {int(ids[k, 0]): pv, int(ids[k, 1]): a, int(ids[k, 2]): b}
                    key = (-quality, pv_pos, pts[a, 1], pts[a, 0], pts[b, 1], pts[b, 0], lo + k)
                    per_pivot.append(_Seed(quality, t, matched, pv, key))
        per_pivot.sort(key=lambda s: s.order_key)
        seeds.extend(per_pivot[: p.max_seeds_per_pivot])

    seeds.sort(key=lambda s: s.order_key)
    return seeds[: p.max_seeds]


def _grow(
    template: Template,
    seed: _Seed,
    pts: np.ndarray,
    scores: np.ndarray,
    p: SlaParams,
) -> tuple[SimilarityTransform, dict[int, int]]:
    matched = dict(seed.matched)
    transform = seed.transform
    allow_mirror = not p.mirror_reject
    tpl_pts = {i: template.point_of(i) for i in template.led_ids}
    grow_gate = p.grow_gate

    changed = True
    while changed:
        changed = False
        for led in template.led_ids:
            if led in matched:
                continue
            proj = transform.apply([tpl_pts[led]])[0]
            free = [i for i in range(len(pts)) if i not in matched.values()]
            if not free:
                break
            d = np.hypot(pts[free, 0] - proj[0], pts[free, 1] - proj[1])
            within = [
                (float(d[j]), -float(scores[i]), pts[i, 1], pts[i, 0], i)
                for j, i in enumerate(free)
                if d[j] <= p.eps
            ]
            within.sort()
            for *_, cand_idx in within:
                trial = dict(matched)
                trial[led] = cand_idx
                leds = sorted(trial)
                src = np.array([tpl_pts[i] for i in leds])
                dst = pts[[trial[i] for i in leds]]
                t2 = fit_similarity_lsq(src, dst, allow_mirror=allow_mirror)
                if float(np.median(np.hypot(*(t2.apply(src) - dst).T))) <= grow_gate:
                    matched = trial
                    transform = t2
                    changed = True
                    break
    return transform, matched


def _final_assignment(
    template: Template,
    transform: SimilarityTransform,
    pts: np.ndarray,
    p: SlaParams,
) -> dict[int, int]:
    leds = list(template.led_ids)
    proj = transform.apply(np.array([template.point_of(i) for i in leds]))
    dmat = np.hypot(proj[:, None, 0] - pts[None, :, 0], proj[:, None, 1] - pts[None, :, 1])
    feasible = dmat <= p.eps

    if p.assignment_mode == "greedy":
        pairs = [
            (float(dmat[r, c]), leds[r], pts[c, 1], pts[c, 0], r, c)
            for r in range(len(leds))
            for c in range(len(pts))
            if feasible[r, c]
        ]
        pairs.sort()
        used_r, used_c, out = set(), set(), {}
        for _, led, _, _, r, c in pairs:
            if r in used_r or c in used_c:
                continue
            used_r.add(r)
            used_c.add(c)
            out[led] = c
        return out

    cost = np.where(feasible, dmat, INFEASIBLE)
    if cost.shape[0] <= cost.shape[1]:
        rows, cols = linear_sum_assignment(cost)
    else:
        cols, rows = linear_sum_assignment(cost.T)
    return {leds[r]: int(c) for r, c in zip(rows, cols) if feasible[r, c]}


def _finalize(
    template: Template,
    transform: SimilarityTransform,
    cands: list[Candidate],
    pts: np.ndarray,
    scores: np.ndarray,
    p: SlaParams,
    matcher: str,
) -> MatchResult | None:
    assignment = _final_assignment(template, transform, pts, p)
    if len(assignment) < 2:
        return None
    leds = sorted(assignment)
    src = np.array([template.point_of(i) for i in leds])
    dst = pts[[assignment[i] for i in leds]]
    refit = fit_similarity_lsq(src, dst, allow_mirror=not p.mirror_reject)
    stats = residual_stats(refit, src, dst)
    if stats.median > p.eps or stats.max > 2 * p.eps:
        return None
    if not (p.scale_gate[0] <= refit.scale <= p.scale_gate[1]):
        return None
    veto = semantic_mirror_veto(
        template, refit, {i: (float(x), float(y)) for i, (x, y) in zip(leds, dst)}, p
    )
    if veto.hard_veto:
        return None
    appearance = float(sum(scores[assignment[i]] for i in leds))
    cost = stats.median / p.eps + veto.penalty
    return MatchResult(
        assignment=assignment,
        transform=refit,
        inliers=len(assignment),
        median_residual=stats.median,
        max_residual=stats.max,
        appearance_sum=appearance,
        cost=cost,
        matcher=matcher,
    )


def _selection_key(result: MatchResult, pivot_index: int, seq: int):
    return (-result.inliers, result.cost, -result.appearance_sum, result.median_residual, pivot_index, seq)


def sla_match(
    template: Template,
    idx: RatioIndex | None,
    cands: list[Candidate],
    p: SlaParams,
) -> MatchResult | None:
    """Similarity-layout alignment: ratio-seeded hypotheses grown under tolerance gates."""
    if len(cands) < 3:
        return None
    if idx is None:
        idx = template.ratio_index
    pts, scores = _cand_arrays(cands)
    ia = _IndexArrays(template, idx)
    tau = effective_ratio_tol(p.ratio_tol, len(cands))
    seeds = _collect_seeds(template, ia, pts, scores, p, tau)

    best: MatchResult | None = None
    best_key = None
    for seq, seed in enumerate(seeds):
        transform, _ = _grow(template, seed, pts, scores, p)
        result = _finalize(template, transform, cands, pts, scores, p, "sla")
        if result is None:
            continue
        key = _selection_key(result, seed.pivot_index, seq)
        if best_key is None or key < best_key:
            best, best_key = result, key
    if best is None or best.inliers < p.min_inliers:
        return None
    return best


def ransac_match(
    template: Template,
    cands: list[Candidate],
    p: SlaParams,
    iterations: int | None = None,
    seed: int = 0,
) -> MatchResult | None:
    """Baseline: random candidate/template triples, exact-3 fit, inlier count."""
    if len(cands) < 3:
        return None
    rng = random.Random(seed)
    iters = p.ransac_iterations if iterations is None else iterations
    pts, scores = _cand_arrays(cands)
    leds = list(template.led_ids)
    tpl = np.array([template.point_of(i) for i in leds])
    allow_mirror = not p.mirror_reject

    best_t: SimilarityTransform | None = None
    best_rank = None
    for _ in range(iters):
        ci = rng.sample(range(len(cands)), 3)
        ti = rng.sample(range(len(leds)), 3)
        src = tpl[ti]
        dst = pts[ci]
        try:
            t = fit_similarity_exact3(src, dst, allow_mirror=allow_mirror)
        except (DegenerateTriplet, DegenerateSet):
            continue
        proj = t.apply(tpl)
        d = np.hypot(proj[:, None, 0] - pts[None, :, 0], proj[:, None, 1] - pts[None, :, 1])
        # Greedy nearest-candidate count within eps (injective).
        pairs = sorted(
            (float(d[r, c]), r, c) for r in range(len(leds)) for c in range(len(pts)) if d[r, c] <= p.eps
        )
        used_r, used_c, resids = set(), set(), []
        for dist, r, c in pairs:
            if r in used_r or c in used_c:
                continue
            used_r.add(r)
            used_c.add(c)
            resids.append(dist)
        if not resids:
            continue
        rank = (-len(resids), float(np.median(resids)))
        if best_rank is None or rank < best_rank:
            best_rank, best_t = rank, t
    if best_t is None:
        return None
    result = _finalize(template, best_t, cands, pts, scores, p, "ransac")
    if result is None or result.inliers < p.min_inliers:
        return None
    return result


def star_vote_tally(template: Template, cands: list[Candidate], tol: float) -> np.ndarray:
    """(candidate, led) vote matrix from matching normalized pairwise distances."""
    pts, _ = _cand_arrays(cands)
    norm = normalize_points(pts).points
    leds = list(template.led_ids)
    tpl = np.array([template.point_of(i) for i in leds])
    n, k = len(pts), len(leds)

    dc = np.hypot(norm[:, None, 0] - norm[None, :, 0], norm[:, None, 1] - norm[None, :, 1])
    dt = np.hypot(tpl[:, None, 0] - tpl[None, :, 0], tpl[:, None, 1] - tpl[None, :, 1])
    votes = np.zeros((n, k), dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            match = np.abs(dt - dc[i, j]) <= tol
            for r in range(k):
                for c in range(r + 1, k):
                    if match[r, c]:
                        votes[i, r] += 1
                        votes[j, c] += 1
                        votes[i, c] += 1
                        votes[j, r] += 1
    return votes


def star_vote_match(
    template: Template,
    cands: list[Candidate],
    p: SlaParams,
) -> MatchResult | None:
    """Baseline: geometric-hashing style votes over normalized pairwise distances."""
    if len(cands) < 3:
        return None
    pts, scores = _cand_arrays(cands)
    try:
        votes = star_vote_tally(template, cands, p.star_dist_tol)
    except DegenerateSet:
        return None
    leds = list(template.led_ids)
    n, k = len(pts), len(leds)

    order = sorted(
        ((int(votes[i, r]), i, r) for i in range(n) for r in range(k) if votes[i, r] > 0),
        key=lambda v: (-v[0], v[1], v[2]),
    )
    used_c, used_l, chosen = set(), set(), {}
    for _, i, r in order:
        if i in used_c or r in used_l:
            continue
        used_c.add(i)
        used_l.add(r)
        chosen[leds[r]] = i
    if len(chosen) < 3:
        return None
    sel = sorted(chosen)
    src = np.array([template.point_of(i) for i in sel])
    dst = pts[[chosen[i] for i in sel]]
    try:
        t = fit_similarity_lsq(src, dst, allow_mirror=not p.mirror_reject)
    except DegenerateSet:
        return None
    result = _finalize(template, t, cands, pts, scores, p, "star")
    if result is None or result.inliers < p.min_inliers:
        return None
    return result


def hybrid_match(
    template: Template,
    idx: RatioIndex | None,
    cands: list[Candidate],
    p: SlaParams,
    ransac_seed: int = 0,
) -> MatchResult | None:
    """SLA first; RANSAC as the fallback tier. Result carries the producing tag."""
    result = sla_match(template, idx, cands, p)
    if result is not None:
        return result
    result = ransac_match(template, cands, p, seed=ransac_seed)
    if result is not None:
        return replace(result, matcher="ransac")
    return None


def _symmetry_permutations(template: Template, include_reflections: bool) -> list[dict[int, int]]:
    """Relabelings compatible with the layout: rotations of the angular LED order."""
    ids = list(template.led_ids)
    pts = np.array([template.point_of(i) for i in ids])
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    ring = [ids[i] for i in np.argsort(ang, kind="stable")]
    perms = []
    orders = [ring]
    if include_reflections:
        orders.append(ring[::-1])
    for base in orders:
        for shift in range(len(base)):
            rotated = base[shift:] + base[:shift]
            perms.append({old: new for old, new in zip(ring, rotated)})
    return perms


def resolve_identity_permutation(
    result: MatchResult,
    template: Template,
    cands: list[Candidate],
    p: SlaParams,
) -> MatchResult:
    """Swap LED labels among symmetry-compatible relabelings if that lowers residual.

    Only acts on a full 5-LED match; otherwise returns the input unchanged.
    """
    if template.k != 5 or result.inliers != 5:
        return result
    pts, scores = _cand_arrays(cands)
    allow_mirror = not p.mirror_reject

    def total_residual(assignment):
        leds = sorted(assignment)
        src = np.array([template.point_of(i) for i in leds])
        dst = pts[[assignment[i] for i in leds]]
        t = fit_similarity_lsq(src, dst, allow_mirror=allow_mirror)
        stats = residual_stats(t, src, dst)
        return float(stats.per_point.sum()), t, stats

    best_assignment = dict(result.assignment)
    best_total, best_t, best_stats = total_residual(best_assignment)

    for perm in _symmetry_permutations(template, include_reflections=allow_mirror):
        relabeled = {perm[led]: cand for led, cand in result.assignment.items()}
        total, t, stats = total_residual(relabeled)
        if total < best_total - 1e-12 and stats.median <= p.eps and stats.max <= 2 * p.eps:
            if p.scale_gate[0] <= t.scale <= p.scale_gate[1]:
                best_assignment, best_total, best_t, best_stats = relabeled, total, t, stats

    if best_assignment == result.assignment:
        return result
    leds = sorted(best_assignment)
    dst = pts[[best_assignment[i] for i in leds]]
    veto = semantic_mirror_veto(
        template, best_t, {i: (float(x), float(y)) for i, (x, y) in zip(leds, dst)}, p
    )
    if veto.hard_veto:
        return result
    return MatchResult(
        assignment=best_assignment,
        transform=best_t,
        inliers=len(best_assignment),
        median_residual=best_stats.median,
        max_residual=best_stats.max,
        appearance_sum=result.appearance_sum,
        cost=best_stats.median / p.eps + veto.penalty,
        matcher=result.matcher,
    )
