import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import glintkit.candidates as candidates_mod
from glintkit.candidates import (
    Candidate,
    CandidateFeatures,
    DetectParams,
    FallbackParams,
    GateParams,
    PupilState,
    ScoreWeights,
    adaptive_fallback_detect,
    compute_pupil_roi,
    darkest_region_pupil,
    detect_one_pass,
    gate_candidates,
    map_to_full_and_in_bounds,
    merge_dedup_keep_best,
    pool_top_n,
    resolve_pupil_roi,
    score_blob,
    score_features,
    support_vote,
)
from glintkit.enhance import Blob, EnhanceParams, GrayImage
from glintkit.geometry import PointPx, normalize_points

from conftest import render_spots, spot_centers_regular


def cand(x, y, score=1.0):
    return Candidate(center=PointPx(x, y), score=score)


class TestScoreBlob:
    def test_all_terms_maximal(self):
        perimeter = math.sqrt(4 * math.pi * 12)  # compactness exactly 1
        b = Blob(pixels=12, bbox=(0, 0, 3, 3), centroid=PointPx(1, 1), peak=1.0, mean=1.0, perimeter=perimeter)
        img = GrayImage(np.ones((8, 8)))
        w = ScoreWeights(peak=0.25, mean=0.25, compactness=0.25, area=0.25)
        assert score_blob(b, img, "basic", w, area_nominal=12, area_sigma=10) == pytest.approx(1.0)

    def test_all_zero_terms(self):
        f = CandidateFeatures(area=1000.0, peak=0.0, mean_intensity=0.0, compactness=1e-9)
        s = score_features(f, "basic", ScoreWeights(), area_nominal=12, area_sigma=10)
        assert s == pytest.approx(0.0, abs=1e-6)

    def test_compactness_ordering(self):
        base = dict(area=12.0, peak=0.8, mean_intensity=0.6)
        lo = CandidateFeatures(compactness=0.3, **base)
        hi = CandidateFeatures(compactness=1.0, **base)
        w = ScoreWeights()
        assert score_features(hi, "basic", w) > score_features(lo, "basic", w)

    def test_score_bounded_by_weight_sum(self):
        rng = np.random.default_rng(0)
        w = ScoreWeights.for_mode("contrast_support")
        total = w.peak + w.mean + w.compactness + w.area + w.local_contrast + w.dog
        for _ in range(50):
            f = CandidateFeatures(
                area=float(rng.uniform(0, 100)),
                peak=float(rng.uniform(0, 1)),
                mean_intensity=float(rng.uniform(0, 1)),
                compactness=float(rng.uniform(1e-3, 1)),
                local_contrast=float(rng.uniform(0, 1)),
                dog_response=float(rng.uniform(0, 1)),
            )
            s = score_features(f, "contrast_support", w)
            assert 0 <= s <= total + 1e-12


class TestSupportVote:
    def test_perfect_geometry_max_multiplier(self, template5):
        cands = [cand(x * 40 + 100, y * 40 + 100) for x, y in template5.points]
        out = support_vote(cands, template5, m=20, tol=0.05, w=0.10)
        for c in out:
            assert c.score == pytest.approx(1.10)

    def test_fewer_than_three_unchanged(self, template5):
        cands = [cand(0, 0), cand(5, 5)]
        assert support_vote(cands, template5, 20, 0.05, 0.1) == cands

    def test_distractor_scores_below_true(self, template5):
        # A 5-LED template has 30 pivot ratios, which blanket the occupied
        # ratio span at loose tolerances; discrimination needs a tight one.
        true_pts = [(x * 50 + 200, y * 50 + 200) for x, y in template5.points]
        cands = [cand(x, y) for x, y in true_pts] + [cand(254.785, 107.915)]
        tol, w = 0.002, 0.10
        out = support_vote(cands, template5, m=20, tol=tol, w=w)

        # Oracle: recount supports by brute-force enumeration over all pairs.
        pts = normalize_points([c.center for c in cands]).points
        ratios = sorted(e.ratio for e in template5.ratio_index.entries)

        def matches(r):
            return any(abs(r - t) <= tol for t in ratios)

        supports = []
        for ci in range(len(cands)):
            s = 0
            others = [i for i in range(len(cands)) if i != ci]
            for ai in range(len(others)):
                for bi in range(ai + 1, len(others)):
                    da = np.hypot(*(pts[ci] - pts[others[ai]]))
                    db = np.hypot(*(pts[ci] - pts[others[bi]]))
                    if max(da, db) > 0 and matches(min(da, db) / max(da, db)):
                        s += 1
            supports.append(s)
        max_s = max(max(supports), 1)
        for c_out, s in zip(out, supports):
            assert c_out.score == pytest.approx(1.0 * (1 + w * s / max_s))
        assert all(out[-1].score < out[i].score for i in range(5))

    def test_multiplier_bounds_and_outside_top_m_unchanged(self, template5):
        rng = np.random.default_rng(3)
        cands = [cand(float(x), float(y), score=float(s)) for x, y, s in
                 zip(rng.uniform(0, 200, 10), rng.uniform(0, 200, 10), rng.uniform(0.1, 1, 10))]
        w = 0.25
        out = support_vote(cands, template5, m=4, tol=0.08, w=w)
        by_key = sorted(range(10), key=lambda i: (-cands[i].score, cands[i].center.y, cands[i].center.x))
        top = set(by_key[:4])
        for i, (before, after) in enumerate(zip(cands, out)):
            if i in top:
                assert before.score <= after.score <= before.score * (1 + w) + 1e-12
            else:
                assert after.score == before.score


class TestDetectOnePass:
    def test_five_spots_recovered(self):
        centers = spot_centers_regular(5, (160, 120))
        img = render_spots((160, 120), centers)
        cands, scores, raw = detect_one_pass(img, EnhanceParams(), DetectParams(percentile=99.0))
        assert len(cands) >= 5
        assert scores == [c.score for c in cands]
        for cx, cy in centers:
            d = min(math.hypot(c.center.x - cx, c.center.y - cy) for c in cands)
            assert d <= 1.0

    def test_black_frame(self):
        img = GrayImage(np.zeros((60, 80)))
        cands, scores, raw = detect_one_pass(img, EnhanceParams(), DetectParams())
        assert cands == [] and scores == [] and raw == 0

    def test_raw_count_monotone_in_percentile(self):
        img = render_spots((120, 90), [(60, 45)], sigma=2.0)
        _, _, raw_lo = detect_one_pass(img, EnhanceParams(), DetectParams(), percentile_override=90)
        _, _, raw_hi = detect_one_pass(img, EnhanceParams(), DetectParams(), percentile_override=99.9)
        assert raw_lo >= raw_hi

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        img = GrayImage(rng.uniform(0, 1, (90, 120)))
        a = detect_one_pass(img, EnhanceParams(), DetectParams())
        b = detect_one_pass(img, EnhanceParams(), DetectParams())
        assert a == b


class TestAdaptiveFallback:
    def test_no_passes_when_target_met(self):
        centers = spot_centers_regular(8, (200, 150))
        img = render_spots((200, 150), centers)
        dp = DetectParams(percentile=99.0, fallback=FallbackParams(target=2))
        cands, passes = adaptive_fallback_detect(img, EnhanceParams(), dp)
        assert passes == 0
        assert len(cands) >= 2

    def test_relaxed_passes_fill_pool(self):
        # Two bright spots, three dim ones: the strict pass sees only the
        # bright pair; relaxed percentiles recover the dim ones.
        size = (200, 150)
        bright = [(50.0, 40.0), (150.0, 40.0)]
        dim = [(50.0, 110.0), (100.0, 75.0), (150.0, 110.0)]
        img_b = render_spots(size, bright, peak=0.9)
        img_d = render_spots(size, dim, peak=0.25)
        img = GrayImage(np.clip(img_b.data + img_d.data, 0, 1))
        dp = DetectParams(
            percentile=99.95,
            fallback=FallbackParams(enabled=True, pcts=(99.9, 99.5, 99.0), pass_max=4, target=5),
            cand_merge_eps=4.0,
        )
        cands, passes = adaptive_fallback_detect(img, EnhanceParams(), dp)
        assert passes >= 1
        assert len(cands) >= 5
        for i in range(len(cands)):
            for j in range(i + 1, len(cands)):
                d = math.hypot(cands[i].center.x - cands[j].center.x, cands[i].center.y - cands[j].center.y)
                assert d > dp.cand_merge_eps

    def test_frozen_schedule_percentiles(self, monkeypatch):
        visited = []
        real = candidates_mod.detect_one_pass

        def spy(img, ep, dp, template=None, percentile_override=None, kernel_override=None):
            if percentile_override is not None:
                visited.append(percentile_override)
            return real(img, ep, dp, template, percentile_override, kernel_override)

        monkeypatch.setattr(candidates_mod, "detect_one_pass", spy)
        img = GrayImage(np.zeros((60, 80)))  # never reaches the target
        dp = DetectParams(fallback=FallbackParams(enabled=True, pcts=(99, 98, 97), pass_max=4, target=8))
        _, passes = adaptive_fallback_detect(img, EnhanceParams(), dp)
        assert visited == [99, 98, 97, 97]
        assert passes == 4

    def test_pass1_candidates_never_lost(self):
        rng = np.random.default_rng(11)
        img = GrayImage(rng.uniform(0, 0.3, (100, 100)))
        dp = DetectParams(percentile=99.5, fallback=FallbackParams(target=30, pass_max=3))
        first, _, _ = detect_one_pass(img, EnhanceParams(), dp)
        merged, _ = adaptive_fallback_detect(img, EnhanceParams(), dp)
        for c in first:
            near = [m for m in merged
                    if math.hypot(m.center.x - c.center.x, m.center.y - c.center.y) <= dp.cand_merge_eps]
            assert any(m.score >= c.score for m in near) or any(
                m.center == c.center and m.score == c.score for m in merged
            )


class TestMergeAndPool:
    def test_merge_keeps_best(self):
        out = merge_dedup_keep_best([cand(0, 0, 0.9), cand(2, 0, 0.5)], eps=3)
        assert len(out) == 1 and out[0].center == PointPx(0, 0)

    def test_merge_keeps_both_when_far(self):
        out = merge_dedup_keep_best([cand(0, 0, 0.9), cand(2, 0, 0.5)], eps=1)
        assert len(out) == 2

    @given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0, 1)), max_size=25),
           st.floats(0.5, 10))
    @settings(max_examples=100, deadline=None)
    def test_merge_postcondition_pairwise_distances(self, triples, eps):
        cands = [cand(x, y, s) for x, y, s in triples]
        out = merge_dedup_keep_best(cands, eps)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                d = math.hypot(out[i].center.x - out[j].center.x, out[i].center.y - out[j].center.y)
                assert d > eps

    def test_pool_top_n(self):
        cands = [cand(i, 0, s) for i, s in enumerate([0.2, 0.9, 0.5, 0.7, 0.1])]
        out = pool_top_n(cands, 3)
        assert [c.score for c in out] == [0.9, 0.7, 0.5]

    def test_pool_fewer_than_n(self):
        cands = [cand(0, 0, 0.5), cand(1, 1, 0.6)]
        assert len(pool_top_n(cands, 3)) == 2

    def test_pool_tie_break_lexicographic(self):
        cands = [cand(5, 2, 0.5), cand(1, 1, 0.5), cand(0, 2, 0.5)]
        out = pool_top_n(cands, 2)
        assert [(c.center.x, c.center.y) for c in out] == [(1, 1), (0, 2)]


class TestGates:
    def test_border_drop(self):
        out = gate_candidates([cand(1, 1)], GateParams(border_margin_px=5), (100, 100), None)
        assert out == []

    def test_annulus_arithmetic(self):
        pupil = PupilState(center=PointPx(100, 100), radius=20.0, valid=True)
        gates = GateParams(border_margin_px=0, annulus_inner_k=0.0, annulus_outer_k=2.0, min_k=1)
        keep = cand(100, 130)  # d=30 <= 40
        drop = cand(100, 180)  # d=80 > 40
        out = gate_candidates([keep, drop], gates, (300, 300), pupil)
        assert out == [keep]

    def test_min_k_guard(self):
        pupil = PupilState(center=PointPx(50, 50), radius=10.0, valid=True)
        gates = GateParams(border_margin_px=0, annulus_inner_k=0.0, annulus_outer_k=1.0, min_k=2, force=False)
        cands = [cand(50, 55), cand(200, 200), cand(210, 220)]  # annulus keeps only 1
        out = gate_candidates(cands, gates, (300, 300), pupil)
        assert out == cands

    def test_force_applies_anyway(self):
        pupil = PupilState(center=PointPx(50, 50), radius=10.0, valid=True)
        gates = GateParams(border_margin_px=0, annulus_inner_k=0.0, annulus_outer_k=1.0, min_k=2, force=True)
        cands = [cand(50, 55), cand(200, 200)]
        out = gate_candidates(cands, gates, (300, 300), pupil)
        assert out == [cands[0]]

    def test_gating_only_removes(self):
        rng = np.random.default_rng(2)
        cands = [cand(float(x), float(y), float(s)) for x, y, s in
                 zip(rng.uniform(0, 100, 20), rng.uniform(0, 100, 20), rng.uniform(0, 1, 20))]
        pupil = PupilState(center=PointPx(50, 50), radius=15.0, valid=True)
        out = gate_candidates(cands, GateParams(), (100, 100), pupil)
        assert all(c in cands for c in out)


class TestPupilRoi:
    def test_valid_pupil_use(self):
        p = PupilState(center=PointPx(10, 10), radius=5, valid=True)
        assert resolve_pupil_roi(p, "last_good") == ("use", PointPx(10, 10))

    def test_invalid_last_good_empty_falls_to_full(self):
        assert resolve_pupil_roi(PupilState(), "last_good") == ("full", None)

    def test_invalid_last_good_present(self):
        p = PupilState(last_good_center=PointPx(30, 40))
        assert resolve_pupil_roi(p, "last_good") == ("use", PointPx(30, 40))

    def test_skip(self):
        assert resolve_pupil_roi(PupilState(), "skip") == ("skip", None)

    def test_full(self):
        assert resolve_pupil_roi(PupilState(), "full") == ("full", None)

    def test_observe_updates_last_good(self):
        p = PupilState()
        p.observe(PointPx(5, 6), 10.0, True)
        assert p.valid and p.last_good_center == PointPx(5, 6)
        p.observe(None, None, False)
        assert not p.valid and p.last_good_center == PointPx(5, 6)

    def test_roi_clip_and_offset(self):
        img = GrayImage(np.arange(100 * 80, dtype=float).reshape(100, 80) / (100 * 80))
        sub, (dx, dy) = compute_pupil_roi(img, PointPx(5, 5), side_px=40)
        assert (dx, dy) == (0, 0)
        assert sub.data.shape == (40, 40)
        sub2, (dx2, dy2) = compute_pupil_roi(img, PointPx(75, 95), side_px=40)
        assert (dx2, dy2) == (40, 60)
        assert sub2.data.shape == (40, 40)

    def test_map_to_full_drops_oob(self):
        cands = [cand(5, 5), cand(95, 95)]
        out = map_to_full_and_in_bounds(cands, (10, 10), (100, 100))
        assert len(out) == 1
        assert out[0].center == PointPx(15, 15)


class TestDarkestRegionPupil:
    def test_finds_dark_disk(self):
        yy, xx = np.indices((120, 160))
        data = np.full((120, 160), 0.55)
        disk = (xx - 80) ** 2 + (yy - 60) ** 2 <= 18**2
        data[disk] = 0.05
        center, radius, ok = darkest_region_pupil(GrayImage(data))
        assert ok
        assert math.hypot(center.x - 80, center.y - 60) < 4
        assert radius == pytest.approx(18, rel=0.25)

    def test_flat_frame_not_ok(self):
        _, _, ok = darkest_region_pupil(GrayImage(np.full((60, 60), 0.5)))
        assert not ok
