"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The reference-dataset criterion is skipped (not failed) unless
GLINTKIT_REFERENCE_DATASET points at a prepared local copy.
"""

import math
import os
import time
from itertools import permutations

import numpy as np
import pytest

from glintkit.candidates import Candidate
from glintkit.config import frozen_preset
from glintkit.geometry import PointPx, SimilarityTransform
from glintkit.matchers import SlaParams, hybrid_match, ransac_match, sla_match, star_vote_match
from glintkit.metrics import FrameLabels, aggregate, evaluate_frame, summarize_counts
from glintkit.pipeline import PipelineConfig, run_batch, run_frame
from glintkit.synth import SceneSpec, generate_scene
from glintkit.templates import load_template


def report(name, detail=""):
    print(f"[PASS] {name}" + (f" — {detail}" if detail else ""))


def cands_of(scene, scores=None):
    out = []
    for i, p in enumerate(scene.points):
        s = 1.0 if scores is None else float(scores[i])
        out.append(Candidate(center=p, score=s))
    return out


def all_visible_correct(result, scene):
    if result is None:
        return False
    for led in scene.truth:
        ci = result.assignment.get(led)
        if ci is None or scene.point_ids[ci] != led:
            return False
    return True


class TestAcceptance:
    def test_exact_instance_recovery(self, template5):
        p = SlaParams()
        t0 = time.perf_counter()
        for seed in range(100):
            sc = generate_scene(SceneSpec(template=template5, rng_seed=seed))
            r = sla_match(template5, None, cands_of(sc), p)
            assert r is not None, f"seed {seed}: no match"
            assert r.inliers == template5.k, f"seed {seed}: partial match"
            assert all_visible_correct(r, sc), f"seed {seed}: wrong identities"
            assert r.median_residual < 1e-6, f"seed {seed}: residual {r.median_residual}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 5.0, f"exact-instance suite took {elapsed:.2f}s (budget 5s)"
        report("exact-instance recovery", f"100/100 scenes, {elapsed:.2f}s")

    def test_noisy_recovery(self, template5):
        p = SlaParams()
        t0 = time.perf_counter()
        good = 0
        n = 1000
        for seed in range(n):
            sc = generate_scene(
                SceneSpec(
                    template=template5,
                    jitter_sigma=1.0,
                    dropout_max=2,
                    distractor_max=5,
                    rng_seed=seed,
                )
            )
            r = sla_match(template5, None, cands_of(sc), p)
            good += all_visible_correct(r, sc)
        elapsed = time.perf_counter() - t0
        rate = good / n
        assert rate >= 0.95, f"noisy recovery rate {rate:.3f} < 0.95"
        assert elapsed < 60.0, f"noisy suite took {elapsed:.1f}s (budget 60s)"
        report("noisy recovery", f"{good}/{n} = {rate:.1%}, {elapsed:.1f}s")

    def test_idf_matches_brute_force(self):
        def brute_force(pred_pts, label_pts, thresh):
            if len(pred_pts) <= len(label_pts):
                small, large = pred_pts, label_pts
            else:
                small, large = label_pts, pred_pts
            best = 0
            for perm in permutations(range(len(large)), len(small)):
                count = sum(
                    1
                    for i, j in enumerate(perm)
                    if math.hypot(small[i].x - large[j].x, small[i].y - large[j].y) <= thresh
                )
                best = max(best, count)
            return best

        rng = np.random.default_rng(2024)
        for trial in range(10_000):
            n_pred = int(rng.integers(0, 7))
            n_lab = int(rng.integers(0, 7))
            span = float(rng.uniform(10, 60))
            pred = {i: PointPx(*rng.uniform(0, span, 2)) for i in range(n_pred)}
            labels = FrameLabels(glints={i: PointPx(*rng.uniform(0, span, 2)) for i in range(n_lab)})
            fc = evaluate_frame(pred, labels, thresh_px=8.0)
            expected = brute_force(list(pred.values()), list(labels.glints.values()), 8.0)
            assert fc.idf_matched == expected, f"trial {trial}: {fc.idf_matched} != {expected}"
        report("identity-free matching equals brute force", "10000 instances, exact")

    def test_reference_count_cross_check(self, template5):
        r = summarize_counts(1845, 1623, 1382)
        assert abs(r.accuracy - 0.749) <= 0.001
        assert abs(r.precision - 0.852) <= 0.001

        frames = []
        for seed in range(100):
            sc = generate_scene(
                SceneSpec(template=template5, jitter_sigma=1.0, dropout_max=2, distractor_max=5, rng_seed=seed)
            )
            res = sla_match(template5, None, cands_of(sc), SlaParams())
            pred = {}
            if res is not None:
                pred = {led: sc.points[ci] for led, ci in res.assignment.items()}
            fc = evaluate_frame(pred, FrameLabels(glints=sc.truth))
            frames.append(fc)
            assert fc.idf_matched >= sum(c.correct for c in fc.per_led.values())
        agg = aggregate(frames)
        assert agg.idf_accuracy >= agg.accuracy
        report(
            "count cross-check + idf >= identity invariant",
            f"acc {r.accuracy:.3f}, prec {r.precision:.3f}; batch idf {agg.idf_accuracy:.3f} >= acc {agg.accuracy:.3f}",
        )

    def test_matcher_guard_below_three_candidates(self, template5):
        p = SlaParams()
        for n in (0, 1, 2):
            cands = [Candidate(center=PointPx(10.0 * i, 5.0), score=1.0) for i in range(n)]
            assert sla_match(template5, None, cands, p) is None
            assert ransac_match(template5, cands, p) is None
            assert star_vote_match(template5, cands, p) is None
            assert hybrid_match(template5, None, cands, p) is None
        report("matcher guard", "0/1/2 candidates -> failure for sla, ransac, star, hybrid")

    def test_geometric_invariance(self, template5):
        p = SlaParams(semantic_prior=False)
        rng = np.random.default_rng(99)
        checked = 0
        trials = 0
        while checked < 200 and trials < 400:
            trials += 1
            sc = generate_scene(
                SceneSpec(template=template5, scale_range=(25.0, 55.0), distractor_max=5, rng_seed=trials)
            )
            scores = rng.uniform(0.4, 1.0, len(sc.points))
            base = cands_of(sc, scores)
            r1 = sla_match(template5, None, base, p)
            if r1 is None:
                continue
            g = SimilarityTransform(
                float(rng.uniform(0.6, 1.8)), float(rng.uniform(-math.pi, math.pi)), tuple(rng.uniform(-40, 40, 2))
            )
            moved_pts = g.apply([[c.center.x, c.center.y] for c in base])
            moved = [
                Candidate(center=PointPx(float(x), float(y)), score=c.score)
                for (x, y), c in zip(moved_pts, base)
            ]
            r2 = sla_match(template5, None, moved, p)
            assert r2 is not None, f"trial {trials}: transformed instance lost"
            assert r2.assignment == r1.assignment, f"trial {trials}: assignment changed"
            expected = g.compose(r1.transform)
            assert abs(r2.transform.scale - expected.scale) / expected.scale < 1e-6
            assert abs(r2.transform.rotation - expected.rotation) < 1e-6
            assert np.allclose(r2.transform.translation, expected.translation, atol=1e-5)
            checked += 1
        assert checked >= 200, f"only {checked} trials produced a base match"
        report("geometric invariance", f"{checked} trials, transform composes within 1e-6")

    def test_throughput_default_config(self, template5):
        cfg = PipelineConfig()
        times = []
        for seed in range(100):
            sc = generate_scene(
                SceneSpec(template=template5, render=True, jitter_sigma=0.5, distractor_max=3, rng_seed=seed)
            )
            t0 = time.perf_counter()
            run_frame(sc.frame, cfg, template5, frame_id=f"s{seed}")
            times.append(time.perf_counter() - t0)
        median_ms = float(np.median(times)) * 1000
        assert median_ms <= 390.0, f"median frame time {median_ms:.1f} ms > 390 ms"
        stretch = "meets" if median_ms <= 100.0 else "misses"
        report("throughput", f"median {median_ms:.1f} ms/frame (budget 390 ms; {stretch} 100 ms stretch)")

    @pytest.mark.skipif(
        not os.environ.get("GLINTKIT_REFERENCE_DATASET"),
        reason="reference multi-LED dataset not present (set GLINTKIT_REFERENCE_DATASET)",
    )
    def test_reference_dataset_reproduction(self):
        root = os.environ["GLINTKIT_REFERENCE_DATASET"]
        template = load_template(os.path.join(root, "template.json"))
        cfg = frozen_preset()
        _, _, rep = run_batch(root, cfg, template)
        assert rep is not None
        assert abs(rep.accuracy - 0.74) <= 0.03, f"accuracy {rep.accuracy}"
        assert abs(rep.precision - 0.81) <= 0.03, f"precision {rep.precision}"
        assert abs(rep.median_err - 1.41) <= 0.15, f"median err {rep.median_err}"
        report("reference dataset reproduction",
               f"acc {rep.accuracy:.3f}, prec {rep.precision:.3f}, med {rep.median_err:.2f}px")

    def test_batch_determinism(self, template5, tmp_path):
        from PIL import Image

        from glintkit.records import write_labels

        data = tmp_path / "data" / "rec0"
        data.mkdir(parents=True)
        labels = {}
        for i in range(5):
            sc = generate_scene(
                SceneSpec(template=template5, render=True, jitter_sigma=0.5, distractor_max=3, rng_seed=500 + i)
            )
            name = f"f{i:03d}.png"
            Image.fromarray((sc.frame.data * 255).astype(np.uint8)).save(data / name)
            labels[name] = FrameLabels(glints=sc.truth)
        write_labels(data / "labels.jsonl", labels)

        cfg = PipelineConfig()
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        run_batch(tmp_path / "data", cfg, template5, out_dir=out1)
        run_batch(tmp_path / "data", cfg, template5, out_dir=out2)
        b1 = (out1 / "predictions.jsonl").read_bytes()
        b2 = (out2 / "predictions.jsonl").read_bytes()
        assert b1 == b2
        report("batch determinism", f"{len(b1)} bytes, identical across runs")
