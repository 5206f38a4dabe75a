import math

import pytest

from glintkit.synth import SceneSpec, generate_scene


def spec(template, **kw):
    return SceneSpec(template=template, **kw)


class TestGenerateScene:
    def test_clean_scene_is_projected_template(self, template5):
        sc = generate_scene(spec(template5, rng_seed=7))
        assert len(sc.truth) == 5
        assert sc.point_ids.count(None) == 0
        proj = sc.transform.apply(template5.points)
        for led, (x, y) in zip(template5.led_ids, proj):
            assert sc.truth[led].x == pytest.approx(x, abs=1e-12)
            assert sc.truth[led].y == pytest.approx(y, abs=1e-12)

    def test_same_seed_identical(self, template5):
        kw = dict(jitter_sigma=1.0, dropout_max=2, distractor_max=5, rng_seed=42)
        a = generate_scene(spec(template5, **kw))
        b = generate_scene(spec(template5, **kw))
        assert a.truth == b.truth
        assert a.points == b.points
        assert a.point_ids == b.point_ids
        assert a.transform == b.transform

    def test_truth_consistent_with_transform_and_jitter(self, template5):
        sc = generate_scene(spec(template5, jitter_sigma=2.0, dropout_max=2, rng_seed=3))
        proj = {led: xy for led, xy in zip(template5.led_ids, sc.transform.apply(template5.points))}
        for led, p in sc.truth.items():
            jx, jy = sc.jitter[led]
            assert p.x == proj[led][0] + jx
            assert p.y == proj[led][1] + jy

    def test_distractors_keep_min_distance(self, template5):
        for seed in range(25):
            sigma = 1.5
            sc = generate_scene(spec(template5, jitter_sigma=sigma, distractor_max=6, rng_seed=seed))
            min_gap = max(2 * sigma, 2.0)
            for p, pid in zip(sc.points, sc.point_ids):
                if pid is not None:
                    continue
                for t in sc.truth.values():
                    assert math.hypot(p.x - t.x, p.y - t.y) >= min_gap

    def test_dropouts_bounded(self, template5):
        for seed in range(20):
            sc = generate_scene(spec(template5, dropout_max=2, rng_seed=seed))
            assert 3 <= len(sc.truth) <= 5

    def test_point_ids_parallel(self, template5):
        sc = generate_scene(spec(template5, distractor_max=4, rng_seed=9))
        for p, pid in zip(sc.points, sc.point_ids):
            if pid is not None:
                assert sc.truth[pid] == p

    def test_rendered_frame(self, template5):
        sc = generate_scene(spec(template5, render=True, rng_seed=1))
        assert sc.frame is not None
        assert sc.frame.data.shape == (480, 640)
        assert sc.frame.data.min() >= 0 and sc.frame.data.max() <= 1
        # Spots are local maxima near truth positions.
        for p in sc.truth.values():
            iy, ix = int(round(p.y)), int(round(p.x))
            patch = sc.frame.data[max(iy - 2, 0) : iy + 3, max(ix - 2, 0) : ix + 3]
            assert patch.max() > 0.7

    def test_mirror_prob(self, template5):
        mirrored = [generate_scene(spec(template5, mirror_prob=1.0, rng_seed=s)).transform.mirror for s in range(5)]
        straight = [generate_scene(spec(template5, mirror_prob=0.0, rng_seed=s)).transform.mirror for s in range(5)]
        assert all(mirrored) and not any(straight)

    def test_range_validation(self, template5):
        with pytest.raises(ValueError):
            SceneSpec(template=template5, scale_range=(10.0, 5.0))
        with pytest.raises(ValueError):
            SceneSpec(template=template5, scale_range=(-1.0, 5.0))
