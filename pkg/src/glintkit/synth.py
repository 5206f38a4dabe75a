"""Synthetic scene generation: the ground-truth oracle for matcher and pipeline tests.

Scenes are fully reproducible from the SceneSpec seed. The background model
is deliberately crude (dark pupil disk, mid-gray iris, vignette); it
exercises the pipeline, not realism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .enhance import GrayImage
from .geometry import PointPx, SimilarityTransform
from .templates import Template

SPOT_SIGMA = 1.2
SPOT_PEAK = 0.9


@dataclass(frozen=True)
class SceneSpec:
    template: Template
    scale_range: tuple[float, float] = (30.0, 80.0)
    rotation_range: tuple[float, float] = (-math.pi, math.pi)
    translation_x_range: tuple[float, float] = (220.0, 420.0)
    translation_y_range: tuple[float, float] = (170.0, 310.0)
    jitter_sigma: float = 0.0
    dropout_max: int = 0
    distractor_max: int = 0
    mirror_prob: float = 0.0
    render: bool = False
    frame_size: tuple[int, int] = (640, 480)
    rng_seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.scale_range, self.rotation_range, self.translation_x_range, self.translation_y_range):
            if hi < lo:
                raise ValueError("ranges must be non-empty (lo <= hi)")
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")


@dataclass(frozen=True)
class Scene:
    truth: dict[int, PointPx]  # visible LEDs only, at their actual (jittered) positions
    clean: dict[int, PointPx]  # same LEDs before jitter
    jitter: dict[int, tuple[float, float]]
    points: list[PointPx]  # all scene points, shuffled
    point_ids: list[int | None]  # parallel identities; None marks a distractor
    transform: SimilarityTransform
    frame: GrayImage | None = None
    pupil_center: PointPx | None = None
    pupil_radius: float | None = None


def generate_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.rng_seed)
    t = SimilarityTransform(
        scale=float(rng.uniform(*spec.scale_range)),
        rotation=float(rng.uniform(*spec.rotation_range)),
        translation=(
            float(rng.uniform(*spec.translation_x_range)),
            float(rng.uniform(*spec.translation_y_range)),
        ),
        mirror=bool(rng.random() < spec.mirror_prob),
    )
    tpl = spec.template
    projected = t.apply(tpl.points)

    n_drop = int(rng.integers(0, spec.dropout_max + 1)) if spec.dropout_max > 0 else 0
    dropped = set()
    if n_drop > 0:
        dropped = set(rng.choice(tpl.led_ids, size=n_drop, replace=False).tolist())

    clean: dict[int, PointPx] = {}
    truth: dict[int, PointPx] = {}
    jitter: dict[int, tuple[float, float]] = {}
    for led, (x, y) in zip(tpl.led_ids, projected):
        if led in dropped:
            continue
        jx, jy = (rng.normal(0.0, spec.jitter_sigma), rng.normal(0.0, spec.jitter_sigma)) if spec.jitter_sigma > 0 else (0.0, 0.0)
        clean[led] = PointPx(float(x), float(y))
        jitter[led] = (float(jx), float(jy))
        truth[led] = PointPx(float(x + jx), float(y + jy))

    w, h = spec.frame_size
    min_gap = max(2.0 * spec.jitter_sigma, 2.0)
    n_dis = int(rng.integers(0, spec.distractor_max + 1)) if spec.distractor_max > 0 else 0
    distractors: list[PointPx] = []
    attempts = 0
    while len(distractors) < n_dis and attempts < 200 * max(n_dis, 1):
        attempts += 1
        x = float(rng.uniform(4, w - 5))
        y = float(rng.uniform(4, h - 5))
        if all(math.hypot(x - p.x, y - p.y) >= min_gap for p in truth.values()):
            if all(math.hypot(x - d.x, y - d.y) >= min_gap for d in distractors):
                distractors.append(PointPx(x, y))

    ordered_ids: list[int | None] = sorted(truth) + [None] * len(distractors)
    ordered_pts = [truth[i] for i in sorted(truth)] + distractors
    perm = rng.permutation(len(ordered_pts))
    points = [ordered_pts[i] for i in perm]
    point_ids = [ordered_ids[i] for i in perm]

    pupil_center = PointPx(*t.translation)
    pupil_radius = 0.6 * t.scale
    frame = None
    if spec.render:
        frame = render_frame(spec.frame_size, points, pupil_center, pupil_radius)

    return Scene(
        truth=truth,
        clean=clean,
        jitter=jitter,
        points=points,
        point_ids=point_ids,
        transform=t,
        frame=frame,
        pupil_center=pupil_center,
        pupil_radius=pupil_radius,
    )


def render_frame(
    frame_size: tuple[int, int],
    points,
    pupil_center: PointPx,
    pupil_radius: float,
) -> GrayImage:
    """Gaussian spots over a synthetic eye: dark pupil, mid-gray iris, vignette."""
    w, h = frame_size
    yy, xx = np.indices((h, w), dtype=float)
    data = np.full((h, w), 0.45)

    r2 = (xx - pupil_center.x) ** 2 + (yy - pupil_center.y) ** 2
    iris_r = 3.0 * pupil_radius
    data[r2 <= iris_r**2] = 0.30
    data[r2 <= pupil_radius**2] = 0.06

    cx, cy = w / 2.0, h / 2.0
    vign = 1.0 - 0.4 * (((xx - cx) / cx) ** 2 + ((yy - cy) / cy) ** 2) / 2.0
    data *= vign

    for p in points:
        d2 = (xx - p.x) ** 2 + (yy - p.y) ** 2
        patch = SPOT_PEAK * np.exp(-d2 / (2 * SPOT_SIGMA**2))
        data = np.maximum(data, patch)

    return GrayImage(np.clip(data, 0.0, 1.0))
