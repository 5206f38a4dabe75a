import math

import numpy as np
import pytest

from glintkit.enhance import GrayImage
from glintkit.geometry import normalize_points
from glintkit.templates import Template

# Deliberately irregular 5-LED layout: distinct pairwise ratios keep
# constellation tests unambiguous.
IRREGULAR_5 = {0: (0.0, 0.0), 1: (2.0, 0.3), 2: (2.2, 1.8), 3: (1.0, 2.4), 4: (-0.3, 1.9)}


@pytest.fixture
def template5() -> Template:
    ids = sorted(IRREGULAR_5)
    pts = normalize_points([IRREGULAR_5[i] for i in ids]).points
    return Template(pts, tuple(ids), layout_name="test5")


def render_spots(size, centers, sigma=1.2, peak=0.9, background=0.0):
    """Rasterize Gaussian spots onto a flat background (test-local renderer)."""
    w, h = size
    data = np.full((h, w), background, dtype=float)
    yy, xx = np.indices((h, w))
    for cx, cy in centers:
        data += peak * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    return GrayImage(np.clip(data, 0.0, 1.0))


def spot_centers_regular(n, size, radius=None):
    w, h = size
    r = radius or min(w, h) / 3
    return [
        (w / 2 + r * math.cos(2 * math.pi * i / n), h / 2 + r * math.sin(2 * math.pi * i / n))
        for i in range(n)
    ]
