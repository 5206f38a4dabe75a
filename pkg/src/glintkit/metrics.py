"""Per-frame and aggregate correspondence metrics.

Identity-preserving accuracy scores LED-to-glint assignment; identity-free
accuracy scores detection quality alone via optimal label-agnostic
matching. Localization error pools every present-and-predicted pair,
including pairs beyond the correctness threshold, so a few large failures
can pull the mean far above the median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import PointPx

DEFAULT_THRESH_PX = 10.0
_FORBIDDEN = 1e9


@dataclass(frozen=True)
class FrameLabels:
    glints: dict[int, PointPx]  # absent id = glint not visible
    pupil_center: PointPx | None = None
    pupil_radius: float | None = None


@dataclass(frozen=True)
class LedCount:
    present: int
    predicted: int
    correct: int
    error_px: float | None = None

    def __post_init__(self):
        if self.correct > min(self.present, self.predicted):
            raise ValueError("correct cannot exceed min(present, predicted)")
        if self.error_px is not None and not (self.present and self.predicted):
            raise ValueError("error recorded only when present and predicted")


@dataclass(frozen=True)
class FrameCounts:
    per_led: dict[int, LedCount]
    idf_matched: int
    idf_present: int
    idf_predicted: int
    frame_id: str | None = None
    subject: str | None = None


def evaluate_frame(
    pred: dict[int, PointPx],
    labels: FrameLabels,
    thresh_px: float = DEFAULT_THRESH_PX,
    frame_id: str | None = None,
    subject: str | None = None,
) -> FrameCounts:
    """Score one frame's predictions against its labels."""
    if thresh_px <= 0:
        raise ValueError("thresh_px must be > 0")
    per_led: dict[int, LedCount] = {}
    for led in sorted(set(labels.glints) | set(pred)):
        present = int(led in labels.glints)
        predicted = int(led in pred)
        err = None
        correct = 0
        if present and predicted:
            g, p = labels.glints[led], pred[led]
            err = math.hypot(g.x - p.x, g.y - p.y)
            correct = int(err <= thresh_px)
        per_led[led] = LedCount(present, predicted, correct, err)

    idf_matched = _idf_match_count(list(pred.values()), list(labels.glints.values()), thresh_px)
    return FrameCounts(
        per_led=per_led,
        idf_matched=idf_matched,
        idf_present=len(labels.glints),
        idf_predicted=len(pred),
        frame_id=frame_id,
        subject=subject,
    )


def _idf_match_count(pred_pts: list[PointPx], label_pts: list[PointPx], thresh_px: float) -> int:
    """Maximum-cardinality min-cost matching with pairs beyond thresh forbidden."""
    if not pred_pts or not label_pts:
        return 0
    cost = np.array(
        [[math.hypot(p.x - g.x, p.y - g.y) for g in label_pts] for p in pred_pts], dtype=float
    )
    feasible = cost <= thresh_px
    masked = np.where(feasible, cost, _FORBIDDEN)
    if masked.shape[0] <= masked.shape[1]:
        rows, cols = linear_sum_assignment(masked)
    else:
        cols, rows = linear_sum_assignment(masked.T)
    return int(sum(1 for r, c in zip(rows, cols) if feasible[r, c]))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float | None
    precision: float | None
    idf_accuracy: float | None
    mean_err: float | None
    median_err: float | None
    n_images: int
    n_present: int = 0
    n_predicted: int = 0
    n_correct: int = 0


def summarize_counts(
    present: int,
    predicted: int,
    correct: int,
    errors=(),
    idf_matched: int | None = None,
    idf_present: int | None = None,
    n_images: int = 0,
) -> MetricsReport:
    """Ratios with division guards: zero denominators report None, never 0."""
    errs = np.asarray(list(errors), dtype=float)
    return MetricsReport(
        accuracy=correct / present if present > 0 else None,
        precision=correct / predicted if predicted > 0 else None,
        idf_accuracy=(
            idf_matched / idf_present if idf_matched is not None and idf_present else None
        ),
        mean_err=float(errs.mean()) if errs.size else None,
        median_err=float(np.median(errs)) if errs.size else None,
        n_images=n_images,
        n_present=present,
        n_predicted=predicted,
        n_correct=correct,
    )


def aggregate(frames: list[FrameCounts], group_by: str | None = None):
    """Pool frame counts into a MetricsReport, optionally per LED or subject."""
    if not frames:
        raise ValueError("no frames to aggregate")
    if group_by not in (None, "none", "led", "subject"):
        raise ValueError(f"unknown group_by {group_by!r}")

    if group_by in (None, "none"):
        return _summarize_frames(frames)
    if group_by == "led":
        leds = sorted({led for f in frames for led in f.per_led})
        return {led: _summarize_led(frames, led) for led in leds}
    subjects = sorted({f.subject for f in frames if f.subject is not None})
    return {s: _summarize_frames([f for f in frames if f.subject == s]) for s in subjects}


def _summarize_frames(frames: list[FrameCounts]) -> MetricsReport:
    present = predicted = correct = idf_m = idf_p = 0
    errors = []
    for f in frames:
        for c in f.per_led.values():
            present += c.present
            predicted += c.predicted
            correct += c.correct
            if c.error_px is not None:
                errors.append(c.error_px)
        idf_m += f.idf_matched
        idf_p += f.idf_present
    return summarize_counts(
        present, predicted, correct, errors,
        idf_matched=idf_m, idf_present=idf_p, n_images=len(frames),
    )


def _summarize_led(frames: list[FrameCounts], led: int) -> MetricsReport:
    present = predicted = correct = 0
    errors = []
    for f in frames:
        c = f.per_led.get(led)
        if c is None:
            continue
        present += c.present
        predicted += c.predicted
        correct += c.correct
        if c.error_px is not None:
            errors.append(c.error_px)
    return summarize_counts(present, predicted, correct, errors, n_images=len(frames))


def format_led_table(by_led: dict[int, MetricsReport]) -> str:
    """Per-LED summary table, one row per glint id."""
    lines = ["Glint  Present  Pred.  Correct  Acc.    Prec.   MeanErr  MedErr"]
    for led, r in sorted(by_led.items()):
        def fmt(v, spec="{:.3f}"):
            return "undef" if v is None else spec.format(v)

        lines.append(
            f"G{led:<5} {r.n_present:>7}  {r.n_predicted:>5}  {r.n_correct:>7}  "
            f"{fmt(r.accuracy):>6}  {fmt(r.precision):>6}  {fmt(r.mean_err):>7}  {fmt(r.median_err):>6}"
        )
    return "\n".join(lines)
