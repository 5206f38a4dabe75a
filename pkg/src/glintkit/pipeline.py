"""Per-frame orchestration, parameter scaling, batch runs, and sweeps.

run_frame executes the staged order exactly: gray, parameter scaling,
pupil ROI resolution, one-pass detection plus fallback, mapping back to
full frame, pooling, border and annulus gating, matching (with optional
template-bank argmax), optional identity resolution, then metrics. Every
stage executed is logged on the prediction for conformance checks.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .candidates import (
    Candidate,
    DetectParams,
    PupilState,
    adaptive_fallback_detect,
    compute_pupil_roi,
    darkest_region_pupil,
    gate_candidates,
    map_to_full_and_in_bounds,
    pool_top_n,
    resolve_pupil_roi,
)
from .enhance import EnhanceParams, GrayImage, to_gray
from .geometry import PointPx
from .matchers import (
    MatchResult,
    SlaParams,
    hybrid_match,
    ransac_match,
    resolve_identity_permutation,
    sla_match,
    star_vote_match,
)
from .metrics import FrameCounts, FrameLabels, aggregate, evaluate_frame
from .records import read_labels, write_jsonl
from .templates import Template, TemplateBank, score_match_result

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff")

STAGES = (
    "gray",
    "scale_params",
    "pupil_detect",
    "resolve_roi",
    "roi_crop",
    "detect",
    "fallback",
    "map_to_full",
    "pool",
    "border_gate",
    "annulus_gate",
    "match",
    "id_resolve",
    "metrics",
)


class NoFramesFound(FileNotFoundError):
    pass


@dataclass(frozen=True)
class PupilParams:
    enabled: bool = False
    fail_policy: str = "full"  # last_good | full | skip
    roi_side_px: float = 240.0

    def __post_init__(self):
        if self.fail_policy not in ("last_good", "full", "skip"):
            raise ValueError(f"unknown pupil fail policy {self.fail_policy!r}")


@dataclass(frozen=True)
class PipelineConfig:
    enhance: EnhanceParams = field(default_factory=EnhanceParams)
    detect: DetectParams = field(default_factory=DetectParams)
    sla: SlaParams = field(default_factory=SlaParams)
    matcher: str = "sla"  # sla | ransac | star | hybrid
    pupil: PupilParams = field(default_factory=PupilParams)
    post_id_resolve: bool = True
    eval_thresh_px: float = 10.0
    reference_size: tuple[int, int] = (640, 480)
    seed: int = 0
    subject_regex: str | None = None  # capture group 1 extracts the subject id

    def __post_init__(self):
        if self.matcher not in ("sla", "ransac", "star", "hybrid"):
            raise ValueError(f"unknown matcher {self.matcher!r}")


@dataclass
class FramePrediction:
    frame_id: str
    status: str  # ok | failed | skipped
    reason: str | None = None
    glints: dict[int, PointPx] = field(default_factory=dict)
    projected: dict[int, PointPx] = field(default_factory=dict)
    matcher: str | None = None
    median_residual: float | None = None
    max_residual: float | None = None
    inliers: int = 0
    stages: list[str] = field(default_factory=list)
    counts: FrameCounts | None = None

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "status": self.status,
            "reason": self.reason,
            "glints": {str(k): [p.x, p.y] for k, p in sorted(self.glints.items())},
            "projected": {str(k): [p.x, p.y] for k, p in sorted(self.projected.items())},
            "matcher": self.matcher,
            "median_residual": self.median_residual,
            "max_residual": self.max_residual,
            "inliers": self.inliers,
        }


def _diag(size: tuple[int, int]) -> float:
    return math.hypot(size[0], size[1])


def _round_odd(k: float) -> int:
    ki = max(int(round(k)), 3)
    return ki if ki % 2 == 1 else ki + 1


def scale_params(cfg: PipelineConfig, image_size: tuple[int, int]) -> PipelineConfig:
    """Rescale every pixel-denominated parameter for the actual frame size.

    Lengths scale by the diagonal ratio, areas by its square; kernels are
    re-rounded to odd integers >= 3; dimensionless parameters pass through.
    """
    f = _diag(image_size) / _diag(cfg.reference_size)
    if abs(f - 1.0) < 1e-12:
        return cfg

    enhance = replace(cfg.enhance, kernel_px=_round_odd(cfg.enhance.kernel_px * f))
    det = cfg.detect
    detect = replace(
        det,
        area_nominal_px2=det.area_nominal_px2 * f * f,
        area_sigma_px2=det.area_sigma_px2 * f * f,
        cand_merge_eps=det.cand_merge_eps * f,
        min_area_px=det.min_area_px * f * f,
        max_area_px=None if det.max_area_px is None else det.max_area_px * f * f,
        fallback=replace(det.fallback, kernel_add=det.fallback.kernel_add * f),
        gates=replace(
            det.gates,
            border_margin_px=det.gates.border_margin_px * f,
            default_pupil_radius_px=det.gates.default_pupil_radius_px * f,
        ),
    )
    sla = replace(
        cfg.sla,
        eps=cfg.sla.eps * f,
        grow_resid_max=None if cfg.sla.grow_resid_max is None else cfg.sla.grow_resid_max * f,
        scale_gate=(cfg.sla.scale_gate[0] * f, cfg.sla.scale_gate[1] * f),
    )
    pupil = replace(cfg.pupil, roi_side_px=cfg.pupil.roi_side_px * f)
    return replace(cfg, enhance=enhance, detect=detect, sla=sla, pupil=pupil)


def _run_matcher(template: Template, cands: list[Candidate], cfg: PipelineConfig) -> MatchResult | None:
    if cfg.matcher == "sla":
        return sla_match(template, template.ratio_index, cands, cfg.sla)
    if cfg.matcher == "ransac":
        return ransac_match(template, cands, cfg.sla, seed=cfg.seed)
    if cfg.matcher == "star":
        return star_vote_match(template, cands, cfg.sla)
    return hybrid_match(template, template.ratio_index, cands, cfg.sla, ransac_seed=cfg.seed)


def run_frame(
    img,
    cfg: PipelineConfig,
    template_or_bank: Template | TemplateBank,
    pupil_state: PupilState | None = None,
    labels: FrameLabels | None = None,
    frame_id: str = "frame",
    subject: str | None = None,
    pupil_detector=None,
) -> FramePrediction:
    pred = FramePrediction(frame_id=frame_id, status="ok")
    stages = pred.stages

    gray = img if isinstance(img, GrayImage) else to_gray(np.asarray(img))
    stages.append("gray")
    frame_size = (gray.width, gray.height)

    cfg = scale_params(cfg, frame_size)
    stages.append("scale_params")

    roi_active = False
    offset = (0, 0)
    work = gray
    if pupil_state is None:
        pupil_state = PupilState()
    if cfg.pupil.enabled:
        detector = pupil_detector or darkest_region_pupil
        center, radius, ok = detector(gray)
        pupil_state.observe(center, radius, ok)
        stages.append("pupil_detect")
        action, roi_center = resolve_pupil_roi(pupil_state, cfg.pupil.fail_policy)
        stages.append("resolve_roi")
        if action == "skip":
            pred.status = "skipped"
            pred.reason = "pupil_invalid"
            return pred
        if action == "use" and roi_center is not None:
            work, offset = compute_pupil_roi(gray, roi_center, cfg.pupil.roi_side_px)
            roi_active = True
            stages.append("roi_crop")

    template = (
        template_or_bank.templates[0] if isinstance(template_or_bank, TemplateBank) else template_or_bank
    )
    support_template = template if cfg.detect.score_mode == "contrast_support" else None
    cands, fallback_passes = adaptive_fallback_detect(work, cfg.enhance, cfg.detect, support_template)
    stages.append("detect")
    if fallback_passes > 0:
        stages.append("fallback")

    if roi_active:
        cands = map_to_full_and_in_bounds(cands, offset, frame_size)
        stages.append("map_to_full")

    cands = pool_top_n(cands, cfg.detect.pool_n_max) if cands else []
    stages.append("pool")

    cands = gate_candidates(cands, cfg.detect.gates, frame_size, pupil_state)
    stages.append("border_gate")
    stages.append("annulus_gate")

    if isinstance(template_or_bank, TemplateBank):
        results = [(_run_matcher(t, cands, cfg), t) for t in template_or_bank.templates]
        scored = [(score_match_result(r, cfg.sla.eps), i, r, t) for i, (r, t) in enumerate(results)]
        scored.sort(key=lambda s: (-s[0], s[1]))
        result, matched_template = scored[0][2], scored[0][3]
    else:
        result = _run_matcher(template, cands, cfg)
        matched_template = template
    stages.append("match")

    if (
        result is not None
        and cfg.post_id_resolve
        and matched_template.k == 5
        and result.inliers == 5
    ):
        result = resolve_identity_permutation(result, matched_template, cands, cfg.sla)
        stages.append("id_resolve")

    if result is None:
        pred.status = "failed"
        pred.reason = "match_failure" if len(cands) >= 3 else "too_few_candidates"
    else:
        pred.matcher = result.matcher
        pred.inliers = result.inliers
        pred.median_residual = result.median_residual
        pred.max_residual = result.max_residual
        pred.glints = {
            led: cands[ci].center for led, ci in sorted(result.assignment.items())
        }
        proj = result.transform.apply(matched_template.points)
        pred.projected = {
            led: PointPx(float(x), float(y)) for led, (x, y) in zip(matched_template.led_ids, proj)
        }

    if labels is not None:
        pred.counts = evaluate_frame(pred.glints, labels, cfg.eval_thresh_px, frame_id=frame_id, subject=subject)
        stages.append("metrics")
    return pred


def discover_recordings(root) -> list[tuple[str, list[Path]]]:
    """Dataset layout adapter: subject/recording dirs of frames, or a flat dir."""
    root = Path(root)
    if not root.exists():
        raise NoFramesFound(f"no frames found under {root}")
    recordings = []
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    for d in subdirs:
        frames = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if frames:
            recordings.append((d.name, frames))
    flat = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if flat:
        recordings.append((root.name, flat))
    if not recordings:
        raise NoFramesFound(f"no frames found under {root}")
    return recordings


def _load_recording_labels(rec_dir: Path) -> dict[str, FrameLabels]:
    labels_path = rec_dir / "labels.jsonl"
    if labels_path.exists():
        return read_labels(labels_path)
    return {}


def load_image(path) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.uint16)
        elif im.mode in ("L", "P"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return to_gray(arr)


def config_hash(cfg: PipelineConfig) -> str:
    from .config import config_to_dict

    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _subject_of(rec_name: str, cfg: PipelineConfig) -> str:
    if cfg.subject_regex:
        import re

        m = re.match(cfg.subject_regex, rec_name)
        if m and m.groups():
            return m.group(1)
    return rec_name


def _process_recording(rec_name, frames, cfg, template_or_bank, pupil_detector=None):
    """One recording, frames in order (last-good pupil state is sequential)."""
    pupil_state = PupilState()
    rec_labels = _load_recording_labels(frames[0].parent)
    subject = _subject_of(rec_name, cfg)
    preds: list[FramePrediction] = []
    for frame_path in frames:
        fid = f"{rec_name}/{frame_path.name}"
        labels = rec_labels.get(frame_path.name) or rec_labels.get(frame_path.stem)
        img = load_image(frame_path)
        preds.append(
            run_frame(
                img,
                cfg,
                template_or_bank,
                pupil_state=pupil_state,
                labels=labels,
                frame_id=fid,
                subject=subject,
                pupil_detector=pupil_detector,
            )
        )
    return preds


def run_batch(
    dataset_root,
    cfg: PipelineConfig,
    template_or_bank: Template | TemplateBank,
    out_dir=None,
    pupil_detector=None,
    workers: int = 1,
):
    """Process a dataset tree; returns (predictions, frame counts, report).

    Recordings may run in parallel (workers > 1); frames within one
    recording always run in order. Results are reassembled in sorted
    recording order so outputs stay byte-identical regardless of workers.
    """
    recordings = discover_recordings(dataset_root)
    by_rec: dict[str, list[FramePrediction]] = {}
    if workers > 1 and len(recordings) > 1 and pupil_detector is None:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                rec_name: pool.submit(_process_recording, rec_name, frames, cfg, template_or_bank)
                for rec_name, frames in recordings
            }
            for rec_name, fut in futures.items():
                by_rec[rec_name] = fut.result()
    else:
        for rec_name, frames in recordings:
            by_rec[rec_name] = _process_recording(rec_name, frames, cfg, template_or_bank, pupil_detector)

    predictions: list[FramePrediction] = []
    counted: list[FrameCounts] = []
    for rec_name, _ in recordings:
        for pred in by_rec[rec_name]:
            predictions.append(pred)
            if pred.counts is not None:
                counted.append(pred.counts)

    report = aggregate(counted) if counted else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / "predictions.jsonl", [p.to_dict() for p in predictions])
        manifest = {
            "config_hash": config_hash(cfg),
            "code_version": __version__,
            "seed": cfg.seed,
            "dataset_root": str(dataset_root),
            "n_frames": len(predictions),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if report is not None:
            (out / "metrics.json").write_text(
                json.dumps(_report_dict(report), indent=2, sort_keys=True) + "\n"
            )
    return predictions, counted, report


def _report_dict(report) -> dict:
    return {
        "accuracy": report.accuracy,
        "precision": report.precision,
        "idf_accuracy": report.idf_accuracy,
        "mean_err": report.mean_err,
        "median_err": report.median_err,
        "n_images": report.n_images,
        "n_present": report.n_present,
        "n_predicted": report.n_predicted,
        "n_correct": report.n_correct,
    }


@dataclass(frozen=True)
class SweepRow:
    run_id: str
    matcher: str
    accuracy: float | None
    precision: float | None
    idf_accuracy: float | None
    median_err: float | None
    rank_score: float
    ties: int = 1


DEFAULT_RANK_WEIGHTS = {"accuracy": 0.5, "precision": 0.3, "median_err": 0.2}


def _rank_score(report, weights) -> float:
    acc = report.accuracy or 0.0
    prec = report.precision or 0.0
    med = report.median_err if report.median_err is not None else 10.0
    return weights["accuracy"] * acc + weights["precision"] * prec - weights["median_err"] * med / 10.0


def expand_grid(grid: dict[str, list]) -> list[dict[str, object]]:
    """Cartesian expansion of {config.path: [values]} into override dicts."""
    keys = sorted(grid)
    combos = itertools.product(*(grid[k] for k in keys))
    return [dict(zip(keys, combo)) for combo in combos]


def run_sweep(
    configs: list[tuple[str, PipelineConfig]],
    dataset_root,
    template_or_bank,
    out_dir=None,
    rank_weights=None,
) -> list[SweepRow]:
    """Run each config over the dataset; rank and collapse identical outcomes."""
    weights = dict(DEFAULT_RANK_WEIGHTS)
    if rank_weights:
        weights.update(rank_weights)
    rows: list[SweepRow] = []
    for run_id, cfg in configs:
        sub = None if out_dir is None else Path(out_dir) / run_id
        _, _, report = run_batch(dataset_root, cfg, template_or_bank, out_dir=sub)
        if report is None:
            raise ValueError(f"sweep run {run_id}: dataset has no labels to score")
        rows.append(
            SweepRow(
                run_id=run_id,
                matcher=cfg.matcher,
                accuracy=report.accuracy,
                precision=report.precision,
                idf_accuracy=report.idf_accuracy,
                median_err=report.median_err,
                rank_score=_rank_score(report, weights),
            )
        )

    collapsed: dict[tuple, SweepRow] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row.accuracy, row.precision, row.idf_accuracy, row.median_err)
        if key in collapsed:
            prev = collapsed[key]
            collapsed[key] = replace(prev, ties=prev.ties + 1)
        else:
            collapsed[key] = row
            order.append(key)
    out_rows = sorted((collapsed[k] for k in order), key=lambda r: -r.rank_score)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_jsonl(Path(out_dir) / "sweep.jsonl", [row.__dict__ for row in out_rows])
        (Path(out_dir) / "sweep.txt").write_text(format_sweep_table(out_rows) + "\n")
    return out_rows


def format_sweep_table(rows: list[SweepRow]) -> str:
    lines = ["Run ID            Ties  Matcher  Acc.    Prec.   IDF     Med.Err."]
    for r in rows:
        def fmt(v):
            return "undef" if v is None else f"{v:.4f}"

        lines.append(
            f"{r.run_id:<17} {r.ties:>4}  {r.matcher:<7}  {fmt(r.accuracy):>6}  "
            f"{fmt(r.precision):>6}  {fmt(r.idf_accuracy):>6}  {fmt(r.median_err):>7}"
        )
    return "\n".join(lines)
