"""Command-line interface: run, batch, sweep, template, synth, eval, serve.

Exit codes: 0 success, 2 no frames found, 3 configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    frozen_preset,
    load_config,
)
from .pipeline import (
    NoFramesFound,
    PipelineConfig,
    expand_grid,
    format_sweep_table,
    load_image,
    run_batch,
    run_frame,
    run_sweep,
)
from .records import read_jsonl, read_labels, write_labels
from .metrics import FrameLabels, aggregate, evaluate_frame, format_led_table
from .geometry import PointPx, normalize_points
from .synth import SceneSpec, generate_scene
from .templates import Template, TemplateBank, build_template, load_template, save_template

EXIT_OK = 0
EXIT_NO_FRAMES = 2
EXIT_CONFIG = 3


def _parse_set(values: list[str]) -> dict:
    out = {}
    for item in values or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = json.loads(raw) if raw and raw[0] in "[{\"-0123456789tfn" else raw
    return out


def _env_overrides() -> dict:
    """GLINTKIT_OVERRIDES: JSON object of dotted-path overrides."""
    import os

    raw = os.environ.get("GLINTKIT_OVERRIDES")
    if not raw:
        return {}
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"GLINTKIT_OVERRIDES is not valid JSON: {exc}") from exc
    if not isinstance(parsed, dict):
        raise ConfigError("GLINTKIT_OVERRIDES must be a JSON object")
    return parsed


def _load_cfg(args) -> PipelineConfig:
    """Precedence: config file < GLINTKIT_OVERRIDES env < --set flags."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", False):
        cfg = frozen_preset()
    else:
        cfg = PipelineConfig()
    overrides = dict(_env_overrides())
    overrides.update(_parse_set(getattr(args, "set", None)))
    if overrides:
        cfg = config_from_dict(apply_overrides(config_to_dict(cfg), overrides))
    return cfg


def _load_templates(args) -> Template | TemplateBank:
    paths = args.template
    if len(paths) == 1:
        return load_template(paths[0])
    return TemplateBank(tuple(load_template(p) for p in paths))


def demo_template_5() -> Template:
    """Built-in irregular 5-LED layout for synthetic runs."""
    pts = [(0.0, 0.0), (2.0, 0.3), (2.2, 1.8), (1.0, 2.4), (-0.3, 1.9)]
    return Template(normalize_points(pts).points, tuple(range(5)), layout_name="demo5")


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    template = _load_templates(args)
    img = load_image(args.image)
    pred = run_frame(img, cfg, template, frame_id=Path(args.image).name)
    print(json.dumps(pred.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = _load_cfg(args)
    template = _load_templates(args)
    preds, counted, report = run_batch(args.dataset, cfg, template, out_dir=args.out, workers=args.workers)
    print(f"processed {len(preds)} frames")
    if report is not None:
        print(json.dumps({
            "accuracy": report.accuracy,
            "precision": report.precision,
            "idf_accuracy": report.idf_accuracy,
            "mean_err": report.mean_err,
            "median_err": report.median_err,
            "n_images": report.n_images,
        }, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = config_to_dict(_load_cfg(args))
    template = _load_templates(args)
    grid = json.loads(Path(args.grid).read_text())
    configs = []
    for i, overrides in enumerate(expand_grid(grid)):
        cfg = config_from_dict(apply_overrides(base, overrides))
        configs.append((f"run_{i:03d}", cfg))
    rows = run_sweep(configs, args.dataset, template, out_dir=args.out)
    print(format_sweep_table(rows))
    return EXIT_OK


def cmd_template_build(args) -> int:
    by_frame = read_labels(args.labels)
    # Frames may miss glints (occlusion, dropouts); group by LED id set and
    # build from the largest consistently-labeled group.
    groups: dict[frozenset, list[dict]] = {}
    for fid in sorted(by_frame):
        glints = by_frame[fid].glints
        if len(glints) < 3:
            continue
        groups.setdefault(frozenset(glints), []).append({led: (p.x, p.y) for led, p in glints.items()})
    if not groups:
        print("no usable constellations in labels", file=sys.stderr)
        return EXIT_NO_FRAMES
    ids = max(groups, key=lambda k: (len(k), len(groups[k])))
    constellations = groups[ids]
    t = build_template(constellations, method=args.method, layout_name=args.name)
    save_template(t, args.out)
    print(f"template {t.layout_name}: K={t.k}, {len(constellations)} constellations -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    template = load_template(args.template) if args.template else demo_template_5()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = {}
    for i in range(args.n):
        spec = SceneSpec(
            template=template,
            jitter_sigma=args.jitter,
            dropout_max=args.dropouts,
            distractor_max=args.distractors,
            render=args.render,
            rng_seed=args.seed + i,
        )
        sc = generate_scene(spec)
        name = f"scene{i:04d}.png"
        if args.render:
            from PIL import Image

            arr = (sc.frame.data * 255).astype(np.uint8)
            Image.fromarray(arr).save(out / name)
        labels[name] = FrameLabels(glints=sc.truth, pupil_center=sc.pupil_center,
                                   pupil_radius=sc.pupil_radius)
    write_labels(out / "labels.jsonl", labels)
    print(f"wrote {args.n} scenes to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = read_jsonl(args.predictions)
    by_frame = read_labels(args.labels)
    frames = []
    for p in preds:
        labels = by_frame.get(p["frame_id"]) or by_frame.get(Path(p["frame_id"]).name)
        if labels is None:
            continue
        glints = {int(k): PointPx(x, y) for k, (x, y) in p.get("glints", {}).items()}
        frames.append(evaluate_frame(glints, labels, args.thresh, frame_id=p["frame_id"]))
    if not frames:
        print("no frames matched between predictions and labels", file=sys.stderr)
        return EXIT_NO_FRAMES
    if args.by == "led":
        print(format_led_table(aggregate(frames, group_by="led")))
    else:
        r = aggregate(frames)
        print(json.dumps({
            "accuracy": r.accuracy, "precision": r.precision, "idf_accuracy": r.idf_accuracy,
            "mean_err": r.mean_err, "median_err": r.median_err, "n_images": r.n_images,
        }, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load_cfg(args)
    app = create_app(
        args.dataset,
        args.template[0],
        config=cfg,
        annotations_path=args.annotations,
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glintkit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, template_required=True):
        p.add_argument("--config", help="config JSON path")
        p.add_argument("--preset", action="store_true", help="start from the frozen preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override, repeatable")
        p.add_argument("--template", nargs="+", required=template_required,
                       help="template JSON path(s); several form a bank")

    p = sub.add_parser("run", help="run the pipeline on a single frame")
    add_common(p)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run the pipeline over a dataset tree")
    add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="output directory for predictions/metrics/manifest")
    p.add_argument("--workers", type=int, default=1,
                   help="recording-level parallelism (frames stay ordered per recording)")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("sweep", help="hyperparameter sweep from a grid JSON")
    add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", required=True, help='JSON file: {"sla.eps": [4, 6], ...}')
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("template", help="template utilities")
    tsub = p.add_subparsers(dest="template_command", required=True)
    tb = tsub.add_parser("build", help="build a template from labeled constellations")
    tb.add_argument("--labels", required=True, help="labels.jsonl with full constellations")
    tb.add_argument("--method", choices=["median", "procrustes"], default="procrustes")
    tb.add_argument("--name", default="layout")
    tb.add_argument("--out", required=True)
    tb.set_defaults(func=cmd_template_build)

    p = sub.add_parser("synth", help="generate synthetic scenes with truth labels")
    p.add_argument("--template", help="template JSON (default: built-in 5-LED demo layout)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=1.0)
    p.add_argument("--dropouts", type=int, default=2)
    p.add_argument("--distractors", type=int, default=5)
    p.add_argument("--render", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score prediction records against labels")
    p.add_argument("--predictions", required=True, help="predictions.jsonl from a batch run")
    p.add_argument("--labels", required=True, help="labels.jsonl")
    p.add_argument("--thresh", type=float, default=10.0)
    p.add_argument("--by", choices=["all", "led"], default="all")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve frames, predictions, and annotations over HTTP")
    add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--annotations")
    p.add_argument("--ui", help="directory of built UI assets to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFramesFound as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NO_FRAMES


if __name__ == "__main__":
    sys.exit(main())
