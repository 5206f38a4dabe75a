"""HTTP surface serving frames, predictions, and annotation round-trips.

All endpoints live under /api/v1 and exchange plain JSON; frame images go
out as PNG regardless of source encoding, and every coordinate is in
full-frame pixels. Annotation writes are serialized through the
append-only store; reads are unrestricted. Static UI assets, when built,
are served from the root path.
"""

from __future__ import annotations

import io
import time
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles

from .candidates import PupilState
from .config import ConfigError, apply_overrides, config_from_dict, config_to_dict
from .pipeline import PipelineConfig, discover_recordings, load_image, run_frame
from .records import AnnotationStore, AnnotationRecord, RecordValidationError, read_labels
from .templates import LedIdMismatch, Template, build_template, load_template, save_template


class FrameIndex:
    def __init__(self, dataset_root):
        self.root = Path(dataset_root)
        self.frames: dict[str, Path] = {}
        self.subjects: dict[str, str] = {}
        for rec_name, paths in discover_recordings(self.root):
            for p in paths:
                fid = f"{rec_name}/{p.name}"
                self.frames[fid] = p
                self.subjects[fid] = rec_name
        self.order = sorted(self.frames)
        self._labels_cache: dict[Path, dict] = {}

    def labels_for(self, frame_id: str):
        path = self.frames[frame_id]
        rec_dir = path.parent
        if rec_dir not in self._labels_cache:
            labels_path = rec_dir / "labels.jsonl"
            self._labels_cache[rec_dir] = read_labels(labels_path) if labels_path.exists() else {}
        rec = self._labels_cache[rec_dir]
        return rec.get(path.name) or rec.get(path.stem)


def create_app(
    dataset_root,
    template_path,
    config: PipelineConfig | None = None,
    annotations_path=None,
    templates_dir=None,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="glintkit", version="1")
    index = FrameIndex(dataset_root)
    base_config = config or PipelineConfig()
    template = load_template(template_path) if not isinstance(template_path, Template) else template_path
    store_path = Path(annotations_path) if annotations_path else Path(dataset_root) / "annotations.jsonl"
    store = AnnotationStore(store_path)
    tdir = Path(templates_dir) if templates_dir else Path(dataset_root) / "templates"
    prediction_cache: dict[str, dict] = {}

    def get_frame_path(frame_id: str) -> Path:
        path = index.frames.get(frame_id)
        if path is None:
            raise HTTPException(status_code=404, detail=f"unknown frame {frame_id!r}")
        return path

    def predict(frame_id: str, cfg: PipelineConfig) -> dict:
        img = load_image(get_frame_path(frame_id))
        labels = index.labels_for(frame_id)
        pred = run_frame(
            img,
            cfg,
            template,
            pupil_state=PupilState(),
            labels=labels,
            frame_id=frame_id,
            subject=index.subjects.get(frame_id),
        )
        d = pred.to_dict()
        if labels is not None:
            d["labels"] = {str(k): [p.x, p.y] for k, p in sorted(labels.glints.items())}
        d["frame_w"], d["frame_h"] = img.width, img.height
        return d

    @app.get("/api/v1/frames")
    def list_frames(page: int = Query(1, ge=1), page_size: int = Query(50, ge=1, le=500)):
        start = (page - 1) * page_size
        ids = index.order[start : start + page_size]
        return {"total": len(index.order), "page": page, "page_size": page_size, "frames": ids}

    @app.get("/api/v1/frames/{frame_id:path}/image")
    def frame_image(frame_id: str):
        from PIL import Image

        path = get_frame_path(frame_id)
        with Image.open(path) as im:
            buf = io.BytesIO()
            im.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/api/v1/frames/{frame_id:path}/prediction")
    def frame_prediction(frame_id: str):
        get_frame_path(frame_id)
        if frame_id not in prediction_cache:
            prediction_cache[frame_id] = predict(frame_id, base_config)
        return prediction_cache[frame_id]

    @app.post("/api/v1/frames/{frame_id:path}/rerun")
    def frame_rerun(frame_id: str, body: dict = Body(default={})):
        get_frame_path(frame_id)
        overrides = body.get("overrides", {})
        try:
            cfg = config_from_dict(apply_overrides(config_to_dict(base_config), overrides))
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return predict(frame_id, cfg)

    @app.get("/api/v1/annotations")
    def list_annotations(frame_id: str | None = None):
        recs = store.for_frame(frame_id) if frame_id else store.all()
        return {"annotations": [r.to_dict() for r in recs]}

    @app.post("/api/v1/annotations", status_code=201)
    def submit_annotation(body: dict = Body(...)):
        data = dict(body)
        data.setdefault("v", 1)
        data.setdefault("timestamp", time.time())
        data.pop("record_id", None)
        try:
            rec = AnnotationRecord.from_dict(data)
            if rec.frame_id not in index.frames:
                raise HTTPException(status_code=404, detail=f"unknown frame {rec.frame_id!r}")
            stored = store.append(rec)
        except RecordValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return stored.to_dict()

    @app.get("/api/v1/templates")
    def list_templates():
        out = []
        if tdir.exists():
            for p in sorted(tdir.glob("*.json")):
                t = load_template(p)
                out.append({"name": t.layout_name, "path": p.name, "K": t.k, "led_ids": list(t.led_ids)})
        return {"templates": out}

    @app.post("/api/v1/templates/build", status_code=201)
    def template_build(body: dict = Body(...)):
        frame_ids = body.get("frame_ids", [])
        method = body.get("method", "procrustes")
        name = body.get("layout_name", "from-annotations")
        constellations = []
        provenance = []
        for fid in frame_ids:
            rec = store.latest_for_frame(fid)
            if rec is None:
                raise HTTPException(status_code=404, detail=f"no annotation for frame {fid!r}")
            constellations.append({led: (g.x, g.y) for led, g in rec.glints.items()})
            provenance.append(fid)
        if not constellations:
            raise HTTPException(status_code=422, detail="no frames selected")
        try:
            t = build_template(constellations, method=method, layout_name=name,
                               provenance_images=tuple(provenance))
        except LedIdMismatch as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (ValueError,) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        tdir.mkdir(parents=True, exist_ok=True)
        out_path = tdir / f"{name}.json"
        save_template(t, out_path)
        return {
            "layout_name": t.layout_name,
            "K": t.k,
            "led_ids": list(t.led_ids),
            "points": [[float(x), float(y)] for x, y in t.points],
            "path": str(out_path),
        }

    @app.get("/api/v1/config")
    def get_config():
        return config_to_dict(base_config)

    if ui_dir and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
