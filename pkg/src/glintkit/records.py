"""Line-delimited record formats: annotations, labels, and generic JSONL.

Records are schema-versioned, round-trip lossless, and preserve unknown
fields so files written by newer tools survive a pass through older ones.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import PointPx
from .metrics import FrameLabels

RECORD_SCHEMA_VERSION = 1

GLINT_SOURCES = ("human", "detected", "template_projected")
VERDICTS = ("accepted", "corrected", "rejected")

_KNOWN_KEYS = {"v", "record_id", "frame_id", "glints", "verdict", "timestamp", "frame_w", "frame_h"}


class RecordValidationError(ValueError):
    pass


@dataclass(frozen=True)
class GlintMark:
    x: float
    y: float
    source: str = "human"

    def __post_init__(self):
        if self.source not in GLINT_SOURCES:
            raise RecordValidationError(f"unknown glint source {self.source!r}")


@dataclass
class AnnotationRecord:
    frame_id: str
    glints: dict[int, GlintMark]
    frame_w: int
    frame_h: int
    verdict: str | None = None
    timestamp: float = 0.0
    record_id: int | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.verdict is not None and self.verdict not in VERDICTS:
            raise RecordValidationError(f"frame {self.frame_id}: unknown verdict {self.verdict!r}")
        has_human = any(g.source == "human" for g in self.glints.values())
        if has_human and self.verdict is None:
            raise RecordValidationError(f"frame {self.frame_id}: human-source points require a verdict")
        for led, g in self.glints.items():
            if not (0 <= g.x <= self.frame_w - 1 and 0 <= g.y <= self.frame_h - 1):
                raise RecordValidationError(
                    f"frame {self.frame_id}: glint {led} at ({g.x}, {g.y}) outside {self.frame_w}x{self.frame_h}"
                )

    def to_dict(self) -> dict:
        d = {
            "v": RECORD_SCHEMA_VERSION,
            "frame_id": self.frame_id,
            "glints": {
                str(led): {"x": g.x, "y": g.y, "source": g.source} for led, g in sorted(self.glints.items())
            },
            "verdict": self.verdict,
            "timestamp": self.timestamp,
            "frame_w": self.frame_w,
            "frame_h": self.frame_h,
        }
        if self.record_id is not None:
            d["record_id"] = self.record_id
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        if d.get("v") != RECORD_SCHEMA_VERSION:
            raise RecordValidationError(f"unsupported record schema {d.get('v')!r}")
        glints = {
            int(led): GlintMark(float(g["x"]), float(g["y"]), g.get("source", "human"))
            for led, g in d.get("glints", {}).items()
        }
        rec = cls(
            frame_id=str(d["frame_id"]),
            glints=glints,
            frame_w=int(d["frame_w"]),
            frame_h=int(d["frame_h"]),
            verdict=d.get("verdict"),
            timestamp=float(d.get("timestamp", 0.0)),
            record_id=d.get("record_id"),
            extra={k: v for k, v in d.items() if k not in _KNOWN_KEYS},
        )
        rec.validate()
        return rec


def write_jsonl(path, dicts) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dicts:
            f.write(json.dumps(d, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def write_records(path, records: list[AnnotationRecord]) -> None:
    for r in records:
        r.validate()
    write_jsonl(path, [r.to_dict() for r in records])


def read_records(path) -> list[AnnotationRecord]:
    return [AnnotationRecord.from_dict(d) for d in read_jsonl(path)]


class AnnotationStore:
    """Append-only annotation log with monotonically increasing record ids.

    Replaying the log reconstructs state exactly; a single writer
    serializes appends while readers are free.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: list[AnnotationRecord] = []
        self._next_id = 1
        if self.path.exists():
            self._records = read_records(self.path)
            if self._records:
                self._next_id = max(r.record_id or 0 for r in self._records) + 1

    def append(self, record: AnnotationRecord) -> AnnotationRecord:
        record.validate()
        with self._lock:
            record.record_id = self._next_id
            self._next_id += 1
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            self._records.append(record)
        return record

    def all(self) -> list[AnnotationRecord]:
        return list(self._records)

    def for_frame(self, frame_id: str) -> list[AnnotationRecord]:
        return [r for r in self._records if r.frame_id == frame_id]

    def latest_for_frame(self, frame_id: str) -> AnnotationRecord | None:
        recs = self.for_frame(frame_id)
        return recs[-1] if recs else None


def labels_to_dict(frame_id: str, labels: FrameLabels) -> dict:
    d: dict = {
        "frame_id": frame_id,
        "glints": {str(led): [p.x, p.y] for led, p in sorted(labels.glints.items())},
    }
    if labels.pupil_center is not None:
        d["pupil"] = {"x": labels.pupil_center.x, "y": labels.pupil_center.y}
        if labels.pupil_radius is not None:
            d["pupil"]["r"] = labels.pupil_radius
    return d


def labels_from_dict(d: dict) -> tuple[str, FrameLabels]:
    glints = {int(led): PointPx(float(x), float(y)) for led, (x, y) in d.get("glints", {}).items()}
    pupil = d.get("pupil")
    center = PointPx(float(pupil["x"]), float(pupil["y"])) if pupil else None
    radius = float(pupil["r"]) if pupil and "r" in pupil else None
    return str(d["frame_id"]), FrameLabels(glints=glints, pupil_center=center, pupil_radius=radius)


def write_labels(path, by_frame: dict[str, FrameLabels]) -> None:
    write_jsonl(path, [labels_to_dict(fid, lab) for fid, lab in sorted(by_frame.items())])


def read_labels(path) -> dict[str, FrameLabels]:
    out = {}
    for d in read_jsonl(path):
        fid, lab = labels_from_dict(d)
        out[fid] = lab
    return out
