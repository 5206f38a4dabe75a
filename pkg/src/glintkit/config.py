"""Pipeline configuration serialization, overrides, and the frozen preset."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from .candidates import DetectParams, FallbackParams, GateParams, ScoreWeights
from .enhance import EnhanceParams
from .matchers import SlaParams
from .pipeline import PipelineConfig, PupilParams
from .templates import RatioTolPolicy


class ConfigError(ValueError):
    pass


def config_to_dict(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["reference_size"] = list(cfg.reference_size)
    d["sla"]["scale_gate"] = list(cfg.sla.scale_gate)
    d["detect"]["fallback"]["pcts"] = list(cfg.detect.fallback.pcts)
    return d


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def config_from_dict(d: dict) -> PipelineConfig:
    d = copy.deepcopy(d)
    top_known = {
        "enhance", "detect", "sla", "matcher", "pupil",
        "post_id_resolve", "eval_thresh_px", "reference_size", "seed", "subject_regex",
    }
    unknown = set(d) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")
    try:
        enhance = EnhanceParams(**_build(EnhanceParams, d.get("enhance", {}), "enhance"))

        det = d.get("detect", {})
        fallback = FallbackParams(**{**_build(FallbackParams, det.pop("fallback", {}), "detect.fallback")})
        if isinstance(fallback.pcts, list):
            fallback = FallbackParams(
                enabled=fallback.enabled,
                pcts=tuple(fallback.pcts),
                pass_max=fallback.pass_max,
                target=fallback.target,
                kernel_add=fallback.kernel_add,
            )
        gates = GateParams(**_build(GateParams, det.pop("gates", {}), "detect.gates"))
        weights = det.pop("score_weights", None)
        sw = None if weights is None else ScoreWeights(**_build(ScoreWeights, weights, "detect.score_weights"))
        detect = DetectParams(**_build(DetectParams, det, "detect"), fallback=fallback, gates=gates, score_weights=sw)

        sla_d = d.get("sla", {})
        ratio_tol = RatioTolPolicy(**_build(RatioTolPolicy, sla_d.pop("ratio_tol", {}), "sla.ratio_tol"))
        if "scale_gate" in sla_d:
            sla_d["scale_gate"] = tuple(sla_d["scale_gate"])
        sla = SlaParams(**_build(SlaParams, sla_d, "sla"), ratio_tol=ratio_tol)

        pupil = PupilParams(**_build(PupilParams, d.get("pupil", {}), "pupil"))
        return PipelineConfig(
            enhance=enhance,
            detect=detect,
            sla=sla,
            matcher=d.get("matcher", "sla"),
            pupil=pupil,
            post_id_resolve=bool(d.get("post_id_resolve", True)),
            eval_thresh_px=float(d.get("eval_thresh_px", 10.0)),
            reference_size=tuple(d.get("reference_size", (640, 480))),
            seed=int(d.get("seed", 0)),
            subject_regex=d.get("subject_regex"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(d: dict, overrides: dict[str, object]) -> dict:
    """Apply {"detect.fallback.target": 8}-style dotted-path overrides."""
    out = copy.deepcopy(d)
    for path, value in overrides.items():
        parts = path.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object")
        node[parts[-1]] = value
    return out


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc
    if "config" in data:
        data = data["config"]
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def frozen_preset_dict() -> dict:
    text = resources.files("glintkit").joinpath("presets/frozen.json").read_text()
    return json.loads(text)


def frozen_preset() -> PipelineConfig:
    return config_from_dict(frozen_preset_dict()["config"])
