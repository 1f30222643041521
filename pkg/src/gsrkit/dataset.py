"""Ingestion of SWiG-style annotation and vocabulary ("space") files.

Accepted shapes (extra fields are ignored):

space JSON:
  {"verbs": {verb_id: {"template"|"abstract": str,
                       "roles"|"order": [role, ...],
                       "display_name": str (optional)}},
   "nouns": {noun_id: gloss | {"gloss": str | [str, ...]}}}

annotations JSON:
  {image_id: {"verb": verb_id,
              "frames": [{role: noun_id}, x3],
              "bb": {role: [x1, y1, x2, y2]}}}   # [-1,-1,-1,-1] = not visible

Role names are uppercased on load so the whole-token template invariant
holds for datasets that list roles in lowercase.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .core import BoundingBox, FrameAnnotation, NounClass, PredictedFrame, RoleFill, VerbClass
from .errors import DatasetError
from .evaluation import PredictionRecord

logger = logging.getLogger(__name__)

_SENTINEL = [-1, -1, -1, -1]


@dataclass(frozen=True)
class DatasetBundle:
    """A loaded dataset: vocabularies, annotations, and the image root."""

    verbs: Mapping[str, VerbClass]
    nouns: Mapping[str, NounClass]
    annotations: tuple[FrameAnnotation, ...]
    image_root: str = ""

    def image_uri(self, image_id: str) -> str:
        if not self.image_root:
            return image_id
        return f"{self.image_root.rstrip('/')}/{image_id}"


def load_space(path: str | Path) -> tuple[dict[str, VerbClass], dict[str, NounClass]]:
    """Load the verb/noun vocabularies from a space file."""
    doc = _read_json(path)
    verbs_doc = doc.get("verbs")
    nouns_doc = doc.get("nouns")
    if not isinstance(verbs_doc, dict) or not isinstance(nouns_doc, dict):
        raise DatasetError(f"{path}: space file must contain 'verbs' and 'nouns' maps")
    verbs: dict[str, VerbClass] = {}
    for verb_id, spec in verbs_doc.items():
        template = spec.get("template") or spec.get("abstract")
        roles = spec.get("roles") if isinstance(spec.get("roles"), list) else spec.get("order")
        if not template or not roles:
            raise DatasetError(f"{path}: verb {verb_id!r} lacks a template or role list")
        try:
            verbs[verb_id] = VerbClass(
                id=verb_id,
                display_name=spec.get("display_name", verb_id),
                template=template,
                roles=tuple(str(r).upper() for r in roles),
            )
        except ValueError as exc:
            raise DatasetError(f"{path}: verb {verb_id!r}: {exc}") from exc
    nouns: dict[str, NounClass] = {}
    for noun_id, spec in nouns_doc.items():
        if isinstance(spec, str):
            gloss = spec
        else:
            gloss = spec.get("gloss", "")
            if isinstance(gloss, list):
                gloss = gloss[0] if gloss else ""
        try:
            nouns[noun_id] = NounClass(id=noun_id, gloss=gloss)
        except ValueError as exc:
            raise DatasetError(f"{path}: noun {noun_id!r}: {exc}") from exc
    return verbs, nouns


def load_dataset(
    annotation_path: str | Path, space_path: str | Path, image_root: str = ""
) -> DatasetBundle:
    """Load and cross-validate annotations against the vocabulary."""
    verbs, nouns = load_space(space_path)
    doc = _read_json(annotation_path)
    annotations: list[FrameAnnotation] = []
    for image_id, spec in doc.items():
        annotations.append(_parse_annotation(image_id, spec, verbs, nouns))
    return DatasetBundle(
        verbs=verbs,
        nouns=nouns,
        annotations=tuple(annotations),
        image_root=image_root,
    )


def _parse_annotation(
    image_id: str,
    spec: Mapping[str, Any],
    verbs: Mapping[str, VerbClass],
    nouns: Mapping[str, NounClass],
) -> FrameAnnotation:
    verb_id = spec.get("verb")
    verb = verbs.get(verb_id)
    if verb is None:
        raise DatasetError(f"{image_id}: verb: unknown verb {verb_id!r}")
    frames_doc = spec.get("frames")
    if not isinstance(frames_doc, list) or len(frames_doc) != 3:
        raise DatasetError(f"{image_id}: frames: expected exactly 3 annotator frames")
    frames: list[dict[str, str]] = []
    for i, frame_doc in enumerate(frames_doc):
        frame: dict[str, str] = {}
        for role, noun_id in frame_doc.items():
            role = str(role).upper()
            if role not in verb.roles:
                raise DatasetError(
                    f"{image_id}: frames[{i}]: role {role!r} not in roles of {verb_id!r}"
                )
            if noun_id != "" and noun_id not in nouns:
                raise DatasetError(
                    f"{image_id}: frames[{i}].{role}: unknown noun {noun_id!r}"
                )
            frame[role] = noun_id
        frames.append(frame)
    gt_boxes: dict[str, BoundingBox] = {}
    for role, coords in (spec.get("bb") or {}).items():
        role = str(role).upper()
        if role not in verb.roles:
            raise DatasetError(f"{image_id}: bb: role {role!r} not in roles of {verb_id!r}")
        box = _parse_box(image_id, role, coords)
        if box is not None:
            gt_boxes[role] = box
    return FrameAnnotation(
        image_id=image_id,
        verb=verb_id,
        annotator_frames=tuple(frames),
        gt_boxes=gt_boxes,
    )


def _parse_box(image_id: str, role: str, coords: Any) -> Optional[BoundingBox]:
    if not isinstance(coords, (list, tuple)) or len(coords) != 4:
        raise DatasetError(f"{image_id}: bb.{role}: expected 4 coordinates, got {coords!r}")
    try:
        values = [float(c) for c in coords]
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{image_id}: bb.{role}: non-numeric box {coords!r}") from exc
    if values == [float(c) for c in _SENTINEL]:
        return None
    x1, y1, x2, y2 = values
    if x1 == x2 or y1 == y2:
        logger.warning("%s: bb.%s: degenerate box %s rejected", image_id, role, values)
        return None
    try:
        return BoundingBox(x1, y1, x2, y2)
    except ValueError as exc:
        raise DatasetError(f"{image_id}: bb.{role}: {exc}") from exc


def _read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DatasetError(f"{path}: expected a JSON object at the top level")
    return doc


def record_to_json(record: PredictionRecord) -> dict:
    frames: dict[str, Any] = {}
    for setting, frame in record.frames.items():
        roles: dict[str, Any] = {}
        for role, fill in frame.role_fills.items():
            entry: dict[str, Any] = {"noun": fill.noun, "score": fill.score}
            if fill.box is not None:
                entry["box"] = fill.box.tolist()
            roles[role] = entry
        frames[setting] = {"verb": frame.verb, "roles": roles}
    return {
        "image_id": record.image_id,
        "top_verbs": list(record.top_verbs),
        "frames": frames,
    }


def record_from_json(doc: Mapping[str, Any]) -> PredictionRecord:
    frames: dict[str, PredictedFrame] = {}
    for setting, frame_doc in doc.get("frames", {}).items():
        fills = {
            role: RoleFill(
                noun=entry["noun"],
                box=BoundingBox(*entry["box"]) if "box" in entry else None,
                score=float(entry.get("score", 0.0)),
            )
            for role, entry in frame_doc["roles"].items()
        }
        frames[setting] = PredictedFrame(verb=frame_doc["verb"], role_fills=fills)
    return PredictionRecord(
        image_id=doc["image_id"],
        top_verbs=tuple(doc["top_verbs"]),
        frames=frames,
    )


def dump_record(record: PredictionRecord) -> str:
    """One JSON line per record, key-sorted for byte-stable output."""
    return json.dumps(record_to_json(record), sort_keys=True, ensure_ascii=False)


def export_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    """Write prediction records as JSON-lines, atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dump_record(record) + "\n")
    tmp.replace(path)


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    """Read prediction records back from JSON-lines."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"{path}:{line_no}: malformed prediction record: {exc}")
    return records
