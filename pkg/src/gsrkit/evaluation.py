"""The five structured-frame metrics under three verb settings.

verb: verb prediction accuracy (top-1 / top-5 gating). value / val-all:
per-role and whole-frame noun accuracy. grnd / grnd-all: per-role and
whole-frame grounding accuracy (noun correct and IoU >= 0.5 by default).
Under the top-1/top-5 settings a wrong verb makes all four other metrics
incorrect for that image. value and grnd are per-image macro averages of
role-slot accuracy, which preserves the val-all <= value and
grnd-all <= grnd orderings for any role-count mix.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Optional, Sequence

from .core import FrameAnnotation, PredictedFrame, VerbClass, iou
from .errors import PredictionDataError

SETTINGS = ("top1", "top5", "gt")
_SETTING_LABELS = {"top1": "top-1-verb", "top5": "top-5-verb", "gt": "ground-truth-verb"}
IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class PredictionRecord:
    """One image's prediction: verb ranking plus one frame per setting."""

    image_id: str
    top_verbs: tuple[str, ...]
    frames: Mapping[str, PredictedFrame]

    def __post_init__(self) -> None:
        if not self.top_verbs:
            raise ValueError(f"{self.image_id}: top_verbs must be non-empty")
        unknown = [s for s in self.frames if s not in SETTINGS]
        if unknown:
            raise ValueError(f"{self.image_id}: unknown settings {unknown}")
        object.__setattr__(self, "frames", dict(self.frames))


@dataclass(frozen=True)
class ImageScore:
    """Per-setting outcome for one image."""

    verb_correct: Optional[bool]  # None under the gt setting
    role_total: int
    nouns_correct: int
    value_all: bool
    grnd_total: int  # < role_total only in absent-box "ignore" mode
    grnd_correct: int
    grnd_all: bool


@dataclass(frozen=True)
class SettingMetrics:
    verb: Optional[float]
    value: float
    val_all: float
    grnd: float
    grnd_all: float

    def __post_init__(self) -> None:
        for name in ("verb", "value", "val_all", "grnd", "grnd_all"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} = {v} outside [0, 100]")


@dataclass(frozen=True)
class MetricsReport:
    """Percentages per setting plus the image / role-slot counts they cover."""

    settings: Mapping[str, SettingMetrics]
    images: int
    role_slots: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "settings", dict(self.settings))


def _noun_correct(pred_noun: str, annotation: FrameAnnotation, role: str) -> bool:
    """A noun is correct when it matches any of the three annotators."""
    return any(frame.get(role, "") == pred_noun for frame in annotation.annotator_frames)


def _box_correct(
    pred_box, gt_box, *, absent_box: str
) -> Optional[bool]:
    """Box agreement; None means the slot is excluded (ignore mode)."""
    if gt_box is None:
        if absent_box == "ignore":
            return None
        return pred_box is None
    return pred_box is not None and iou(pred_box, gt_box) >= IOU_THRESHOLD


def score_image(
    record: PredictionRecord,
    annotation: FrameAnnotation,
    verbs: Mapping[str, VerbClass],
    settings: Sequence[str],
    *,
    joint_grnd: bool = True,
    absent_box: str = "strict",
) -> dict[str, ImageScore]:
    """Score one image under the requested settings.

    joint_grnd: grounding requires the noun to be correct as well as the box
    (the source benchmark's definition); turn off to score the box alone.
    absent_box: "strict" scores a missing GT box as correct only when the
    prediction is also boxless; "ignore" excludes those slots.
    """
    if absent_box not in ("strict", "ignore"):
        raise ValueError(f"unknown absent_box mode {absent_box!r}")
    verb = verbs.get(annotation.verb)
    if verb is None:
        raise PredictionDataError(
            f"{annotation.image_id}: annotation verb {annotation.verb!r} not in vocabulary"
        )
    results: dict[str, ImageScore] = {}
    for setting in settings:
        if setting not in SETTINGS:
            raise ValueError(f"unknown setting {setting!r}")
        if setting == "top1":
            verb_ok: Optional[bool] = record.top_verbs[0] == annotation.verb
        elif setting == "top5":
            verb_ok = annotation.verb in record.top_verbs[:5]
        else:
            verb_ok = None
        frame = record.frames.get(setting)
        gated_out = verb_ok is False
        if not gated_out and frame is not None and frame.verb != annotation.verb:
            raise PredictionDataError(
                f"{annotation.image_id}: frame for setting {setting!r} predicts verb "
                f"{frame.verb!r} but the annotation says {annotation.verb!r}"
            )
        results[setting] = _score_frame(
            None if gated_out else frame,
            annotation,
            verb,
            verb_ok,
            joint_grnd=joint_grnd,
            absent_box=absent_box,
        )
    return results


def _score_frame(
    frame: Optional[PredictedFrame],
    annotation: FrameAnnotation,
    verb: VerbClass,
    verb_ok: Optional[bool],
    *,
    joint_grnd: bool,
    absent_box: str,
) -> ImageScore:
    nouns_correct = 0
    grnd_total = 0
    grnd_correct = 0
    for role in verb.roles:
        fill = frame.role_fills.get(role) if frame is not None else None
        noun_ok = fill is not None and _noun_correct(fill.noun, annotation, role)
        if noun_ok:
            nouns_correct += 1
        box_ok = _box_correct(
            fill.box if fill is not None else None,
            annotation.gt_boxes.get(role),
            absent_box=absent_box,
        )
        if box_ok is None:
            continue
        grnd_total += 1
        grounded = (noun_ok and box_ok) if joint_grnd else box_ok
        if grounded and frame is not None:
            grnd_correct += 1
    role_total = len(verb.roles)
    return ImageScore(
        verb_correct=verb_ok,
        role_total=role_total,
        nouns_correct=nouns_correct,
        value_all=nouns_correct == role_total,
        grnd_total=grnd_total,
        grnd_correct=grnd_correct if frame is not None else 0,
        grnd_all=grnd_total > 0 and grnd_correct == grnd_total and frame is not None,
    )


def aggregate(per_image: Mapping[str, Sequence[ImageScore]]) -> MetricsReport:
    """Fold per-image scores into the report; commutative, order-independent.

    verb / val-all / grnd-all are image accuracies; value / grnd are means of
    per-image role-slot accuracy.
    """
    if not per_image:
        raise ValueError("aggregate requires at least one setting")
    settings: dict[str, SettingMetrics] = {}
    images = 0
    role_slots = 0
    for setting, scores in per_image.items():
        if not scores:
            raise ValueError(f"setting {setting!r} has no image scores")
        images = len(scores)
        role_slots = sum(s.role_total for s in scores)
        n = len(scores)
        verb: Optional[float]
        if all(s.verb_correct is None for s in scores):
            verb = None
        else:
            verb = 100.0 * sum(1 for s in scores if s.verb_correct) / n
        value = 100.0 * sum(s.nouns_correct / s.role_total for s in scores) / n
        val_all = 100.0 * sum(1 for s in scores if s.value_all) / n
        with_slots = [s for s in scores if s.grnd_total > 0]
        if with_slots:
            grnd = 100.0 * sum(s.grnd_correct / s.grnd_total for s in with_slots) / len(
                with_slots
            )
            grnd_all = 100.0 * sum(1 for s in with_slots if s.grnd_all) / len(with_slots)
        else:
            grnd = 0.0
            grnd_all = 0.0
        settings[setting] = SettingMetrics(verb, value, val_all, grnd, grnd_all)
    return MetricsReport(settings=settings, images=images, role_slots=role_slots)


def _fmt(value: Optional[float]) -> str:
    """2-decimal half-up rendering; absent cells print as '-'."""
    if value is None:
        return "-"
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def render_report(report: MetricsReport) -> str:
    """Fixed-width text table, one row per setting, metric columns as in the
    standard benchmark table (verb, value, val-all, grnd, grnd-all)."""
    ordered = [s for s in SETTINGS if s in report.settings]
    show_verb = any(report.settings[s].verb is not None for s in ordered)
    headers = ["setting"] + (["verb"] if show_verb else []) + [
        "value",
        "val-all",
        "grnd",
        "grnd-all",
    ]
    rows: list[list[str]] = []
    for setting in ordered:
        m = report.settings[setting]
        cells = [_SETTING_LABELS[setting]]
        if show_verb:
            cells.append(_fmt(m.verb))
        cells.extend([_fmt(m.value), _fmt(m.val_all), _fmt(m.grnd), _fmt(m.grnd_all)])
        rows.append(cells)
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows), 6) for i in range(len(headers))
    ]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    def line(cells: list[str]) -> str:
        padded = [
            f" {c.ljust(widths[0])} " if i == 0 else f" {c.rjust(widths[i])} "
            for i, c in enumerate(cells)
        ]
        return "|" + "|".join(padded) + "|"
    out = [sep, line(headers), sep]
    out.extend(line(r) for r in rows)
    out.append(sep)
    return "\n".join(out) + "\n"


def report_to_json(report: MetricsReport) -> dict:
    """Machine-readable twin of the rendered table (full float precision)."""
    payload: dict = {"settings": {}, "counts": {"images": report.images, "role_slots": report.role_slots}}
    for setting in (s for s in SETTINGS if s in report.settings):
        m = report.settings[setting]
        entry = {
            "value": m.value,
            "val_all": m.val_all,
            "grnd": m.grnd,
            "grnd_all": m.grnd_all,
        }
        if m.verb is not None:
            entry["verb"] = m.verb
        payload["settings"][setting] = entry
    return payload
