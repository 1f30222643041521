"""Semantic role grounding: candidate box generation from rephrased templates.

Each rephrased template is sent to the grounding backend once; detections
are mapped back to roles through the role tokens the rephrasings are
required to preserve, the best detection per (rephrasing, role) is kept,
and the union across rephrasings forms the candidate set handed to noun
recognition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .backends import Backend, Detection, ImageRef
from .core import BoundingBox, VerbClass, _role_pattern
from .errors import GroundingFailedError, TransportError
from .explainers import DescriptionSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateBox:
    """A grounded role proposal: role, box, confidence, producing rephrasing."""

    role: str
    box: BoundingBox
    confidence: float
    source_index: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def match_label_to_role(phrase: str, roles: Sequence[str]) -> Optional[str]:
    """Map a grounder phrase to a role by case-insensitive whole-word match.

    When several role tokens occur in the phrase the longest one wins
    (earlier role order breaks exact-length ties); no match returns None.
    """
    matches = [
        role for role in roles if _role_pattern(role, ignore_case=True).search(phrase)
    ]
    if not matches:
        return None
    return max(matches, key=lambda r: (len(r), -roles.index(r)))


def ground_candidates(
    backend: Backend,
    image: ImageRef,
    verb: VerbClass,
    rephrasings: DescriptionSet,
    *,
    confidence_threshold: float = 0.0,
) -> list[CandidateBox]:
    """Run the grounder once per rephrasing and union the per-role winners.

    Per (rephrasing, role) only the highest-confidence detection survives
    (ties: smaller box area, then first returned). Detections whose phrase
    matches no role are dropped. A transport failure on one rephrasing skips
    it with a warning; if every rephrasing fails, GroundingFailedError is
    raised. Roles never detected are simply absent from the result.
    """
    if not rephrasings.descriptions:
        raise ValueError("rephrasings must be non-empty")
    candidates: list[CandidateBox] = []
    failures = 0
    for source_index, caption in enumerate(rephrasings.descriptions):
        try:
            detections = backend.ground(image, caption)
        except TransportError as exc:
            failures += 1
            logger.warning(
                "grounding failed for %s rephrasing %d: %s", image.uri, source_index, exc
            )
            continue
        best: dict[str, tuple[Detection, int]] = {}
        for order, det in enumerate(detections):
            if det.score < confidence_threshold:
                continue
            role = match_label_to_role(det.phrase, verb.roles)
            if role is None:
                continue
            incumbent = best.get(role)
            if incumbent is None or _beats(det, order, *incumbent):
                best[role] = (det, order)
        for role in verb.roles:
            if role in best:
                det, _ = best[role]
                candidates.append(
                    CandidateBox(
                        role=role,
                        box=det.box,
                        confidence=det.score,
                        source_index=source_index,
                    )
                )
    if failures == len(rephrasings.descriptions):
        raise GroundingFailedError(
            f"all {failures} grounding calls failed for image {image.uri!r}"
        )
    return candidates


def _beats(challenger: Detection, order: int, incumbent: Detection, inc_order: int) -> bool:
    """Max confidence; ties prefer the smaller box, then first-returned order."""
    key = (-challenger.score, challenger.box.area, order)
    inc_key = (-incumbent.score, incumbent.box.area, inc_order)
    return key < inc_key


def group_by_role(candidates: Sequence[CandidateBox]) -> dict[str, list[CandidateBox]]:
    """Group a candidate set by role, preserving candidate order."""
    grouped: dict[str, list[CandidateBox]] = {}
    for candidate in candidates:
        grouped.setdefault(candidate.role, []).append(candidate)
    return grouped
