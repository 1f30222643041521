"""Domain types shared by all pipeline stages, plus pure geometry/vector math.

Everything here is immutable after construction and safe for unrestricted
concurrent use.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ZeroVectorError

_ROLE_TOKEN = re.compile(r"^[A-Z0-9]+$")


def _role_pattern(role: str, *, ignore_case: bool = False) -> re.Pattern[str]:
    """Whole-token pattern for a role name: never matches inside another word."""
    flags = re.IGNORECASE if ignore_case else 0
    return re.compile(rf"(?<![A-Za-z0-9]){re.escape(role)}(?![A-Za-z0-9])", flags)


@dataclass(frozen=True)
class SemanticRole:
    """A slot in a verb template naming a participant (e.g. "AGENT")."""

    name: str

    def __post_init__(self) -> None:
        if not self.name or not _ROLE_TOKEN.match(self.name):
            raise ValueError(f"role name must be uppercase alphanumeric, got {self.name!r}")


@dataclass(frozen=True)
class VerbClass:
    """A verb vocabulary entry: stable id, display name, template, ordered roles.

    The template embeds every role as an uppercase token, e.g.
    "the AGENT buys GOODS with PAYMENT from the SELLER in a PLACE".
    """

    id: str
    display_name: str
    template: str
    roles: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.roles:
            raise ValueError(f"verb {self.id!r} has no roles")
        if len(set(self.roles)) != len(self.roles):
            raise ValueError(f"verb {self.id!r} has duplicate roles")
        for role in self.roles:
            SemanticRole(role)  # validates the token shape
            if not _role_pattern(role).search(self.template):
                raise ValueError(
                    f"verb {self.id!r}: role {role!r} does not occur as a whole "
                    f"token in template {self.template!r}"
                )


@dataclass(frozen=True)
class NounClass:
    """A noun vocabulary entry: stable id (e.g. a synset) plus a prompt gloss."""

    id: str
    gloss: str

    def __post_init__(self) -> None:
        if not self.gloss:
            raise ValueError(f"noun {self.id!r} has an empty gloss")


class Embedding:
    """A fixed-dimension real vector; the common currency of all scoring.

    Wraps a read-only float64 numpy array. All entries must be finite.
    """

    __slots__ = ("values",)

    def __init__(self, values: Sequence[float] | np.ndarray):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"embedding must be a non-empty 1-d vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("Embedding is immutable")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel corner format [x1, y1, x2, y2]."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) and c >= 0 for c in coords):
            raise ValueError(f"box coordinates must be finite and >= 0, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must satisfy x1 < x2 and y1 < y2, got {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def tolist(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class RoleFill:
    """One filled role of a predicted frame: noun id, optional box, score."""

    noun: str
    box: Optional[BoundingBox] = None
    score: float = 0.0


@dataclass(frozen=True)
class PredictedFrame:
    """The structured output: a verb id plus one fill per semantic role."""

    verb: str
    role_fills: Mapping[str, RoleFill]

    def __post_init__(self) -> None:
        object.__setattr__(self, "role_fills", dict(self.role_fills))


def validate_frame(
    frame: PredictedFrame,
    verbs: Mapping[str, VerbClass],
    nouns: Mapping[str, NounClass],
) -> None:
    """Check a frame against the vocabulary: role keys == R_v, nouns resolvable."""
    verb = verbs.get(frame.verb)
    if verb is None:
        raise ValueError(f"frame verb {frame.verb!r} not in vocabulary")
    if set(frame.role_fills) != set(verb.roles):
        raise ValueError(
            f"frame for {frame.verb!r} fills roles {sorted(frame.role_fills)}, "
            f"expected {sorted(verb.roles)}"
        )
    for role, fill in frame.role_fills.items():
        if fill.noun not in nouns:
            raise ValueError(f"role {role!r} filled with unknown noun {fill.noun!r}")


@dataclass(frozen=True)
class FrameAnnotation:
    """Ground truth for one image: verb, three annotator frames, optional boxes.

    Annotator frames map role -> noun id, with "" marking "no entity".
    gt_boxes holds an entry only for roles visible in the image.
    """

    image_id: str
    verb: str
    annotator_frames: tuple[Mapping[str, str], ...]
    gt_boxes: Mapping[str, BoundingBox] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.annotator_frames) != 3:
            raise ValueError(
                f"{self.image_id}: expected exactly 3 annotator frames, "
                f"got {len(self.annotator_frames)}"
            )
        object.__setattr__(
            self, "annotator_frames", tuple(dict(f) for f in self.annotator_frames)
        )
        object.__setattr__(self, "gt_boxes", dict(self.gt_boxes))


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine similarity between two embeddings, in [-1, 1].

    Raises ValueError on dimension mismatch and ZeroVectorError when either
    vector has zero norm.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    sim = float(np.dot(a.values, b.values) / (na * nb))
    # Guard, rounding can push |sim| infinitesimally past 1.
    return max(-1.0, min(1.0, sim))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]; 0 when disjoint."""
    ix1, iy1 = max(a.x1, b.x1), max(a.y1, b.y1)
    ix2, iy2 = min(a.x2, b.x2), min(a.y2, b.y2)
    iw, ih = ix2 - ix1, iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def fill_text(text: str, assignments: Mapping[str, str]) -> str:
    """Replace whole-token role occurrences in arbitrary text with glosses."""
    out = text
    for role, gloss in assignments.items():
        out = _role_pattern(role).sub(gloss, out)
    return out


def fill_template(verb: VerbClass, assignments: Mapping[str, str]) -> str:
    """Fill a verb template with noun glosses for the assigned roles.

    Unassigned role tokens remain verbatim; replacement is whole-token only,
    so a role never matches inside another word. Unknown role keys and empty
    glosses raise ValueError.
    """
    for role, gloss in assignments.items():
        if role not in verb.roles:
            raise ValueError(f"unknown role {role!r} for verb {verb.id!r}")
        if not gloss:
            raise ValueError(f"empty gloss for role {role!r}")
    return fill_text(verb.template, assignments)
