"""Prompt assembly, explainer invocation, validation, and persistent caching.

Three prompt families drive the pipeline: verb-centric descriptions and
scene texts (verb recognition), template rephrasings (role grounding), and
noun filtering plus scene-specific noun descriptions (noun recognition).
All results are persisted in a content-addressed cache so precompute runs
are idempotent and inference never regenerates a prompt.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

from .backends import Backend
from .core import NounClass, VerbClass, _role_pattern
from .errors import GenerationFailedError, TransportError

logger = logging.getLogger(__name__)

KIND_VERB = "verb_centric"
KIND_SCENE = "scene_text"
KIND_REPHRASE = "grounding_rephrase"
KIND_NOUN = "noun_scene"
KIND_FILTER = "noun_filter"

DESCRIPTION_KINDS = (KIND_VERB, KIND_SCENE, KIND_REPHRASE, KIND_NOUN)
PROMPT_KINDS = DESCRIPTION_KINDS + (KIND_FILTER,)

_MANDATORY_PLACEHOLDERS: dict[str, tuple[str, ...]] = {
    KIND_VERB: ("{CLASS}", "{TEMPLATE}"),
    KIND_SCENE: ("{CLASS}",),
    KIND_REPHRASE: ("{TEMPLATE}", "{SEMANTIC ROLES}"),
    KIND_NOUN: ("{CLASS}", "{SEMANTIC ROLE}", "{TEMPLATE}"),
    KIND_FILTER: ("{NOUN LIST}", "{SEMANTIC ROLE}"),
}

_DEFAULT_TEMPLATES: dict[str, str] = {
    KIND_VERB: (
        'List the visual features that signal the event "{CLASS}" is happening, '
        "given its participant layout: {TEMPLATE}. One short feature per line."
    ),
    KIND_SCENE: (
        'Write one vivid sentence depicting a realistic scene of "{CLASS}", '
        "covering the participants of: {TEMPLATE}."
    ),
    KIND_REPHRASE: (
        'Rewrite this sentence more plainly so each participant is easy to locate: '
        '"{TEMPLATE}". Keep these words exactly as written: {SEMANTIC ROLES}.'
    ),
    KIND_NOUN: (
        'Describe the visual features that identify "{CLASS}" serving as the '
        "{SEMANTIC ROLE} in the scene: {TEMPLATE}. One short feature per line."
    ),
    KIND_FILTER: (
        "From the entity list: {NOUN LIST}. Which of these entities could "
        "plausibly fill the role {SEMANTIC ROLE}? Answer only with names from "
        "the list, comma-separated."
    ),
}

_DEFAULT_EXAMPLES: dict[str, list[tuple[str, str]]] = {
    KIND_VERB: [
        (
            'the event "carrying": the AGENT carries the ITEM to a PLACE',
            "arms wrapped around a bulky object\nweight held against the torso",
        )
    ],
    KIND_SCENE: [
        (
            'a scene of "carrying"',
            "A hiker hauls a heavy crate across a muddy trailhead parking lot.",
        )
    ],
    KIND_REPHRASE: [
        (
            "the AGENT carries the ITEM to a PLACE",
            "an AGENT person holding an ITEM object while moving toward a PLACE",
        )
    ],
    KIND_NOUN: [
        (
            '"backpack" as the ITEM in: the AGENT carries the ITEM to a PLACE',
            "straps hanging loose\nbulging zipped compartments",
        )
    ],
    KIND_FILTER: [
        (
            "entity list: man, beach for role PLACE",
            "beach",
        )
    ],
}

_DEFAULT_COUNTS: dict[str, int] = {
    KIND_VERB: 10,
    KIND_SCENE: 10,
    KIND_REPHRASE: 5,
    KIND_NOUN: 5,
    KIND_FILTER: 1,
}


@dataclass(frozen=True)
class PromptTemplateConfig:
    """Per-kind instruction templates, in-context examples, generation counts.

    Templates use the placeholders {CLASS}, {TEMPLATE}, {SEMANTIC ROLES},
    {SEMANTIC ROLE}, {NOUN LIST}; each kind's mandatory placeholders must be
    present. Defaults are re-authored, configurable stand-ins.
    """

    templates: Mapping[str, str] = field(default_factory=lambda: dict(_DEFAULT_TEMPLATES))
    in_context_examples: Mapping[str, list[tuple[str, str]]] = field(
        default_factory=lambda: {k: list(v) for k, v in _DEFAULT_EXAMPLES.items()}
    )
    counts: Mapping[str, int] = field(default_factory=lambda: dict(_DEFAULT_COUNTS))

    def __post_init__(self) -> None:
        for kind in PROMPT_KINDS:
            template = self.templates.get(kind)
            if template is None:
                raise ValueError(f"missing prompt template for kind {kind!r}")
            for placeholder in _MANDATORY_PLACEHOLDERS[kind]:
                if placeholder not in template:
                    raise ValueError(
                        f"template for {kind!r} lacks mandatory placeholder {placeholder}"
                    )
            if self.counts.get(kind, 1) < 1:
                raise ValueError(f"generation count for {kind!r} must be >= 1")

    def count(self, kind: str) -> int:
        return int(self.counts.get(kind, _DEFAULT_COUNTS[kind]))

    def render(self, kind: str, slots: Mapping[str, str]) -> str:
        """Render the full prompt: in-context examples block then instruction."""
        instruction = self.templates[kind]
        for name, value in slots.items():
            instruction = instruction.replace("{" + name + "}", value)
        parts = []
        for example_in, example_out in self.in_context_examples.get(kind, []):
            parts.append(f"Example input: {example_in}\nExample output:\n{example_out}")
        parts.append(instruction)
        return "\n\n".join(parts)


Subject = str | tuple[str, str, str]


@dataclass(frozen=True)
class DescriptionSet:
    """A batch of explainer outputs for one subject, optionally weighted.

    kind is one of the four description kinds; subject is a verb id, or a
    (verb id, role, noun id) triple for noun_scene sets.
    """

    kind: str
    subject: Subject
    descriptions: tuple[str, ...]
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.kind not in DESCRIPTION_KINDS:
            raise ValueError(f"unknown description kind {self.kind!r}")
        if not self.descriptions or any(not d for d in self.descriptions):
            raise ValueError("descriptions must be non-empty strings")
        object.__setattr__(self, "descriptions", tuple(self.descriptions))
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            if len(weights) != len(self.descriptions):
                raise ValueError("weights length must match descriptions")
            if any(not 0.0 < w <= 1.0 for w in weights):
                raise ValueError("weights must lie in (0, 1]")
            if abs(sum(weights) - 1.0) > 1e-9:
                raise ValueError(f"weights must sum to 1, got {sum(weights)}")
            object.__setattr__(self, "weights", weights)


def _clean(strings: Sequence[str]) -> list[str]:
    """Trim whitespace, drop empties and duplicates (order preserved)."""
    seen: dict[str, None] = {}
    for s in strings:
        t = s.strip()
        if t:
            seen.setdefault(t, None)
    return list(seen)


class DescriptionCache:
    """Content-addressed JSON cache: `<root>/<kind>/<sha256>.json`.

    Keys hash (kind, subject, rendered prompt, backend identity) so prompt
    or backend changes invalidate stale entries automatically. Writes are
    atomic (write-temp-then-rename); deterministic content makes
    last-writer-wins safe across workers.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    @staticmethod
    def key(kind: str, subject: Subject, prompt: str, backend_id: str) -> str:
        payload = json.dumps(
            {"kind": kind, "subject": subject, "prompt": prompt, "backend": backend_id},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, kind: str, key: str) -> Path:
        return self.root / kind / f"{key}.json"

    def lock(self, key: str) -> threading.Lock:
        """Per-key lock: cache misses trigger single-flight generation."""
        with self._registry_lock:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, kind: str, key: str) -> Optional[dict[str, Any]]:
        path = self._path(kind, key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(
        self,
        kind: str,
        key: str,
        *,
        subject: Subject,
        prompt: str,
        descriptions: Sequence[str],
        backend_id: str,
    ) -> None:
        path = self._path(kind, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "subject": subject,
            "prompt": prompt,
            "descriptions": list(descriptions),
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "backend_id": backend_id,
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, ensure_ascii=False, indent=1)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


class ExplainerService:
    """Generates, validates, and caches all DescriptionSets for the engine."""

    def __init__(
        self,
        backend: Backend,
        cache: DescriptionCache,
        config: Optional[PromptTemplateConfig] = None,
    ):
        self.backend = backend
        self.cache = cache
        self.config = config or PromptTemplateConfig()
        self.backend_calls = 0

    def _generate(
        self,
        kind: str,
        subject: Subject,
        prompt: str,
        keep: Optional[Callable[[str], bool]] = None,
    ) -> list[str]:
        """Cache-through explain call returning cleaned strings (may be empty).

        `keep` is an extra per-string validity predicate applied before the
        result is counted or cached.
        """
        key = self.cache.key(kind, subject, prompt, self.backend.identity)
        with self.cache.lock(key):
            hit = self.cache.get(kind, key)
            if hit is not None:
                return list(hit["descriptions"])
            raw = self.backend.explain(prompt, self.config.count(kind))
            self.backend_calls += 1
            cleaned = _clean(raw)
            if keep is not None:
                cleaned = [d for d in cleaned if keep(d)]
            self.cache.put(
                kind,
                key,
                subject=subject,
                prompt=prompt,
                descriptions=cleaned,
                backend_id=self.backend.identity,
            )
            return cleaned

    def generate_verb_descriptions(self, verb: VerbClass) -> DescriptionSet:
        """General verb-centric descriptions enhancing class discriminability."""
        prompt = self.config.render(
            KIND_VERB, {"CLASS": verb.display_name, "TEMPLATE": verb.template}
        )
        descriptions = self._generate(KIND_VERB, verb.id, prompt)
        if not descriptions:
            raise GenerationFailedError(f"no valid verb descriptions for {verb.id!r}")
        return DescriptionSet(KIND_VERB, verb.id, tuple(descriptions))

    def generate_scene_texts(self, verb: VerbClass) -> DescriptionSet:
        """Scene sentences used as label-free "images" for description weighting."""
        prompt = self.config.render(
            KIND_SCENE, {"CLASS": verb.display_name, "TEMPLATE": verb.template}
        )
        descriptions = self._generate(KIND_SCENE, verb.id, prompt)
        if not descriptions:
            raise GenerationFailedError(f"no valid scene texts for {verb.id!r}")
        return DescriptionSet(KIND_SCENE, verb.id, tuple(descriptions))

    def rephrase_template(self, verb: VerbClass) -> DescriptionSet:
        """Rephrased grounding templates; every output keeps all role tokens.

        Outputs missing any role token are discarded; if none survive, the
        set degenerates to the original template (baseline behavior).
        """
        prompt = self.config.render(
            KIND_REPHRASE,
            {"TEMPLATE": verb.template, "SEMANTIC ROLES": ", ".join(verb.roles)},
        )
        patterns = [_role_pattern(role) for role in verb.roles]
        descriptions = self._generate(
            KIND_REPHRASE,
            verb.id,
            prompt,
            keep=lambda d: all(p.search(d) for p in patterns),
        )
        if not descriptions:
            descriptions = [verb.template]
        return DescriptionSet(KIND_REPHRASE, verb.id, tuple(descriptions))

    def filter_nouns(
        self, role: str, noun_vocab: Sequence[NounClass]
    ) -> set[str]:
        """Class-level noun filtering for a role; never returns the empty set.

        Answers are matched back to the vocabulary by exact gloss; unmatched
        answers are dropped; an empty result fails open to the full
        vocabulary, as does a transport failure (a scripted-fixture miss
        still raises: tests must be explicit).
        """
        if not noun_vocab:
            raise ValueError("noun_vocab must be non-empty")
        glosses = ", ".join(n.gloss for n in noun_vocab)
        prompt = self.config.render(
            KIND_FILTER, {"NOUN LIST": glosses, "SEMANTIC ROLE": role}
        )
        key = self.cache.key(KIND_FILTER, role, prompt, self.backend.identity)
        with self.cache.lock(key):
            hit = self.cache.get(KIND_FILTER, key)
            if hit is not None:
                answers = list(hit["descriptions"])
            else:
                try:
                    raw = self.backend.explain(prompt, self.config.count(KIND_FILTER))
                except TransportError as exc:
                    logger.warning("noun filter for %s failed open: %s", role, exc)
                    return {n.id for n in noun_vocab}
                answers = _clean(raw)
                self.backend_calls += 1
                self.cache.put(
                    KIND_FILTER,
                    key,
                    subject=role,
                    prompt=prompt,
                    descriptions=answers,
                    backend_id=self.backend.identity,
                )
        by_gloss: dict[str, list[str]] = {}
        for noun in noun_vocab:
            by_gloss.setdefault(noun.gloss, []).append(noun.id)
        kept: set[str] = set()
        for answer in answers:
            for token in _split_entity_list(answer):
                kept.update(by_gloss.get(token, ()))
        if not kept:
            return {n.id for n in noun_vocab}
        return kept

    def generate_noun_descriptions(
        self, verb: VerbClass, role: str, noun: NounClass
    ) -> DescriptionSet:
        """Scene-specific noun descriptions, generated lazily per (verb, role, noun)."""
        if role not in verb.roles:
            raise ValueError(f"role {role!r} not in roles of verb {verb.id!r}")
        prompt = self.config.render(
            KIND_NOUN,
            {"CLASS": noun.gloss, "SEMANTIC ROLE": role, "TEMPLATE": verb.template},
        )
        subject = (verb.id, role, noun.id)
        descriptions = self._generate(KIND_NOUN, subject, prompt)
        if not descriptions:
            raise GenerationFailedError(
                f"no valid noun descriptions for {noun.id!r} as {role} of {verb.id!r}"
            )
        return DescriptionSet(KIND_NOUN, subject, tuple(descriptions))


def _split_entity_list(answer: str) -> list[str]:
    """Split an explainer answer into candidate entity names."""
    parts: list[str] = []
    for chunk in answer.replace(";", ",").replace("\n", ",").split(","):
        token = chunk.strip().strip(".")
        if token:
            parts.append(token)
    return parts
