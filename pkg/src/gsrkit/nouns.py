"""Noun recognition: per-candidate pre-prediction and template-based refinement.

Pre-prediction scores every allowed noun against the cropped candidate
region, fusing the class prompt cosine with the mean cosine over
scene-specific noun descriptions (uniform weights). Refinement then settles
each role by filling the verb template with competing noun choices and
picking the fill whose text embedding best matches the whole image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .backends import Backend, ImageRef
from .core import (
    NounClass,
    PredictedFrame,
    RoleFill,
    VerbClass,
    cosine_similarity,
    fill_template,
)
from .grounding import CandidateBox

#: Supplies scene-specific description strings for (verb, role, noun), or
#: None when generation failed (the noun then scores by class term alone).
NounDescriber = Callable[[VerbClass, str, NounClass], Optional[Sequence[str]]]


@dataclass(frozen=True)
class NounPrePrediction:
    """Ranked noun scores for one candidate box (None = whole-image fallback)."""

    role: str
    candidate: Optional[CandidateBox]
    ranked_nouns: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.ranked_nouns:
            raise ValueError("ranked_nouns must be non-empty")
        if any(not math.isfinite(score) for _, score in self.ranked_nouns):
            raise ValueError("noun scores must be finite")

    @property
    def top_noun(self) -> str:
        return self.ranked_nouns[0][0]

    @property
    def top_score(self) -> float:
        return self.ranked_nouns[0][1]


def pre_predict(
    backend: Backend,
    image: ImageRef,
    candidate: Optional[CandidateBox],
    verb: VerbClass,
    allowed: set[str],
    nouns: Mapping[str, NounClass],
    balance: float,
    *,
    role: Optional[str] = None,
    describer: Optional[NounDescriber] = None,
    noun_prompt: str = "a photo of {}",
) -> NounPrePrediction:
    """Score every allowed noun for one candidate region.

    class term: cosine between the region embedding and "a photo of {gloss}";
    description term: mean cosine over the noun's scene-specific description
    embeddings (uniform weights), falling back to the class term when the
    describer yields nothing; fused = (1 - balance)*class + balance*desc.
    A None candidate scores the whole image (identity crop) for the given
    role and carries no box.
    """
    if not allowed:
        raise ValueError("allowed noun set must be non-empty")
    if not 0.0 <= balance <= 1.0:
        raise ValueError(f"balance must lie in [0, 1], got {balance}")
    if candidate is not None:
        role = candidate.role
        region_emb = backend.embed_region(image, candidate.box)
    else:
        if role is None:
            raise ValueError("role is required for whole-image prediction")
        region_emb = backend.embed_image(image)

    allowed_ids = sorted(allowed)
    prompt_embs = backend.embed_text(
        [noun_prompt.format(nouns[nid].gloss) for nid in allowed_ids]
    )

    desc_texts: dict[str, list[str]] = {}
    if describer is not None:
        for nid in allowed_ids:
            texts = describer(verb, role, nouns[nid])
            if texts:
                desc_texts[nid] = list(texts)
    flat = [t for nid in allowed_ids for t in desc_texts.get(nid, [])]
    flat_embs = iter(backend.embed_text(flat)) if flat else iter(())

    scored: list[tuple[str, float]] = []
    for nid, prompt_emb in zip(allowed_ids, prompt_embs):
        class_term = cosine_similarity(region_emb, prompt_emb)
        texts = desc_texts.get(nid)
        if texts:
            sims = [cosine_similarity(region_emb, next(flat_embs)) for _ in texts]
            desc_term = sum(sims) / len(sims)
        else:
            desc_term = class_term
        scored.append((nid, (1.0 - balance) * class_term + balance * desc_term))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return NounPrePrediction(role=role, candidate=candidate, ranked_nouns=tuple(scored))


def _best_pre_prediction(preds: Sequence[NounPrePrediction]) -> NounPrePrediction:
    """Deterministic champion: score, then confidence, then noun id."""
    return min(
        preds,
        key=lambda p: (
            -p.top_score,
            -(p.candidate.confidence if p.candidate else 0.0),
            p.top_noun,
            p.candidate.source_index if p.candidate else -1,
        ),
    )


def refine(
    backend: Backend,
    image: ImageRef,
    verb: VerbClass,
    preds_by_role: Mapping[str, Sequence[NounPrePrediction]],
    nouns: Mapping[str, NounClass],
) -> dict[str, RoleFill]:
    """Settle each role's (noun, box) by whole-image template comparison.

    Roles are refined sequentially in template order. For the role under
    refinement one template is filled per candidate, using that candidate's
    top noun, the winners of already-refined roles, and the best
    pre-prediction of pending roles; the fill whose embedding is most
    similar to the whole-image embedding wins (ties: higher grounding
    confidence, then ascending noun id). Whole-image fallback entries carry
    no box.
    """
    missing = [role for role in verb.roles if not preds_by_role.get(role)]
    if missing:
        raise ValueError(f"no pre-predictions for roles {missing} of verb {verb.id!r}")

    context: dict[str, str] = {
        role: nouns[_best_pre_prediction(preds_by_role[role]).top_noun].gloss
        for role in verb.roles
    }
    image_emb = backend.embed_image(image)
    result: dict[str, RoleFill] = {}
    for role in verb.roles:
        preds = list(preds_by_role[role])
        if len(preds) == 1:
            winner = preds[0]
        else:
            fills = []
            for pred in preds:
                assignments = dict(context)
                assignments[role] = nouns[pred.top_noun].gloss
                fills.append(fill_template(verb, assignments))
            fill_embs = backend.embed_text(fills)
            ranked = sorted(
                zip(preds, fill_embs),
                key=lambda pair: (
                    -cosine_similarity(image_emb, pair[1]),
                    -(pair[0].candidate.confidence if pair[0].candidate else 0.0),
                    pair[0].top_noun,
                ),
            )
            winner = ranked[0][0]
        context[role] = nouns[winner.top_noun].gloss
        result[role] = RoleFill(
            noun=winner.top_noun,
            box=winner.candidate.box if winner.candidate else None,
            score=winner.top_score,
        )
    return result


def select_by_confidence(
    preds_by_role: Mapping[str, Sequence[NounPrePrediction]], verb: VerbClass
) -> dict[str, RoleFill]:
    """Refinement-disabled baseline: keep each role's highest-confidence box."""
    missing = [role for role in verb.roles if not preds_by_role.get(role)]
    if missing:
        raise ValueError(f"no pre-predictions for roles {missing} of verb {verb.id!r}")
    result: dict[str, RoleFill] = {}
    for role in verb.roles:
        winner = min(
            preds_by_role[role],
            key=lambda p: (
                -(p.candidate.confidence if p.candidate else 0.0),
                p.candidate.box.area if p.candidate else 0.0,
                p.candidate.source_index if p.candidate else -1,
                p.top_noun,
            ),
        )
        result[role] = RoleFill(
            noun=winner.top_noun,
            box=winner.candidate.box if winner.candidate else None,
            score=winner.top_score,
        )
    return result


def assemble_frame(verb: VerbClass, refined: Mapping[str, RoleFill]) -> PredictedFrame:
    """Build the structured frame; every role of the verb must be present."""
    missing = [role for role in verb.roles if role not in refined]
    if missing:
        raise ValueError(f"refined assignment misses roles {missing} of verb {verb.id!r}")
    extra = [role for role in refined if role not in verb.roles]
    if extra:
        raise ValueError(f"refined assignment has extraneous roles {extra}")
    return PredictedFrame(verb=verb.id, role_fills={r: refined[r] for r in verb.roles})
