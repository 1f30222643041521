"""Verb recognition: description discriminability weighting and verb scoring.

A verb description's usefulness is measured offline against LLM-generated
scene texts standing in for annotated images: its mean cosine against each
class's scene texts is normalized into a distribution over classes, whose
entropy is the discriminability score (low entropy = highly discriminative).
Per-verb description weights are a softmax over inverse discriminability.
Per-image scoring fuses the class prompt's cosine with the weighted
description cosines under a balance factor lambda.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .core import Embedding, cosine_similarity

#: Floor applied to per-class correlations before normalization; guards the
#: entropy against non-positive mean cosines.
RHO_FLOOR = 1e-6

#: Floor applied to discriminability; exp(1/Dis) overflows as Dis -> 0.
DIS_FLOOR = 1e-3


def compute_discriminability(
    desc_emb: Embedding, scene_embs: Mapping[str, Sequence[Embedding]]
) -> tuple[dict[str, float], float]:
    """Correlations and discriminability of one description against all classes.

    Returns (rho_per_verb, dis): rho is the mean cosine between the
    description embedding and each class's scene-text embeddings, floored at
    RHO_FLOOR; dis is the natural-log entropy of the normalized rho
    distribution, floored at DIS_FLOOR.
    """
    if not scene_embs:
        raise ValueError("scene_embs must cover at least one verb")
    rho: dict[str, float] = {}
    for verb_id, embs in scene_embs.items():
        if not embs:
            raise ValueError(f"verb {verb_id!r} has no scene embeddings")
        mean = sum(cosine_similarity(desc_emb, e) for e in embs) / len(embs)
        rho[verb_id] = max(mean, RHO_FLOOR)
    total = sum(rho.values())
    dis = 0.0
    for value in rho.values():
        p = value / total
        dis -= p * math.log(p)
    return rho, max(dis, DIS_FLOOR)


def compute_weights(dis_values: Sequence[float]) -> list[float]:
    """Softmax over inverse discriminability, max-subtracted for stability.

    Smaller dis yields strictly larger weight; weights sum to 1.
    """
    if not dis_values:
        raise ValueError("dis_values must be non-empty")
    if any(d < DIS_FLOOR for d in dis_values):
        raise ValueError(f"dis values must be >= {DIS_FLOOR}")
    inv = [1.0 / d for d in dis_values]
    peak = max(inv)
    exp = [math.exp(x - peak) for x in inv]
    total = sum(exp)
    return [e / total for e in exp]


@dataclass(frozen=True)
class WeightRow:
    """Weighting record for one (verb, description index) pair."""

    verb: str
    index: int
    rho: Optional[float]  # own-class correlation; None for uniform tables
    rho_bar: Mapping[str, float]
    dis: float
    weight: float


@dataclass(frozen=True)
class WeightTable:
    """All description weights, validated: per-description rho_bar sums to 1,
    per-verb weights sum to 1, dis lies in [DIS_FLOOR, ln(n_classes)]."""

    rows: tuple[WeightRow, ...]
    n_classes: int

    def __post_init__(self) -> None:
        max_dis = math.log(self.n_classes) if self.n_classes > 1 else DIS_FLOOR
        per_verb: dict[str, float] = {}
        for row in self.rows:
            if abs(sum(row.rho_bar.values()) - 1.0) > 1e-9:
                raise ValueError(f"rho_bar of ({row.verb}, {row.index}) does not sum to 1")
            if not DIS_FLOOR <= row.dis <= max_dis + 1e-9:
                raise ValueError(
                    f"dis of ({row.verb}, {row.index}) = {row.dis} outside "
                    f"[{DIS_FLOOR}, ln({self.n_classes})]"
                )
            per_verb[row.verb] = per_verb.get(row.verb, 0.0) + row.weight
        for verb, total in per_verb.items():
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"weights of verb {verb!r} sum to {total}, expected 1")

    def weights_for(self, verb: str) -> list[float]:
        return [row.weight for row in self.rows if row.verb == verb]

    def dis_for(self, verb: str) -> list[float]:
        return [row.dis for row in self.rows if row.verb == verb]

    @classmethod
    def from_scene_embeddings(
        cls,
        desc_embs: Mapping[str, Sequence[Embedding]],
        scene_embs: Mapping[str, Sequence[Embedding]],
    ) -> "WeightTable":
        """Build the table by evaluating every description against every class."""
        rows: list[WeightRow] = []
        for verb_id, embs in desc_embs.items():
            dis_list: list[float] = []
            partial: list[tuple[Optional[float], dict[str, float], float]] = []
            for emb in embs:
                rho, dis = compute_discriminability(emb, scene_embs)
                total = sum(rho.values())
                rho_bar = {v: r / total for v, r in rho.items()}
                partial.append((rho.get(verb_id), rho_bar, dis))
                dis_list.append(dis)
            weights = compute_weights(dis_list) if dis_list else []
            for index, ((rho_own, rho_bar, dis), weight) in enumerate(
                zip(partial, weights)
            ):
                rows.append(WeightRow(verb_id, index, rho_own, rho_bar, dis, weight))
        return cls(tuple(rows), n_classes=len(scene_embs))

    @classmethod
    def uniform(cls, desc_counts: Mapping[str, int], verb_ids: Sequence[str]) -> "WeightTable":
        """Uniform fallback used when description weighting is disabled."""
        n = max(len(verb_ids), 1)
        rho_bar = {v: 1.0 / n for v in verb_ids}
        dis = math.log(n) if n > 1 else DIS_FLOOR
        rows = [
            WeightRow(verb_id, i, None, dict(rho_bar), dis, 1.0 / count)
            for verb_id, count in desc_counts.items()
            for i in range(count)
        ]
        return cls(tuple(rows), n_classes=n)


@dataclass(frozen=True)
class VerbScore:
    class_score: float
    description_score: float
    fused_score: float


@dataclass(frozen=True)
class VerbScoreTable:
    """Per-verb scores plus the full ranking (fused descending, id ascending)."""

    scores: Mapping[str, VerbScore]
    ranking: tuple[str, ...]
    balance: float

    def __post_init__(self) -> None:
        if sorted(self.ranking) != sorted(self.scores):
            raise ValueError("ranking must be a permutation of the vocabulary")
        lam = self.balance
        for verb, s in self.scores.items():
            fused = (1.0 - lam) * s.class_score + lam * s.description_score
            if abs(fused - s.fused_score) > 1e-12:
                raise ValueError(f"fused score of {verb!r} violates the balance identity")


def score_verbs(
    image_emb: Embedding,
    prompt_embs: Mapping[str, Embedding],
    desc_embs: Mapping[str, Sequence[Embedding]],
    weights: WeightTable,
    balance: float,
) -> VerbScoreTable:
    """Score and rank every verb for one image embedding.

    class term: cosine against the verb's class prompt embedding;
    description term: weighted sum of cosines against its description
    embeddings (falls back to the class term when a verb has none);
    fused = (1 - balance) * class + balance * description.
    """
    if not 0.0 <= balance <= 1.0:
        raise ValueError(f"balance must lie in [0, 1], got {balance}")
    scores: dict[str, VerbScore] = {}
    for verb_id, prompt_emb in prompt_embs.items():
        class_score = cosine_similarity(image_emb, prompt_emb)
        embs = desc_embs.get(verb_id, ())
        if embs:
            ws = weights.weights_for(verb_id)
            if len(ws) != len(embs):
                raise ValueError(
                    f"weight table covers {len(ws)} descriptions for {verb_id!r}, "
                    f"got {len(embs)} embeddings"
                )
            description_score = sum(
                w * cosine_similarity(image_emb, e) for w, e in zip(ws, embs)
            )
        else:
            # degraded path: no valid descriptions, class prompt stands in
            description_score = class_score
        fused = (1.0 - balance) * class_score + balance * description_score
        scores[verb_id] = VerbScore(class_score, description_score, fused)
    ranking = tuple(sorted(scores, key=lambda v: (-scores[v].fused_score, v)))
    return VerbScoreTable(scores, ranking, balance)


def top_k(table: VerbScoreTable, k: int) -> list[str]:
    """First k verbs of the ranking; ties already broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(table.ranking):
        raise ValueError(f"k={k} exceeds vocabulary size {len(table.ranking)}")
    return list(table.ranking[:k])
