"""Pipeline orchestration: precompute, per-image prediction, batch runs.

The engine wires one backend, one description cache, and the three
recognition stages into the full verb -> grounding -> noun pipeline, with
every ablation (explainers, weighting, filtering, refinement) reachable
through configuration flags.
"""
from __future__ import annotations

import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import yaml

from .backends import Backend, CachingBackend, FixtureBackend, HttpBackend, ImageRef
from .core import Embedding, NounClass, VerbClass
from .dataset import DatasetBundle, dump_record, load_predictions
from .errors import DatasetError, GenerationFailedError, PredictionDataError
from .evaluation import (
    ImageScore,
    MetricsReport,
    PredictionRecord,
    SETTINGS,
    aggregate,
    score_image,
)
from .explainers import (
    DescriptionCache,
    DescriptionSet,
    ExplainerService,
    KIND_REPHRASE,
    PromptTemplateConfig,
)
from .grounding import group_by_role, ground_candidates
from .nouns import (
    NounPrePrediction,
    assemble_frame,
    pre_predict,
    refine,
    select_by_confidence,
)
from .verbs import DIS_FLOOR, VerbScoreTable, WeightRow, WeightTable, score_verbs, top_k

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "GSRKIT_ENDPOINT"
ENV_CACHE_DIR = "GSRKIT_CACHE_DIR"


@dataclass(frozen=True)
class EngineConfig:
    """Declarative engine configuration; file values < env < explicit flags."""

    backend: str = "fixture"  # "fixture" | "http"
    fixture: Optional[str] = None
    endpoint: Optional[str] = None
    cache_dir: str = ".gsrkit-cache"
    balance: float = 0.5  # class/description fusion factor
    counts: Mapping[str, int] = field(default_factory=dict)
    jobs: int = 1
    settings: tuple[str, ...] = ("top1", "top5", "gt")
    verb_explainer: bool = True
    weighting: bool = True
    grounding_explainer: bool = True
    noun_filter: bool = True
    noun_explainer: bool = True
    refinement: bool = True
    joint_grnd: bool = True
    absent_box: str = "strict"
    verb_prompt: str = "a photo of {}"
    noun_prompt: str = "a photo of {}"
    confidence_threshold: float = 0.0
    verb_top_k: int = 5

    def __post_init__(self) -> None:
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError(f"balance must lie in [0, 1], got {self.balance}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("generation counts must be >= 1")
        unknown = [s for s in self.settings if s not in SETTINGS]
        if unknown:
            raise ValueError(f"unknown settings {unknown}")
        if self.backend not in ("fixture", "http"):
            raise ValueError(f"unknown backend kind {self.backend!r}")
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(self, "counts", dict(self.counts))

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
        if "settings" in doc:
            doc["settings"] = tuple(doc["settings"])
        return cls(**doc)

    def with_env_overrides(self) -> "EngineConfig":
        updates: dict = {}
        if os.environ.get(ENV_ENDPOINT):
            updates["endpoint"] = os.environ[ENV_ENDPOINT]
        if os.environ.get(ENV_CACHE_DIR):
            updates["cache_dir"] = os.environ[ENV_CACHE_DIR]
        return replace(self, **updates) if updates else self


def make_backend(config: EngineConfig) -> Backend:
    if config.backend == "fixture":
        if not config.fixture:
            raise ValueError("fixture backend requires a fixture path")
        return FixtureBackend.from_file(config.fixture)
    if not config.endpoint:
        raise ValueError("http backend requires an endpoint")
    return HttpBackend(config.endpoint)


@dataclass
class PrecomputeSummary:
    verbs: int
    failures: dict[str, str]  # verb id -> reason

    @property
    def ok(self) -> bool:
        return not self.failures


@dataclass
class RunSummary:
    total: int
    written: int
    skipped: int
    failures: dict[str, str]  # image id -> reason

    @property
    def ok(self) -> bool:
        return not self.failures


class Engine:
    """One configured pipeline over a vocabulary. Thread-safe after precompute."""

    def __init__(
        self,
        config: EngineConfig,
        verbs: Mapping[str, VerbClass],
        nouns: Mapping[str, NounClass],
        backend: Optional[Backend] = None,
        prompt_config: Optional[PromptTemplateConfig] = None,
    ):
        self.config = config
        self.verbs = dict(verbs)
        self.nouns = dict(nouns)
        raw = backend if backend is not None else make_backend(config)
        self.backend = raw if isinstance(raw, CachingBackend) else CachingBackend(raw)
        base_prompts = prompt_config or PromptTemplateConfig()
        if config.counts:
            merged = dict(base_prompts.counts)
            merged.update(config.counts)
            base_prompts = PromptTemplateConfig(
                templates=base_prompts.templates,
                in_context_examples=base_prompts.in_context_examples,
                counts=merged,
            )
        self.explainers = ExplainerService(
            self.backend, DescriptionCache(config.cache_dir), base_prompts
        )
        # populated by precompute()/load_artifact()
        self.prompt_embs: dict[str, Embedding] = {}
        self.desc_texts: dict[str, list[str]] = {}
        self.desc_embs: dict[str, list[Embedding]] = {}
        self.weight_table: Optional[WeightTable] = None
        self._filter_cache: dict[str, set[str]] = {}
        self._filter_lock = threading.Lock()

    # ------------------------------------------------------------------ precompute

    def precompute(self, artifact_path: Optional[str | Path] = None) -> PrecomputeSummary:
        """Generate and cache descriptions, compute weights, embed verb texts.

        Idempotent: warm caches make reruns backend-call-free. Per-verb
        generation failures are collected, not fatal.
        """
        failures: dict[str, str] = {}
        verb_ids = sorted(self.verbs)
        self.desc_texts = {}
        scene_texts: dict[str, list[str]] = {}
        if self.config.verb_explainer:
            for verb_id in verb_ids:
                try:
                    ds = self.explainers.generate_verb_descriptions(self.verbs[verb_id])
                    self.desc_texts[verb_id] = list(ds.descriptions)
                except GenerationFailedError as exc:
                    failures[verb_id] = str(exc)
            if self.config.weighting:
                for verb_id in verb_ids:
                    try:
                        ds = self.explainers.generate_scene_texts(self.verbs[verb_id])
                        scene_texts[verb_id] = list(ds.descriptions)
                    except GenerationFailedError as exc:
                        failures.setdefault(verb_id, str(exc))
        if self.config.grounding_explainer:
            for verb_id in verb_ids:
                self.explainers.rephrase_template(self.verbs[verb_id])

        self._embed_verb_texts()
        self.weight_table = self._build_weight_table(scene_texts)
        if artifact_path is not None:
            self.save_artifact(artifact_path)
        return PrecomputeSummary(verbs=len(verb_ids), failures=failures)

    def _embed_verb_texts(self) -> None:
        verb_ids = sorted(self.verbs)
        prompts = [self.config.verb_prompt.format(self.verbs[v].display_name) for v in verb_ids]
        prompt_embs = self.backend.embed_text(prompts)
        self.prompt_embs = dict(zip(verb_ids, prompt_embs))
        self.desc_embs = {}
        for verb_id in verb_ids:
            texts = self.desc_texts.get(verb_id, [])
            if texts:
                self.desc_embs[verb_id] = self.backend.embed_text(texts)

    def _build_weight_table(self, scene_texts: Mapping[str, list[str]]) -> WeightTable:
        counts = {v: len(t) for v, t in self.desc_texts.items() if t}
        usable = (
            self.config.verb_explainer
            and self.config.weighting
            and counts
            and set(counts) <= set(scene_texts)
            and all(scene_texts[v] for v in scene_texts)
        )
        if not usable:
            if self.config.weighting and self.config.verb_explainer and counts:
                logger.warning("scene texts incomplete; falling back to uniform weights")
            return WeightTable.uniform(counts, sorted(self.verbs))
        scene_embs = {
            v: self.backend.embed_text(texts) for v, texts in sorted(scene_texts.items())
        }
        desc_embs = {v: self.desc_embs[v] for v in sorted(counts)}
        return WeightTable.from_scene_embeddings(desc_embs, scene_embs)

    # ------------------------------------------------------------------ artifact

    def save_artifact(self, path: str | Path) -> None:
        """Persist weights + text embeddings for audit and warm-started runs."""
        assert self.weight_table is not None, "precompute first"
        per_verb: dict[str, dict] = {}
        dis_by_verb = {v: self.weight_table.dis_for(v) for v in self.desc_texts}
        weights_by_verb = {v: self.weight_table.weights_for(v) for v in self.desc_texts}
        for verb_id in sorted(self.verbs):
            texts = self.desc_texts.get(verb_id, [])
            entries = [
                {
                    "description": text,
                    "weight": weights_by_verb.get(verb_id, [])[i] if texts else None,
                    "dis": dis_by_verb.get(verb_id, [])[i] if texts else None,
                }
                for i, text in enumerate(texts)
            ]
            per_verb[verb_id] = {
                "prompt": self.config.verb_prompt.format(self.verbs[verb_id].display_name),
                "entries": entries,
            }
        payload = {
            "lambda": self.config.balance,
            "backend_id": self.backend.identity,
            "per_verb": per_verb,
            "embeddings": {
                "prompts": {v: e.tolist() for v, e in self.prompt_embs.items()},
                "descriptions": {
                    v: [e.tolist() for e in embs] for v, embs in self.desc_embs.items()
                },
            },
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def load_artifact(self, path: str | Path) -> None:
        """Restore precompute state; re-embeds texts if the backend changed.

        The artifact stores per-description weights and dis values but not
        the full per-class correlation distributions, so the restored table
        carries uniform rho_bar placeholders (weights are what scoring uses).
        """
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        per_verb = doc.get("per_verb", {})
        missing = sorted(set(self.verbs) - set(per_verb))
        if missing:
            raise DatasetError(f"{path}: artifact lacks verbs {missing[:5]}")
        self.desc_texts = {
            v: [e["description"] for e in spec.get("entries", [])]
            for v, spec in per_verb.items()
            if spec.get("entries")
        }
        embeddings = doc.get("embeddings", {})
        if doc.get("backend_id") == self.backend.identity and embeddings.get("prompts"):
            self.prompt_embs = {
                v: Embedding(vec) for v, vec in embeddings["prompts"].items()
            }
            self.desc_embs = {
                v: [Embedding(x) for x in vecs]
                for v, vecs in embeddings.get("descriptions", {}).items()
            }
        else:
            logger.warning("artifact backend mismatch or no embeddings; re-embedding")
            self._embed_verb_texts()
        n = max(len(self.verbs), 1)
        uniform_bar = {v: 1.0 / n for v in sorted(self.verbs)}
        fallback_dis = math.log(n) if n > 1 else DIS_FLOOR
        rows = []
        for verb_id in sorted(self.desc_texts):
            entries = per_verb[verb_id]["entries"]
            for i, entry in enumerate(entries):
                weight = entry.get("weight")
                rows.append(
                    WeightRow(
                        verb=verb_id,
                        index=i,
                        rho=None,
                        rho_bar=dict(uniform_bar),
                        dis=entry.get("dis") or fallback_dis,
                        weight=weight if weight is not None else 1.0 / len(entries),
                    )
                )
        self.weight_table = WeightTable(tuple(rows), n_classes=n)

    # ------------------------------------------------------------------ inference

    def score_verbs_for(self, image: ImageRef) -> VerbScoreTable:
        assert self.weight_table is not None, "precompute or load_artifact first"
        image_emb = self.backend.embed_image(image)
        return score_verbs(
            image_emb,
            self.prompt_embs,
            self.desc_embs,
            self.weight_table,
            self.config.balance,
        )

    def _allowed_for_role(self, role: str) -> set[str]:
        if not self.config.noun_filter:
            return set(self.nouns)
        with self._filter_lock:
            cached = self._filter_cache.get(role)
        if cached is not None:
            return cached
        allowed = self.explainers.filter_nouns(
            role, [self.nouns[n] for n in sorted(self.nouns)]
        )
        with self._filter_lock:
            self._filter_cache[role] = allowed
        return allowed

    def _describer(self, verb: VerbClass, role: str, noun: NounClass):
        try:
            return self.explainers.generate_noun_descriptions(verb, role, noun).descriptions
        except GenerationFailedError:
            return None

    def _rephrasings(self, verb: VerbClass) -> DescriptionSet:
        if self.config.grounding_explainer:
            return self.explainers.rephrase_template(verb)
        return DescriptionSet(KIND_REPHRASE, verb.id, (verb.template,))

    def predict_frame(self, image: ImageRef, verb: VerbClass):
        """Ground -> pre-predict -> refine for one (image, verb)."""
        rephrasings = self._rephrasings(verb)
        candidates = ground_candidates(
            self.backend,
            image,
            verb,
            rephrasings,
            confidence_threshold=self.config.confidence_threshold,
        )
        grouped = group_by_role(candidates)
        describer = self._describer if self.config.noun_explainer else None
        preds_by_role: dict[str, list[NounPrePrediction]] = {}
        for role in verb.roles:
            allowed = self._allowed_for_role(role)
            role_candidates = grouped.get(role)
            if role_candidates:
                preds_by_role[role] = [
                    pre_predict(
                        self.backend,
                        image,
                        candidate,
                        verb,
                        allowed,
                        self.nouns,
                        self.config.balance,
                        describer=describer,
                        noun_prompt=self.config.noun_prompt,
                    )
                    for candidate in role_candidates
                ]
            else:
                preds_by_role[role] = [
                    pre_predict(
                        self.backend,
                        image,
                        None,
                        verb,
                        allowed,
                        self.nouns,
                        self.config.balance,
                        role=role,
                        describer=describer,
                        noun_prompt=self.config.noun_prompt,
                    )
                ]
        if self.config.refinement:
            refined = refine(self.backend, image, verb, preds_by_role, self.nouns)
        else:
            refined = select_by_confidence(preds_by_role, verb)
        return assemble_frame(verb, refined)

    def predict_image(
        self, image: ImageRef, gt_verb: Optional[str], settings: Sequence[str]
    ) -> PredictionRecord:
        """Produce the prediction record for one image.

        The verb ranking is always computed and recorded; frames are built
        per requested setting (the gt and matching-top5 frames share one
        pipeline run).
        """
        table = self.score_verbs_for(image)
        k = min(self.config.verb_top_k, len(table.ranking))
        top_verbs = tuple(top_k(table, k))
        if ("gt" in settings or "top5" in settings) and gt_verb is None:
            raise ValueError("gt verb required for the gt / top5 settings")
        frame_cache: dict[str, object] = {}

        def frame_for(verb_id: str):
            if verb_id not in frame_cache:
                frame_cache[verb_id] = self.predict_frame(image, self.verbs[verb_id])
            return frame_cache[verb_id]

        frames = {}
        for setting in settings:
            if setting == "top1":
                frames["top1"] = frame_for(top_verbs[0])
            elif setting == "top5":
                if gt_verb in top_verbs[:5]:
                    frames["top5"] = frame_for(gt_verb)
            elif setting == "gt":
                frames["gt"] = frame_for(gt_verb)
            else:
                raise ValueError(f"unknown setting {setting!r}")
        return PredictionRecord(
            image_id=image.uri, top_verbs=top_verbs, frames=frames
        )

    # ------------------------------------------------------------------ batch run

    def run_dataset(
        self,
        bundle: DatasetBundle,
        out_path: str | Path,
        *,
        resume: bool = True,
    ) -> RunSummary:
        """Predict every annotation, appending JSON-lines in dataset order.

        Output is byte-identical across parallelism settings because a single
        writer emits results in dataset order; resuming skips image ids
        already present in the output file.
        """
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        done: set[str] = set()
        if resume and out_path.exists():
            done = {r.image_id for r in load_predictions(out_path)}
        todo = [a for a in bundle.annotations if a.image_id not in done]
        failures: dict[str, str] = {}
        written = 0
        mode = "a" if resume else "w"

        def work(annotation):
            image = ImageRef(bundle.image_uri(annotation.image_id))
            record = self.predict_image(image, annotation.verb, self.config.settings)
            # records carry the image id, not the resolved uri
            return PredictionRecord(
                image_id=annotation.image_id,
                top_verbs=record.top_verbs,
                frames=record.frames,
            )

        with out_path.open(mode, encoding="utf-8") as fh, ThreadPoolExecutor(
            max_workers=self.config.jobs
        ) as pool:
            submitted = [(a, pool.submit(work, a)) for a in todo]
            for annotation, future in submitted:
                try:
                    record = future.result()
                except Exception as exc:  # per-image failures never stop the run
                    failures[annotation.image_id] = str(exc)
                    logger.error("image %s failed: %s", annotation.image_id, exc)
                    continue
                fh.write(dump_record(record) + "\n")
                written += 1
        return RunSummary(
            total=len(bundle.annotations),
            written=written,
            skipped=len(done),
            failures=failures,
        )


def evaluate_predictions(
    records: Sequence[PredictionRecord],
    bundle: DatasetBundle,
    settings: Sequence[str],
    *,
    joint_grnd: bool = True,
    absent_box: str = "strict",
) -> MetricsReport:
    """Score prediction records against bundle annotations and aggregate."""
    by_id = {a.image_id: a for a in bundle.annotations}
    if len(records) < len(bundle.annotations):
        logger.warning(
            "scoring %d records against %d annotations; missing images are not counted",
            len(records),
            len(bundle.annotations),
        )
    per_setting: dict[str, list[ImageScore]] = {s: [] for s in settings}
    for record in records:
        annotation = by_id.get(record.image_id)
        if annotation is None:
            raise PredictionDataError(f"no annotation for image {record.image_id!r}")
        scores = score_image(
            record,
            annotation,
            bundle.verbs,
            settings,
            joint_grnd=joint_grnd,
            absent_box=absent_box,
        )
        for setting in settings:
            per_setting[setting].append(scores[setting])
    return aggregate(per_setting)
