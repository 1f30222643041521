"""Training-free zero-shot grounded situation recognition.

Given an image and class vocabularies, the engine predicts a structured
frame — a salient verb plus a noun and bounding box per semantic role — by
orchestrating three foundation-model interfaces (text/image embedding,
open-vocabulary grounding, and a language explainer), and scores
predictions with the five standard frame metrics.
"""
from .backends import (
    Backend,
    CachingBackend,
    Detection,
    FixtureBackend,
    HttpBackend,
    ImageRef,
    prompt_digest,
)
from .core import (
    BoundingBox,
    Embedding,
    FrameAnnotation,
    NounClass,
    PredictedFrame,
    RoleFill,
    SemanticRole,
    VerbClass,
    cosine_similarity,
    fill_template,
    iou,
)
from .dataset import DatasetBundle, export_predictions, load_dataset, load_predictions, load_space
from .engine import Engine, EngineConfig, evaluate_predictions
from .evaluation import (
    MetricsReport,
    PredictionRecord,
    aggregate,
    render_report,
    report_to_json,
    score_image,
)
from .explainers import DescriptionCache, DescriptionSet, ExplainerService, PromptTemplateConfig
from .fixtures import FixtureBuilder
from .grounding import CandidateBox, ground_candidates, match_label_to_role
from .nouns import NounPrePrediction, assemble_frame, pre_predict, refine
from .verbs import (
    VerbScoreTable,
    WeightTable,
    compute_discriminability,
    compute_weights,
    score_verbs,
    top_k,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BoundingBox",
    "CachingBackend",
    "CandidateBox",
    "DatasetBundle",
    "DescriptionCache",
    "DescriptionSet",
    "Detection",
    "Embedding",
    "Engine",
    "EngineConfig",
    "ExplainerService",
    "FixtureBackend",
    "FixtureBuilder",
    "FrameAnnotation",
    "HttpBackend",
    "ImageRef",
    "MetricsReport",
    "NounClass",
    "NounPrePrediction",
    "PredictedFrame",
    "PredictionRecord",
    "PromptTemplateConfig",
    "RoleFill",
    "SemanticRole",
    "VerbClass",
    "VerbScoreTable",
    "WeightTable",
    "aggregate",
    "assemble_frame",
    "compute_discriminability",
    "compute_weights",
    "cosine_similarity",
    "evaluate_predictions",
    "export_predictions",
    "fill_template",
    "ground_candidates",
    "iou",
    "load_dataset",
    "load_predictions",
    "load_space",
    "match_label_to_role",
    "pre_predict",
    "prompt_digest",
    "refine",
    "render_report",
    "report_to_json",
    "score_image",
    "score_verbs",
    "top_k",
]
