"""Model adapters behind the five endpoints.

Every encoder returns unit-normalized vectors. The hash encoder is fully
deterministic (content-addressed), which is what the protocol conformance
suite runs against; the CLIP and Grounding-DINO adapters load real weights
and abort at startup when they cannot.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image

from .config import CLIP_ENCODERS, ShimConfig, hash_encoder_dim


class ImageNotFound(KeyError):
    """Raised when an image uri cannot be resolved to pixels."""


class BadRequest(ValueError):
    """Raised for invalid arguments (empty text, bad box, ...)."""


class Encoder(Protocol):
    dim: int

    def embed_text(self, texts: Sequence[str]) -> np.ndarray: ...
    def embed_image(self, image_uri: str) -> np.ndarray: ...
    def embed_region(self, image_uri: str, box: Sequence[float]) -> np.ndarray: ...


def _open_image(image_uri: str) -> Image.Image:
    path = Path(image_uri)
    if not path.is_file():
        raise ImageNotFound(f"image not found: {image_uri}")
    try:
        return Image.open(path).convert("RGB")
    except OSError as exc:
        raise BadRequest(f"cannot decode image {image_uri}: {exc}") from exc


def _crop(image: Image.Image, box: Sequence[float]) -> Image.Image:
    if len(box) != 4:
        raise BadRequest(f"box must have 4 coordinates, got {box}")
    x1, y1, x2, y2 = (float(c) for c in box)
    if not (x1 < x2 and y1 < y2) or min(x1, y1) < 0:
        raise BadRequest(f"invalid box {box}")
    width, height = image.size
    if x1 >= width or y1 >= height:
        raise BadRequest(f"box {box} lies outside the {width}x{height} image")
    # axis-aligned crop, no padding, clamped to the image extent
    return image.crop((int(x1), int(y1), min(int(round(x2)), width), min(int(round(y2)), height)))


def _seeded_unit(seed_bytes: bytes, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(seed_bytes).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class HashEncoder:
    """Deterministic content-addressed stand-in for a dual encoder."""

    def __init__(self, dim: int):
        self.dim = dim

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([_seeded_unit(b"text:" + t.encode("utf-8"), self.dim) for t in texts])

    def embed_image(self, image_uri: str) -> np.ndarray:
        image = _open_image(image_uri)
        return _seeded_unit(b"image:" + image.tobytes(), self.dim)

    def embed_region(self, image_uri: str, box: Sequence[float]) -> np.ndarray:
        crop = _crop(_open_image(image_uri), box)
        return _seeded_unit(b"image:" + crop.tobytes(), self.dim)


class ClipEncoder:
    """CLIP dual encoder via transformers; eval-mode, unit-normalized."""

    def __init__(self, architecture: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise RuntimeError(f"CLIP encoder requires torch+transformers: {exc}") from exc
        name = CLIP_ENCODERS[architecture]
        self._torch = torch
        self.model = CLIPModel.from_pretrained(name).eval()
        self.processor = CLIPProcessor.from_pretrained(name)
        self.dim = int(self.model.config.projection_dim)

    def _normalize(self, tensor) -> np.ndarray:
        array = tensor.detach().cpu().numpy().astype(np.float64)
        return array / np.linalg.norm(array, axis=-1, keepdims=True)

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        inputs = self.processor(text=list(texts), return_tensors="pt", padding=True,
                                truncation=True)
        with self._torch.no_grad():
            features = self.model.get_text_features(**inputs)
        return self._normalize(features)

    def embed_image(self, image_uri: str) -> np.ndarray:
        image = _open_image(image_uri)
        inputs = self.processor(images=image, return_tensors="pt")
        with self._torch.no_grad():
            features = self.model.get_image_features(**inputs)
        return self._normalize(features)[0]

    def embed_region(self, image_uri: str, box: Sequence[float]) -> np.ndarray:
        crop = _crop(_open_image(image_uri), box)
        inputs = self.processor(images=crop, return_tensors="pt")
        with self._torch.no_grad():
            features = self.model.get_image_features(**inputs)
        return self._normalize(features)[0]


class NullGrounder:
    """Always returns zero detections (schema-valid)."""

    def ground(self, image_uri: str, caption: str) -> list[dict]:
        _open_image(image_uri)  # uri must still resolve
        return []


class FixtureGrounder:
    """Serves detections from a JSON file {uri: [{phrase, box, score}]}.

    A detection is returned when its phrase occurs (case-insensitively)
    in the caption. Scores are forwarded raw; thresholding is the
    client's business.
    """

    def __init__(self, path: str):
        self._table = json.loads(Path(path).read_text(encoding="utf-8"))

    def ground(self, image_uri: str, caption: str) -> list[dict]:
        entries = self._table.get(image_uri)
        if entries is None:
            raise ImageNotFound(f"no fixture detections for {image_uri}")
        lowered = caption.lower()
        return [
            {"phrase": e["phrase"], "box": [float(c) for c in e["box"]],
             "score": float(e["score"])}
            for e in entries
            if e["phrase"].lower() in lowered
        ]


class GroundingDinoGrounder:  # pragma: no cover - requires local weights
    """Open-vocabulary grounding via transformers' grounding-dino."""

    def __init__(self, checkpoint: str):
        try:
            import torch
            from transformers import (AutoModelForZeroShotObjectDetection,
                                      AutoProcessor)
        except ImportError as exc:
            raise RuntimeError(
                f"grounding-dino requires torch+transformers: {exc}"
            ) from exc
        self._torch = torch
        self.processor = AutoProcessor.from_pretrained(checkpoint)
        self.model = AutoModelForZeroShotObjectDetection.from_pretrained(checkpoint).eval()

    def ground(self, image_uri: str, caption: str) -> list[dict]:
        image = _open_image(image_uri)
        inputs = self.processor(images=image, text=caption, return_tensors="pt")
        with self._torch.no_grad():
            outputs = self.model(**inputs)
        processed = self.processor.post_process_grounded_object_detection(
            outputs, inputs.input_ids, target_sizes=[image.size[::-1]]
        )[0]
        detections = []
        for label, box, score in zip(
            processed["labels"], processed["boxes"], processed["scores"]
        ):
            x1, y1, x2, y2 = (float(c) for c in box)
            detections.append(
                {"phrase": str(label), "box": [x1, y1, x2, y2],
                 "score": max(0.0, min(1.0, float(score)))}
            )
        return detections


class EchoExplainer:
    """Deterministic completion source for offline conformance runs."""

    def explain(self, prompt: str, n: int) -> list[str]:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return [f"completion {i + 1} of {n} for prompt {digest}" for i in range(n)]


class OpenAIExplainer:
    """Thin passthrough to an OpenAI-compatible chat completion endpoint."""

    def __init__(self, base_url: str, model: str,
                 temperature: Optional[float], top_p: Optional[float]):
        import httpx

        self._client = httpx.Client(base_url=base_url, timeout=120.0)
        self._model = model
        self._temperature = temperature
        self._top_p = top_p

    def explain(self, prompt: str, n: int) -> list[str]:
        payload = {
            "model": self._model,
            "messages": [{"role": "user", "content": prompt}],
            "n": n,
        }
        if self._temperature is not None:
            payload["temperature"] = self._temperature
        if self._top_p is not None:
            payload["top_p"] = self._top_p
        headers = {}
        api_key = os.environ.get("OPENAI_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        response = self._client.post("/chat/completions", json=payload, headers=headers)
        response.raise_for_status()
        choices = response.json()["choices"]
        completions = [c["message"]["content"] for c in choices]
        return [c for c in completions if c] or [""]


def build_models(config: ShimConfig):
    """Instantiate (encoder, grounder, explainer); failures abort startup."""
    dim = hash_encoder_dim(config.encoder)
    encoder = HashEncoder(dim) if dim is not None else ClipEncoder(config.encoder)
    kind, _, arg = config.grounder.partition(":")
    if kind == "none":
        grounder = NullGrounder()
    elif kind == "fixture":
        grounder = FixtureGrounder(arg)
    else:
        grounder = GroundingDinoGrounder(arg)
    llm_kind, _, llm_arg = config.llm.partition(":")
    if llm_kind == "echo":
        explainer = EchoExplainer()
    else:
        explainer = OpenAIExplainer(
            llm_arg, config.llm_model, config.temperature, config.top_p
        )
    return encoder, grounder, explainer
