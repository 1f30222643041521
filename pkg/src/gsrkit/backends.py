"""Foundation-model interfaces: text/image embedding, grounding, explaining.

This is the only boundary through which model inference occurs. Two
implementations ship with the engine:

* FixtureBackend — deterministic test double driven by a JSON fixture file;
  every operation is a pure function of (fixture, arguments).
* HttpBackend — client for the HTTP/JSON wire protocol (see README), with an
  idempotency-safe retry policy.
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import requests

from .core import BoundingBox, Embedding, iou
from .errors import FixtureMissError, ImageNotFoundError, TransportError

DEFAULT_FIXTURE_DIM = 64


@dataclass(frozen=True)
class ImageRef:
    """Locator for an image resource: a file path, URL, or fixture key."""

    uri: str

    def __post_init__(self) -> None:
        if not self.uri:
            raise ValueError("image uri must be non-empty")


@dataclass(frozen=True)
class Detection:
    """One grounded region proposal: phrase label, box, confidence."""

    phrase: str
    box: BoundingBox
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


def prompt_digest(prompt: str) -> str:
    """Stable digest keying scripted explainer completions in fixture files."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Backend(ABC):
    """Abstract interface to the three foundation models.

    Implementations must accept concurrent in-flight requests; the engine
    treats every call as blocking under a configurable parallelism budget.
    """

    @property
    @abstractmethod
    def identity(self) -> str:
        """Stable identifier used in cache keys and persisted artifacts."""

    @abstractmethod
    def embed_text(self, texts: Sequence[str]) -> list[Embedding]:
        """Embed a batch of non-empty strings; one embedding per input."""

    @abstractmethod
    def embed_image(self, image: ImageRef) -> Embedding:
        """Embed a whole image."""

    @abstractmethod
    def embed_region(self, image: ImageRef, box: BoundingBox) -> Embedding:
        """Embed the crop of `image` under `box`."""

    @abstractmethod
    def ground(self, image: ImageRef, caption: str) -> list[Detection]:
        """Detect phrase-labelled regions for a caption; no filtering here."""

    @abstractmethod
    def explain(self, prompt: str, n: int) -> list[str]:
        """Generate up to n completions for a prompt."""

    def embed_one(self, text: str) -> Embedding:
        """Single-string sugar over embed_text."""
        return self.embed_text([text])[0]


def _check_embed_args(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("embed_text requires at least one string")
    for t in texts:
        if not t:
            raise ValueError("embed_text received an empty string")


def hashed_unit_vector(text: str, dim: int) -> np.ndarray:
    """Unit vector seeded from sha256(text): unrelated strings have near-zero
    expected cosine, identical strings always map to the same vector."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class FixtureRegion:
    box: BoundingBox
    embedding: Embedding
    phrase: str
    score: float


@dataclass(frozen=True)
class FixtureImage:
    """Deterministic stand-in for one image: a global vector plus regions."""

    global_embedding: Embedding
    regions: tuple[FixtureRegion, ...] = ()


class FixtureBackend(Backend):
    """Backend driven entirely by a fixture document.

    Fixture file format (JSON):
      {"dim": 64,
       "texts": {text: [floats]},
       "images": {uri: {"global_embedding": [...],
                        "regions": [{"box": [x1,y1,x2,y2], "embedding": [...],
                                     "phrase": "...", "score": 0.9}]}},
       "completions": {sha256(prompt): ["...", ...]}}

    Text embeddings fall back to seeded-hash unit vectors when not scripted;
    images and completions must be scripted explicitly.
    """

    def __init__(self, doc: dict[str, Any], *, identity: Optional[str] = None):
        self._dim = int(doc.get("dim", DEFAULT_FIXTURE_DIM))
        self._texts: dict[str, Embedding] = {
            text: self._vec(vec, f"texts[{text!r}]")
            for text, vec in doc.get("texts", {}).items()
        }
        self._images: dict[str, FixtureImage] = {
            uri: self._parse_image(uri, spec) for uri, spec in doc.get("images", {}).items()
        }
        self._completions: dict[str, list[str]] = {
            digest: list(comps) for digest, comps in doc.get("completions", {}).items()
        }
        payload = json.dumps(doc, sort_keys=True).encode("utf-8")
        self._identity = identity or f"fixture:{hashlib.sha256(payload).hexdigest()[:12]}"

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureBackend":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:12]
        return cls(doc, identity=f"fixture:{digest}")

    def _vec(self, values: Sequence[float], where: str) -> Embedding:
        emb = Embedding(values)
        if emb.dim != self._dim:
            raise ValueError(f"fixture {where}: dim {emb.dim} != fixture dim {self._dim}")
        return emb

    def _parse_image(self, uri: str, spec: dict[str, Any]) -> FixtureImage:
        regions = tuple(
            FixtureRegion(
                box=BoundingBox(*r["box"]),
                embedding=self._vec(r["embedding"], f"images[{uri!r}].regions"),
                phrase=r["phrase"],
                score=float(r["score"]),
            )
            for r in spec.get("regions", [])
        )
        for region in regions:
            if not 0.0 <= region.score <= 1.0:
                raise ValueError(f"fixture images[{uri!r}]: region score out of [0, 1]")
        return FixtureImage(
            global_embedding=self._vec(spec["global_embedding"], f"images[{uri!r}]"),
            regions=regions,
        )

    @property
    def identity(self) -> str:
        return self._identity

    @property
    def dim(self) -> int:
        return self._dim

    def _image(self, image: ImageRef) -> FixtureImage:
        fixture = self._images.get(image.uri)
        if fixture is None:
            raise ImageNotFoundError(f"fixture has no image {image.uri!r}")
        return fixture

    def embed_text(self, texts: Sequence[str]) -> list[Embedding]:
        _check_embed_args(texts)
        return [
            self._texts.get(t) or Embedding(hashed_unit_vector(t, self._dim)) for t in texts
        ]

    def embed_image(self, image: ImageRef) -> Embedding:
        return self._image(image).global_embedding

    def embed_region(self, image: ImageRef, box: BoundingBox) -> Embedding:
        fixture = self._image(image)
        best: Optional[FixtureRegion] = None
        best_iou = 0.0
        for region in fixture.regions:
            overlap = iou(box, region.box)
            if overlap > best_iou:  # ties keep the first listed region
                best, best_iou = region, overlap
        if best is None:
            raise ValueError(
                f"box {box.tolist()} does not overlap any stored region of {image.uri!r}"
            )
        return best.embedding

    def ground(self, image: ImageRef, caption: str) -> list[Detection]:
        if not caption:
            raise ValueError("caption must be non-empty")
        fixture = self._image(image)
        lowered = caption.lower()
        return [
            Detection(phrase=r.phrase, box=r.box, score=r.score)
            for r in fixture.regions
            if r.phrase.lower() in lowered
        ]

    def explain(self, prompt: str, n: int) -> list[str]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if n < 1:
            raise ValueError("n must be >= 1")
        digest = prompt_digest(prompt)
        scripted = self._completions.get(digest)
        if scripted is None:
            raise FixtureMissError(digest, prompt)
        return scripted[:n]


class HttpBackend(Backend):
    """Client for the HTTP/JSON wire protocol.

    5xx responses and connection failures are retried with exponential
    backoff (default 3 attempts, total elapsed capped at 30 s); 4xx responses
    raise ValueError immediately with the server's error message.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        total_cap: float = 30.0,
    ):
        self._endpoint = endpoint.rstrip("/")
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._total_cap = total_cap
        self._local = threading.local()

    @property
    def identity(self) -> str:
        return f"http:{self._endpoint}"

    def _session(self) -> requests.Session:
        # one session per thread: requests.Session is not fully thread-safe
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = f"{self._endpoint}{path}"
        started = time.monotonic()
        attempts = 0
        last_error = "unknown error"
        while True:
            attempts += 1
            try:
                resp = self._session().post(url, json=payload, timeout=self._timeout)
            except requests.RequestException as exc:
                last_error = f"{url}: {exc}"
            else:
                if resp.status_code < 400:
                    return resp.json()
                body = self._error_body(resp)
                if resp.status_code == 404:
                    raise ImageNotFoundError(f"{url}: {body}")
                if resp.status_code < 500:
                    raise ValueError(f"{url}: HTTP {resp.status_code}: {body}")
                last_error = f"{url}: HTTP {resp.status_code}: {body}"
            elapsed = time.monotonic() - started
            if attempts >= self._max_attempts or elapsed >= self._total_cap:
                raise TransportError(last_error, attempts=attempts, elapsed=elapsed)
            delay = self._backoff_base * (2 ** (attempts - 1))
            delay = min(delay, max(0.0, self._total_cap - elapsed))
            time.sleep(delay)

    @staticmethod
    def _error_body(resp: requests.Response) -> str:
        try:
            return str(resp.json().get("error", resp.text))
        except ValueError:
            return resp.text

    def embed_text(self, texts: Sequence[str]) -> list[Embedding]:
        _check_embed_args(texts)
        data = self._post("/v1/embed_text", {"texts": list(texts)})
        embs = [Embedding(vec) for vec in data["embeddings"]]
        dim = int(data["dim"])
        if any(e.dim != dim for e in embs) or len(embs) != len(texts):
            raise ValueError("embed_text response shape mismatch")
        return embs

    def embed_image(self, image: ImageRef) -> Embedding:
        data = self._post("/v1/embed_image", {"image_uri": image.uri})
        return Embedding(data["embedding"])

    def embed_region(self, image: ImageRef, box: BoundingBox) -> Embedding:
        data = self._post(
            "/v1/embed_region", {"image_uri": image.uri, "box": box.tolist()}
        )
        return Embedding(data["embedding"])

    def ground(self, image: ImageRef, caption: str) -> list[Detection]:
        if not caption:
            raise ValueError("caption must be non-empty")
        data = self._post("/v1/ground", {"image_uri": image.uri, "caption": caption})
        return [
            Detection(
                phrase=d["phrase"], box=BoundingBox(*d["box"]), score=float(d["score"])
            )
            for d in data["detections"]
        ]

    def explain(self, prompt: str, n: int) -> list[str]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if n < 1:
            raise ValueError("n must be >= 1")
        data = self._post("/v1/explain", {"prompt": prompt, "n": n})
        return [str(c) for c in data["completions"]]


class CachingBackend(Backend):
    """In-memory text-embedding memo around another backend.

    Repeated prompts (class prompts, cached descriptions) embed once per
    process; other operations pass through untouched.
    """

    def __init__(self, inner: Backend):
        self._inner = inner
        self._memo: dict[str, Embedding] = {}
        self._lock = threading.Lock()

    @property
    def identity(self) -> str:
        return self._inner.identity

    def embed_text(self, texts: Sequence[str]) -> list[Embedding]:
        _check_embed_args(texts)
        with self._lock:
            missing = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if missing:
            fresh = self._inner.embed_text(missing)
            with self._lock:
                self._memo.update(zip(missing, fresh))
        with self._lock:
            return [self._memo[t] for t in texts]

    def embed_image(self, image: ImageRef) -> Embedding:
        return self._inner.embed_image(image)

    def embed_region(self, image: ImageRef, box: BoundingBox) -> Embedding:
        return self._inner.embed_region(image, box)

    def ground(self, image: ImageRef, caption: str) -> list[Detection]:
        return self._inner.ground(image, caption)

    def explain(self, prompt: str, n: int) -> list[str]:
        return self._inner.explain(prompt, n)
