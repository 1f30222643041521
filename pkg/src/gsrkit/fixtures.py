"""Builder for fixture-backend documents.

Tests and demos construct deterministic worlds with it: scripted text
vectors, images with embedded regions, and explainer completions keyed by
prompt digest. `basis(i)` hands out orthogonal unit vectors, the easiest
way to force a particular similarity structure.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import DEFAULT_FIXTURE_DIM, FixtureBackend, prompt_digest
from .core import BoundingBox


class FixtureBuilder:
    def __init__(self, dim: int = DEFAULT_FIXTURE_DIM):
        self.dim = dim
        self._texts: dict[str, list[float]] = {}
        self._images: dict[str, dict] = {}
        self._completions: dict[str, list[str]] = {}

    def basis(self, index: int) -> np.ndarray:
        """The index-th standard basis vector; indices must stay below dim."""
        if not 0 <= index < self.dim:
            raise ValueError(f"basis index {index} outside [0, {self.dim})")
        v = np.zeros(self.dim)
        v[index] = 1.0
        return v

    def mix(self, *parts: tuple[int, float]) -> np.ndarray:
        """Unit-normalized combination of basis vectors: (index, coefficient)."""
        v = np.zeros(self.dim)
        for index, coeff in parts:
            v[index] += coeff
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("mix produced a zero vector")
        return v / norm

    def set_text(self, text: str, values: Sequence[float] | np.ndarray) -> "FixtureBuilder":
        self._texts[text] = [float(x) for x in values]
        return self

    def add_image(
        self, uri: str, global_embedding: Sequence[float] | np.ndarray
    ) -> "FixtureBuilder":
        self._images[uri] = {
            "global_embedding": [float(x) for x in global_embedding],
            "regions": [],
        }
        return self

    def add_region(
        self,
        uri: str,
        box: BoundingBox | Sequence[float],
        embedding: Sequence[float] | np.ndarray,
        phrase: str,
        score: float,
    ) -> "FixtureBuilder":
        if uri not in self._images:
            raise ValueError(f"add_image({uri!r}) first")
        coords = box.tolist() if isinstance(box, BoundingBox) else [float(c) for c in box]
        self._images[uri]["regions"].append(
            {
                "box": coords,
                "embedding": [float(x) for x in embedding],
                "phrase": phrase,
                "score": float(score),
            }
        )
        return self

    def script(self, prompt: str, completions: Sequence[str]) -> "FixtureBuilder":
        """Register explainer completions for a fully rendered prompt."""
        self._completions[prompt_digest(prompt)] = list(completions)
        return self

    def doc(self) -> dict:
        return {
            "dim": self.dim,
            "texts": dict(self._texts),
            "images": json.loads(json.dumps(self._images)),
            "completions": dict(self._completions),
        }

    def backend(self) -> FixtureBackend:
        return FixtureBackend(self.doc())

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.doc(), indent=1, sort_keys=True), encoding="utf-8")
        return path
