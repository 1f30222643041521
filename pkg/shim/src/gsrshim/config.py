"""Shim configuration: which models serve each endpoint family."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

#: encoder names the shim knows how to construct. "hash/<dim>" is a
#: deterministic seeded-hash encoder used for conformance testing and
#: offline development; the CLIP names require torch + transformers and
#: local weights.
CLIP_ENCODERS = {
    "ViT-B/32": "openai/clip-vit-base-patch32",
    "ViT-B/16": "openai/clip-vit-base-patch16",
    "ViT-L/14": "openai/clip-vit-large-patch14",
}
_HASH_PATTERN = re.compile(r"^hash/(\d+)$")


def is_supported_encoder(name: str) -> bool:
    return name in CLIP_ENCODERS or _HASH_PATTERN.match(name) is not None


def hash_encoder_dim(name: str) -> Optional[int]:
    m = _HASH_PATTERN.match(name)
    return int(m.group(1)) if m else None


@dataclass(frozen=True)
class ShimConfig:
    """Validated server configuration.

    encoder: "hash/<dim>" or a CLIP architecture name.
    grounder: "none", "fixture:<path>", or "grounding-dino:<checkpoint>".
    llm: "echo" or "openai:<base_url>" (passthrough; needs credentials in
    OPENAI_API_KEY). Sampling parameters are forwarded untouched.
    """

    encoder: str = "hash/64"
    grounder: str = "none"
    llm: str = "echo"
    llm_model: str = "gpt-3.5-turbo"
    temperature: Optional[float] = None
    top_p: Optional[float] = None
    host: str = "127.0.0.1"
    port: int = 8008

    def __post_init__(self) -> None:
        if not is_supported_encoder(self.encoder):
            supported = sorted(CLIP_ENCODERS) + ["hash/<dim>"]
            raise ValueError(
                f"unsupported encoder {self.encoder!r}; expected one of {supported}"
            )
        if not 0 < self.port < 65536:
            raise ValueError(f"invalid port {self.port}")
        kind = self.grounder.split(":", 1)[0]
        if kind not in ("none", "fixture", "grounding-dino"):
            raise ValueError(f"unsupported grounder {self.grounder!r}")
        llm_kind = self.llm.split(":", 1)[0]
        if llm_kind not in ("echo", "openai"):
            raise ValueError(f"unsupported llm provider {self.llm!r}")
