"""Exception hierarchy shared across the engine."""
from __future__ import annotations


class GsrError(Exception):
    """Base class for all engine errors."""


class ZeroVectorError(GsrError, ValueError):
    """A vector operation received an all-zero vector."""


class TransportError(GsrError):
    """A backend request failed after exhausting its retry budget.

    Carries the retry metadata so callers can log or surface it.
    """

    def __init__(self, message: str, *, attempts: int, elapsed: float):
        super().__init__(f"{message} (attempts={attempts}, elapsed={elapsed:.2f}s)")
        self.attempts = attempts
        self.elapsed = elapsed


class ImageNotFoundError(GsrError, KeyError):
    """The backend could not resolve the requested image."""


class FixtureMissError(GsrError, KeyError):
    """The fixture backend has no scripted completion for a prompt digest."""

    def __init__(self, digest: str, prompt: str):
        head = prompt if len(prompt) <= 80 else prompt[:77] + "..."
        super().__init__(f"no scripted completion for digest {digest} (prompt: {head!r})")
        self.digest = digest


class GenerationFailedError(GsrError):
    """The explainer produced zero valid strings for a prompt."""


class GroundingFailedError(GsrError):
    """Every grounding call for an image failed at the transport level."""


class DatasetError(GsrError, ValueError):
    """An annotation or space file failed validation.

    Messages name the offending image id and field.
    """


class PredictionDataError(GsrError, ValueError):
    """A prediction record is inconsistent with the dataset being scored."""
