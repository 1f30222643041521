"""Command-line entry point: build the app from flags and serve it."""
from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import ShimConfig


def parse_args(argv=None) -> ShimConfig:
    parser = argparse.ArgumentParser(description="Embedding/grounding/explainer shim")
    parser.add_argument("--encoder", default="hash/64",
                        help='encoder architecture, e.g. "ViT-B/32" or "hash/64"')
    parser.add_argument("--grounder", default="none",
                        help='"none", "fixture:<path>", or "grounding-dino:<ckpt>"')
    parser.add_argument("--llm", default="echo",
                        help='"echo" or "openai:<base_url>"')
    parser.add_argument("--llm-model", default="gpt-3.5-turbo")
    parser.add_argument("--temperature", type=float, default=None)
    parser.add_argument("--top-p", type=float, default=None)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    args = parser.parse_args(argv)
    return ShimConfig(
        encoder=args.encoder,
        grounder=args.grounder,
        llm=args.llm,
        llm_model=args.llm_model,
        temperature=args.temperature,
        top_p=args.top_p,
        host=args.host,
        port=args.port,
    )


def serve(config: ShimConfig) -> None:
    """Build models (aborting on load failure) and serve until interrupted."""
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


def main(argv=None) -> None:
    serve(parse_args(argv))


if __name__ == "__main__":
    main()
