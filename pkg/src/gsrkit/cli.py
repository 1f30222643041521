"""Command-line entry points: precompute, run, eval.

Exit codes: 0 success, 1 partial failures (some classes or images failed),
2 fatal configuration or data error.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import click

from .dataset import load_dataset, load_predictions, load_space
from .engine import Engine, EngineConfig, evaluate_predictions
from .errors import GsrError
from .evaluation import render_report, report_to_json

EXIT_PARTIAL = 1
EXIT_FATAL = 2


def _build_config(config_path: Optional[str], **overrides) -> EngineConfig:
    """Precedence: defaults < config file < environment < explicit flags."""
    config = EngineConfig.from_file(config_path) if config_path else EngineConfig()
    config = config.with_env_overrides()
    updates = {k: v for k, v in overrides.items() if v is not None}
    if "settings" in updates:
        updates["settings"] = tuple(s.strip() for s in updates["settings"].split(","))
    if "counts" in updates:
        counts = dict(config.counts)
        for part in updates["counts"].split(","):
            kind, _, value = part.partition("=")
            counts[kind.strip()] = int(value)
        updates["counts"] = counts
    return dataclasses.replace(config, **updates)


def engine_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="YAML/JSON config file with EngineConfig fields."),
        click.option("--backend", type=click.Choice(["fixture", "http"]), default=None),
        click.option("--fixture", type=click.Path(exists=True), default=None,
                     help="Fixture file for the fixture backend."),
        click.option("--endpoint", default=None, help="Base URL of an HTTP backend."),
        click.option("--cache-dir", "cache_dir", default=None),
        click.option("--lambda", "balance", type=float, default=None,
                     help="Class/description fusion factor in [0, 1]."),
        click.option("--jobs", type=int, default=None, help="Image-level parallelism."),
        click.option("--settings", default=None, help="Comma list from top1,top5,gt."),
        click.option("--counts", default=None,
                     help="Generation counts, e.g. 'verb_centric=10,noun_scene=5'."),
        click.option("--no-verb-explainer", "verb_explainer", flag_value=False, default=None),
        click.option("--no-weighting", "weighting", flag_value=False, default=None),
        click.option("--no-grounding-explainer", "grounding_explainer", flag_value=False,
                     default=None),
        click.option("--no-filter", "noun_filter", flag_value=False, default=None),
        click.option("--no-noun-explainer", "noun_explainer", flag_value=False, default=None),
        click.option("--no-refine", "refinement", flag_value=False, default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group()
def main() -> None:
    """Zero-shot grounded situation recognition engine."""


@main.command()
@engine_options
@click.option("--space", "space_path", type=click.Path(exists=True), required=True)
@click.option("--artifact", "artifact_path", type=click.Path(), required=True,
              help="Where to write the weight artifact JSON.")
def precompute(config_path, space_path, artifact_path, **overrides) -> None:
    """Generate and cache descriptions, compute description weights."""
    try:
        config = _build_config(config_path, **overrides)
        verbs, nouns = load_space(space_path)
        engine = Engine(config, verbs, nouns)
        summary = engine.precompute(artifact_path)
    except (GsrError, ValueError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    for verb_id, reason in sorted(summary.failures.items()):
        click.echo(f"warning: {verb_id}: {reason}", err=True)
    click.echo(
        f"precomputed {summary.verbs} verbs "
        f"({len(summary.failures)} with generation failures) -> {artifact_path}"
    )
    if not summary.ok:
        sys.exit(EXIT_PARTIAL)


@main.command()
@engine_options
@click.option("--space", "space_path", type=click.Path(exists=True), required=True)
@click.option("--annotations", "annotation_path", type=click.Path(exists=True), required=True)
@click.option("--image-root", default="", help="Prefix joined to image ids.")
@click.option("--artifact", "artifact_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Prediction JSON-lines output (appended; resumable).")
@click.option("--no-resume", "resume", is_flag=True, default=True, flag_value=False)
def run(config_path, space_path, annotation_path, image_root, artifact_path, out_path,
        resume, **overrides) -> None:
    """Predict frames for every annotated image."""
    try:
        config = _build_config(config_path, **overrides)
        bundle = load_dataset(annotation_path, space_path, image_root)
        engine = Engine(config, bundle.verbs, bundle.nouns)
        engine.load_artifact(artifact_path)
        summary = engine.run_dataset(bundle, out_path, resume=resume)
    except (GsrError, ValueError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    for image_id, reason in sorted(summary.failures.items()):
        click.echo(f"warning: {image_id}: {reason}", err=True)
    click.echo(
        f"wrote {summary.written} records to {out_path} "
        f"(skipped {summary.skipped} already present, {len(summary.failures)} failed)",
        err=True,
    )
    if not summary.ok:
        sys.exit(EXIT_PARTIAL)


@main.command(name="eval")
@click.option("--predictions", "prediction_path", type=click.Path(exists=True), required=True)
@click.option("--space", "space_path", type=click.Path(exists=True), required=True)
@click.option("--annotations", "annotation_path", type=click.Path(exists=True), required=True)
@click.option("--settings", default="top1,top5,gt", show_default=True)
@click.option("--grnd-joint/--grnd-box-only", "joint_grnd", default=True,
              help="Whether grounding also requires the noun to be correct.")
@click.option("--absent-box", type=click.Choice(["strict", "ignore"]), default="strict",
              show_default=True)
@click.option("--report-json", "report_json", type=click.Path(), default=None,
              help="Also write the machine-readable report here.")
def eval_cmd(prediction_path, space_path, annotation_path, settings, joint_grnd,
             absent_box, report_json) -> None:
    """Score a prediction file and render the metrics table."""
    try:
        bundle = load_dataset(annotation_path, space_path)
        records = load_predictions(prediction_path)
        wanted = tuple(s.strip() for s in settings.split(","))
        report = evaluate_predictions(
            records, bundle, wanted, joint_grnd=joint_grnd, absent_box=absent_box
        )
    except (GsrError, ValueError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    click.echo(render_report(report), nl=False)
    if report_json:
        Path(report_json).write_text(
            json.dumps(report_to_json(report), indent=2, sort_keys=True), encoding="utf-8"
        )


if __name__ == "__main__":
    main()
