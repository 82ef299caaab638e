"""Command-line surface: composable stage subcommands plus the full pipeline.

Stage subcommands operate either on standalone JSON files or, given a run
configuration, on every image in the run directory; chaining
refine -> qagen -> match -> score -> report over one run directory is
equivalent to a single `pipeline` invocation.

Exit codes: 0 success, 2 partial (quarantined items), 1 fatal.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .clients import MockEmbedder
from .graph import canonical_json, dataset_stats, parse_scene_graph, serialize_scene_graph
from .matching import CostParams, match_graphs
from .pipeline import PipelineConfig, Runner, run_pipeline
from .qagen import generate_questions, linearize
from .refine import RawRelationPrediction, RefineConfig, refine_graph

EXIT_PARTIAL = 2


def _common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="JSON file of pipeline settings; flags override it."),
        click.option("--graphs", "graphs_dir", type=click.Path(), default=None),
        click.option("--run-root", default=None),
        click.option("--run-id", default=None),
        click.option("--resume", "resume_id", default=None,
                     help="Resume an existing run id in the run root."),
        click.option("--model", "model_id", default=None),
        click.option("--family", default=None),
        click.option("--mock/--no-mock", "mock", default=None),
        click.option("--alpha", type=float, default=None),
        click.option("--beta", type=float, default=None),
        click.option("--nr-threshold", type=float, default=None),
        click.option("--pred-threshold", "predicate_threshold", type=float, default=None),
        click.option("--preds-dir", "preds_dir", type=click.Path(), default=None),
        click.option("--jobs", type=int, default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _build_config(config_path, resume_id, **overrides) -> PipelineConfig:
    base: dict = {}
    if config_path:
        base = json.loads(Path(config_path).read_text("utf-8"))
    base.update({k: v for k, v in overrides.items() if v is not None})
    if resume_id is not None:
        base["run_id"] = resume_id
    return PipelineConfig(**base)


def _run_stages(config: PipelineConfig, stages) -> None:
    try:
        runner = Runner(config)
        for image_id in runner.image_ids:
            for stage in stages:
                getattr(runner, f"stage_{stage}")(image_id)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc))


@click.group()
def main():
    """Cross-task consistency evaluation over scene-graph anchors."""


@main.command()
@click.option("--graph", "graph_path", type=click.Path(exists=True), default=None)
@click.option("--preds", "preds_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@_common_options
def refine(graph_path, preds_path, out_path, config_path, resume_id, **overrides):
    """Refine raw relation predictions into reference graph edges."""
    if graph_path and preds_path:
        graph = parse_scene_graph(Path(graph_path).read_text("utf-8"))
        doc = json.loads(Path(preds_path).read_text("utf-8"))
        preds = [
            RawRelationPrediction(p["source"], p["target"], p["scores"])
            for p in doc["predictions"]
        ]
        cfg = RefineConfig(
            nr_threshold=overrides.get("nr_threshold") or 0.5,
            predicate_threshold=overrides.get("predicate_threshold") or 0.4,
        )
        payload = serialize_scene_graph(refine_graph(graph, preds, cfg))
        if out_path:
            Path(out_path).write_text(payload, encoding="utf-8")
        else:
            click.echo(payload)
        return
    _run_stages(_build_config(config_path, resume_id, **overrides), ["graph"])


@main.command()
@click.option("--graph", "graph_path", type=click.Path(exists=True), default=None)
@_common_options
def qagen(graph_path, config_path, resume_id, **overrides):
    """Derive the generation prompt and fact-aligned question set."""
    if graph_path:
        graph = parse_scene_graph(Path(graph_path).read_text("utf-8"))
        click.echo(
            canonical_json(
                {
                    "prompt": linearize(graph).text,
                    "qa": [item.as_dict() for item in generate_questions(graph)],
                }
            )
        )
        return
    _run_stages(_build_config(config_path, resume_id, **overrides), ["prompt", "qa"])


@main.command()
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None)
@click.option("--pred", "pred_path", type=click.Path(exists=True), default=None)
@_common_options
def match(gt_path, pred_path, config_path, resume_id, **overrides):
    """Match a predicted graph against a reference graph."""
    if gt_path and pred_path:
        gt = parse_scene_graph(Path(gt_path).read_text("utf-8"))
        pred = parse_scene_graph(Path(pred_path).read_text("utf-8"))
        params = CostParams(
            alpha=overrides.get("alpha") or 0.7, beta=overrides.get("beta") or 0.3
        )
        click.echo(canonical_json(match_graphs(gt, pred, params, MockEmbedder()).as_dict()))
        return
    _run_stages(
        _build_config(config_path, resume_id, **overrides),
        ["generate", "extract", "match"],
    )


@main.command()
@_common_options
def score(config_path, resume_id, **overrides):
    """Judge generation and understanding per fact over a run directory."""
    _run_stages(_build_config(config_path, resume_id, **overrides), ["score"])


@main.command()
@_common_options
def report(config_path, resume_id, **overrides):
    """Aggregate persisted fact ledgers into the report bundle."""
    config = _build_config(config_path, resume_id, **overrides)
    try:
        bundle = Runner(config).build_bundle()
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc))
    click.echo(canonical_json(bundle.report.as_dict()))
    if bundle.quarantined:
        sys.exit(EXIT_PARTIAL)


@main.command()
@_common_options
def pipeline(config_path, resume_id, **overrides):
    """Run every stage end to end and print the report."""
    config = _build_config(config_path, resume_id, **overrides)
    try:
        bundle = run_pipeline(config)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc))
    click.echo(canonical_json(bundle.report.as_dict()))
    if bundle.quarantined:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.option("--graphs", "graphs_dir", type=click.Path(exists=True), required=True)
def stats(graphs_dir):
    """Dataset statistics over a directory of graph documents."""
    paths = sorted(Path(graphs_dir).glob("*.json"))
    if not paths:
        raise click.ClickException(f"no graph documents under {graphs_dir}")
    graphs = [parse_scene_graph(p.read_text("utf-8")) for p in paths]
    click.echo(canonical_json(dataset_stats(graphs).as_table_row()))


if __name__ == "__main__":
    main()
