"""Scene-graph-grounded cross-task consistency evaluation for unified
multimodal models."""

__version__ = "0.1.0"

from .graph import (
    Edge,
    Fact,
    Node,
    Predicate,
    SceneGraph,
    StatsRow,
    dataset_stats,
    enumerate_facts,
    parse_scene_graph,
    serialize_scene_graph,
)
from .matching import CostParams, MatchResult, hungarian, match_graphs
from .metrics import FactScorePair, MetricsReport, aw_ccta, build_report, ccta
from .pipeline import PipelineConfig, run_pipeline

__all__ = [
    "Edge",
    "Fact",
    "Node",
    "Predicate",
    "SceneGraph",
    "StatsRow",
    "CostParams",
    "MatchResult",
    "FactScorePair",
    "MetricsReport",
    "PipelineConfig",
    "dataset_stats",
    "enumerate_facts",
    "parse_scene_graph",
    "serialize_scene_graph",
    "hungarian",
    "match_graphs",
    "ccta",
    "aw_ccta",
    "build_report",
    "run_pipeline",
]
