"""End-to-end per-image evaluation with a resumable run directory.

Run layout: runs/<id>/{manifest.json, graphs/, prompts/, qa/, images/,
matches/, scores/, report/}. Every stage persists its artifact and marks the
manifest ledger, so an interrupted run resumes without repeating completed
work, and aggregates are always recomputable from the persisted ledgers.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .clients import (
    IdentityExtractionAdapter,
    MockChatClient,
    MockEmbedder,
    OracleUnifiedModel,
)
from .graph import (
    SceneGraph,
    canonical_json,
    enumerate_facts,
    parse_scene_graph,
    serialize_scene_graph,
)
from .judge import JudgeParseError, mock_judge, parse_judge_score, render_vqa_judge
from .matching import CostParams, MatchResult, NodePair, match_graphs
from .metrics import (
    FactScorePair,
    MetricsReport,
    attribute_dimension,
    build_report,
    tornado_rows,
)
from .qagen import PREDICATE_TAXONOMY, QAItem, generate_questions, linearize, refine_prompt
from .refine import RawRelationPrediction, RefineConfig, refine_graph

logger = logging.getLogger(__name__)

STAGES = ("graph", "prompt", "qa", "generate", "extract", "match", "score")


@dataclass
class PipelineConfig:
    graphs_dir: str
    run_root: str = "runs"
    run_id: str = "run"
    model_id: str = "mock-umm"
    family: str = ""
    mock: bool = True
    alpha: float = 0.7
    beta: float = 0.3
    nr_threshold: float = 0.5
    predicate_threshold: float = 0.4
    merge_min_group: int = 3
    preds_dir: Optional[str] = None
    refine_prompts: bool = False
    jobs: int = 1
    template_version: str = "v1"

    def cost_params(self) -> CostParams:
        return CostParams(alpha=self.alpha, beta=self.beta)

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            nr_threshold=self.nr_threshold,
            predicate_threshold=self.predicate_threshold,
            merge_min_group=self.merge_min_group,
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Backends:
    embedder: object
    chat: object
    umm: object
    extractor: object
    judge_fn: object  # (gt, pred) -> raw 0..5


def mock_backends() -> Backends:
    """Fully deterministic backends; the unified model answers from the QA
    lookup the pipeline seeds, and extraction returns the reference graph."""
    return Backends(
        embedder=MockEmbedder(),
        chat=MockChatClient(),
        umm=OracleUnifiedModel(),
        extractor=IdentityExtractionAdapter(),
        judge_fn=mock_judge,
    )


def chat_judge_fn(chat_client):
    """LLM judge over the chat wire, with one retry on unparseable output."""

    def judge(gt: str, pred: str) -> int:
        if not pred.strip():
            return 0
        prompt = render_vqa_judge(gt, pred)
        for attempt in (0, 1):
            try:
                return parse_judge_score(chat_client.chat(prompt))
            except JudgeParseError:
                if attempt == 1:
                    raise
        raise AssertionError("unreachable")

    return judge


class Manifest:
    """Append-only stage ledger plus a frozen config snapshot."""

    def __init__(self, path: Path, config: PipelineConfig, image_ids: Sequence[str]):
        self.path = path
        self._lock = threading.Lock()
        if path.exists():
            self.data = json.loads(path.read_text("utf-8"))
            if self.data["config"] != config.as_dict():
                raise ValueError("run directory holds a different config; refuse to resume")
        else:
            self.data = {
                "run_id": config.run_id,
                "tool_version": __version__,
                "config": config.as_dict(),
                "images": sorted(image_ids),
                "ledger": {image_id: [] for image_id in sorted(image_ids)},
                "quarantined": {},
            }
            self._flush()

    def _flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(canonical_json(self.data), encoding="utf-8")
        tmp.replace(self.path)

    def done(self, image_id: str, stage: str) -> bool:
        return stage in self.data["ledger"][image_id]

    def mark(self, image_id: str, stage: str) -> None:
        with self._lock:
            if stage not in self.data["ledger"][image_id]:
                self.data["ledger"][image_id].append(stage)
                self._flush()

    def quarantine(self, image_id: str, reason: str) -> None:
        with self._lock:
            self.data["quarantined"][image_id] = reason
            self._flush()

    @property
    def quarantined(self) -> dict:
        return self.data["quarantined"]


@dataclass
class RunReportBundle:
    run_dir: Path
    report: MetricsReport
    quarantined: dict[str, str]
    pairs: list[FactScorePair] = field(default_factory=list)


def _relation_dimension(predicates: Sequence[str]) -> str:
    categories = {PREDICATE_TAXONOMY.get(p, "mixed") for p in predicates}
    return categories.pop().title() if len(categories) == 1 else "Mixed"


class Runner:
    """Stage executor over one run directory."""

    def __init__(self, config: PipelineConfig, backends: Optional[Backends] = None):
        self.config = config
        self.backends = backends or (mock_backends() if config.mock else None)
        if self.backends is None:
            raise ValueError("non-mock runs need explicitly wired backends")
        self.run_dir = Path(config.run_root) / config.run_id
        for sub in ("graphs", "prompts", "qa", "images", "matches", "scores", "report"):
            (self.run_dir / sub).mkdir(parents=True, exist_ok=True)
        self.image_ids = self._discover_images()
        self.manifest = Manifest(self.run_dir / "manifest.json", config, self.image_ids)

    def _discover_images(self) -> list[str]:
        graphs_dir = Path(self.config.graphs_dir)
        paths = sorted(p for p in graphs_dir.glob("*.json"))
        if not paths:
            raise FileNotFoundError(f"no graph documents under {graphs_dir}")
        return [p.stem for p in paths]

    # ---- per-stage artifacts -------------------------------------------------

    def _artifact(self, sub: str, image_id: str, suffix: str = ".json") -> Path:
        return self.run_dir / sub / f"{image_id}{suffix}"

    def _require_artifact(self, path: Path) -> Path:
        if not path.exists():
            raise FileNotFoundError(f"missing upstream artifact {path}")
        return path

    def stage_graph(self, image_id: str) -> SceneGraph:
        out = self._artifact("graphs", image_id)
        if self.manifest.done(image_id, "graph") and out.exists():
            return parse_scene_graph(out.read_text("utf-8"))
        source = Path(self.config.graphs_dir) / f"{image_id}.json"
        graph = parse_scene_graph(self._require_artifact(source).read_text("utf-8"))
        if self.config.preds_dir:
            preds_path = Path(self.config.preds_dir) / f"{image_id}.json"
            doc = json.loads(self._require_artifact(preds_path).read_text("utf-8"))
            preds = [
                RawRelationPrediction(p["source"], p["target"], p["scores"])
                for p in doc["predictions"]
            ]
            graph = refine_graph(graph, preds, self.config.refine_config())
        out.write_text(serialize_scene_graph(graph), encoding="utf-8")
        self.manifest.mark(image_id, "graph")
        return graph

    def stage_prompt(self, image_id: str) -> dict:
        out = self._artifact("prompts", image_id)
        if self.manifest.done(image_id, "prompt") and out.exists():
            return json.loads(out.read_text("utf-8"))
        graph = self.stage_graph(image_id)
        draft = linearize(graph)
        if self.config.refine_prompts:
            draft = refine_prompt(draft, "object_refined", self.backends.chat)
            draft = refine_prompt(draft, "sentence_refined", self.backends.chat)
        payload = {
            "stage": draft.stage,
            "text": draft.text,
            "source_fact_ids": sorted(draft.source_fact_ids),
            "node_labels": list(draft.node_labels),
            "flagged": draft.flagged,
        }
        out.write_text(canonical_json(payload), encoding="utf-8")
        self.manifest.mark(image_id, "prompt")
        return payload

    def stage_qa(self, image_id: str) -> list[QAItem]:
        out = self._artifact("qa", image_id, ".jsonl")
        if self.manifest.done(image_id, "qa") and out.exists():
            return [
                QAItem(**json.loads(line))
                for line in out.read_text("utf-8").splitlines()
                if line
            ]
        graph = self.stage_graph(image_id)
        items = generate_questions(graph)
        out.write_text(
            "".join(canonical_json(item.as_dict()) + "\n" for item in items),
            encoding="utf-8",
        )
        self.manifest.mark(image_id, "qa")
        return items

    def stage_generate(self, image_id: str) -> str:
        out = self._artifact("images", image_id)
        if self.manifest.done(image_id, "generate") and out.exists():
            return json.loads(out.read_text("utf-8"))["image_ref"]
        prompt = self.stage_prompt(image_id)
        image_ref = self.backends.umm.generate_image(prompt["text"])
        out.write_text(canonical_json({"image_ref": image_ref}), encoding="utf-8")
        self.manifest.mark(image_id, "generate")
        return image_ref

    def stage_extract(self, image_id: str) -> SceneGraph:
        out = self._artifact("graphs", image_id, ".pred.json")
        if self.manifest.done(image_id, "extract") and out.exists():
            return parse_scene_graph(out.read_text("utf-8"))
        image_ref = self.stage_generate(image_id)
        extractor = self.backends.extractor
        if isinstance(extractor, IdentityExtractionAdapter):
            extractor.register(image_ref, self.stage_graph(image_id))
        predicted = extractor.extract(image_ref)
        out.write_text(serialize_scene_graph(predicted), encoding="utf-8")
        self.manifest.mark(image_id, "extract")
        return predicted

    def stage_match(self, image_id: str) -> MatchResult:
        out = self._artifact("matches", image_id)
        if self.manifest.done(image_id, "match") and out.exists():
            return _match_from_dict(json.loads(out.read_text("utf-8")))
        gt = self.stage_graph(image_id)
        predicted = self.stage_extract(image_id)
        match = match_graphs(gt, predicted, self.config.cost_params(), self.backends.embedder)
        out.write_text(canonical_json(match.as_dict()), encoding="utf-8")
        self.manifest.mark(image_id, "match")
        return match

    def _predicted_value(self, fact, match: MatchResult, predicted: SceneGraph) -> Optional[str]:
        mapping = match.node_mapping()
        if fact.subject not in mapping:
            return None
        pred_nodes = predicted.node_map()
        if fact.kind == "object":
            return pred_nodes[mapping[fact.subject]].label
        if fact.kind == "attribute":
            return pred_nodes[mapping[fact.subject]].attributes.get(fact.key, "")
        matched_edges = match.matched_edge_map()
        key = (fact.subject, fact.object)
        if key not in matched_edges:
            return None
        pred_edge = predicted.edge_between(*matched_edges[key])
        return " and ".join(sorted(pred_edge.predicate_names()))

    def stage_score(self, image_id: str) -> list[FactScorePair]:
        out = self._artifact("scores", image_id, ".jsonl")
        if self.manifest.done(image_id, "score") and out.exists():
            return [
                FactScorePair(**json.loads(line))
                for line in out.read_text("utf-8").splitlines()
                if line
            ]
        graph = self.stage_graph(image_id)
        predicted = self.stage_extract(image_id)
        match = self.stage_match(image_id)
        qa_items = {item.fact_id: item for item in self.stage_qa(image_id)}
        judge = self.backends.judge_fn
        mapping = match.node_mapping()
        matched_edges = match.matched_edge_map()
        reference_image = f"ref-image/{image_id}"

        pairs: list[FactScorePair] = []
        for fact in enumerate_facts(graph):
            predicted_value = self._predicted_value(fact, match, predicted)
            g_raw = 0 if predicted_value is None else judge(fact.value, predicted_value)

            item = qa_items.get(fact.fact_id)
            u_norm = None
            if item is not None and not item.ambiguous:
                if isinstance(self.backends.umm, OracleUnifiedModel):
                    self.backends.umm.register_expected(
                        item.question, item.answer, image_ref=reference_image
                    )
                answer = self.backends.umm.answer_question(reference_image, item.question)
                u_raw = 0 if not answer.strip() else judge(item.answer, answer)
                u_norm = u_raw / 5.0

            if fact.kind == "relation":
                matched = fact.subject in mapping and fact.object in mapping
                dimension = _relation_dimension(fact.key.split("|"))
            else:
                matched = fact.subject in mapping
                dimension = attribute_dimension(fact.key) if fact.kind == "attribute" else None
            pairs.append(
                FactScorePair(
                    fact_id=f"{image_id}/{fact.fact_id}",
                    kind=fact.kind,
                    g_norm=g_raw / 5.0,
                    u_norm=u_norm,
                    matched=matched,
                    dimension=dimension,
                )
            )
        pairs.sort(key=lambda p: p.fact_id)
        out.write_text(
            "".join(canonical_json(p.as_dict()) + "\n" for p in pairs), encoding="utf-8"
        )
        self.manifest.mark(image_id, "score")
        return pairs

    def run_image(self, image_id: str) -> None:
        self.stage_score(image_id)

    # ---- aggregation ---------------------------------------------------------

    def _combined_match(self) -> MatchResult:
        """Merge per-image matches into one result with image-scoped ids."""
        node_pairs: list[NodePair] = []
        unmatched_gt: set[str] = set()
        unmatched_pred: set[str] = set()
        for image_id in self.image_ids:
            if image_id in self.manifest.quarantined:
                continue
            match = self.stage_match(image_id)
            for pair in match.node_pairs:
                node_pairs.append(
                    NodePair(
                        gt_id=f"{image_id}/{pair.gt_id}",
                        pred_id=f"{image_id}/{pair.pred_id}",
                        attr_sim=pair.attr_sim,
                        edge_sim=pair.edge_sim,
                        cost=pair.cost,
                    )
                )
            unmatched_gt.update(f"{image_id}/{n}" for n in match.unmatched_gt)
            unmatched_pred.update(f"{image_id}/{n}" for n in match.unmatched_pred)
        return MatchResult(
            node_pairs=tuple(node_pairs),
            edge_pairs=(),
            unmatched_gt=frozenset(unmatched_gt),
            unmatched_pred=frozenset(unmatched_pred),
        )

    def build_bundle(self) -> RunReportBundle:
        pairs: list[FactScorePair] = []
        for image_id in self.image_ids:
            if image_id in self.manifest.quarantined:
                continue
            pairs.extend(self.stage_score(image_id))
        report = build_report(
            pairs, self._combined_match(), self.config.model_id, self.config.family
        )
        report_dir = self.run_dir / "report"
        (report_dir / "report.json").write_text(
            canonical_json(report.as_dict()), encoding="utf-8"
        )
        rows = tornado_rows(pairs)
        with open(report_dir / "tornado.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["dimension", "generation", "understanding", "imbalance", "facts"]
            )
            writer.writeheader()
            writer.writerows(rows)
        return RunReportBundle(
            run_dir=self.run_dir,
            report=report,
            quarantined=dict(self.manifest.quarantined),
            pairs=pairs,
        )


def _match_from_dict(doc: dict) -> MatchResult:
    return MatchResult(
        node_pairs=tuple(
            NodePair(
                gt_id=p["gt_id"],
                pred_id=p["pred_id"],
                attr_sim=p["attr_sim"],
                edge_sim=p["edge_sim"],
                cost=p["cost"],
            )
            for p in doc["node_pairs"]
        ),
        edge_pairs=tuple(
            (tuple(p["gt"]), tuple(p["pred"])) for p in doc["edge_pairs"]
        ),
        unmatched_gt=frozenset(doc["unmatched_gt"]),
        unmatched_pred=frozenset(doc["unmatched_pred"]),
    )


def run_pipeline(
    config: PipelineConfig, backends: Optional[Backends] = None
) -> RunReportBundle:
    """Execute every stage for every image, then aggregate.

    Per-image failures are quarantined and reported rather than aborting the
    run; images already completed in the manifest ledger are not re-run.
    """
    runner = Runner(config, backends)

    def guarded(image_id: str) -> None:
        try:
            runner.run_image(image_id)
        except Exception as exc:  # noqa: BLE001 - quarantine boundary
            logger.exception("image %s failed", image_id)
            runner.manifest.quarantine(image_id, f"{type(exc).__name__}: {exc}")

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            list(pool.map(guarded, runner.image_ids))
    else:
        for image_id in runner.image_ids:
            guarded(image_id)
    return runner.build_bundle()
