"""Scene-graph data model, canonical JSON interchange, and fact enumeration.

A scene graph is the shared semantic anchor for the whole pipeline: object
nodes carrying attributes and (optionally) pixel bounding boxes, plus directed
edges holding one or more predicates between an ordered node pair.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

SCHEMA_VERSION = "xtc-sg/1"


class SchemaError(ValueError):
    """A document does not conform to the scene-graph JSON schema."""


class GraphInvariantError(ValueError):
    """A structurally well-formed document violates a graph invariant."""


@dataclass(frozen=True)
class Predicate:
    name: str
    score: Optional[float] = None


@dataclass(frozen=True)
class Edge:
    """Directed edge; all parallel predicates between one ordered pair live here."""

    source: str
    target: str
    predicates: tuple[Predicate, ...]

    def predicate_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.predicates)


@dataclass(frozen=True)
class Node:
    id: str
    label: str
    bbox: Optional[tuple[float, float, float, float]] = None  # x, y, w, h
    attributes: Mapping[str, str] = field(default_factory=dict)
    merged_count: int = 1


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    width: int
    height: int
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    def node_by_id(self, node_id: str) -> Node:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def edge_between(self, source: str, target: str) -> Optional[Edge]:
        for edge in self.edges:
            if edge.source == source and edge.target == target:
                return edge
        return None

    def incident_edges(self, node_id: str) -> tuple[Edge, ...]:
        return tuple(
            e for e in self.edges if e.source == node_id or e.target == node_id
        )


@dataclass(frozen=True)
class Fact:
    """One atomic assertion derived from a graph; the unit of scoring."""

    fact_id: str
    kind: str  # "object" | "attribute" | "relation"
    subject: str
    key: str
    value: str
    object: Optional[str] = None


FACT_KINDS = ("object", "attribute", "relation")


def _fact_id(kind: str, subject: str, key: str, obj: Optional[str]) -> str:
    payload = json.dumps([kind, subject, key, obj], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def make_fact(
    kind: str, subject: str, key: str, value: str, obj: Optional[str] = None
) -> Fact:
    return Fact(
        fact_id=_fact_id(kind, subject, key, obj),
        kind=kind,
        subject=subject,
        key=key,
        value=value,
        object=obj,
    )


def validate_graph(graph: SceneGraph) -> None:
    """Raise GraphInvariantError if any structural invariant is violated."""
    if graph.width <= 0 or graph.height <= 0:
        raise GraphInvariantError(
            f"image dimensions must be positive, got {graph.width}x{graph.height}"
        )
    seen: set[str] = set()
    for node in graph.nodes:
        if node.id in seen:
            raise GraphInvariantError(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        if node.merged_count < 1:
            raise GraphInvariantError(
                f"node {node.id!r}: merged_count must be >= 1, got {node.merged_count}"
            )
        if node.merged_count > 1 and node.merged_count < 3:
            raise GraphInvariantError(
                f"node {node.id!r}: merged groups have size >= 3, got {node.merged_count}"
            )
        if node.bbox is not None:
            x, y, w, h = node.bbox
            if w < 0 or h < 0 or x < 0 or y < 0 or x + w > graph.width or y + h > graph.height:
                raise GraphInvariantError(
                    f"node {node.id!r}: bbox {node.bbox} outside image rectangle"
                )
    pairs: set[tuple[str, str]] = set()
    for edge in graph.edges:
        for endpoint in (edge.source, edge.target):
            if endpoint not in seen:
                raise GraphInvariantError(
                    f"edge ({edge.source!r} -> {edge.target!r}) references missing node {endpoint!r}"
                )
        if edge.source == edge.target:
            raise GraphInvariantError(f"self-loop edge on node {edge.source!r}")
        pair = (edge.source, edge.target)
        if pair in pairs:
            raise GraphInvariantError(
                f"more than one edge record for pair ({edge.source!r} -> {edge.target!r})"
            )
        pairs.add(pair)
        if not edge.predicates:
            raise GraphInvariantError(
                f"edge ({edge.source!r} -> {edge.target!r}) has no predicates"
            )
        names = edge.predicate_names()
        if len(set(names)) != len(names):
            raise GraphInvariantError(
                f"edge ({edge.source!r} -> {edge.target!r}) repeats a predicate"
            )
        for pred in edge.predicates:
            if pred.score is not None and not 0.0 <= pred.score <= 1.0:
                raise GraphInvariantError(
                    f"edge ({edge.source!r} -> {edge.target!r}) predicate {pred.name!r}"
                    f" score {pred.score} outside [0, 1]"
                )


def _require(doc: Mapping, key: str, typ, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = doc[key]
    if typ is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"{where}: field {key!r} must be a number")
        return float(value)
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        raise SchemaError(f"{where}: field {key!r} has wrong type")
    return value


def parse_scene_graph(document: str | Mapping) -> SceneGraph:
    """Parse and validate an interchange document (JSON text or mapping)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise SchemaError("top-level document must be a JSON object")
    schema = document.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {schema!r}")

    image_id = _require(document, "image_id", str, "graph")
    width = _require(document, "width", int, "graph")
    height = _require(document, "height", int, "graph")

    nodes = []
    for raw in _require(document, "nodes", list, "graph"):
        where = f"node {raw.get('id', '?')!r}"
        node_id = _require(raw, "id", str, where)
        label = _require(raw, "label", str, where)
        bbox = None
        if raw.get("bbox") is not None:
            parts = raw["bbox"]
            if not isinstance(parts, list) or len(parts) != 4:
                raise SchemaError(f"{where}: bbox must be a [x, y, w, h] list")
            bbox = tuple(float(v) for v in parts)
        attributes = raw.get("attributes", {})
        if not isinstance(attributes, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in attributes.items()
        ):
            raise SchemaError(f"{where}: attributes must map strings to strings")
        merged_count = raw.get("merged_count", 1)
        if not isinstance(merged_count, int) or isinstance(merged_count, bool):
            raise SchemaError(f"{where}: merged_count must be an integer")
        nodes.append(
            Node(
                id=node_id,
                label=label,
                bbox=bbox,
                attributes=dict(attributes),
                merged_count=merged_count,
            )
        )

    edges = []
    for raw in _require(document, "edges", list, "graph"):
        where = f"edge {raw.get('source', '?')!r}->{raw.get('target', '?')!r}"
        source = _require(raw, "source", str, where)
        target = _require(raw, "target", str, where)
        predicates = []
        for pred in _require(raw, "predicates", list, where):
            if not isinstance(pred, Mapping):
                raise SchemaError(f"{where}: predicates must be objects")
            name = _require(pred, "name", str, where)
            score = pred.get("score")
            if score is not None:
                score = float(score)
            predicates.append(Predicate(name=name, score=score))
        edges.append(Edge(source=source, target=target, predicates=tuple(predicates)))

    graph = SceneGraph(
        image_id=image_id,
        width=width,
        height=height,
        nodes=tuple(nodes),
        edges=tuple(edges),
    )
    validate_graph(graph)
    return graph


def graph_to_dict(graph: SceneGraph) -> dict:
    """Canonical dict form: lists sorted by id, attribute keys sorted."""
    return {
        "schema": SCHEMA_VERSION,
        "image_id": graph.image_id,
        "width": graph.width,
        "height": graph.height,
        "nodes": [
            {
                "id": n.id,
                "label": n.label,
                "bbox": None if n.bbox is None else [float(v) for v in n.bbox],
                "attributes": {k: n.attributes[k] for k in sorted(n.attributes)},
                "merged_count": n.merged_count,
            }
            for n in sorted(graph.nodes, key=lambda n: n.id)
        ],
        "edges": [
            {
                "source": e.source,
                "target": e.target,
                "predicates": [
                    {"name": p.name, "score": p.score}
                    for p in sorted(e.predicates, key=lambda p: p.name)
                ],
            }
            for e in sorted(graph.edges, key=lambda e: (e.source, e.target))
        ],
    }


def canonical_json(payload) -> str:
    """Deterministic JSON rendering used for every persisted artifact."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def serialize_scene_graph(graph: SceneGraph) -> str:
    return canonical_json(graph_to_dict(graph))


def relation_key(predicate_names: Iterable[str]) -> str:
    """Aggregated predicate key for a relation fact, e.g. ``"beside|on"``."""
    return "|".join(sorted(predicate_names))


def enumerate_facts(graph: SceneGraph) -> list[Fact]:
    """One object fact per node, one attribute fact per (node, key), one
    relation fact per edge with parallel predicates aggregated into the key."""
    facts: list[Fact] = []
    for node in sorted(graph.nodes, key=lambda n: n.id):
        facts.append(make_fact("object", node.id, "label", node.label))
        for key in sorted(node.attributes):
            facts.append(make_fact("attribute", node.id, key, node.attributes[key]))
    for edge in sorted(graph.edges, key=lambda e: (e.source, e.target)):
        key = relation_key(edge.predicate_names())
        facts.append(make_fact("relation", edge.source, key, key.replace("|", " and "), edge.target))
    return facts


@dataclass(frozen=True)
class StatsRow:
    """Dataset-level statistics, one row per graph collection."""

    total_images: int
    total_facts: int
    avg_objects_per_image: float
    avg_relations_per_image: float
    avg_attributes_per_image: float
    pct_object_retrieval: float
    pct_attribute_query: float
    pct_relation_query: float

    def as_table_row(self) -> dict[str, float]:
        return {
            "Total Images": self.total_images,
            "Total Facts (|F|)": self.total_facts,
            "Avg. Obj/Img": self.avg_objects_per_image,
            "Avg. Rel/Img": self.avg_relations_per_image,
            "Avg. Attr/Img": self.avg_attributes_per_image,
            "% Obj. Retr.": self.pct_object_retrieval,
            "% Attr. Query": self.pct_attribute_query,
            "% Rel. Query": self.pct_relation_query,
        }


def dataset_stats(graphs: Sequence[SceneGraph]) -> StatsRow:
    """Aggregate statistics over a graph collection.

    The query-kind split counts derivable questions: object retrieval for
    attribute-bearing nodes, one attribute query per attribute, one relation
    query per edge (parallel predicates share a question).
    """
    if not graphs:
        raise ValueError("dataset_stats requires a non-empty graph list")
    n = len(graphs)
    total_objects = sum(len(g.nodes) for g in graphs)
    total_predicates = sum(len(e.predicates) for g in graphs for e in g.edges)
    total_attributes = sum(len(node.attributes) for g in graphs for node in g.nodes)
    total_facts = sum(len(enumerate_facts(g)) for g in graphs)

    retrieval = sum(
        1 for g in graphs for node in g.nodes if node.attributes
    )
    attr_queries = total_attributes
    rel_queries = sum(len(g.edges) for g in graphs)
    total_queries = retrieval + attr_queries + rel_queries

    def pct(count: int) -> float:
        return 100.0 * count / total_queries if total_queries else 0.0

    return StatsRow(
        total_images=n,
        total_facts=total_facts,
        avg_objects_per_image=total_objects / n,
        avg_relations_per_image=total_predicates / n,
        avg_attributes_per_image=total_attributes / n,
        pct_object_retrieval=pct(retrieval),
        pct_attribute_query=pct(attr_queries),
        pct_relation_query=pct(rel_queries),
    )
