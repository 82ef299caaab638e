"""Raw relation predictions -> high-precision reference graph.

Stage order is fixed as: confidence filtering, exclusive-predicate pruning,
VLM verification, overlap-based meta-node merging.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .graph import Edge, GraphInvariantError, Node, Predicate, SceneGraph, validate_graph

NO_RELATION = "NR"

# Predicates where a given object admits at most one subject.
DEFAULT_EXCLUSIVE_PREDICATES = frozenset(
    {"eating", "driving", "riding", "wearing", "kissing", "feeding"}
)

VERIFICATION_PROMPT = (
    "Verify the relationship between the object in the RED bounding box "
    "(Subject) and the BLUE bounding box (Object). Return JSON with key "
    "`answer` set to `Yes` or `No` only."
)


class VerificationError(ValueError):
    """An answer map does not cover every candidate or holds a bad value."""


@dataclass(frozen=True)
class RawRelationPrediction:
    """Per-pair predicate scores, including the no-relation class."""

    source: str
    target: str
    scores: Mapping[str, float]

    def __post_init__(self):
        if NO_RELATION not in self.scores:
            raise ValueError(
                f"prediction ({self.source!r}, {self.target!r}) lacks the {NO_RELATION!r} score"
            )
        for name, score in self.scores.items():
            if not 0.0 <= score <= 1.0:
                raise ValueError(
                    f"prediction ({self.source!r}, {self.target!r}) score for {name!r}"
                    f" is {score}, outside [0, 1]"
                )


@dataclass(frozen=True)
class RefineConfig:
    nr_threshold: float = 0.5
    predicate_threshold: float = 0.4
    exclusive_predicates: frozenset[str] = DEFAULT_EXCLUSIVE_PREDICATES
    merge_min_group: int = 3
    bbox_pad_fraction: float = 0.05

    def __post_init__(self):
        for name in ("nr_threshold", "predicate_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.merge_min_group < 2:
            raise ValueError(f"merge_min_group must be >= 2, got {self.merge_min_group}")


@dataclass(frozen=True)
class Candidate:
    source: str
    target: str
    predicate: str
    score: float


@dataclass(frozen=True)
class VerificationRequest:
    image: str
    subject_bbox: tuple[float, float, float, float]
    object_bbox: tuple[float, float, float, float]
    predicate: str
    prompt: str = VERIFICATION_PROMPT

    def as_dict(self) -> dict:
        return {
            "image": self.image,
            "subject_bbox": list(self.subject_bbox),
            "object_bbox": list(self.object_bbox),
            "predicate": self.predicate,
        }


def filter_relations(
    preds: Sequence[RawRelationPrediction], cfg: RefineConfig
) -> list[Candidate]:
    """Drop pairs the model deems unrelated, then low-confidence predicates.

    Both comparisons are closed: a pair is dropped at s_NR >= nr_threshold and
    a predicate survives at score >= predicate_threshold.
    """
    out: list[Candidate] = []
    for pred in preds:
        if pred.scores[NO_RELATION] >= cfg.nr_threshold:
            continue
        for name, score in pred.scores.items():
            if name == NO_RELATION:
                continue
            if score >= cfg.predicate_threshold:
                out.append(Candidate(pred.source, pred.target, name, score))
    out.sort(key=lambda c: (c.source, c.target, c.predicate))
    return out


def enforce_exclusive_predicates(
    candidates: Sequence[Candidate], cfg: RefineConfig
) -> list[Candidate]:
    """For each exclusive predicate and object, keep only the best subject.

    Ties go to the lexicographically smallest subject id.
    """
    best: dict[tuple[str, str], Candidate] = {}
    kept: list[Candidate] = []
    for cand in candidates:
        if cand.predicate not in cfg.exclusive_predicates:
            kept.append(cand)
            continue
        slot = (cand.predicate, cand.target)
        current = best.get(slot)
        if (
            current is None
            or cand.score > current.score
            or (cand.score == current.score and cand.source < current.source)
        ):
            best[slot] = cand
    kept.extend(best.values())
    kept.sort(key=lambda c: (c.source, c.target, c.predicate))
    return kept


def build_relation_verification_request(
    image_ref: str, candidate: Candidate, graph: SceneGraph
) -> VerificationRequest:
    """Appendix verification contract: subject box red, object box blue."""
    nodes = graph.node_map()
    subject = nodes[candidate.source]
    obj = nodes[candidate.target]
    if subject.bbox is None or obj.bbox is None:
        raise GraphInvariantError(
            f"verification needs bboxes on {candidate.source!r} and {candidate.target!r}"
        )
    return VerificationRequest(
        image=image_ref,
        subject_bbox=subject.bbox,
        object_bbox=obj.bbox,
        predicate=candidate.predicate,
    )


def apply_verification(
    candidates: Sequence[Candidate], answers: Mapping[Candidate, str]
) -> list[Candidate]:
    """Keep only candidates the verifier confirmed with a Yes."""
    kept = []
    for cand in candidates:
        if cand not in answers:
            raise VerificationError(
                f"no verification answer for ({cand.source}, {cand.predicate}, {cand.target})"
            )
        answer = answers[cand]
        if answer not in ("Yes", "No"):
            raise VerificationError(
                f"malformed answer {answer!r} for ({cand.source}, {cand.predicate}, {cand.target})"
            )
        if answer == "Yes":
            kept.append(cand)
    return list(kept)


def candidates_to_edges(candidates: Sequence[Candidate]) -> tuple[Edge, ...]:
    """Collapse surviving candidates into one edge record per ordered pair."""
    by_pair: dict[tuple[str, str], dict[str, float]] = {}
    for cand in candidates:
        scores = by_pair.setdefault((cand.source, cand.target), {})
        scores[cand.predicate] = max(scores.get(cand.predicate, 0.0), cand.score)
    return tuple(
        Edge(
            source=source,
            target=target,
            predicates=tuple(
                Predicate(name, scores[name]) for name in sorted(scores)
            ),
        )
        for (source, target), scores in sorted(by_pair.items())
    )


def _padded(bbox, pad):
    x, y, w, h = bbox
    return (x - pad, y - pad, w + 2 * pad, h + 2 * pad)


def _overlaps(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def _union_bbox(boxes, graph: SceneGraph):
    x0 = min(b[0] for b in boxes)
    y0 = min(b[1] for b in boxes)
    x1 = max(b[0] + b[2] for b in boxes)
    y1 = max(b[1] + b[3] for b in boxes)
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, float(graph.width)), min(y1, float(graph.height))
    return (x0, y0, x1 - x0, y1 - y0)


def merge_overlapping_instances(graph: SceneGraph, cfg: RefineConfig) -> SceneGraph:
    """Collapse clusters of >= merge_min_group overlapping same-label nodes.

    Grouping is single-linkage over padded-bbox overlap. The meta-node keeps
    the smallest member id, the union bbox, and only attribute pairs shared
    identically by every member. Intra-group edges are dropped; external edges
    are re-targeted with duplicate predicates deduplicated at max score.
    """
    pad = cfg.bbox_pad_fraction * max(graph.width, graph.height)

    by_label: dict[str, list[Node]] = {}
    for node in graph.nodes:
        by_label.setdefault(node.label, []).append(node)

    groups: list[list[Node]] = []
    for label in sorted(by_label):
        members = sorted(by_label[label], key=lambda n: n.id)
        # Union-find over padded-bbox overlap, restricted to nodes with boxes.
        parent = {n.id: n.id for n in members}

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        boxed = [n for n in members if n.bbox is not None]
        for i, a in enumerate(boxed):
            for b in boxed[i + 1 :]:
                if _overlaps(_padded(a.bbox, pad), _padded(b.bbox, pad)):
                    ra, rb = find(a.id), find(b.id)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
        clusters: dict[str, list[Node]] = {}
        for n in members:
            clusters.setdefault(find(n.id), []).append(n)
        groups.extend(
            cluster for cluster in clusters.values() if len(cluster) >= cfg.merge_min_group
        )

    if not groups:
        return graph

    remap: dict[str, str] = {}
    meta_nodes: dict[str, Node] = {}
    for cluster in groups:
        for node in cluster:
            if node.bbox is None:
                raise GraphInvariantError(
                    f"node {node.id!r} in a merge candidate group has no bbox"
                )
        meta_id = min(n.id for n in cluster)
        shared = dict(cluster[0].attributes)
        for node in cluster[1:]:
            shared = {
                k: v for k, v in shared.items() if node.attributes.get(k) == v
            }
        meta_nodes[meta_id] = Node(
            id=meta_id,
            label=cluster[0].label,
            bbox=_union_bbox([n.bbox for n in cluster], graph),
            attributes=shared,
            merged_count=len(cluster),
        )
        for node in cluster:
            remap[node.id] = meta_id

    nodes = tuple(
        meta_nodes[n.id] if n.id in meta_nodes else n
        for n in graph.nodes
        if n.id not in remap or n.id in meta_nodes
    )

    merged_scores: dict[tuple[str, str], dict[str, float]] = {}
    for edge in graph.edges:
        source = remap.get(edge.source, edge.source)
        target = remap.get(edge.target, edge.target)
        if source == target:
            continue  # intra-group relation
        scores = merged_scores.setdefault((source, target), {})
        for pred in edge.predicates:
            score = pred.score if pred.score is not None else 0.0
            scores[pred.name] = max(scores.get(pred.name, 0.0), score)
    edges = tuple(
        Edge(
            source=source,
            target=target,
            predicates=tuple(Predicate(name, scores[name]) for name in sorted(scores)),
        )
        for (source, target), scores in sorted(merged_scores.items())
    )

    merged = replace(graph, nodes=nodes, edges=edges)
    validate_graph(merged)
    return merged


def refine_graph(
    graph: SceneGraph,
    preds: Sequence[RawRelationPrediction],
    cfg: RefineConfig,
    verifier=None,
    image_ref: str | None = None,
) -> SceneGraph:
    """Full refinement chain: filter -> exclusivity -> verify -> merge.

    ``verifier`` maps a VerificationRequest to "Yes"/"No"; when None the
    verification stage is skipped.
    """
    candidates = filter_relations(preds, cfg)
    candidates = enforce_exclusive_predicates(candidates, cfg)
    if verifier is not None:
        answers = {
            cand: verifier(
                build_relation_verification_request(image_ref or graph.image_id, cand, graph)
            )
            for cand in candidates
        }
        candidates = apply_verification(candidates, answers)
    edged = replace(graph, edges=candidates_to_edges(candidates))
    validate_graph(edged)
    return merge_overlapping_instances(edged, cfg)
