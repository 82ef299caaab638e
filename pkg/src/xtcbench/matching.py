"""Two-stage optimal assignment between reference and predicted graphs.

Nodes are grouped by exact label and aligned with a minimum-cost assignment
over a cost mixing attribute similarity and incident-edge structural
similarity; edges are then matched wherever both endpoints were aligned and a
directed edge exists between the aligned images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import Edge, Node, SceneGraph

Embedder = Callable[[Sequence[str]], np.ndarray]


@dataclass(frozen=True)
class CostParams:
    alpha: float = 0.7  # attribute term weight; attributes dominate
    beta: float = 0.3
    rel_text_weight: float = 0.4
    neighbor_attr_weight: float = 0.6

    def __post_init__(self):
        for name in ("alpha", "beta", "rel_text_weight", "neighbor_attr_weight"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not math.isclose(self.alpha + self.beta, 1.0, abs_tol=1e-12):
            raise ValueError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")


@dataclass(frozen=True)
class NodePair:
    gt_id: str
    pred_id: str
    attr_sim: float
    edge_sim: float
    cost: float


@dataclass(frozen=True)
class MatchResult:
    node_pairs: tuple[NodePair, ...]
    edge_pairs: tuple[tuple[tuple[str, str], tuple[str, str]], ...]
    unmatched_gt: frozenset[str]
    unmatched_pred: frozenset[str]

    def total_cost(self) -> float:
        return sum(p.cost for p in self.node_pairs)

    def node_mapping(self) -> dict[str, str]:
        return {p.gt_id: p.pred_id for p in self.node_pairs}

    def matched_edge_map(self) -> dict[tuple[str, str], tuple[str, str]]:
        return dict(self.edge_pairs)

    def as_dict(self) -> dict:
        return {
            "node_pairs": [
                {
                    "gt_id": p.gt_id,
                    "pred_id": p.pred_id,
                    "attr_sim": p.attr_sim,
                    "edge_sim": p.edge_sim,
                    "cost": p.cost,
                }
                for p in self.node_pairs
            ],
            "edge_pairs": [
                {"gt": list(gt), "pred": list(pred)} for gt, pred in self.edge_pairs
            ],
            "unmatched_gt": sorted(self.unmatched_gt),
            "unmatched_pred": sorted(self.unmatched_pred),
        }


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment over a rectangular matrix.

    Returns min(rows, cols) (row, col) pairs of globally minimal total cost,
    computed with the shortest-augmenting-path formulation. Rows are processed
    in order, so ties resolve deterministically with low-index preference.
    """
    matrix = np.asarray(cost, dtype=float)
    if matrix.size == 0:
        return []
    if matrix.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if np.isnan(matrix).any():
        raise ValueError("cost matrix contains NaN")
    transposed = matrix.shape[0] > matrix.shape[1]
    if transposed:
        matrix = matrix.T
    n, m = matrix.shape

    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    assigned_row = [0] * (m + 1)  # column j -> row index (1-based), 0 = free
    way = [0] * (m + 1)

    for i in range(1, n + 1):
        assigned_row[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = assigned_row[j0]
            delta = INF
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = matrix[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[assigned_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if assigned_row[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            assigned_row[j0] = assigned_row[j1]
            j0 = j1

    pairs = []
    for j in range(1, m + 1):
        if assigned_row[j]:
            row, col = assigned_row[j] - 1, j - 1
            pairs.append((col, row) if transposed else (row, col))
    pairs.sort()
    return pairs


def _clamped_cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, float(np.dot(a, b)) / denom)))


def _attr_value_string(value: str) -> str:
    parts = sorted(part.strip() for part in value.split(","))
    return ", ".join(parts)


def attr_similarity(a: Node, b: Node, embedder: Embedder) -> float:
    """Mean per-key embedded value similarity over the union of key sets.

    A key present on only one side contributes 0; two empty attribute maps
    agree vacuously at 1.0.
    """
    keys = sorted(set(a.attributes) | set(b.attributes))
    if not keys:
        return 1.0
    shared = [k for k in keys if k in a.attributes and k in b.attributes]
    total = 0.0
    if shared:
        texts_a = [_attr_value_string(a.attributes[k]) for k in shared]
        texts_b = [_attr_value_string(b.attributes[k]) for k in shared]
        vectors = embedder(texts_a + texts_b)
        for idx in range(len(shared)):
            total += _clamped_cosine(vectors[idx], vectors[len(shared) + idx])
    return total / len(keys)


def relation_text(edge: Edge, graph: SceneGraph) -> str:
    """``[source_label] [relation] [target_label]``; parallel predicates are
    concatenated in lexicographic order."""
    nodes = graph.node_map()
    predicates = " and ".join(sorted(edge.predicate_names()))
    return f"{nodes[edge.source].label} {predicates} {nodes[edge.target].label}"


def edge_value_similarity(
    e_text: str,
    p_text: str,
    neighbor_attr_sim: float,
    anchor_attr_sim: float,
    embedder: Embedder,
    params: CostParams = CostParams(),
) -> float:
    """Blend of relation-text similarity and endpoint attribute agreement."""
    vectors = embedder([e_text, p_text])
    cos = _clamped_cosine(vectors[0], vectors[1])
    return (
        params.rel_text_weight * cos
        + params.neighbor_attr_weight * (neighbor_attr_sim + anchor_attr_sim) / 2.0
    )


def _neighbor(edge: Edge, anchor_id: str) -> str:
    return edge.target if edge.source == anchor_id else edge.source


def edge_structural_similarity(
    gt_node: Node,
    pred_node: Node,
    gt_graph: SceneGraph,
    pred_graph: SceneGraph,
    embedder: Embedder,
    params: CostParams = CostParams(),
    anchor_attr_sim: Optional[float] = None,
) -> float:
    """Sub-level assignment over the incident edges of the two nodes.

    Both nodes edgeless scores 1.0 (agreement by absence); exactly one
    edgeless scores 0.0.
    """
    gt_edges = gt_graph.incident_edges(gt_node.id)
    pred_edges = pred_graph.incident_edges(pred_node.id)
    if not gt_edges and not pred_edges:
        return 1.0
    if not gt_edges or not pred_edges:
        return 0.0
    if anchor_attr_sim is None:
        anchor_attr_sim = attr_similarity(gt_node, pred_node, embedder)

    gt_nodes = gt_graph.node_map()
    pred_nodes = pred_graph.node_map()
    sims = np.empty((len(gt_edges), len(pred_edges)))
    for i, e in enumerate(gt_edges):
        for j, p in enumerate(pred_edges):
            neighbor_sim = attr_similarity(
                gt_nodes[_neighbor(e, gt_node.id)],
                pred_nodes[_neighbor(p, pred_node.id)],
                embedder,
            )
            sims[i, j] = edge_value_similarity(
                relation_text(e, gt_graph),
                relation_text(p, pred_graph),
                neighbor_sim,
                anchor_attr_sim,
                embedder,
                params,
            )
    assignment = hungarian(1.0 - sims)
    return float(np.mean([sims[i, j] for i, j in assignment]))


def match_graphs(
    gt: SceneGraph,
    pred: SceneGraph,
    params: CostParams = CostParams(),
    embedder: Embedder = None,
) -> MatchResult:
    """Algorithm: per shared label group, assign nodes at minimal cost; no
    rejection threshold, leftovers stay unmatched; then match edges between
    aligned endpoint pairs."""
    if embedder is None:
        raise ValueError("an embedder is required")
    gt_by_label: dict[str, list[Node]] = {}
    pred_by_label: dict[str, list[Node]] = {}
    for node in gt.nodes:
        gt_by_label.setdefault(node.label, []).append(node)
    for node in pred.nodes:
        pred_by_label.setdefault(node.label, []).append(node)

    node_pairs: list[NodePair] = []
    for label in sorted(set(gt_by_label) & set(pred_by_label)):
        rows = sorted(gt_by_label[label], key=lambda n: n.id)
        cols = sorted(pred_by_label[label], key=lambda n: n.id)
        attr = np.empty((len(rows), len(cols)))
        edge = np.empty((len(rows), len(cols)))
        for i, g_node in enumerate(rows):
            for j, p_node in enumerate(cols):
                attr[i, j] = attr_similarity(g_node, p_node, embedder)
                edge[i, j] = edge_structural_similarity(
                    g_node, p_node, gt, pred, embedder, params,
                    anchor_attr_sim=attr[i, j],
                )
        cost = params.alpha * (1.0 - attr) + params.beta * (1.0 - edge)
        for i, j in hungarian(cost):
            node_pairs.append(
                NodePair(
                    gt_id=rows[i].id,
                    pred_id=cols[j].id,
                    attr_sim=float(attr[i, j]),
                    edge_sim=float(edge[i, j]),
                    cost=float(cost[i, j]),
                )
            )

    node_pairs.sort(key=lambda p: p.gt_id)
    mapping = {p.gt_id: p.pred_id for p in node_pairs}
    edge_pairs = []
    for e in sorted(gt.edges, key=lambda e: (e.source, e.target)):
        if e.source in mapping and e.target in mapping:
            image = pred.edge_between(mapping[e.source], mapping[e.target])
            if image is not None:
                edge_pairs.append(
                    ((e.source, e.target), (image.source, image.target))
                )

    return MatchResult(
        node_pairs=tuple(node_pairs),
        edge_pairs=tuple(edge_pairs),
        unmatched_gt=frozenset(n.id for n in gt.nodes if n.id not in mapping),
        unmatched_pred=frozenset(
            n.id for n in pred.nodes if n.id not in set(mapping.values())
        ),
    )
