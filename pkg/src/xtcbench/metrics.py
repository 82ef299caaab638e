"""Generation, understanding, and cross-task agreement metrics.

All metrics are plain means over per-fact normalized scores. The agreement
metrics reward symmetric generation/understanding behavior; the
accuracy-weighted variant additionally scales each fact's agreement by the
mean joint accuracy, so agreeing on wrong answers no longer scores well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .matching import MatchResult

CONSISTENCY_KINDS = ("attribute", "relation")

ATTRIBUTE_DIMENSIONS = (
    "Color & Material",
    "Environment",
    "State & Functionality",
    "Type & Parts",
    "Text, Symbols & Counts",
    "Pose, View & Placement",
)


def attribute_dimension(key: str) -> str:
    """Fold an attribute key into one of six semantic dimensions."""
    lowered = key.lower()
    if "color" in lowered or "material" in lowered:
        return "Color & Material"
    if "weather" in lowered or "wet" in lowered or "wave" in lowered or "surface" in lowered:
        return "Environment"
    if any(tag in lowered for tag in ("text", "count", "number", "brand", "symbol")):
        return "Text, Symbols & Counts"
    if any(tag in lowered for tag in ("state", "open", "on/off", "light", "screen", "door")):
        return "State & Functionality"
    if any(tag in lowered for tag in ("position", "viewpoint", "view", "mounted", "posture", "body")):
        return "Pose, View & Placement"
    return "Type & Parts"


@dataclass(frozen=True)
class FactScorePair:
    """Normalized generation/understanding scores for one atomic fact.

    ``u_norm`` is None for facts that yielded no understanding question
    (attribute-less nodes, ambiguity-flagged items); such facts contribute to
    generation metrics only.
    """

    fact_id: str
    kind: str  # object | attribute | relation
    g_norm: float
    u_norm: Optional[float] = None
    weight: float = 1.0
    matched: bool = False
    dimension: Optional[str] = None

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"weight must be >= 0, got {self.weight}")
        if not 0.0 <= self.g_norm <= 1.0:
            raise ValueError(f"g_norm {self.g_norm} outside [0, 1]")
        if self.u_norm is not None and not 0.0 <= self.u_norm <= 1.0:
            raise ValueError(f"u_norm {self.u_norm} outside [0, 1]")

    def as_dict(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "kind": self.kind,
            "g_norm": self.g_norm,
            "u_norm": self.u_norm,
            "weight": self.weight,
            "matched": self.matched,
            "dimension": self.dimension,
        }


def generation_score(pairs: Sequence[FactScorePair], matched_only: bool = False) -> float:
    selected = [p for p in pairs if p.matched] if matched_only else list(pairs)
    if not selected:
        raise ValueError("generation_score over an empty fact selection")
    return sum(p.g_norm for p in selected) / len(selected)


def understanding_score(pairs: Sequence[FactScorePair]) -> float:
    selected = [p for p in pairs if p.u_norm is not None]
    if not selected:
        raise ValueError("understanding_score over an empty fact selection")
    return sum(p.u_norm for p in selected) / len(selected)


def _scored(pairs: Iterable[FactScorePair]) -> list[FactScorePair]:
    return [p for p in pairs if p.u_norm is not None]


def ccta(pairs: Sequence[FactScorePair]) -> float:
    """Weighted mean of 1 - |g - u| over facts scored by both tasks."""
    selected = _scored(pairs)
    total_weight = sum(p.weight for p in selected)
    if total_weight <= 0:
        raise ValueError("ccta requires positive total weight")
    return (
        sum(p.weight * (1.0 - abs(p.g_norm - p.u_norm)) for p in selected)
        / total_weight
    )


def aw_ccta(pairs: Sequence[FactScorePair]) -> float:
    """Agreement scaled per fact by mean joint accuracy (g + u) / 2."""
    selected = _scored(pairs)
    total_weight = sum(p.weight for p in selected)
    if total_weight <= 0:
        raise ValueError("aw_ccta requires positive total weight")
    return (
        sum(
            p.weight
            * (1.0 - abs(p.g_norm - p.u_norm))
            * (p.g_norm + p.u_norm)
            / 2.0
            for p in selected
        )
        / total_weight
    )


def _mean_or_none(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


@dataclass(frozen=True)
class MetricsReport:
    model_id: str
    family: str
    g_overall: float
    g_matched: Optional[float]
    g_attr: Optional[float]
    g_rel: Optional[float]
    g_matched_attr: Optional[float]
    g_matched_rel: Optional[float]
    matched_node_fraction: float
    u_overall: Optional[float]
    u_object_retrieval: Optional[float]
    u_attr: Optional[float]
    u_rel: Optional[float]
    u_matched_attr: Optional[float]
    u_matched_rel: Optional[float]
    ccta_overall: Optional[float]
    ccta_attr: Optional[float]
    ccta_rel: Optional[float]
    aw_ccta_overall: Optional[float]
    aw_ccta_attr: Optional[float]
    aw_ccta_rel: Optional[float]
    denominators: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "model": self.model_id,
            "family": self.family,
            "generation": {
                "Overall Gen.": self.g_overall,
                "Matched Nodes": self.matched_node_fraction,
                "Attr.": self.g_attr,
                "Rel.": self.g_rel,
                "Matched Attr.": self.g_matched_attr,
                "Matched Rel.": self.g_matched_rel,
            },
            "understanding": {
                "Overall Und.": self.u_overall,
                "Obj. Retr.": self.u_object_retrieval,
                "Attr. Query": self.u_attr,
                "Rel. Query": self.u_rel,
                "Matched Attr.": self.u_matched_attr,
                "Matched Rel.": self.u_matched_rel,
            },
            "consistency": {
                "CCTA": {
                    "Overall": self.ccta_overall,
                    "Attributes": self.ccta_attr,
                    "Relations": self.ccta_rel,
                },
                "AW-CCTA": {
                    "Overall": self.aw_ccta_overall,
                    "Attributes": self.aw_ccta_attr,
                    "Relations": self.aw_ccta_rel,
                },
            },
            "denominators": self.denominators,
        }


def build_report(
    pairs: Sequence[FactScorePair],
    match: MatchResult,
    model_id: str,
    family: str = "",
) -> MetricsReport:
    """Fill every report field from one model run's fact score ledger."""
    fact_ids = [p.fact_id for p in pairs]
    if len(set(fact_ids)) != len(fact_ids):
        raise ValueError("duplicate fact_id in score pairs")

    gt_nodes = len(match.node_pairs) + len(match.unmatched_gt)
    matched_fraction = len(match.node_pairs) / gt_nodes if gt_nodes else 0.0

    by_kind = {kind: [p for p in pairs if p.kind == kind] for kind in
               ("object", "attribute", "relation")}
    attr, rel = by_kind["attribute"], by_kind["relation"]
    matched_pairs = [p for p in pairs if p.matched]

    def gen(selection):
        return _mean_or_none([p.g_norm for p in selection])

    def und(selection):
        return _mean_or_none([p.u_norm for p in selection if p.u_norm is not None])

    consistency = [p for p in pairs if p.kind in CONSISTENCY_KINDS and p.u_norm is not None]

    def agreement(metric, selection):
        return metric(selection) if any(p.weight > 0 for p in selection) else None

    return MetricsReport(
        model_id=model_id,
        family=family,
        g_overall=generation_score(pairs),
        g_matched=gen(matched_pairs),
        g_attr=gen(attr),
        g_rel=gen(rel),
        g_matched_attr=gen([p for p in attr if p.matched]),
        g_matched_rel=gen([p for p in rel if p.matched]),
        matched_node_fraction=matched_fraction,
        u_overall=und(pairs),
        u_object_retrieval=und(by_kind["object"]),
        u_attr=und(attr),
        u_rel=und(rel),
        u_matched_attr=und([p for p in attr if p.matched]),
        u_matched_rel=und([p for p in rel if p.matched]),
        ccta_overall=agreement(ccta, consistency),
        ccta_attr=agreement(ccta, [p for p in consistency if p.kind == "attribute"]),
        ccta_rel=agreement(ccta, [p for p in consistency if p.kind == "relation"]),
        aw_ccta_overall=agreement(aw_ccta, consistency),
        aw_ccta_attr=agreement(aw_ccta, [p for p in consistency if p.kind == "attribute"]),
        aw_ccta_rel=agreement(aw_ccta, [p for p in consistency if p.kind == "relation"]),
        denominators={
            "all_facts": len(pairs),
            "matched_facts": len(matched_pairs),
            "attribute_facts": len(attr),
            "relation_facts": len(rel),
            "understanding_facts": len([p for p in pairs if p.u_norm is not None]),
            "consistency_facts": len(consistency),
            "gt_nodes": gt_nodes,
            "matched_nodes": len(match.node_pairs),
        },
    )


def aggregate_by_family(reports: Sequence[MetricsReport]) -> dict[str, dict[str, Optional[float]]]:
    """Family mean table: Mean G, Mean U, G-U Gap, Mean CCTA, Mean AW-CCTA."""
    families: dict[str, list[MetricsReport]] = {}
    for report in reports:
        families.setdefault(report.family or "unspecified", []).append(report)
    table = {}
    for family in sorted(families):
        members = families[family]
        mean_g = _mean_or_none([r.g_overall for r in members])
        mean_u = _mean_or_none([r.u_overall for r in members if r.u_overall is not None])
        table[family] = {
            "Mean G": mean_g,
            "Mean U": mean_u,
            "G-U Gap": None if mean_u is None else mean_g - mean_u,
            "Mean CCTA": _mean_or_none(
                [r.ccta_overall for r in members if r.ccta_overall is not None]
            ),
            "Mean AW-CCTA": _mean_or_none(
                [r.aw_ccta_overall for r in members if r.aw_ccta_overall is not None]
            ),
        }
    return table


def tornado_rows(pairs: Sequence[FactScorePair]) -> list[dict]:
    """Per-dimension generation/understanding means plus imbalance, suitable
    for CSV export and tornado-style plots."""
    by_dim: dict[str, list[FactScorePair]] = {}
    for pair in pairs:
        if pair.dimension is None:
            continue
        by_dim.setdefault(pair.dimension, []).append(pair)
    rows = []
    for dim in sorted(by_dim):
        members = by_dim[dim]
        gen = _mean_or_none([p.g_norm for p in members])
        und = _mean_or_none([p.u_norm for p in members if p.u_norm is not None])
        rows.append(
            {
                "dimension": dim,
                "generation": gen,
                "understanding": und,
                "imbalance": None if (gen is None or und is None) else gen - und,
                "facts": len(members),
            }
        )
    return rows
