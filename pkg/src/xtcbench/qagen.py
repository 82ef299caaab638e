"""Generation prompt and fact-aligned question derivation from a scene graph.

The prompt starts as a deterministic linearization of every node, attribute,
and relation, optionally followed by two chat-based refinement passes. Every
attribute and relation fact yields exactly one question; object retrieval
questions are emitted for attribute-bearing nodes.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .graph import Fact, Node, SceneGraph, enumerate_facts, make_fact, relation_key

logger = logging.getLogger(__name__)

STAGES = ("linearized", "object_refined", "sentence_refined")

OBJECT_REFINE_INSTRUCTION = (
    "Rewrite each object clause below as a concise natural caption. Keep every "
    "object, every attribute, and every relation; do not add information.\n\n{text}"
)
SENTENCE_REFINE_INSTRUCTION = (
    "Weave the grounded descriptions below into one cohesive, fluent passage. "
    "Keep every object, every attribute, and every relation; do not add "
    "information.\n\n{text}"
)

# Four-part predicate taxonomy used to pick relation question phrasing.
PREDICATE_TAXONOMY: dict[str, str] = {}
for _cat, _preds in {
    "spatial": (
        "above", "in", "on", "next to", "under", "behind", "over",
        "in front of", "beside", "attached to", "hanging from", "on back of",
        "painted on", "enclosing",
    ),
    "posture": ("standing on", "sitting on", "lying on", "leaning against", "leaning on"),
    "locomotion": (
        "walking on", "running on", "riding", "flying over", "moving towards",
        "driving", "driving on", "parked on", "crossing", "jumping over",
        "jumping from", "climbing", "entering", "exiting", "falling off",
        "going down",
    ),
    "social": (
        "looking at", "holding", "talking to", "playing with", "following",
        "carrying", "wearing", "eating", "drinking", "feeding", "biting",
        "catching", "touching", "pushing", "pulling", "kissing", "guiding",
        "chasing", "playing", "throwing", "kicking", "swinging", "cooking",
        "cleaning", "slicing", "picking", "opening", "about to hit",
    ),
}.items():
    for _p in _preds:
        PREDICATE_TAXONOMY[_p] = _cat

RELATION_TEMPLATES = {
    "spatial": "What is the spatial position of {subject} relative to {object}?",
    "posture": "What is the posture of {subject} relative to {object}?",
    "locomotion": "How is {subject} moving relative to {object}?",
    "social": "How is {subject} interacting with {object}?",
    "mixed": "What is the relationship between {subject} and {object}?",
}


class UndisambiguableError(ValueError):
    """The target has no attributes to tell it apart from competitors."""


@dataclass(frozen=True)
class PromptDraft:
    stage: str
    text: str
    source_fact_ids: frozenset[str]
    node_labels: tuple[str, ...]
    flagged: bool = False


@dataclass(frozen=True)
class QAItem:
    fact_id: str
    kind: str  # attribute_query | object_retrieval | relation_query
    question: str
    answer: str
    disambiguator: Mapping[str, str] = field(default_factory=dict)
    ambiguous: bool = False

    def as_dict(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "kind": self.kind,
            "question": self.question,
            "answer": self.answer,
            "disambiguator": {k: self.disambiguator[k] for k in sorted(self.disambiguator)},
            "ambiguous": self.ambiguous,
        }


def _node_clause(node: Node) -> str:
    attrs = " ".join(node.attributes[k] for k in sorted(node.attributes))
    head = f"{attrs} {node.label}".strip()
    if node.merged_count > 1:
        return f"a group of {node.merged_count} {head}"
    return f"a {head}"


def linearize(graph: SceneGraph) -> PromptDraft:
    """Template linearization: one clause per node, one per relation."""
    facts = enumerate_facts(graph)
    clauses = [_node_clause(n) for n in sorted(graph.nodes, key=lambda n: n.id)]
    nodes = graph.node_map()
    for edge in sorted(graph.edges, key=lambda e: (e.source, e.target)):
        preds = " and ".join(sorted(edge.predicate_names()))
        clauses.append(
            f"the {nodes[edge.source].label} is {preds} the {nodes[edge.target].label}"
        )
    if not clauses:
        logger.warning("linearizing an empty graph for image %r", graph.image_id)
        text = ""
    else:
        text = ". ".join(clauses) + "."
    return PromptDraft(
        stage="linearized",
        text=text,
        source_fact_ids=frozenset(f.fact_id for f in facts),
        node_labels=tuple(sorted({n.label for n in graph.nodes})),
    )


def _call_chat(client, prompt: str) -> str:
    if hasattr(client, "chat"):
        return client.chat(prompt)
    return client(prompt)


def refine_prompt(draft: PromptDraft, stage: str, chat_client) -> PromptDraft:
    """One chat-based refinement pass with a label-coverage safety net."""
    transitions = {"object_refined": "linearized", "sentence_refined": "object_refined"}
    if stage not in transitions:
        raise ValueError(f"unknown refinement stage {stage!r}")
    if draft.stage != transitions[stage]:
        raise ValueError(f"cannot refine {draft.stage!r} draft into {stage!r}")
    instruction = (
        OBJECT_REFINE_INSTRUCTION if stage == "object_refined" else SENTENCE_REFINE_INSTRUCTION
    )
    refined = _call_chat(chat_client, instruction.format(text=draft.text))
    lowered = refined.lower()
    if all(label.lower() in lowered for label in draft.node_labels):
        return PromptDraft(
            stage=stage,
            text=refined,
            source_fact_ids=draft.source_fact_ids,
            node_labels=draft.node_labels,
            flagged=draft.flagged,
        )
    logger.warning("refinement dropped a node label; falling back to input draft")
    return PromptDraft(
        stage=stage,
        text=draft.text,
        source_fact_ids=draft.source_fact_ids,
        node_labels=draft.node_labels,
        flagged=True,
    )


_TOKEN = re.compile(r"[a-z0-9]+")


def _tokens(value: str) -> frozenset[str]:
    return frozenset(_TOKEN.findall(value.lower()))


def _distinguishes(target_value: str, competitor_value: Optional[str]) -> bool:
    if competitor_value is None:
        return True
    a, b = target_value.lower().strip(), competitor_value.lower().strip()
    if _tokens(a) & _tokens(b):
        return False
    if a and b and (a in b or b in a):
        return False
    return True


def minimal_disambiguating_attributes(
    target: Node, competitors: Sequence[Node]
) -> tuple[tuple[str, ...], bool]:
    """Smallest attribute-key subset that tells the target apart.

    Iterative deepening over subset size; within a size, the lexicographically
    first subset wins. Returns ``(keys, ambiguous)``; ambiguous means no subset
    worked and all keys are returned as a best effort.
    """
    if not competitors:
        return (), False
    keys = sorted(target.attributes)
    if not keys:
        raise UndisambiguableError(
            f"node {target.id!r} has no attributes but competes with "
            f"{len(competitors)} same-label node(s)"
        )

    def separated(subset: tuple[str, ...], competitor: Node) -> bool:
        return any(
            _distinguishes(target.attributes[k], competitor.attributes.get(k))
            for k in subset
        )

    for size in range(1, len(keys) + 1):
        for subset in itertools.combinations(keys, size):
            if all(separated(subset, c) for c in competitors):
                return subset, False
    return tuple(keys), True


def _reference_phrase(node: Node, disambiguator_keys: Sequence[str]) -> str:
    qualifiers = " ".join(node.attributes[k] for k in sorted(disambiguator_keys))
    head = f"{qualifiers} {node.label}".strip()
    return f"the {head}"


def _relation_question(subject_ref: str, object_ref: str, predicates: Sequence[str]) -> str:
    categories = {PREDICATE_TAXONOMY.get(p, "mixed") for p in predicates}
    category = categories.pop() if len(categories) == 1 else "mixed"
    return RELATION_TEMPLATES[category].format(subject=subject_ref, object=object_ref)


def generate_questions(graph: SceneGraph) -> list[QAItem]:
    """One question per attribute/relation fact plus object retrieval items."""
    items: list[QAItem] = []
    nodes = sorted(graph.nodes, key=lambda n: n.id)

    refs: dict[str, tuple[str, dict[str, str], bool]] = {}
    for node in nodes:
        competitors = [n for n in nodes if n.label == node.label and n.id != node.id]
        try:
            keys, ambiguous = minimal_disambiguating_attributes(node, competitors)
        except UndisambiguableError:
            keys, ambiguous = (), True
        refs[node.id] = (
            _reference_phrase(node, keys),
            {k: node.attributes[k] for k in keys},
            ambiguous,
        )

    for node in nodes:
        ref, disamb, ambiguous = refs[node.id]
        for key in sorted(node.attributes):
            fact = make_fact("attribute", node.id, key, node.attributes[key])
            items.append(
                QAItem(
                    fact_id=fact.fact_id,
                    kind="attribute_query",
                    question=f"What is the {key} of {ref}?",
                    answer=node.attributes[key],
                    disambiguator=disamb,
                    ambiguous=ambiguous,
                )
            )
        if node.attributes:
            fact = make_fact("object", node.id, "label", node.label)
            description = " and ".join(
                node.attributes[k] for k in sorted(node.attributes)
            )
            items.append(
                QAItem(
                    fact_id=fact.fact_id,
                    kind="object_retrieval",
                    question=f"What object is {description}?",
                    answer=node.label,
                    disambiguator=dict(node.attributes),
                    ambiguous=False,
                )
            )

    for edge in sorted(graph.edges, key=lambda e: (e.source, e.target)):
        preds = sorted(edge.predicate_names())
        key = relation_key(preds)
        fact = make_fact("relation", edge.source, key, key.replace("|", " and "), edge.target)
        subject_ref, subject_disamb, subject_amb = refs[edge.source]
        object_ref, _, object_amb = refs[edge.target]
        items.append(
            QAItem(
                fact_id=fact.fact_id,
                kind="relation_query",
                question=_relation_question(subject_ref, object_ref, preds),
                answer=" and ".join(preds),
                disambiguator=subject_disamb,
                ambiguous=subject_amb or object_amb,
            )
        )

    items.sort(key=lambda item: item.fact_id)
    return items
