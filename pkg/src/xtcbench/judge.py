"""Verification prompt rendering, 0-5 score parsing, and a deterministic
token-overlap mock judge."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .graph import Fact
from .matching import MatchResult

JUDGE_SCALE = 5

VQA_JUDGE_TEMPLATE = (
    "Compare the ground-truth answer: {gt_answer} with the predicted answer: "
    "{pred_answer}. Assign a score from 0 to 5 based on semantic equivalence. "
    "0 means fully wrong, 5 means fully correct."
)

GENERATION_CHECK_TEMPLATES = {
    "object": (
        "The reference scene contains a {gt_value}. The generated scene "
        "contains a {pred_value}. Does the generated scene correctly include "
        "this object? Assign a score from 0 to 5. 0 means fully wrong, 5 "
        "means fully correct."
    ),
    "attribute": (
        "The reference states the {key} of the object is '{gt_value}'. The "
        "generated scene describes it as '{pred_value}'. Does the generated "
        "description correctly state this fact? Assign a score from 0 to 5. "
        "0 means fully wrong, 5 means fully correct."
    ),
    "relation": (
        "The reference states the relation between the two objects is "
        "'{gt_value}'. The generated scene describes it as '{pred_value}'. "
        "Does the generated description correctly state this relation? Assign "
        "a score from 0 to 5. 0 means fully wrong, 5 means fully correct."
    ),
}


class JudgeParseError(ValueError):
    """A judge response carries no standalone integer in 0-5."""


@dataclass(frozen=True)
class JudgeScore:
    fact_id: str
    raw: int
    rationale: Optional[str] = None

    def __post_init__(self):
        if self.raw not in range(JUDGE_SCALE + 1):
            raise ValueError(f"raw judge score must be in 0..5, got {self.raw}")

    @property
    def normalized(self) -> float:
        return self.raw / JUDGE_SCALE


def render_generation_check(
    fact: Fact, predicted_value: Optional[str], match: MatchResult
) -> Optional[str]:
    """Prompt comparing ground truth vs the generated counterpart.

    Returns None when the fact's subject (or either relation endpoint) is
    unmatched; such facts score 0 under the all-nodes view without a judge
    call.
    """
    mapping = match.node_mapping()
    if fact.subject not in mapping:
        return None
    if fact.kind == "relation" and (
        fact.object not in mapping
        or (fact.subject, fact.object) not in match.matched_edge_map()
    ):
        return None
    template = GENERATION_CHECK_TEMPLATES[fact.kind]
    return template.format(
        key=fact.key, gt_value=fact.value, pred_value=predicted_value or ""
    )


def render_vqa_judge(gt_answer: str, pred_answer: str) -> str:
    """Exact scoring prompt; empty predictions are scored 0 upstream."""
    if not gt_answer.strip() or not pred_answer.strip():
        raise ValueError("judge prompts require non-empty answers after trimming")
    return VQA_JUDGE_TEMPLATE.format(gt_answer=gt_answer, pred_answer=pred_answer)


_STANDALONE_INT = re.compile(r"(?<!\d)(\d+)(?!\d)")


def parse_judge_score(response: str) -> int:
    """First standalone integer in 0..5; anything else is a parse error."""
    match = _STANDALONE_INT.search(response)
    if match is None:
        raise JudgeParseError(f"no score found in judge response: {response!r}")
    value = int(match.group(1))
    if value > JUDGE_SCALE:
        raise JudgeParseError(f"judge score {value} outside 0..5")
    return value


_TOKEN = re.compile(r"[a-z0-9]+")


def mock_judge(gt: str, pred: str) -> int:
    """Deterministic stand-in: exact case-insensitive match scores 5,
    otherwise round(5 * token-set Jaccard), half-up."""
    a, b = gt.strip().lower(), pred.strip().lower()
    if not b:
        return 0
    if a == b:
        return JUDGE_SCALE
    tokens_a = set(_TOKEN.findall(a))
    tokens_b = set(_TOKEN.findall(b))
    union = tokens_a | tokens_b
    if not union:
        return 0
    jaccard = len(tokens_a & tokens_b) / len(union)
    return int(JUDGE_SCALE * jaccard + 0.5)
