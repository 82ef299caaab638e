"""Judge prompt rendering, score parsing, and the deterministic mock judge."""

import pytest

from xtcbench.graph import make_fact
from xtcbench.judge import (
    JudgeParseError,
    JudgeScore,
    mock_judge,
    parse_judge_score,
    render_generation_check,
    render_vqa_judge,
)
from xtcbench.matching import MatchResult, NodePair


def match_with(mapping, edge_pairs=()):
    return MatchResult(
        node_pairs=tuple(
            NodePair(gt_id=g, pred_id=p, attr_sim=1.0, edge_sim=1.0, cost=0.0)
            for g, p in mapping.items()
        ),
        edge_pairs=tuple(edge_pairs),
        unmatched_gt=frozenset(),
        unmatched_pred=frozenset(),
    )


class TestGenerationCheck:
    def test_matched_attribute_prompt_contains_both_values(self):
        fact = make_fact("attribute", "n1", "upper clothing type/color", "red shirt")
        prompt = render_generation_check(fact, "dark red top", match_with({"n1": "m1"}))
        assert "red shirt" in prompt
        assert "dark red top" in prompt

    def test_unmatched_subject_yields_none(self):
        fact = make_fact("attribute", "n1", "color", "red")
        assert render_generation_check(fact, "red", match_with({})) is None

    def test_relation_with_unmatched_endpoint_yields_none(self):
        fact = make_fact("relation", "n1", "on", "on", obj="n2")
        assert render_generation_check(fact, "on", match_with({"n1": "m1"})) is None

    def test_relation_without_matched_edge_yields_none(self):
        fact = make_fact("relation", "n1", "on", "on", obj="n2")
        match = match_with({"n1": "m1", "n2": "m2"})
        assert render_generation_check(fact, "on", match) is None

    def test_relation_with_matched_edge_renders(self):
        fact = make_fact("relation", "n1", "on", "on", obj="n2")
        match = match_with(
            {"n1": "m1", "n2": "m2"}, edge_pairs=((("n1", "n2"), ("m1", "m2")),)
        )
        prompt = render_generation_check(fact, "beside", match)
        assert "'on'" in prompt and "'beside'" in prompt


class TestVqaPrompt:
    def test_values_verbatim(self):
        prompt = render_vqa_judge("red", "red")
        assert prompt == (
            "Compare the ground-truth answer: red with the predicted answer: "
            "red. Assign a score from 0 to 5 based on semantic equivalence. "
            "0 means fully wrong, 5 means fully correct."
        )

    def test_semantic_pairs_are_delegated(self):
        prompt = render_vqa_judge("3 people", "three persons")
        assert "3 people" in prompt and "three persons" in prompt

    def test_empty_answers_rejected(self):
        with pytest.raises(ValueError):
            render_vqa_judge("red", "   ")


class TestParse:
    def test_score_prefix(self):
        assert parse_judge_score("Score: 4") == 4

    def test_leading_integer(self):
        assert parse_judge_score("5 - fully correct") == 5

    def test_no_integer_is_parse_error(self):
        with pytest.raises(JudgeParseError):
            parse_judge_score("great answer")

    def test_out_of_scale_rejected(self):
        with pytest.raises(JudgeParseError, match="7"):
            parse_judge_score("I rate this 7")

    def test_multi_digit_not_split(self):
        with pytest.raises(JudgeParseError):
            parse_judge_score("confidence 42")


class TestScores:
    def test_normalization(self):
        assert JudgeScore("f", 4).normalized == pytest.approx(0.8)

    def test_raw_range_enforced(self):
        with pytest.raises(ValueError):
            JudgeScore("f", 6)


class TestMockJudge:
    def test_case_insensitive_exact_match(self):
        assert mock_judge("red", "Red") == 5

    def test_jaccard_half_rounds_up(self):
        assert mock_judge("dark red", "red") == 3

    def test_disjoint_tokens(self):
        assert mock_judge("cat", "dog") == 0

    def test_empty_prediction(self):
        assert mock_judge("cat", "") == 0

    def test_deterministic(self):
        assert mock_judge("red shirt", "dark red top") == mock_judge(
            "red shirt", "dark red top"
        )
