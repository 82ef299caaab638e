"""Prompt linearization/refinement and fact-aligned question generation."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xtcbench.clients import MockChatClient
from xtcbench.graph import Edge, Node, Predicate, SceneGraph, enumerate_facts
from xtcbench.qagen import (
    PromptDraft,
    UndisambiguableError,
    generate_questions,
    linearize,
    minimal_disambiguating_attributes,
    refine_prompt,
)


def graph_of(nodes, edges=()):
    return SceneGraph(image_id="q", width=100, height=100, nodes=tuple(nodes), edges=tuple(edges))


class TestLinearize:
    def test_single_node(self):
        draft = linearize(graph_of([Node("n1", "car", attributes={"color": "red"})]))
        assert draft.text == "a red car."
        assert draft.stage == "linearized"

    def test_relation_clause(self, park):
        draft = linearize(park)
        assert "the person is sitting on the bench" in draft.text

    def test_empty_graph_warns(self, caplog):
        with caplog.at_level("WARNING"):
            draft = linearize(graph_of([]))
        assert draft.text == ""
        assert "empty" in caplog.text

    def test_covers_every_fact(self, kitchen):
        draft = linearize(kitchen)
        assert draft.source_fact_ids == frozenset(
            f.fact_id for f in enumerate_facts(kitchen)
        )


class TestRefinePrompt:
    def test_echo_client_passes_coverage(self, park):
        draft = refine_prompt(linearize(park), "object_refined", MockChatClient())
        assert draft.stage == "object_refined"
        assert not draft.flagged

    def test_label_drop_falls_back_and_flags(self, park):
        client = MockChatClient()
        client.replies = {}
        dropper = lambda prompt: "a person sitting outdoors."  # noqa: E731
        base = linearize(park)
        draft = refine_prompt(base, "object_refined", dropper)
        assert draft.flagged
        assert draft.text == base.text

    def test_invalid_stage_transition(self, park):
        base = linearize(park)
        with pytest.raises(ValueError, match="sentence_refined"):
            refine_prompt(base, "sentence_refined", MockChatClient())

    def test_two_stage_refinement_deterministic(self, park):
        def run():
            draft = linearize(park)
            draft = refine_prompt(draft, "object_refined", MockChatClient())
            return refine_prompt(draft, "sentence_refined", MockChatClient())

        assert run() == run()


def oracle_minimal(target, competitors):
    """Exhaustive-subset reference for minimal disambiguation."""
    from xtcbench.qagen import _distinguishes

    keys = sorted(target.attributes)

    def works(subset):
        return all(
            any(
                _distinguishes(target.attributes[k], c.attributes.get(k))
                for k in subset
            )
            for c in competitors
        )

    for size in range(1, len(keys) + 1):
        for subset in itertools.combinations(keys, size):
            if works(subset):
                return subset, False
    return tuple(keys), True


class TestDisambiguation:
    def test_single_distinguishing_key(self):
        target = Node("a", "car", attributes={"color": "dark red", "state": "parked"})
        competitor = Node("b", "car", attributes={"color": "blue", "state": "parked"})
        assert minimal_disambiguating_attributes(target, [competitor]) == (
            ("color",),
            False,
        )

    def test_no_competitors_needs_nothing(self):
        target = Node("a", "car", attributes={"color": "red"})
        assert minimal_disambiguating_attributes(target, []) == ((), False)

    def test_substring_ambiguity_requires_second_key(self):
        target = Node("a", "car", attributes={"color": "red", "size": "small"})
        competitor = Node("b", "car", attributes={"color": "dark red", "size": "large"})
        keys, ambiguous = minimal_disambiguating_attributes(target, [competitor])
        assert keys == ("size",)
        assert not ambiguous

    def test_all_keys_shared_is_ambiguous(self):
        target = Node("a", "car", attributes={"color": "red"})
        competitor = Node("b", "car", attributes={"color": "red"})
        keys, ambiguous = minimal_disambiguating_attributes(target, [competitor])
        assert ambiguous
        assert keys == ("color",)

    def test_attributeless_target_with_competitors_errors(self):
        target = Node("a", "car")
        with pytest.raises(UndisambiguableError, match="'a'"):
            minimal_disambiguating_attributes(target, [Node("b", "car")])

    @settings(max_examples=80, deadline=None)
    @given(st.data())
    def test_matches_exhaustive_oracle(self, data):
        values = ("red", "dark red", "blue", "green", "light blue", "wood")
        keys = data.draw(
            st.lists(
                st.sampled_from(["k1", "k2", "k3", "k4", "k5"]),
                unique=True,
                min_size=1,
                max_size=5,
            )
        )
        target = Node(
            "a",
            "car",
            attributes={k: data.draw(st.sampled_from(values)) for k in keys},
        )
        competitors = [
            Node(
                f"c{i}",
                "car",
                attributes={
                    k: data.draw(st.sampled_from(values))
                    for k in keys
                    if data.draw(st.booleans())
                },
            )
            for i in range(data.draw(st.integers(0, 3)))
        ]
        assert minimal_disambiguating_attributes(target, competitors) == (
            oracle_minimal(target, competitors) if competitors else ((), False)
        )


class TestQuestions:
    def test_counting(self, park):
        # 3 attribute queries + 2 retrieval + 1 relation
        items = generate_questions(park)
        assert len(items) == 6
        kinds = sorted(item.kind for item in items)
        assert kinds == [
            "attribute_query",
            "attribute_query",
            "attribute_query",
            "object_retrieval",
            "object_retrieval",
            "relation_query",
        ]

    def test_items_sorted_by_fact_id(self, kitchen):
        items = generate_questions(kitchen)
        assert [i.fact_id for i in items] == sorted(i.fact_id for i in items)

    def test_parallel_predicates_share_one_question(self):
        graph = graph_of(
            [Node("a", "person"), Node("b", "bench", attributes={"primary color": "green"})],
            [Edge("a", "b", (Predicate("next to"), Predicate("looking at")))],
        )
        relations = [i for i in generate_questions(graph) if i.kind == "relation_query"]
        assert len(relations) == 1
        assert relations[0].answer == "looking at and next to"

    def test_relation_template_follows_taxonomy(self, park):
        relation = [i for i in generate_questions(park) if i.kind == "relation_query"][0]
        assert relation.question == (
            "What is the posture of the person relative to the bench?"
        )
        assert relation.answer == "sitting on"

    def test_unique_object_referenced_without_qualifiers(self):
        graph = graph_of([Node("a", "car", attributes={"color": "red"})])
        attr = [i for i in generate_questions(graph) if i.kind == "attribute_query"][0]
        assert attr.question == "What is the color of the car?"
        assert attr.disambiguator == {}

    def test_competing_objects_get_qualified_references(self, street):
        items = generate_questions(street)
        dark_red = [
            i
            for i in items
            if i.kind == "attribute_query" and i.answer == "side"
        ][0]
        assert "dark red car" in dark_red.question
        assert not dark_red.ambiguous

    def test_object_retrieval_only_for_attribute_bearing_nodes(self, street):
        retrievals = [i for i in generate_questions(street) if i.kind == "object_retrieval"]
        # p1 has no attributes, so 3 of the 4 nodes qualify
        assert len(retrievals) == 3
        answers = sorted(i.answer for i in retrievals)
        assert answers == ["car", "car", "road"]

    def test_retrieval_question_joins_values(self):
        graph = graph_of(
            [Node("a", "car", attributes={"color": "red", "state": "parked"})]
        )
        retrieval = [i for i in generate_questions(graph) if i.kind == "object_retrieval"][0]
        assert retrieval.question == "What object is red and parked?"
        assert retrieval.answer == "car"

    def test_undisambiguable_subject_flagged(self):
        graph = graph_of(
            [Node("a", "car"), Node("b", "car", attributes={"color": "red"})],
            [Edge("a", "b", (Predicate("next to"),))],
        )
        relation = [i for i in generate_questions(graph) if i.kind == "relation_query"][0]
        assert relation.ambiguous
