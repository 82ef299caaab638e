"""Shared fixtures and hypothesis strategies."""

from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import strategies as st

from xtcbench.graph import Edge, Node, Predicate, SceneGraph, parse_scene_graph

FIXTURES = Path(__file__).parent / "fixtures"
GRAPHS_DIR = FIXTURES / "graphs"

LABELS = ("person", "car", "dog", "bench")
ATTR_KEYS = ("primary color", "material type", "pattern type")
ATTR_VALUES = ("red", "blue", "dark red", "wood", "metal", "striped")
PREDICATES = ("on", "beside", "holding", "sitting on", "looking at")


@pytest.fixture
def kitchen() -> SceneGraph:
    return parse_scene_graph((GRAPHS_DIR / "kitchen.json").read_text("utf-8"))


@pytest.fixture
def park() -> SceneGraph:
    return parse_scene_graph((GRAPHS_DIR / "park.json").read_text("utf-8"))


@pytest.fixture
def street() -> SceneGraph:
    return parse_scene_graph((GRAPHS_DIR / "street.json").read_text("utf-8"))


@pytest.fixture
def graphs_dir() -> Path:
    return GRAPHS_DIR


@st.composite
def scene_graphs(draw, max_nodes: int = 6, with_bboxes: bool = False):
    """Random small valid scene graphs."""
    width, height = 640, 480
    n = draw(st.integers(min_value=0, max_value=max_nodes))
    nodes = []
    for i in range(n):
        label = draw(st.sampled_from(LABELS))
        attrs = draw(
            st.dictionaries(
                st.sampled_from(ATTR_KEYS), st.sampled_from(ATTR_VALUES), max_size=3
            )
        )
        bbox = None
        if with_bboxes:
            x = draw(st.integers(0, width - 40))
            y = draw(st.integers(0, height - 40))
            w = draw(st.integers(10, min(200, width - x)))
            h = draw(st.integers(10, min(200, height - y)))
            bbox = (float(x), float(y), float(w), float(h))
        nodes.append(Node(id=f"n{i}", label=label, bbox=bbox, attributes=attrs))
    pairs = [
        (a.id, b.id) for a in nodes for b in nodes if a.id != b.id
    ]
    chosen = draw(
        st.lists(st.sampled_from(pairs), unique=True, max_size=min(6, len(pairs)))
        if pairs
        else st.just([])
    )
    edges = []
    for source, target in chosen:
        names = draw(
            st.lists(st.sampled_from(PREDICATES), unique=True, min_size=1, max_size=2)
        )
        score = draw(st.floats(0, 1, allow_nan=False))
        edges.append(
            Edge(
                source=source,
                target=target,
                predicates=tuple(Predicate(name, round(score, 3)) for name in names),
            )
        )
    return SceneGraph(
        image_id=draw(st.uuids()).hex[:8],
        width=width,
        height=height,
        nodes=tuple(nodes),
        edges=tuple(edges),
    )
