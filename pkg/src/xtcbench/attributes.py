"""Meta-class attribute taxonomy, dual-view request building, response parsing.

Every object label maps to at most one meta-class, and each meta-class fixes
the attribute keys a vision-language model is allowed to fill in. Requests
pair a "spotlight" view (scene kept, non-target regions blurred, box overlay)
with a "detail crop" view (target isolated on neutral gray).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .graph import Node

logger = logging.getLogger(__name__)

NEUTRAL_GRAY = (128, 128, 128)
BLUR_RADIUS_FRACTION = 0.02

ATTRIBUTE_PROMPT_TEMPLATE = (
    "Given the Detail Crop image and the Semantic Spotlight image, identify "
    "the following attribute keys for the target object: {key_set}. Provide "
    "reasoning steps before outputting a JSON object."
)


class AttributeResponseError(ValueError):
    """The model response carries no usable JSON attribute object."""


@dataclass(frozen=True)
class MetaClass:
    name: str
    members: frozenset[str]
    keys: tuple[str, ...]


@dataclass(frozen=True)
class MetaClassSchema:
    meta_classes: tuple[MetaClass, ...]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for mc in self.meta_classes:
            if not mc.keys:
                raise ValueError(f"meta-class {mc.name!r} has an empty key list")
            for label in mc.members:
                if label in seen:
                    raise ValueError(
                        f"label {label!r} mapped to both {seen[label]!r} and {mc.name!r}"
                    )
                seen[label] = mc.name

    def meta_class_for(self, label: str) -> Optional[MetaClass]:
        for mc in self.meta_classes:
            if label in mc.members:
                return mc
        return None


def load_schema(path: Optional[str] = None) -> MetaClassSchema:
    """Load a schema file; defaults to the bundled 30-meta-class table."""
    if path is None:
        raw = resources.files("xtcbench.schemas").joinpath("metaclasses-v1.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    doc = json.loads(raw)
    return MetaClassSchema(
        meta_classes=tuple(
            MetaClass(
                name=entry["name"],
                members=frozenset(entry["members"]),
                keys=tuple(entry["keys"]),
            )
            for entry in doc["meta_classes"]
        )
    )


def keys_for(label: str, schema: MetaClassSchema) -> list[str]:
    """Attribute key space for a label; empty (and logged) when unmapped."""
    mc = schema.meta_class_for(label)
    if mc is None:
        logger.info("label %r is not mapped to any meta-class", label)
        return []
    return list(mc.keys)


@dataclass(frozen=True)
class ViewSpec:
    """Deterministic geometry for the two attribute-extraction views."""

    image_ref: str
    image_size: tuple[int, int]  # width, height
    target_bbox: tuple[float, float, float, float]
    crop_rect: tuple[int, int, int, int]  # x, y, w, h, clamped to the image


def _clamped_crop(bbox, width, height) -> tuple[int, int, int, int]:
    x, y, w, h = bbox
    x0 = int(max(0, np.floor(x)))
    y0 = int(max(0, np.floor(y)))
    x1 = int(min(width, np.ceil(x + w)))
    y1 = int(min(height, np.ceil(y + h)))
    return (x0, y0, max(1, x1 - x0), max(1, y1 - y0))


def build_attribute_request(
    node: Node, image_ref: str, image_size: tuple[int, int], schema: MetaClassSchema
) -> tuple[ViewSpec, str]:
    """Instantiate the chain-of-thought template for one node's key space."""
    if node.bbox is None:
        raise ValueError(f"node {node.id!r} has no bbox; cannot build views")
    keys = keys_for(node.label, schema)
    if not keys:
        raise ValueError(f"node {node.id!r} label {node.label!r} has an empty key set")
    width, height = image_size
    view = ViewSpec(
        image_ref=image_ref,
        image_size=image_size,
        target_bbox=node.bbox,
        crop_rect=_clamped_crop(node.bbox, width, height),
    )
    prompt = ATTRIBUTE_PROMPT_TEMPLATE.format(key_set=", ".join(keys))
    return view, prompt


def _box_blur(image: np.ndarray, radius: int) -> np.ndarray:
    from scipy.ndimage import uniform_filter

    size = 2 * radius + 1
    blurred = uniform_filter(image.astype(np.float32), size=(size, size, 1))
    return np.clip(blurred, 0, 255).astype(np.uint8)


def render_spotlight(image: np.ndarray, view: ViewSpec) -> np.ndarray:
    """Blur everything outside the target box; draw a 2px box overlay."""
    radius = max(1, int(round(BLUR_RADIUS_FRACTION * max(image.shape[:2]))))
    out = _box_blur(image, radius)
    x, y, w, h = view.crop_rect
    out[y : y + h, x : x + w] = image[y : y + h, x : x + w]
    x1, y1 = x + w - 1, y + h - 1
    out[y : y + 2, x : x + w] = (255, 0, 0)
    out[max(0, y1 - 1) : y1 + 1, x : x + w] = (255, 0, 0)
    out[y : y + h, x : x + 2] = (255, 0, 0)
    out[y : y + h, max(0, x1 - 1) : x1 + 1] = (255, 0, 0)
    return out


def render_detail_crop(image: np.ndarray, view: ViewSpec) -> np.ndarray:
    """Target region composited onto a neutral gray canvas of image size."""
    canvas = np.empty_like(image)
    canvas[:] = NEUTRAL_GRAY
    x, y, w, h = view.crop_rect
    canvas[y : y + h, x : x + w] = image[y : y + h, x : x + w]
    return canvas


_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def parse_attribute_response(text: str, expected_keys: Iterable[str]) -> dict[str, str]:
    """Pull the trailing JSON object out of a chain-of-thought response.

    Only expected keys survive; values are trimmed and lowercased so
    downstream token matching stays consistent.
    """
    match = _JSON_OBJECT.search(text)
    if match is None:
        raise AttributeResponseError("no JSON object found in response")
    try:
        parsed = json.loads(match.group(0))
    except json.JSONDecodeError as exc:
        raise AttributeResponseError(f"malformed JSON in response: {exc}") from exc
    if not isinstance(parsed, Mapping):
        raise AttributeResponseError("response JSON is not an object")
    expected = set(expected_keys)
    out: dict[str, str] = {}
    for key, value in parsed.items():
        if key not in expected:
            logger.warning("dropping unexpected attribute key %r", key)
            continue
        out[key] = str(value).strip().lower()
    return out
