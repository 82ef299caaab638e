"""Meta-class schema, dual-view request building, and response parsing."""

import numpy as np
import pytest

from xtcbench.attributes import (
    ATTRIBUTE_PROMPT_TEMPLATE,
    NEUTRAL_GRAY,
    AttributeResponseError,
    MetaClass,
    MetaClassSchema,
    build_attribute_request,
    keys_for,
    load_schema,
    parse_attribute_response,
    render_detail_crop,
    render_spotlight,
)
from xtcbench.graph import Node

SCHEMA = load_schema()


class TestSchema:
    def test_bundled_schema_has_thirty_meta_classes(self):
        assert len(SCHEMA.meta_classes) == 30

    def test_cell_phone_keys(self):
        assert keys_for("cell phone", SCHEMA) == [
            "primary color",
            "brand/text visible",
            "screen on/off",
        ]

    def test_refrigerator_includes_door_state(self):
        assert "door open/closed" in keys_for("refrigerator", SCHEMA)

    def test_person_keys(self):
        assert keys_for("person", SCHEMA) == [
            "upper clothing type/color",
            "lower clothing type/color",
            "held object type",
            "headwear/eyewear",
        ]

    def test_unknown_label_gives_empty_keys(self):
        assert keys_for("unicorn", SCHEMA) == []

    def test_duplicate_label_mapping_rejected(self):
        with pytest.raises(ValueError, match="cat"):
            MetaClassSchema(
                meta_classes=(
                    MetaClass("a", frozenset({"cat"}), ("primary color",)),
                    MetaClass("b", frozenset({"cat"}), ("pattern type",)),
                )
            )

    def test_empty_key_list_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            MetaClassSchema(meta_classes=(MetaClass("a", frozenset({"cat"}), ()),))


class TestRequests:
    def test_person_prompt_lists_keys_in_schema_order(self):
        node = Node("n1", "person", bbox=(10.0, 10.0, 50.0, 80.0))
        _, prompt = build_attribute_request(node, "img", (200, 200), SCHEMA)
        assert prompt == ATTRIBUTE_PROMPT_TEMPLATE.format(
            key_set=(
                "upper clothing type/color, lower clothing type/color, "
                "held object type, headwear/eyewear"
            )
        )

    def test_crop_clamped_to_image_bounds(self):
        node = Node("n1", "car", bbox=(180.0, 150.0, 40.0, 60.0))
        view, _ = build_attribute_request(node, "img", (200, 180), SCHEMA)
        x, y, w, h = view.crop_rect
        assert x + w <= 200 and y + h <= 180

    def test_requests_are_deterministic(self):
        node = Node("n1", "car", bbox=(10.0, 10.0, 50.0, 40.0))
        assert build_attribute_request(node, "img", (200, 180), SCHEMA) == (
            build_attribute_request(node, "img", (200, 180), SCHEMA)
        )

    def test_missing_bbox_rejected(self):
        with pytest.raises(ValueError, match="bbox"):
            build_attribute_request(Node("n1", "car"), "img", (200, 180), SCHEMA)

    def test_unmapped_label_rejected(self):
        node = Node("n1", "unicorn", bbox=(10.0, 10.0, 50.0, 40.0))
        with pytest.raises(ValueError, match="unicorn"):
            build_attribute_request(node, "img", (200, 180), SCHEMA)


class TestViews:
    def _image_and_view(self):
        rng = np.random.default_rng(7)
        image = rng.integers(0, 256, size=(120, 160, 3), dtype=np.uint8)
        node = Node("n1", "car", bbox=(40.0, 30.0, 50.0, 40.0))
        view, _ = build_attribute_request(node, "img", (160, 120), SCHEMA)
        return image, view

    def test_detail_crop_isolates_target_on_gray(self):
        image, view = self._image_and_view()
        out = render_detail_crop(image, view)
        x, y, w, h = view.crop_rect
        assert (out[y : y + h, x : x + w] == image[y : y + h, x : x + w]).all()
        assert (out[0, 0] == NEUTRAL_GRAY).all()
        assert (out[-1, -1] == NEUTRAL_GRAY).all()

    def test_spotlight_keeps_target_blurs_rest(self):
        image, view = self._image_and_view()
        out = render_spotlight(image, view)
        x, y, w, h = view.crop_rect
        inner = (slice(y + 2, y + h - 2), slice(x + 2, x + w - 2))
        assert (out[inner] == image[inner]).all()
        assert not (out[0:10, 0:10] == image[0:10, 0:10]).all()
        # red overlay along the box border
        assert (out[y, x : x + w] == (255, 0, 0)).all()


class TestResponseParsing:
    def test_reasoning_then_json(self):
        text = 'The car looks shiny. {"primary color": "Red"}'
        assert parse_attribute_response(text, ["primary color"]) == {
            "primary color": "red"
        }

    def test_unexpected_key_dropped(self, caplog):
        text = '{"primary color": "red", "mood": "happy"}'
        with caplog.at_level("WARNING"):
            out = parse_attribute_response(text, ["primary color"])
        assert out == {"primary color": "red"}
        assert "mood" in caplog.text

    def test_no_json_is_error(self):
        with pytest.raises(AttributeResponseError):
            parse_attribute_response("the object is red", ["primary color"])

    def test_malformed_json_is_error(self):
        with pytest.raises(AttributeResponseError):
            parse_attribute_response('{"primary color": }', ["primary color"])

    def test_values_trimmed_and_lowercased(self):
        text = '{"primary color": "  Dark Red  "}'
        assert parse_attribute_response(text, ["primary color"]) == {
            "primary color": "dark red"
        }
