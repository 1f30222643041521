"""Wire-protocol conformance: schemas, normalization, error bodies."""
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from jsonschema import validate
from PIL import Image

from gsrshim import ShimConfig, create_app

NUMBER_ARRAY = {"type": "array", "items": {"type": "number"}}

SCHEMAS = {
    "embed_text": {
        "type": "object",
        "required": ["dim", "embeddings"],
        "properties": {
            "dim": {"type": "integer", "minimum": 1},
            "embeddings": {"type": "array", "items": NUMBER_ARRAY, "minItems": 1},
        },
        "additionalProperties": False,
    },
    "embed_one": {
        "type": "object",
        "required": ["dim", "embedding"],
        "properties": {"dim": {"type": "integer", "minimum": 1}, "embedding": NUMBER_ARRAY},
        "additionalProperties": False,
    },
    "ground": {
        "type": "object",
        "required": ["detections"],
        "properties": {
            "detections": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["phrase", "box", "score"],
                    "properties": {
                        "phrase": {"type": "string", "minLength": 1},
                        "box": {
                            "type": "array",
                            "items": {"type": "number"},
                            "minItems": 4,
                            "maxItems": 4,
                        },
                        "score": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                    },
                    "additionalProperties": False,
                },
            }
        },
        "additionalProperties": False,
    },
    "explain": {
        "type": "object",
        "required": ["completions"],
        "properties": {
            "completions": {
                "type": "array",
                "items": {"type": "string", "minLength": 1},
                "minItems": 1,
            }
        },
        "additionalProperties": False,
    },
    "health": {
        "type": "object",
        "required": ["status", "dim"],
        "properties": {"status": {"const": "ok"}, "dim": {"type": "integer"}},
        "additionalProperties": False,
    },
    "error": {
        "type": "object",
        "required": ["error"],
        "properties": {"error": {"type": "string"}},
        "additionalProperties": False,
    },
}


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    blank = root / "blank.png"
    Image.new("RGB", (64, 48), color=(255, 255, 255)).save(blank)
    noisy = root / "noisy.png"
    rng = np.random.default_rng(1)
    Image.fromarray(rng.integers(0, 255, size=(48, 64, 3), dtype=np.uint8)).save(noisy)
    return {"blank": str(blank), "noisy": str(noisy), "root": root}


@pytest.fixture(scope="module")
def client(images):
    fixture = images["root"] / "detections.json"
    fixture.write_text(
        json.dumps(
            {
                images["noisy"]: [
                    {"phrase": "AGENT", "box": [0, 0, 10, 10], "score": 0.8},
                    {"phrase": "TOOL", "box": [10, 0, 20, 10], "score": 0.6},
                ]
            }
        )
    )
    config = ShimConfig(encoder="hash/64", grounder=f"fixture:{fixture}", llm="echo")
    return TestClient(create_app(config), raise_server_exceptions=False)


class TestGoldenRequests:
    def test_embed_text(self, client):
        response = client.post("/v1/embed_text", json={"texts": ["a photo of buying", "x"]})
        assert response.status_code == 200
        payload = response.json()
        validate(payload, SCHEMAS["embed_text"])
        assert len(payload["embeddings"]) == 2
        assert all(len(e) == payload["dim"] for e in payload["embeddings"])

    def test_embed_image(self, client, images):
        response = client.post("/v1/embed_image", json={"image_uri": images["blank"]})
        assert response.status_code == 200
        payload = response.json()
        validate(payload, SCHEMAS["embed_one"])
        assert len(payload["embedding"]) == payload["dim"]

    def test_embed_region(self, client, images):
        response = client.post(
            "/v1/embed_region",
            json={"image_uri": images["noisy"], "box": [0, 0, 16, 16]},
        )
        assert response.status_code == 200
        validate(response.json(), SCHEMAS["embed_one"])

    def test_ground(self, client, images):
        response = client.post(
            "/v1/ground",
            json={"image_uri": images["noisy"], "caption": "an AGENT with a TOOL"},
        )
        assert response.status_code == 200
        payload = response.json()
        validate(payload, SCHEMAS["ground"])
        assert {d["phrase"] for d in payload["detections"]} == {"AGENT", "TOOL"}

    def test_ground_blank_caption_agent_is_schema_valid(self, images):
        config = ShimConfig(encoder="hash/64", grounder="none", llm="echo")
        null_client = TestClient(create_app(config), raise_server_exceptions=False)
        response = null_client.post(
            "/v1/ground", json={"image_uri": images["blank"], "caption": "AGENT"}
        )
        assert response.status_code == 200
        payload = response.json()
        validate(payload, SCHEMAS["ground"])
        assert payload["detections"] == []

    def test_explain(self, client):
        response = client.post("/v1/explain", json={"prompt": "describe studying", "n": 3})
        assert response.status_code == 200
        payload = response.json()
        validate(payload, SCHEMAS["explain"])
        assert 1 <= len(payload["completions"]) <= 3

    def test_health(self, client):
        response = client.get("/v1/health")
        assert response.status_code == 200
        payload = response.json()
        validate(payload, SCHEMAS["health"])
        assert payload["dim"] == 64


class TestNormalizationAndDeterminism:
    def test_text_embeddings_unit_norm(self, client):
        payload = client.post(
            "/v1/embed_text", json={"texts": ["alpha", "beta", "gamma"]}
        ).json()
        for vec in payload["embeddings"]:
            assert abs(np.linalg.norm(vec) - 1.0) <= 1e-4

    def test_image_and_region_unit_norm(self, client, images):
        image = client.post("/v1/embed_image", json={"image_uri": images["noisy"]}).json()
        assert abs(np.linalg.norm(image["embedding"]) - 1.0) <= 1e-4
        region = client.post(
            "/v1/embed_region", json={"image_uri": images["noisy"], "box": [0, 0, 8, 8]}
        ).json()
        assert abs(np.linalg.norm(region["embedding"]) - 1.0) <= 1e-4

    def test_fixed_weights_are_deterministic(self, client, images):
        a = client.post("/v1/embed_text", json={"texts": ["same request"]}).json()
        b = client.post("/v1/embed_text", json={"texts": ["same request"]}).json()
        assert a == b
        c = client.post("/v1/embed_image", json={"image_uri": images["noisy"]}).json()
        d = client.post("/v1/embed_image", json={"image_uri": images["noisy"]}).json()
        assert c == d

    def test_region_crop_differs_from_whole_image(self, client, images):
        whole = client.post("/v1/embed_image", json={"image_uri": images["noisy"]}).json()
        region = client.post(
            "/v1/embed_region", json={"image_uri": images["noisy"], "box": [0, 0, 8, 8]}
        ).json()
        assert whole["embedding"] != region["embedding"]


class TestErrorBodies:
    def test_empty_texts_is_400(self, client):
        response = client.post("/v1/embed_text", json={"texts": []})
        assert response.status_code == 400
        validate(response.json(), SCHEMAS["error"])

    def test_empty_string_is_400(self, client):
        response = client.post("/v1/embed_text", json={"texts": [""]})
        assert response.status_code == 400
        validate(response.json(), SCHEMAS["error"])

    def test_unknown_image_is_404(self, client):
        response = client.post("/v1/embed_image", json={"image_uri": "/nope/missing.png"})
        assert response.status_code == 404
        validate(response.json(), SCHEMAS["error"])

    def test_degenerate_box_is_400(self, client, images):
        response = client.post(
            "/v1/embed_region", json={"image_uri": images["noisy"], "box": [5, 5, 5, 9]}
        )
        assert response.status_code == 400
        validate(response.json(), SCHEMAS["error"])

    def test_box_outside_image_is_400(self, client, images):
        response = client.post(
            "/v1/embed_region",
            json={"image_uri": images["noisy"], "box": [1000, 1000, 1010, 1010]},
        )
        assert response.status_code == 400
        validate(response.json(), SCHEMAS["error"])

    def test_bad_n_is_400(self, client):
        response = client.post("/v1/explain", json={"prompt": "p", "n": 0})
        assert response.status_code == 400
        validate(response.json(), SCHEMAS["error"])


class TestConfigValidation:
    def test_unsupported_encoder_rejected(self):
        with pytest.raises(ValueError, match="unsupported encoder"):
            ShimConfig(encoder="ResNet-50")

    def test_supported_clip_names_accepted(self):
        # construction of the config validates the name; loading weights is
        # a separate startup step that aborts when they are unavailable
        ShimConfig(encoder="ViT-B/32")

    def test_bad_port_rejected(self):
        with pytest.raises(ValueError, match="port"):
            ShimConfig(port=0)

    def test_unknown_grounder_rejected(self):
        with pytest.raises(ValueError, match="grounder"):
            ShimConfig(grounder="yolo:v8")
