"""Wire-level access to external models, plus deterministic mock backends.

Real backends speak chat-completions-style JSON over HTTP. All pure requests
(embeddings, judge calls, deterministic chat) are cached content-addressed so
warm reruns never hit the network and never change results.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .graph import SceneGraph, canonical_json, parse_scene_graph, serialize_scene_graph

logger = logging.getLogger(__name__)

MOCK_EMBED_DIM = 384


class TransportError(RuntimeError):
    """A request failed after exhausting its retries."""


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    model: str
    auth_env: str = "XTC_JUDGE_TOKEN"
    timeout: float = 60.0
    max_retries: int = 2
    max_in_flight: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")

    def auth_token(self) -> Optional[str]:
        return os.environ.get(self.auth_env)


def request_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed response store: cache/<sha256-prefix>/<sha256>.json.

    Safe for concurrent readers; writes go through a temp file + atomic rename.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, payload) -> Optional[str]:
        path = self._path(request_hash(payload))
        if not path.exists():
            return None
        import json

        entry = json.loads(path.read_text("utf-8"))
        return entry["response"]

    def put(self, payload, response: str) -> None:
        digest = request_hash(payload)
        path = self._path(digest)
        entry = canonical_json(
            {"request_hash": digest, "response": response, "timestamp": time.time()}
        )
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(entry)
            os.replace(tmp, path)


def _retrying_post(config: ClientConfig, payload: dict) -> dict:
    import requests

    headers = {"Content-Type": "application/json"}
    token = config.auth_token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        try:
            response = requests.post(
                config.endpoint, json=payload, headers=headers, timeout=config.timeout
            )
            if response.status_code >= 500:
                raise TransportError(f"server error {response.status_code}")
            response.raise_for_status()
            return response.json()
        except Exception as exc:  # noqa: BLE001 - transport layer boundary
            last_error = exc
            if attempt < config.max_retries:
                logger.warning("request failed (%s); retry %d", exc, attempt + 1)
    raise TransportError(f"request failed after {config.max_retries + 1} attempts: {last_error}")


class EmbeddingClient:
    """Batched text embedding with per-text caching and L2 normalization."""

    def __init__(self, config: ClientConfig, cache: Optional[ResponseCache] = None):
        self.config = config
        self.cache = cache
        self._limit = threading.Semaphore(config.max_in_flight)

    def __call__(self, texts: Sequence[str]) -> np.ndarray:
        return self.embed(texts)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("embed requires a non-empty text list")
        vectors: list[Optional[np.ndarray]] = [None] * len(texts)
        missing: list[int] = []
        for idx, text in enumerate(texts):
            cached = self._cached(text)
            if cached is not None:
                vectors[idx] = cached
            else:
                missing.append(idx)
        if missing:
            payload = {
                "model": self.config.model,
                "input": [texts[i] for i in missing],
            }
            with self._limit:
                body = _retrying_post(self.config, payload)
            rows = [np.asarray(item["embedding"], dtype=float) for item in body["data"]]
            dims = {row.shape[0] for row in rows}
            if len(dims) != 1:
                raise TransportError(f"mixed embedding dimensions in one batch: {dims}")
            for idx, row in zip(missing, rows):
                unit = row / (np.linalg.norm(row) or 1.0)
                vectors[idx] = unit
                self._store(texts[idx], unit)
        return np.stack(vectors)

    def _cached(self, text: str) -> Optional[np.ndarray]:
        if self.cache is None:
            return None
        raw = self.cache.get({"op": "embed", "model": self.config.model, "text": text})
        if raw is None:
            return None
        import json

        return np.asarray(json.loads(raw), dtype=float)

    def _store(self, text: str, vector: np.ndarray) -> None:
        if self.cache is not None:
            self.cache.put(
                {"op": "embed", "model": self.config.model, "text": text},
                canonical_json([float(v) for v in vector]),
            )


class ChatClient:
    """Chat-completions-style client carrying judge/refinement/VQA traffic."""

    def __init__(self, config: ClientConfig, cache: Optional[ResponseCache] = None):
        self.config = config
        self.cache = cache
        self._limit = threading.Semaphore(config.max_in_flight)

    def chat(
        self,
        prompt: str,
        image_refs: Sequence[str] = (),
        deterministic: bool = True,
    ) -> str:
        key = {
            "op": "chat",
            "model": self.config.model,
            "prompt": prompt,
            "images": list(image_refs),
        }
        if deterministic and self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        content: list[dict] = [{"type": "text", "text": prompt}]
        for ref in image_refs:
            content.append({"type": "image_url", "image_url": {"url": ref}})
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        }
        with self._limit:
            body = _retrying_post(self.config, payload)
        text = body["choices"][0]["message"]["content"]
        if deterministic and self.cache is not None:
            self.cache.put(key, text)
        return text

    def __call__(self, prompt: str) -> str:
        return self.chat(prompt)


_TOKEN = re.compile(r"[a-z0-9]+")


class MockEmbedder:
    """Deterministic embedding stand-in: normalized 384-bin hashed token counts."""

    def __init__(self, dim: int = MOCK_EMBED_DIM):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._one(t) for t in texts])

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return self(texts)

    def _one(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        vector = np.zeros(self.dim)
        for token in _TOKEN.findall(text.lower()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            vector[int.from_bytes(digest[:4], "big") % self.dim] += 1.0
        norm = np.linalg.norm(vector)
        if norm:
            vector = vector / norm
        self._cache[text] = vector
        return vector


class MockChatClient:
    """Canned prompt->reply map; strict mode errors on unmapped prompts so
    template drift is caught in tests."""

    def __init__(self, replies: Optional[Mapping[str, str]] = None, strict: bool = False):
        self.replies = dict(replies or {})
        self.strict = strict
        self.calls: list[str] = []

    def chat(self, prompt: str, image_refs: Sequence[str] = (), deterministic: bool = True) -> str:
        self.calls.append(prompt)
        if prompt in self.replies:
            return self.replies[prompt]
        if self.strict:
            raise KeyError(f"no canned reply for prompt: {prompt[:80]!r}")
        return prompt

    def __call__(self, prompt: str) -> str:
        return self.chat(prompt)


class MockUnifiedModel:
    """Deterministic stand-in for the model under test.

    Generation returns a content-addressed mock image reference; understanding
    answers from a question lookup (empty string when unknown, which scores 0
    upstream).
    """

    def __init__(self, answers: Optional[Mapping[str, str]] = None):
        self.answers = dict(answers or {})
        self.generated: list[str] = []

    def generate_image(self, prompt: str) -> str:
        ref = f"mock-image/{hashlib.sha256(prompt.encode('utf-8')).hexdigest()[:16]}"
        self.generated.append(ref)
        return ref

    def answer_question(self, image_ref: str, question: str) -> str:
        return self.answers.get(question, "")


class OracleUnifiedModel(MockUnifiedModel):
    """Mock model that answers every registered question correctly.

    Paired with the identity extraction adapter and a perfect judge, this
    drives the all-ones end-to-end anchor.
    """

    def register_expected(
        self, question: str, answer: str, image_ref: Optional[str] = None
    ) -> None:
        key = (image_ref, question) if image_ref is not None else question
        self.answers.setdefault(key, answer)

    def answer_question(self, image_ref: str, question: str) -> str:
        scoped = self.answers.get((image_ref, question))
        if scoped is not None:
            return scoped
        return self.answers.get(question, "")


class IdentityExtractionAdapter:
    """Returns the registered reference graph for each image reference.

    The end-to-end sanity anchor: with a perfect judge, downstream metrics
    must all come out 1.0.
    """

    def __init__(self):
        self._graphs: dict[str, SceneGraph] = {}

    def register(self, image_ref: str, graph: SceneGraph) -> None:
        self._graphs[image_ref] = graph

    def extract(self, image_ref: str) -> SceneGraph:
        return self._graphs[image_ref]


class MockExtractionAdapter:
    """Fixture-backed extractor; payloads are parsed and validated."""

    def __init__(self, documents: Mapping[str, str]):
        self._documents = dict(documents)

    def extract(self, image_ref: str) -> SceneGraph:
        return parse_scene_graph(self._documents[image_ref])


class HTTPUnifiedModel:
    """Model-under-test adapter over HTTP.

    Image generation posts to an images endpoint returning base64 payloads;
    generated bytes are stored content-addressed in the run directory and the
    file path doubles as the image reference. Understanding goes through a
    chat client with the image attached.
    """

    def __init__(self, gen_config: ClientConfig, vqa_client: ChatClient, image_dir: str | Path):
        self.gen_config = gen_config
        self.vqa_client = vqa_client
        self.image_dir = Path(image_dir)

    def generate_image(self, prompt: str) -> str:
        payload = {"model": self.gen_config.model, "prompt": prompt}
        body = _retrying_post(self.gen_config, payload)
        import base64

        raw = base64.b64decode(body["data"][0]["b64_json"])
        digest = hashlib.sha256(raw).hexdigest()[:16]
        self.image_dir.mkdir(parents=True, exist_ok=True)
        path = self.image_dir / f"{digest}.png"
        if not path.exists():
            path.write_bytes(raw)
        return str(path)

    def answer_question(self, image_ref: str, question: str) -> str:
        return self.vqa_client.chat(question, image_refs=[image_ref])


EXTRACTION_PROMPT = (
    "Describe the image as a scene graph in JSON with fields: image_id, "
    "width, height, nodes[{id,label,bbox:[x,y,w,h],attributes:{},merged_count}], "
    "edges[{source,target,predicates:[{name,score}]}], schema: \"xtc-sg/1\". "
    "Output only the JSON object."
)


class VLMExtractionAdapter:
    """Reference extraction adapter: asks a chat VLM to emit the scene-graph
    JSON schema directly and validates the result."""

    def __init__(self, chat_client):
        self.chat_client = chat_client

    def extract(self, image_ref: str) -> SceneGraph:
        response = self.chat_client.chat(EXTRACTION_PROMPT, image_refs=[image_ref])
        start = response.find("{")
        end = response.rfind("}")
        if start < 0 or end < start:
            raise ValueError("extraction response holds no JSON object")
        return parse_scene_graph(response[start : end + 1])
