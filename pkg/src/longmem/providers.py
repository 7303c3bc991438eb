"""Text-generation and embedding providers.

Concrete providers only implement ``_complete`` / ``_embed``. Caching, retry
with backoff and in-flight deduplication live in the base classes so stubs
and HTTP clients behave identically.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 800


class ProviderError(RuntimeError):
    pass


class TransientProviderError(ProviderError):
    """A failure worth retrying (timeouts, 429, 5xx)."""


class EmptyGenerationError(ProviderError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    decoding: str = "greedy"

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.decoding != "greedy":
            raise ValueError(f"unsupported decoding {self.decoding!r}")


def request_hash(request: GenerationRequest, provider_id: str) -> str:
    blob = json.dumps([request.prompt, request.max_tokens, provider_id], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed JSON files, one per request hash."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, key: str) -> str | None:
        p = self._path(key)
        if not p.exists():
            return None
        rec = json.loads(p.read_text(encoding="utf-8"))
        if rec.get("request_hash") != key:
            log.warning("cache entry %s has mismatched hash; ignoring", p)
            return None
        return rec["response"]

    def put(self, key: str, prompt: str, response: str, provider: str) -> None:
        p = self._path(key)
        rec = {
            "request_hash": key,
            "prompt": prompt,
            "response": response,
            "provider": provider,
            "created_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        }
        with self._lock(key):
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(json.dumps(rec, ensure_ascii=False), encoding="utf-8")
            os.replace(tmp, p)


class TextGenerator:
    """Base generator: subclasses implement ``_complete``."""

    provider_id = "base"

    def __init__(self, cache: ResponseCache | None = None, max_attempts: int = 3,
                 backoff: float = 1.0, sleep: Callable[[float], None] = time.sleep,
                 max_concurrency: int = 8):
        self.cache = cache
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self.calls = 0          # transport attempts, including failed ones
        self._memo: dict[str, str] = {}
        self._inflight: dict[str, Future] = {}
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def _complete(self, request: GenerationRequest) -> str:
        raise NotImplementedError

    def generate(self, request: GenerationRequest | str) -> str:
        if isinstance(request, str):
            request = GenerationRequest(request)
        key = request_hash(request, self.provider_id)
        with self._lock:
            if key in self._memo:
                return self._memo[key]
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = self._inflight[key] = Future()
        if not owner:
            return fut.result()
        try:
            text = self.cache.get(key) if self.cache else None
            if text is None:
                text = self._with_retries(request)
                if self.cache:
                    self.cache.put(key, request.prompt, text, self.provider_id)
            with self._lock:
                self._memo[key] = text
            fut.set_result(text)
            return text
        except BaseException as e:
            fut.set_exception(e)
            raise
        finally:
            with self._lock:
                self._inflight.pop(key, None)

    def _with_retries(self, request: GenerationRequest) -> str:
        for attempt in range(1, self.max_attempts + 1):
            with self._lock:
                self.calls += 1
            try:
                with self._slots:
                    text = self._complete(request)
                break
            except TransientProviderError as e:
                if attempt == self.max_attempts:
                    raise ProviderError(f"{self.provider_id}: gave up after {attempt} attempts: {e}") from e
                delay = self.backoff * 2 ** (attempt - 1)
                log.info("%s: transient failure (%s); retrying in %.1fs", self.provider_id, e, delay)
                self._sleep(delay)
        if not text or not text.strip():
            raise EmptyGenerationError(f"{self.provider_id}: empty response")
        return text


def echo_response(prompt: str) -> str:
    """Default stub reply; deliberately unparseable by every extractor."""
    first = prompt.strip().splitlines()[0][:60]
    digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
    return f"[stub:{digest}] {first}"


class StubGenerator(TextGenerator):
    """Looks the prompt up in ``fixtures``; falls through to ``fallback``."""

    provider_id = "stub"

    def __init__(self, fixtures: Mapping[str, str] | None = None,
                 fallback: Callable[[str], str] = echo_response, **kw):
        super().__init__(**kw)
        self.fixtures = dict(fixtures or {})
        self.fallback = fallback
        self.misses: list[str] = []

    def _complete(self, request):
        if request.prompt in self.fixtures:
            return self.fixtures[request.prompt]
        self.misses.append(request.prompt)
        return self.fallback(request.prompt)


class ChatCompletionsGenerator(TextGenerator):
    """OpenAI-style ``/chat/completions`` endpoint with greedy decoding."""

    def __init__(self, url: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 120.0, client=None, **kw):
        super().__init__(**kw)
        import httpx

        self.url = url
        self.model = model
        self.provider_id = f"chat:{model}@{url}"
        self._httpx = httpx
        headers = {}
        token = os.environ.get(api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.client = client or httpx.Client(timeout=timeout, headers=headers)

    def _complete(self, request):
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": 0,
        }
        try:
            r = self.client.post(self.url, json=body)
        except self._httpx.TransportError as e:
            raise TransientProviderError(str(e)) from e
        if r.status_code == 429 or r.status_code >= 500:
            raise TransientProviderError(f"HTTP {r.status_code}")
        if r.status_code >= 400:
            raise ProviderError(f"HTTP {r.status_code}: {r.text[:200]}")
        return r.json()["choices"][0]["message"]["content"] or ""


# ---------------------------------------------------------------------------
# embeddings

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased Unicode-alphanumeric runs. Shared with the lexical index."""
    return _TOKEN_RE.findall(text.lower())


class Embedder:
    provider_id = "base"
    batch_size = 64

    def __init__(self):
        self.calls = 0

    def _embed(self, texts: Sequence[str]) -> list[Sequence[float]]:
        raise NotImplementedError

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        """One row per text, in order. Returns a float32 matrix."""
        if not texts:
            raise ValueError("embed_batch needs at least one text")
        if any(not t.strip() for t in texts):
            raise ValueError("cannot embed empty text")
        rows: list[np.ndarray] = []
        for i in range(0, len(texts), self.batch_size):
            chunk = texts[i:i + self.batch_size]
            self.calls += 1
            out = self._embed(chunk)
            if len(out) != len(chunk):
                raise ProviderError(f"{self.provider_id}: got {len(out)} vectors for {len(chunk)} texts")
            rows.extend(np.asarray(v, dtype=np.float32) for v in out)
        dims = {r.shape for r in rows}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ProviderError(f"{self.provider_id}: inconsistent embedding dimensions {sorted(dims)}")
        mat = np.stack(rows)
        if np.any(np.linalg.norm(mat, axis=1) == 0):
            raise ProviderError(f"{self.provider_id}: zero embedding vector")
        return mat


class HashEmbedder(Embedder):
    """Bag-of-tokens hashed into ``dim`` buckets, L2-normalized."""

    provider_id = "stub-hash"

    def __init__(self, dim: int = 256):
        super().__init__()
        self.dim = dim

    def bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(h, "little") % self.dim

    def _embed(self, texts):
        out = []
        for t in texts:
            v = np.zeros(self.dim, dtype=np.float64)
            for tok in tokenize(t):
                v[self.bucket(tok)] += 1.0
            n = np.linalg.norm(v)
            out.append(v / n if n else v)
        return out


class HTTPEmbedder(Embedder):
    """OpenAI-style ``/embeddings`` endpoint."""

    def __init__(self, url: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 batch_size: int = 64, timeout: float = 120.0, client=None):
        super().__init__()
        import httpx

        self.url = url
        self.model = model
        self.batch_size = batch_size
        self.provider_id = f"embed:{model}@{url}"
        headers = {}
        token = os.environ.get(api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.client = client or httpx.Client(timeout=timeout, headers=headers)

    def _embed(self, texts):
        r = self.client.post(self.url, json={"model": self.model, "input": list(texts)})
        if r.status_code >= 400:
            raise ProviderError(f"HTTP {r.status_code}: {r.text[:200]}")
        data = sorted(r.json()["data"], key=lambda d: d.get("index", 0))
        return [d["embedding"] for d in data]
