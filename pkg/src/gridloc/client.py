"""Model backends for single-object box queries.

Every backend exposes ``identity`` (a string folded into the cache key) and
``query(request) -> str``. Backends compose: a live or mock backend can sit
behind a write-through ``CachedBackend`` and a ``RateLimitedBackend``; the
``ReplayBackend`` serves only what a previous run cached.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import httpx
import numpy as np

from .compositor import ImageBuffer
from .errors import (
    AuthenticationError,
    BackendError,
    CacheMissError,
    ConfigurationError,
    RetriesExhaustedError,
    TransientBackendError,
)
from .geometry import BBox, format_coords

log = logging.getLogger(__name__)

FORMAT_ANCHOR = "[x1, y1, x2, y2]"

DEFAULT_TEMPLATE_TEXT = (
    "Please find the bounding box coordinates of the {category} in this image. "
    "When scanning the image to locate the {category}, look across the entire image "
    "and consider all visible human figures. Once you have found the {category}, "
    "determine their exact boundaries by identifying the left, right, top, and bottom "
    "boundaries. Please provide your reasoning process and give the final coordinates "
    "as [x1, y1, x2, y2] for the bounding box."
)

BACKEND_KINDS = ("live", "cache-replay", "mock-echo", "mock-perturb")


@dataclass(frozen=True)
class PromptTemplate:
    text: str = DEFAULT_TEMPLATE_TEXT

    def __post_init__(self):
        if FORMAT_ANCHOR not in self.text:
            raise ConfigurationError(f"prompt template must contain the literal {FORMAT_ANCHOR}")
        if "{category}" not in self.text:
            raise ConfigurationError("prompt template needs a {category} placeholder")

    def render(self, category: str) -> str:
        return self.text.replace("{category}", category)


DEFAULT_TEMPLATE = PromptTemplate()


def build_prompt(category_name: str, template: PromptTemplate = DEFAULT_TEMPLATE) -> str:
    if not category_name or not category_name.strip():
        raise ConfigurationError("category name must be non-empty")
    return template.render(category_name.strip())


@dataclass(frozen=True)
class QueryRequest:
    """One object query. ``gt`` is only read by mock backends."""

    image: ImageBuffer
    prompt: str
    object_key: str = ""
    gt: BBox | None = None


def request_digest(request: QueryRequest, identity: str) -> str:
    """sha256 over decoded pixels, prompt, backend identity and object key."""
    h = hashlib.sha256()
    h.update(request.image.raw_bytes())
    for part in (request.prompt, identity, request.object_key):
        h.update(b"\x00")
        h.update(part.encode("utf-8"))
    return h.hexdigest()


@dataclass(frozen=True)
class QueryRecord:
    digest: str
    response: str
    latency: float
    timestamp: str
    backend: str
    identity: str

    def to_json(self) -> str:
        return json.dumps({"format": "gridloc-query/1", **asdict(self)}, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "QueryRecord":
        data = json.loads(text)
        data.pop("format", None)
        return cls(**data)


class DiskCache:
    """One JSON file per request digest. Writes are temp-file-then-rename."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def get(self, digest: str) -> QueryRecord | None:
        path = self.path_for(digest)
        try:
            return QueryRecord.from_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, record: QueryRecord) -> None:
        path = self.path_for(record.digest)
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(record.to_json(), encoding="utf-8")
        os.replace(tmp, path)

    def __contains__(self, digest: str) -> bool:
        return self.path_for(digest).is_file()

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*.json"))

    def identities(self) -> set[str]:
        """Backend identities present in the cache."""
        return {QueryRecord.from_json(p.read_text(encoding="utf-8")).identity for p in self.root.glob("*.json")}


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Backend:
    kind = "abstract"

    @property
    def identity(self) -> str:
        return self.kind

    def query(self, request: QueryRequest) -> str:
        raise NotImplementedError


class MockEchoBackend(Backend):
    """Answers with the ground-truth box."""

    kind = "mock-echo"

    def query(self, request: QueryRequest) -> str:
        if request.gt is None:
            raise BackendError("mock-echo needs the ground-truth box on the request")
        return f"Final coordinates: {request.gt.format()}"


@dataclass(frozen=True)
class PerturbParams:
    offset: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    mode: str = "px"  # "px" or "fraction" of the GT box width/height
    jitter: float = 0.0  # uniform per-corner noise half-width, same unit as offset
    failure_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        if len(self.offset) != 4:
            raise ConfigurationError("perturbation offset needs four values")
        if self.mode not in ("px", "fraction"):
            raise ConfigurationError(f"perturbation mode must be 'px' or 'fraction', got {self.mode!r}")
        if self.jitter < 0 or not 0.0 <= self.failure_prob <= 1.0:
            raise ConfigurationError("jitter must be >= 0 and failure_prob in [0, 1]")


class MockPerturbBackend(Backend):
    """Ground truth plus a known offset, optional uniform jitter and
    injected unparseable answers. Deterministic per (seed, request)."""

    kind = "mock-perturb"
    FAILURE_TEXT = "I looked carefully but cannot determine where the object is."

    def __init__(self, params: PerturbParams = PerturbParams()):
        self.params = params

    @property
    def identity(self) -> str:
        p = self.params
        off = ",".join(repr(v) for v in p.offset)
        return f"mock-perturb[offset={off};mode={p.mode};jitter={p.jitter!r};fail={p.failure_prob!r};seed={p.seed}]"

    def query(self, request: QueryRequest) -> str:
        if request.gt is None:
            raise BackendError("mock-perturb needs the ground-truth box on the request")
        p = self.params
        digest = request_digest(request, self.identity)
        rng = np.random.default_rng(int(digest[:16], 16))
        if p.failure_prob > 0 and rng.random() < p.failure_prob:
            return self.FAILURE_TEXT
        gt = request.gt
        scale = (gt.width, gt.height, gt.width, gt.height) if p.mode == "fraction" else (1.0,) * 4
        noise = rng.uniform(-p.jitter, p.jitter, size=4) if p.jitter > 0 else np.zeros(4)
        vals = [c + (o + float(n)) * s for c, o, n, s in zip(gt, p.offset, noise, scale)]
        return f"After reasoning about the boundaries, final coordinates: {format_coords(vals)}"


@dataclass(frozen=True)
class LiveParams:
    provider: str = "openai"  # "openai" (chat completions) or "anthropic" (messages)
    model: str = "gpt-4o"
    endpoint: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 120.0


_DEFAULT_ENDPOINTS = {
    "openai": "https://api.openai.com/v1/chat/completions",
    "anthropic": "https://api.anthropic.com/v1/messages",
}


def _openai_payload(p: LiveParams, prompt: str, png_b64: str) -> dict:
    return {
        "model": p.model,
        "temperature": p.temperature,
        "max_tokens": p.max_tokens,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{png_b64}"}},
                ],
            }
        ],
    }


def _openai_text(body: dict) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content)
    return content or ""


def _anthropic_payload(p: LiveParams, prompt: str, png_b64: str) -> dict:
    return {
        "model": p.model,
        "temperature": p.temperature,
        "max_tokens": p.max_tokens,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "image", "source": {"type": "base64", "media_type": "image/png", "data": png_b64}},
                    {"type": "text", "text": prompt},
                ],
            }
        ],
    }


def _anthropic_text(body: dict) -> str:
    return "".join(block.get("text", "") for block in body["content"] if block.get("type") == "text")


_PROVIDERS = {
    "openai": (_openai_payload, _openai_text),
    "anthropic": (_anthropic_payload, _anthropic_text),
}


class LiveBackend(Backend):
    """Generic multimodal chat endpoint; the image travels as base64 PNG."""

    kind = "live"

    def __init__(self, params: LiveParams = LiveParams(), transport: httpx.BaseTransport | None = None):
        if params.provider not in _PROVIDERS:
            raise ConfigurationError(f"unknown provider {params.provider!r}; known: {sorted(_PROVIDERS)}")
        self.params = params
        self.endpoint = params.endpoint or _DEFAULT_ENDPOINTS[params.provider]
        self._client = httpx.Client(timeout=params.timeout, transport=transport)

    @property
    def identity(self) -> str:
        return f"live[{self.params.provider}:{self.params.model};t={self.params.temperature!r}]"

    def _headers(self) -> dict:
        key = os.environ.get(self.params.api_key_env)
        if not key:
            raise AuthenticationError(f"environment variable {self.params.api_key_env} is not set")
        if self.params.provider == "anthropic":
            return {"x-api-key": key, "anthropic-version": "2023-06-01"}
        return {"Authorization": f"Bearer {key}"}

    def query(self, request: QueryRequest) -> str:
        build, extract = _PROVIDERS[self.params.provider]
        png_b64 = base64.b64encode(request.image.png_bytes()).decode("ascii")
        payload = build(self.params, request.prompt, png_b64)
        try:
            resp = self._client.post(self.endpoint, json=payload, headers=self._headers())
        except httpx.TransportError as exc:
            raise TransientBackendError(f"network failure: {exc!r}") from exc
        status = resp.status_code
        if status in (401, 403):
            raise AuthenticationError(f"HTTP {status} from {self.endpoint}")
        if status in (408, 409, 429) or status >= 500:
            err = TransientBackendError(f"HTTP {status} from {self.endpoint}")
            err.retry_after = _retry_after(resp)
            raise err
        if status >= 400:
            raise BackendError(f"HTTP {status} from {self.endpoint}: {resp.text[:200]}")
        try:
            return extract(resp.json())
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response body from {self.endpoint}") from exc

    def close(self):
        self._client.close()


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


class CachedBackend(Backend):
    """Read-through, write-through disk cache in front of another backend."""

    def __init__(self, inner: Backend, cache: DiskCache):
        self.inner = inner
        self.cache = cache
        self.calls = 0

    @property
    def kind(self):
        return self.inner.kind

    @property
    def identity(self) -> str:
        return self.inner.identity

    def query(self, request: QueryRequest) -> str:
        digest = request_digest(request, self.identity)
        hit = self.cache.get(digest)
        if hit is not None:
            return hit.response
        t0 = time.perf_counter()
        text = self.inner.query(request)
        self.calls += 1
        self.cache.put(QueryRecord(digest, text, time.perf_counter() - t0, _utcnow(), self.kind, self.identity))
        return text


class ReplayBackend(Backend):
    """Serves cached responses recorded under ``identity``; a miss is an
    error, never a silent live call."""

    kind = "cache-replay"

    def __init__(self, cache: DiskCache, identity: str):
        if not identity:
            raise ConfigurationError("replay backend needs the identity of the backend it replays")
        self.cache = cache
        self._identity = identity

    @property
    def identity(self) -> str:
        return self._identity

    def query(self, request: QueryRequest) -> str:
        digest = request_digest(request, self._identity)
        hit = self.cache.get(digest)
        if hit is None:
            raise CacheMissError(f"no cached response for digest {digest[:16]}")
        return hit.response


@dataclass(frozen=True)
class RetryPolicy:
    max_concurrent: int = 4
    retries: int = 3
    base_backoff: float = 0.5
    max_backoff: float = 30.0
    jitter: float = 0.5  # delay is scaled by a factor drawn from [1, 1 + jitter)

    def __post_init__(self):
        if self.max_concurrent < 1 or self.retries < 0 or self.base_backoff <= 0:
            raise ConfigurationError(
                "retry policy needs max_concurrent >= 1, retries >= 0 and base_backoff > 0"
            )

    def delay(self, attempt: int, rng: random.Random) -> float:
        return min(self.max_backoff, self.base_backoff * 2**attempt) * (1.0 + self.jitter * rng.random())


class RateLimitedBackend(Backend):
    """Caps in-flight requests and retries transient failures.

    Authentication and other permanent errors propagate on the first attempt.
    The concurrency slot is released while backing off.
    """

    def __init__(self, inner: Backend, policy: RetryPolicy = RetryPolicy(),
                 sleep: Callable[[float], None] = time.sleep, seed: int | None = None):
        self.inner = inner
        self.policy = policy
        self._sem = threading.BoundedSemaphore(policy.max_concurrent)
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.attempts = 0

    @property
    def kind(self):
        return self.inner.kind

    @property
    def identity(self) -> str:
        return self.inner.identity

    def query(self, request: QueryRequest) -> str:
        history = []
        for attempt in range(self.policy.retries + 1):
            with self._sem:
                with self._lock:
                    self.in_flight += 1
                    self.max_in_flight = max(self.max_in_flight, self.in_flight)
                    self.attempts += 1
                try:
                    return self.inner.query(request)
                except RetriesExhaustedError:
                    raise
                except TransientBackendError as exc:
                    error = exc
                finally:
                    with self._lock:
                        self.in_flight -= 1
            if attempt == self.policy.retries:
                history.append({"attempt": attempt + 1, "error": repr(error), "delay": 0.0})
                break
            with self._lock:
                delay = self.policy.delay(attempt, self._rng)
            delay = max(delay, getattr(error, "retry_after", None) or 0.0)
            history.append({"attempt": attempt + 1, "error": repr(error), "delay": delay})
            log.info("transient backend failure (attempt %d), retrying in %.2fs: %s", attempt + 1, delay, error)
            self._sleep(delay)
        raise RetriesExhaustedError(f"gave up after {len(history)} attempt(s): {history[-1]['error']}", history)


def rate_limit_and_retry(backend: Backend, policy: RetryPolicy = RetryPolicy(), **kwargs) -> RateLimitedBackend:
    return RateLimitedBackend(backend, policy, **kwargs)


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str = "mock-echo"
    cache_dir: str | None = None
    replay_identity: str | None = None
    live: LiveParams = field(default_factory=LiveParams)
    perturb: PerturbParams = field(default_factory=PerturbParams)
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend kind {self.kind!r}; choose from {BACKEND_KINDS}")
        if self.kind == "cache-replay" and not self.cache_dir:
            raise ConfigurationError("cache-replay backend needs a cache directory")

    @property
    def offline(self) -> bool:
        return self.kind != "live"


def build_backend(desc: BackendDescriptor, transport: httpx.BaseTransport | None = None,
                  sleep: Callable[[float], None] = time.sleep) -> Backend:
    """Compose the backend stack a descriptor asks for.

    live: cache (if configured) -> rate limiter -> HTTP, so hits skip the limiter.
    mocks: cache (if configured) -> mock; no limiter, they never fail transiently.
    cache-replay: replay only.
    """
    if desc.kind == "cache-replay":
        return ReplayBackend(DiskCache(desc.cache_dir), desc.replay_identity or "")
    if desc.kind == "live":
        live = RateLimitedBackend(LiveBackend(desc.live, transport=transport), desc.retry, sleep=sleep)
        return CachedBackend(live, DiskCache(desc.cache_dir)) if desc.cache_dir else live
    mock = MockEchoBackend() if desc.kind == "mock-echo" else MockPerturbBackend(desc.perturb)
    return CachedBackend(mock, DiskCache(desc.cache_dir)) if desc.cache_dir else mock


def query(image: ImageBuffer, prompt: str, backend: Backend, *, gt: BBox | None = None,
          object_key: str = "") -> str:
    return backend.query(QueryRequest(image, prompt, object_key, gt))
