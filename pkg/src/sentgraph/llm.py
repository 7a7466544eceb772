"""Chat-completion provider boundary: HTTP and scripted providers, retries, usage."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

__all__ = [
    "BadResponse",
    "ChatClient",
    "ChatRequest",
    "ChatResponse",
    "FunctionProvider",
    "HTTPProvider",
    "Provider",
    "ProviderError",
    "ProviderTimeout",
    "RateLimited",
    "RetryPolicy",
    "ScriptedProvider",
    "TransportError",
    "UsageSummary",
    "complete_with_retry",
    "fingerprint",
    "load_script",
    "script_entry",
    "script_from_pairs",
    "scripted_provider",
    "usage_ledger",
    "whitespace_tokens",
]

log = logging.getLogger(__name__)


class ProviderError(Exception):
    kind = "provider_error"


class ProviderTimeout(ProviderError):
    kind = "timeout"


class RateLimited(ProviderError):
    kind = "rate_limited"

    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class BadResponse(ProviderError):
    kind = "bad_response"

    def __init__(self, message: str, fingerprint: str | None = None):
        super().__init__(message)
        self.fingerprint = fingerprint


class TransportError(ProviderError):
    kind = "transport"


RETRYABLE = (ProviderTimeout, RateLimited, TransportError)


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_output_tokens: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for role, _ in self.messages:
            if role not in ("system", "user"):
                raise ValueError(f"unsupported role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @classmethod
    def user(cls, model: str, prompt: str, system: str | None = None, **kw) -> ChatRequest:
        messages = ((("system", system),) if system else ()) + (("user", prompt),)
        return cls(model=model, messages=messages, **kw)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    provider_id: str


class Provider(Protocol):
    provider_id: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


def whitespace_tokens(text: str) -> int:
    return len(text.split())


def fingerprint(request: ChatRequest) -> str:
    """Stable hash of the model name and the concatenated message contents."""
    h = hashlib.sha256()
    h.update(request.model.encode("utf-8"))
    for _, content in request.messages:
        h.update(b"\x00")
        h.update(content.encode("utf-8"))
    return h.hexdigest()[:32]


def _prompt_text(request: ChatRequest) -> str:
    return "\n".join(content for _, content in request.messages)


class ScriptedProvider:
    """Deterministic provider answering from a fingerprint -> text table."""

    provider_id = "scripted"

    def __init__(self, script: Mapping[str, str]):
        self.script = dict(script)
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        fp = fingerprint(request)
        try:
            text = self.script[fp]
        except KeyError:
            raise BadResponse(f"no scripted response for fingerprint {fp}", fingerprint=fp) from None
        return ChatResponse(text, whitespace_tokens(_prompt_text(request)), whitespace_tokens(text), self.provider_id)


def scripted_provider(script: Mapping[str, str]) -> ScriptedProvider:
    return ScriptedProvider(script)


def load_script(path: str | Path) -> dict[str, str]:
    """Read a script file: a JSON object, or JSONL of ``{fingerprint, response}``.

    JSONL records without a response (failed calls in a ledger) are skipped.
    """
    raw = Path(path).read_text(encoding="utf-8")
    try:
        whole = json.loads(raw)
    except json.JSONDecodeError:
        whole = None
    if isinstance(whole, dict) and "fingerprint" not in whole:
        return {str(k): str(v) for k, v in whole.items()}
    script: dict[str, str] = {}
    for line in raw.splitlines():
        if line.strip():
            rec = json.loads(line)
            if "response" in rec:
                script[rec["fingerprint"]] = rec["response"]
    return script


class FunctionProvider:
    """Wraps a pure ``prompt -> reply`` function; handy for synthetic fixtures."""

    def __init__(self, fn: Callable[[str], str], provider_id: str = "function"):
        self.fn = fn
        self.provider_id = provider_id
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        prompt = _prompt_text(request)
        text = self.fn(prompt)
        return ChatResponse(text, whitespace_tokens(prompt), whitespace_tokens(text), self.provider_id)


class HTTPProvider:
    """OpenAI-compatible ``/chat/completions`` over HTTP with bearer auth."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        transport=None,
    ):
        import httpx

        self.url = base_url.rstrip("/") + "/chat/completions"
        self.provider_id = f"http:{base_url.rstrip('/')}"
        self._api_key = api_key
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kw) -> HTTPProvider:
        return cls(os.environ["SENTGRAPH_LLM_BASE_URL"], os.environ.get("SENTGRAPH_LLM_API_KEY"), **kw)

    def _redact(self, text: str) -> str:
        return text.replace(self._api_key, "***") if self._api_key else text

    def complete(self, request: ChatRequest) -> ChatResponse:
        import httpx

        body = {
            "model": request.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
        }
        if request.max_output_tokens is not None:
            body["max_tokens"] = request.max_output_tokens
        log.debug("POST %s %s", self.url, self._redact(json.dumps(body)[:500]))
        try:
            resp = self._client.post(self.url, json=body)
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(self._redact(str(exc)) or "request timed out") from exc
        except httpx.TransportError as exc:
            raise TransportError(self._redact(str(exc)) or type(exc).__name__) from exc

        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                delay = float(retry_after) if retry_after is not None else None
            except ValueError:
                delay = None
            raise RateLimited(f"HTTP 429 from {self.url}", retry_after=delay)
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code >= 400:
            raise BadResponse(f"HTTP {resp.status_code}: {self._redact(resp.text[:200])}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BadResponse(f"malformed completion body: {resp.text[:200]!r}") from exc
        usage = data.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        completion_tokens = usage.get("completion_tokens")
        return ChatResponse(
            text=text,
            prompt_tokens=int(prompt_tokens) if prompt_tokens is not None else whitespace_tokens(_prompt_text(request)),
            completion_tokens=int(completion_tokens) if completion_tokens is not None else whitespace_tokens(text),
            provider_id=self.provider_id,
        )


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0
    timeout: float = 60.0

    def delay(self, attempt: int, rng: random.Random) -> float:
        """Full-jitter exponential backoff before retry number ``attempt`` (1-based)."""
        return rng.uniform(0.0, min(self.max_delay, self.base_delay * 2 ** (attempt - 1)))


def complete_with_retry(
    provider: Provider,
    request: ChatRequest,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> ChatResponse:
    """Retry timeouts, rate limits and transport failures; surface the rest at once."""
    rng = rng or random.Random()
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return provider.complete(request)
        except RETRYABLE as exc:
            if attempt == policy.max_attempts:
                raise
            wait = policy.delay(attempt, rng)
            if isinstance(exc, RateLimited) and exc.retry_after is not None:
                wait = max(wait, min(exc.retry_after, policy.max_delay))
            log.warning("attempt %d/%d failed (%s); retrying in %.2fs", attempt, policy.max_attempts, exc.kind, wait)
            sleep(wait)
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class UsageSummary:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def mean_prompt_tokens(self) -> float:
        return self.prompt_tokens / self.calls if self.calls else 0.0

    @property
    def mean_completion_tokens(self) -> float:
        return self.completion_tokens / self.calls if self.calls else 0.0

    def __add__(self, other: UsageSummary) -> UsageSummary:
        return UsageSummary(
            self.calls + other.calls,
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    def to_dict(self) -> dict:
        return {**asdict(self), "mean_prompt_tokens": self.mean_prompt_tokens,
                "mean_completion_tokens": self.mean_completion_tokens}


def usage_ledger(responses: Iterable[ChatResponse]) -> UsageSummary:
    total = UsageSummary()
    for r in responses:
        total = total + UsageSummary(1, r.prompt_tokens, r.completion_tokens)
    return total


@dataclass
class ChatClient:
    """What the builder and pipeline talk to.

    Adds the model name, the retry policy and a global cap on in-flight
    calls to a provider, and optionally appends every exchange to a JSONL
    audit ledger.
    """

    provider: Provider
    model: str = "scripted"
    policy: RetryPolicy = field(default_factory=RetryPolicy)
    concurrency: int = 4
    temperature: float = 0.0
    ledger_path: str | Path | None = None
    sleep: Callable[[float], None] = time.sleep
    seed: int = 0

    def __post_init__(self):
        if self.concurrency < 1:
            raise ValueError("concurrency must be at least 1")
        self._slots = threading.BoundedSemaphore(self.concurrency)
        self._ledger_lock = threading.Lock()
        self._rng = random.Random(self.seed)

    def request(self, prompt: str, system: str | None = None) -> ChatRequest:
        return ChatRequest.user(self.model, prompt, system=system, temperature=self.temperature)

    def chat(self, prompt: str, system: str | None = None) -> ChatResponse:
        request = self.request(prompt, system)
        with self._slots:
            try:
                response = complete_with_retry(self.provider, request, self.policy, self.sleep, self._rng)
            except ProviderError as exc:
                self._record(request, None, exc)
                raise
        self._record(request, response, None)
        return response

    def _record(self, request: ChatRequest, response: ChatResponse | None, error: Exception | None):
        if not self.ledger_path:
            return
        rec = {"fingerprint": fingerprint(request), "model": request.model,
               "messages": [list(m) for m in request.messages]}
        if response is not None:
            rec.update(response=response.text, prompt_tokens=response.prompt_tokens,
                       completion_tokens=response.completion_tokens)
        else:
            rec["error"] = f"{type(error).__name__}: {error}"
        with self._ledger_lock, open(self.ledger_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def script_entry(model: str, prompt: str, response: str, system: str | None = None) -> tuple[str, str]:
    """Fingerprint/response pair for building scripts by hand."""
    return fingerprint(ChatRequest.user(model, prompt, system=system)), response


def script_from_pairs(model: str, pairs: Sequence[tuple[str, str]]) -> dict[str, str]:
    return dict(script_entry(model, prompt, response) for prompt, response in pairs)
