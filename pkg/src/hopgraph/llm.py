"""Model-call layer: prompt templates, providers, caching, retries, in-flight limit."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from .errors import ConfigurationError, ProviderError, TemplateError, TransientProviderError

__all__ = [
    "ROLES",
    "PromptRequest",
    "Completion",
    "Provider",
    "MockRule",
    "MockScript",
    "MockProvider",
    "HTTPProvider",
    "LLMClient",
    "TracedLLM",
    "prompt_hash",
    "render_text",
    "render_template",
    "TEMPLATE_DIR",
]

log = logging.getLogger(__name__)

ROLES = ("decompose", "extract", "subanswer", "merge", "finalize", "summarize")
TEMPLATE_DIR = Path(__file__).parent / "templates" / "v1"
_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -- templates ---------------------------------------------------------------


def render_text(template: str, variables: Mapping[str, str]) -> str:
    """Substitute ``{name}`` placeholders; any unbound name is an error.

    Braces that do not enclose an identifier (JSON examples, say) pass
    through untouched.
    """
    missing = [m for m in _PLACEHOLDER.findall(template) if m not in variables]
    if missing:
        raise TemplateError(f"unbound template variable {missing[0]!r}")
    return _PLACEHOLDER.sub(lambda m: str(variables[m.group(1)]), template)


def render_template(
    template_name: str,
    variables: Mapping[str, str],
    template_dir: str | Path | None = None,
) -> str:
    path = Path(template_dir or TEMPLATE_DIR) / f"{template_name}.txt"
    try:
        template = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TemplateError(f"template {template_name!r} not found at {path}") from exc
    return render_text(template, variables)


# -- envelopes ---------------------------------------------------------------


@dataclass(frozen=True)
class PromptRequest:
    template_name: str
    rendered_prompt: str
    role: str
    temperature: float = 0.0
    max_output_tokens: int = 512

    def __post_init__(self) -> None:
        if not self.rendered_prompt:
            raise ConfigurationError("rendered_prompt must be non-empty")
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown role {self.role!r}; expected one of {ROLES}")


@dataclass(frozen=True)
class Completion:
    text: str
    provider_trace_id: str
    cached: bool
    latency_ms: int
    retries: int = 0


class Provider(Protocol):
    provider_id: str
    model: str

    def send(self, request: PromptRequest) -> str: ...


# -- mock provider -----------------------------------------------------------


@dataclass(frozen=True)
class MockRule:
    response: str
    role: str | None = None
    contains: tuple[str, ...] = ()

    def matches(self, request: PromptRequest) -> bool:
        if self.role is not None and request.role != self.role:
            return False
        return all(s in request.rendered_prompt for s in self.contains)


@dataclass
class MockScript:
    """Ordered first-match-wins rules plus a default response.

    JSON form::

        {"default_response": "unknown",
         "rules": [{"role": "finalize", "response": "Neville"},
                   {"contains": "last Horcrux", "response": "..."}]}

    ``contains`` may be a string or a list of strings that must all occur.
    """

    rules: list[MockRule] = field(default_factory=list)
    default_response: str = ""

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MockScript":
        rules = []
        for i, r in enumerate(data.get("rules", [])):
            if "response" not in r:
                raise ConfigurationError(f"mock rule {i} has no 'response'")
            contains = r.get("contains", ())
            if isinstance(contains, str):
                contains = (contains,)
            role = r.get("role")
            if role is not None and role not in ROLES:
                raise ConfigurationError(f"mock rule {i}: unknown role {role!r}")
            rules.append(MockRule(response=r["response"], role=role, contains=tuple(contains)))
        return cls(rules=rules, default_response=data.get("default_response", ""))

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot load mock script {path}: {exc}") from exc
        return cls.from_dict(data)

    def respond(self, request: PromptRequest) -> str:
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        return self.default_response

    def digest(self) -> str:
        blob = json.dumps(
            [[r.role, list(r.contains), r.response] for r in self.rules] + [self.default_response]
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class MockProvider:
    """Scripted offline provider.

    ``fail_roles`` makes every call for those roles fail permanently;
    ``transient_failures`` maps a role to a number of transient failures to
    raise before answering.
    """

    provider_id = "mock"

    def __init__(
        self,
        script: MockScript | None = None,
        *,
        fail_roles: set[str] | frozenset[str] = frozenset(),
        transient_failures: Mapping[str, int] | None = None,
    ) -> None:
        self.script = script or MockScript()
        self.model = f"script-{self.script.digest()}"
        self.fail_roles = set(fail_roles)
        self._transient = dict(transient_failures or {})
        self.calls: list[PromptRequest] = []
        self._lock = threading.Lock()

    def send(self, request: PromptRequest) -> str:
        with self._lock:
            self.calls.append(request)
            if request.role in self.fail_roles:
                raise ProviderError(f"injected failure for role {request.role}", role=request.role)
            if self._transient.get(request.role, 0) > 0:
                self._transient[request.role] -= 1
                raise TransientProviderError("injected transient failure", role=request.role)
        return self.script.respond(request)


# -- HTTP provider -----------------------------------------------------------


class HTTPProvider:
    """Chat-completions style endpoint (``messages`` in, first choice out).

    The API key is read from the environment variable named by
    ``api_key_env`` and only ever placed in the Authorization header.
    """

    provider_id = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "HOPGRAPH_API_KEY",
        timeout: float = 120.0,
        client: Any = None,
    ) -> None:
        if not endpoint or not model:
            raise ConfigurationError("real provider needs both an endpoint and a model name")
        key = os.environ.get(api_key_env)
        if not key:
            raise ConfigurationError(f"environment variable {api_key_env} is not set")
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._key = key
        self._client = client or httpx.Client(timeout=timeout)
        self._httpx = httpx

    def __repr__(self) -> str:
        return f"HTTPProvider(endpoint={self.endpoint!r}, model={self.model!r})"

    def payload(self, request: PromptRequest) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def send(self, request: PromptRequest) -> str:
        httpx = self._httpx
        try:
            resp = self._client.post(
                self.endpoint,
                json=self.payload(request),
                headers={"Authorization": f"Bearer {self._key}"},
            )
        except httpx.TimeoutException as exc:
            raise TransientProviderError(f"timeout calling {self.endpoint}", role=request.role) from None
        except httpx.TransportError as exc:
            raise TransientProviderError(
                f"transport error calling {self.endpoint}: {type(exc).__name__}", role=request.role
            ) from None
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"HTTP {resp.status_code} from provider", role=request.role)
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code} from provider", role=request.role)
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderError("malformed provider response", role=request.role) from None


# -- client ------------------------------------------------------------------


class LLMClient:
    """Cached, retrying, concurrency-bounded front door for every model call."""

    def __init__(
        self,
        provider: Provider,
        *,
        cache_dir: str | Path | None = None,
        max_in_flight: int = 4,
        max_retries: int = 2,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_in_flight <= 0:
            raise ConfigurationError("max_in_flight must be positive")
        self.provider = provider
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._cache: dict[str, str] = {}
        self._cache_lock = threading.Lock()
        self._cache_dir = Path(cache_dir) if cache_dir else None
        self._counter = 0
        self.round_trips = 0

    def cache_key(self, request: PromptRequest) -> str:
        blob = json.dumps(
            [
                self.provider.provider_id,
                self.provider.model,
                request.rendered_prompt,
                request.temperature,
                request.max_output_tokens,
            ],
            ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _cache_get(self, key: str) -> str | None:
        with self._cache_lock:
            if key in self._cache:
                return self._cache[key]
        if self._cache_dir is not None:
            path = self._cache_dir / key[:2] / f"{key}.json"
            if path.exists():
                text = json.loads(path.read_text(encoding="utf-8"))["text"]
                with self._cache_lock:
                    self._cache[key] = text
                return text
        return None

    def _cache_put(self, key: str, text: str) -> None:
        with self._cache_lock:
            self._cache[key] = text
            if self._cache_dir is not None:
                path = self._cache_dir / key[:2] / f"{key}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps({"text": text}, ensure_ascii=False), encoding="utf-8")
                os.replace(tmp, path)

    def _next_trace_id(self, role: str, phash: str) -> str:
        with self._cache_lock:
            self._counter += 1
            return f"{role}-{phash[:12]}-{self._counter}"

    def complete(self, request: PromptRequest, trace: Any = None) -> Completion:
        phash = prompt_hash(request.rendered_prompt)
        trace_id = self._next_trace_id(request.role, phash)
        key = self.cache_key(request)
        started = time.perf_counter()

        hit = self._cache_get(key)
        if hit is not None:
            comp = Completion(hit, trace_id, cached=True, latency_ms=0)
            self._record(trace, request, phash, comp, None)
            return comp

        retries = 0
        while True:
            try:
                with self._slots:
                    with self._cache_lock:
                        self.round_trips += 1
                    text = self.provider.send(request)
                break
            except TransientProviderError as exc:
                if retries >= self.max_retries:
                    err = ProviderError(
                        f"{request.role} call failed after {retries} retries: {exc}",
                        role=request.role,
                        prompt_hash=phash,
                    )
                    self._record(trace, request, phash, None, err, retries, trace_id)
                    raise err from None
                self._sleep(self.backoff_s * (2**retries))
                retries += 1
            except ProviderError as exc:
                err = ProviderError(
                    f"{request.role} call failed: {exc}", role=request.role, prompt_hash=phash
                )
                self._record(trace, request, phash, None, err, retries, trace_id)
                raise err from None

        self._cache_put(key, text)
        latency = int((time.perf_counter() - started) * 1000)
        comp = Completion(text, trace_id, cached=False, latency_ms=latency, retries=retries)
        self._record(trace, request, phash, comp, None)
        return comp

    def _record(
        self,
        trace: Any,
        request: PromptRequest,
        phash: str,
        comp: Completion | None,
        error: Exception | None,
        retries: int = 0,
        trace_id: str = "",
    ) -> None:
        if error is not None:
            log.warning("provider call failed: role=%s prompt=%s: %s", request.role, phash[:12], error)
        if trace is None:
            return
        trace.record_call(
            prompt_hash=phash,
            prompt=request.rendered_prompt,
            provider_trace_id=comp.provider_trace_id if comp else trace_id,
            role=request.role,
            template=request.template_name,
            response=comp.text if comp else None,
            cached=comp.cached if comp else False,
            retries=comp.retries if comp else retries,
            error=str(error) if error else None,
        )

    def traced(self, trace: Any) -> "TracedLLM":
        return TracedLLM(self, trace)


class TracedLLM:
    """A view of an :class:`LLMClient` that logs every call into one trace."""

    def __init__(self, client: LLMClient, trace: Any) -> None:
        self.client = client
        self.trace = trace

    def complete(self, request: PromptRequest) -> Completion:
        return self.client.complete(request, trace=self.trace)
