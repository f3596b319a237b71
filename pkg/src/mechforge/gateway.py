"""Completion gateway shared by all pipeline roles.

Every role talks to a provider through :class:`Gateway`, which applies the
per-role temperature and token budget, retries transport errors and empty
outputs with exponential backoff, and switches to a fallback provider once
the primary's retry budget is spent.
"""
from __future__ import annotations

import json
import logging
import random
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

from .model import DEFAULT_ROLE_PROFILES, Role, RoleProfile

log = logging.getLogger(__name__)


class ProviderError(Exception):
    """A single provider call failed (transport error, bad payload, timeout)."""


class ProviderExhausted(Exception):
    """Every attempt on every configured provider failed."""

    def __init__(self, role: Role, attempts: int, last_error: str):
        super().__init__(f"{role.value}: no usable output after {attempts} attempts ({last_error})")
        self.role = role
        self.attempts = attempts
        self.last_error = last_error


def role_profile(role: Role | str, overrides: Mapping | None = None) -> RoleProfile:
    """Default profile for ``role``, with optional ``{role: {temperature, token_budget}}`` overrides."""
    role = Role(role)
    base = DEFAULT_ROLE_PROFILES[role]
    if overrides and role.value in overrides:
        o = overrides[role.value]
        return RoleProfile(
            role,
            float(o.get("temperature", base.temperature)),
            int(o.get("token_budget", base.token_budget)),
        )
    return base


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    system_text: str
    user_text: str
    temperature: float
    token_budget: int

    @classmethod
    def for_role(
        cls,
        role: Role | str,
        system_text: str,
        user_text: str,
        overrides: Mapping | None = None,
        **explicit,
    ) -> CompletionRequest:
        profile = role_profile(role, overrides)
        return cls(
            role=profile.role,
            system_text=system_text,
            user_text=user_text,
            temperature=explicit.get("temperature", profile.temperature),
            token_budget=explicit.get("token_budget", profile.token_budget),
        )


@dataclass(frozen=True)
class CompletionResult:
    text: str
    attempts: int
    used_fallback: bool
    provider_id: str


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoff_base_ms: int = 500
    treat_empty_as_failure: bool = True

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class Provider(Protocol):
    provider_id: str

    def send(self, request: CompletionRequest) -> str: ...


class HttpProvider:
    """Chat-completion style endpoint (model, messages, temperature, max_tokens)."""

    def __init__(self, url: str, model: str, api_key: str | None = None, timeout_s: float = 120.0):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.provider_id = f"http:{model}@{url}"

    def payload(self, request: CompletionRequest) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.token_budget,
        }

    def send(self, request: CompletionRequest) -> str:
        body = json.dumps(self.payload(request)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ProviderError(str(exc)) from exc
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {exc}") from exc


class ScriptedProvider:
    """Deterministic mock driven by an ordered script.

    Each entry is ``{"role": ..., "response": text}`` or
    ``{"role": ..., "failure": reason}``. A request consumes the next unused
    entry for its role; once a role's entries are used up, its last entry is
    replayed. A role absent from the script fails. Every request is logged.
    """

    def __init__(self, entries: list[dict], provider_id: str = "mock"):
        self.provider_id = provider_id
        self._queues: dict[str, list[dict]] = {}
        for e in entries:
            role = Role(e["role"]).value
            if ("response" in e) == ("failure" in e):
                raise ValueError(f"script entry needs exactly one of response/failure: {e}")
            self._queues.setdefault(role, []).append(e)
        self._cursor: dict[str, int] = {}
        self.requests: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, provider_id: str = "mock") -> ScriptedProvider:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data.get("entries", [])
        return cls(data, provider_id)

    def send(self, request: CompletionRequest) -> str:
        with self._lock:
            self.requests.append(request)
            queue = self._queues.get(request.role.value)
            if not queue:
                raise ProviderError(f"script has no entry for role {request.role.value}")
            i = self._cursor.get(request.role.value, 0)
            entry = queue[min(i, len(queue) - 1)]
            self._cursor[request.role.value] = i + 1
        if "failure" in entry:
            raise ProviderError(str(entry["failure"]))
        return entry["response"]


class FaultInjectingProvider:
    """Wraps a provider and replaces its output with ``""`` at a seeded rate."""

    def __init__(self, inner: Provider, rate: float, seed: int = 0):
        self.inner = inner
        self.rate = rate
        self.rng = random.Random(seed)
        self.provider_id = f"faulty:{inner.provider_id}"
        self.injected = 0

    def send(self, request: CompletionRequest) -> str:
        text = self.inner.send(request)
        if self.rng.random() < self.rate:
            self.injected += 1
            return ""
        return text


@dataclass
class GatewayStats:
    calls: int = 0
    attempts: int = 0
    failures: int = 0
    fallbacks: int = 0
    exhausted: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, **kw):
        with self.lock:
            for k, v in kw.items():
                setattr(self, k, getattr(self, k) + v)


class Gateway:
    def __init__(
        self,
        primary: Provider,
        fallback: Provider | None = None,
        policy: RetryPolicy | None = None,
        role_overrides: Mapping | None = None,
        sleep: Callable[[float], None] = time.sleep,
        jitter: bool | None = None,
        seed: int | None = None,
    ):
        self.primary = primary
        self.fallback = fallback
        self.policy = policy or RetryPolicy()
        self.role_overrides = dict(role_overrides or {})
        self.sleep = sleep
        if jitter is None:
            jitter = not isinstance(primary, (ScriptedProvider, FaultInjectingProvider))
        self.jitter = jitter
        self._rng = random.Random(seed)
        self.stats = GatewayStats()

    def request(self, role: Role | str, system_text: str, user_text: str) -> CompletionRequest:
        return CompletionRequest.for_role(role, system_text, user_text, self.role_overrides)

    def _delay_s(self, retry_index: int, policy: RetryPolicy) -> float:
        delay = policy.backoff_base_ms * (2 ** retry_index) / 1000.0
        if self.jitter:
            delay *= self._rng.uniform(0.5, 1.5)
        return delay

    def complete(self, request: CompletionRequest, policy: RetryPolicy | None = None) -> CompletionResult:
        policy = policy or self.policy
        self.stats.bump(calls=1)
        providers = [(self.primary, False)]
        if self.fallback is not None:
            providers.append((self.fallback, True))
        attempts = 0
        last_error = "no attempt made"
        for provider, is_fallback in providers:
            if is_fallback:
                self.stats.bump(fallbacks=1)
                log.warning("%s: switching to fallback provider %s", request.role.value, provider.provider_id)
            for retry in range(policy.max_retries + 1):
                if retry > 0:
                    self.sleep(self._delay_s(retry - 1, policy))
                attempts += 1
                self.stats.bump(attempts=1)
                try:
                    text = provider.send(request)
                except ProviderError as exc:
                    last_error = str(exc)
                else:
                    if text.strip() or not policy.treat_empty_as_failure:
                        return CompletionResult(text, attempts, is_fallback, provider.provider_id)
                    last_error = "empty output"
                self.stats.bump(failures=1)
                log.debug("%s attempt %d failed: %s", request.role.value, attempts, last_error)
        self.stats.bump(exhausted=1)
        raise ProviderExhausted(request.role, attempts, last_error)
