"""Agent backends, the retry/repair policy, and transcript persistence.

Transport failures (network, auth, malformed completion envelope) raise
AgentBackendError and are never retried here; parse failures re-ask the
backend with the validation error appended, up to the retry budget, and end
in a "failed" transcript rather than an exception so callers can decide how
to degrade.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from ..errors import AgentBackendError, AgentResponseError
from .parsing import parse_response
from .roles import AgentRole, PromptTemplate, load_template, render_prompt

DEFAULT_RETRIES = 2
PARSE_OUTCOMES = ("ok", "repaired", "failed")


@dataclass(frozen=True)
class BackendReply:
    """One raw completion: the text plus its latency and the serving model."""

    text: str
    latency: float = 0.0
    model: str = "mock"


class AgentBackend(Protocol):
    def complete(
        self,
        role: AgentRole,
        system_text: str,
        user_text: str,
        variables: Mapping[str, str] | None = None,
    ) -> BackendReply: ...


@dataclass(frozen=True)
class AgentTranscript:
    role: str
    request_system: str
    request_user: str
    raw_response: str
    outcome: str
    retries: int
    latency: float
    model: str

    def validate(self) -> None:
        if self.outcome not in PARSE_OUTCOMES:
            raise AgentBackendError(f"transcript outcome {self.outcome!r} is invalid")
        if self.retries < 0 or self.latency < 0:
            raise AgentBackendError("transcript retries and latency must be >= 0")

    def to_wire(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "request_system": self.request_system,
            "request_user": self.request_user,
            "raw_response": self.raw_response,
            "outcome": self.outcome,
            "retries": self.retries,
            "latency": self.latency,
            "model": self.model,
        }

    @staticmethod
    def from_wire(doc: Mapping[str, Any]) -> "AgentTranscript":
        transcript = AgentTranscript(
            role=doc["role"],
            request_system=doc["request_system"],
            request_user=doc["request_user"],
            raw_response=doc["raw_response"],
            outcome=doc["outcome"],
            retries=int(doc["retries"]),
            latency=float(doc["latency"]),
            model=doc["model"],
        )
        transcript.validate()
        return transcript


class TranscriptLog:
    """Append-only JSONL sink for transcripts; single writer per run."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, transcript: AgentTranscript) -> None:
        transcript.validate()
        line = json.dumps(transcript.to_wire(), sort_keys=True, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")


def read_transcripts(path: str | Path) -> list[AgentTranscript]:
    transcripts = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                transcripts.append(AgentTranscript.from_wire(json.loads(line)))
    return transcripts


@dataclass(frozen=True)
class AgentCall:
    """Outcome of call_with_retry: a structure on success, an error message
    (with the failed transcript) otherwise."""

    structure: Any | None
    transcript: AgentTranscript
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


_CORRECTION = (
    "\n\n# Correction\n"
    "Your previous response was rejected: {error}\n"
    "Output the corrected JSON only."
)


def call_with_retry(
    backend: AgentBackend,
    role: AgentRole,
    variables: Mapping[str, str],
    *,
    retries: int = DEFAULT_RETRIES,
    log: TranscriptLog | None = None,
    template: PromptTemplate | None = None,
) -> AgentCall:
    """Render, call, parse; on parse failure re-ask with the error appended.

    Makes at most ``retries + 1`` backend calls. The transcript records the
    original rendered request, the last raw response, and the summed latency.
    """
    if retries < 0:
        raise AgentBackendError("retries must be >= 0")
    template = template or load_template(role)
    system_text, user_text = render_prompt(template, variables)
    prompt = user_text
    total_latency = 0.0
    model = "unknown"
    raw = ""
    last_error: AgentResponseError | None = None
    for attempt in range(retries + 1):
        reply = backend.complete(role, system_text, prompt, variables)
        raw = reply.text
        total_latency += reply.latency
        model = reply.model
        try:
            structure = parse_response(role, raw)
        except AgentResponseError as exc:
            last_error = exc
            prompt = user_text + _CORRECTION.format(error=exc)
            continue
        transcript = AgentTranscript(
            role=role.value,
            request_system=system_text,
            request_user=user_text,
            raw_response=raw,
            outcome="ok" if attempt == 0 else "repaired",
            retries=attempt,
            latency=total_latency,
            model=model,
        )
        if log is not None:
            log.append(transcript)
        return AgentCall(structure=structure, transcript=transcript)
    transcript = AgentTranscript(
        role=role.value,
        request_system=system_text,
        request_user=user_text,
        raw_response=raw,
        outcome="failed",
        retries=retries,
        latency=total_latency,
        model=model,
    )
    if log is not None:
        log.append(transcript)
    return AgentCall(structure=None, transcript=transcript, error=str(last_error))


@dataclass(frozen=True)
class LiveBackendConfig:
    """Minimal chat-completion endpoint description.

    The auth token is read from the environment variable named by
    ``auth_env`` at call time, never stored in the config.
    """

    base_url: str
    model: str
    auth_env: str = "REPROGRAPH_API_KEY"
    temperature: float = 0.0
    timeout: float = 120.0
    max_output_tokens: int = 4096

    def validate(self) -> None:
        if not self.base_url or not self.model:
            raise AgentBackendError("live backend needs base_url and model")
        if self.temperature < 0 or self.timeout <= 0 or self.max_output_tokens < 1:
            raise AgentBackendError("live backend has out-of-range numeric settings")


Transport = Callable[[str, Mapping[str, str], bytes, float], bytes]


def _http_post(url: str, headers: Mapping[str, str], data: bytes, timeout: float) -> bytes:
    request = urllib.request.Request(url, data=data, headers=dict(headers), method="POST")
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return response.read()


class HttpAgentBackend:
    """Chat-completion client over HTTP; any provider with the standard
    ``choices[0].message.content`` envelope works."""

    def __init__(self, config: LiveBackendConfig, transport: Transport | None = None) -> None:
        config.validate()
        self.config = config
        self._transport = transport or _http_post

    def complete(
        self,
        role: AgentRole,
        system_text: str,
        user_text: str,
        variables: Mapping[str, str] | None = None,
    ) -> BackendReply:
        token = os.environ.get(self.config.auth_env, "")
        if not token:
            raise AgentBackendError(
                f"auth environment variable {self.config.auth_env} is not set"
            )
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {
            "Content-Type": "application/json",
            "Authorization": f"Bearer {token}",
        }
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        }
        started = time.perf_counter()
        try:
            body = self._transport(
                url, headers, json.dumps(payload).encode("utf-8"), self.config.timeout
            )
        except (OSError, urllib.error.URLError) as exc:
            raise AgentBackendError(f"transport failure for {role.value}: {exc}") from exc
        latency = time.perf_counter() - started
        try:
            envelope = json.loads(body)
            text = envelope["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise AgentBackendError(f"malformed completion envelope: {exc!r}") from exc
        if not isinstance(text, str):
            raise AgentBackendError("completion content is not text")
        return BackendReply(text=text, latency=latency, model=self.config.model)


class BoundedBackend:
    """Admission gate: at most ``limit`` in-flight complete() calls."""

    def __init__(self, inner: AgentBackend, limit: int = 4) -> None:
        if limit < 1:
            raise AgentBackendError("in-flight limit must be >= 1")
        self._inner = inner
        self._gate = threading.BoundedSemaphore(limit)

    def complete(
        self,
        role: AgentRole,
        system_text: str,
        user_text: str,
        variables: Mapping[str, str] | None = None,
    ) -> BackendReply:
        with self._gate:
            return self._inner.complete(role, system_text, user_text, variables)
