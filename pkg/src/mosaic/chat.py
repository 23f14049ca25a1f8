"""Chat-completions client plumbing: config, HTTP and mock clients, retries.

Structured-output calls go through `run_structured`, which owns the repair
loop: attempt 0 uses the configured sampling defaults, attempt j uses the
j-th rung of the escalation ladder (the last rung repeats if the ladder is
shorter than the retry budget), and defaults apply again after a success.
The repair prompt quotes the expected schema and the first validator error
so the model sees exactly what to fix.

The bearer token is read from an environment variable at request time and
never appears in logs, errors, or transcripts.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import requests

__all__ = [
    "ChatClientConfig",
    "ChatServiceError",
    "StructuredOutputError",
    "ChatClient",
    "HttpChatClient",
    "MockChatClient",
    "CallRecord",
    "StructuredResult",
    "run_structured",
    "DEFAULT_TOKEN_ENV",
]

DEFAULT_TOKEN_ENV = "MOSAIC_CHAT_TOKEN"


class ChatServiceError(RuntimeError):
    """Transport-level failure talking to the chat service."""


class StructuredOutputError(ValueError):
    """All attempts produced output that failed validation.

    Carries the final raw model output for diagnosis.
    """

    def __init__(self, message: str, last_output: str | None, attempts: int):
        super().__init__(message)
        self.last_output = last_output
        self.attempts = attempts


@dataclass(frozen=True)
class ChatClientConfig:
    """Connection and sampling settings for one logical client role."""

    endpoint: str = "http://localhost:8080/v1/chat/completions"
    model: str = "default"
    temperature: float = 0.2
    top_p: float = 0.9
    max_tokens: int = 1024
    max_retries: int = 3
    timeout: float = 60.0
    escalation: tuple[tuple[float, float], ...] = ((0.5, 0.95), (0.8, 0.97), (1.0, 1.0))
    token_env: str = DEFAULT_TOKEN_ENV

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if len(self.escalation) > self.max_retries:
            raise ValueError(
                f"escalation ladder length {len(self.escalation)} exceeds "
                f"max_retries {self.max_retries}"
            )
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")

    def sampling_for_attempt(self, attempt: int) -> tuple[float, float]:
        """Sampling params for attempt number (0 = first try, on defaults)."""
        if attempt <= 0 or not self.escalation:
            return (self.temperature, self.top_p)
        rung = min(attempt - 1, len(self.escalation) - 1)
        return self.escalation[rung]


@dataclass(frozen=True)
class CallRecord:
    """One completed client call, kept for transcripts and budget checks."""

    prompt: str
    temperature: float
    top_p: float
    reply: str


@runtime_checkable
class ChatClient(Protocol):
    def complete(self, prompt: str, *, temperature: float, top_p: float,
                 max_tokens: int) -> str: ...


class HttpChatClient:
    """Industry-standard chat-completions endpoint over HTTP."""

    def __init__(self, config: ChatClientConfig):
        self.config = config

    def complete(self, prompt: str, *, temperature: float, top_p: float,
                 max_tokens: int) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "top_p": top_p,
            "max_tokens": max_tokens,
        }
        try:
            resp = requests.post(
                self.config.endpoint, json=body, headers=headers,
                timeout=self.config.timeout,
            )
        except requests.RequestException as exc:
            # The exception text may embed the URL but never the token.
            raise ChatServiceError(f"chat endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ChatServiceError(
                f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:500]}"
            )
        try:
            payload = resp.json()
            return payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ChatServiceError(f"malformed chat response: {exc}") from exc


class MockChatClient:
    """Scripted client: returns canned replies in order and records calls.

    A reply may be a plain string or a callable taking the prompt, which
    lets a script compute its answer from the prompt text. The recorded
    calls double as the transcript asserted on by retry-budget tests.
    """

    def __init__(self, replies=None, reply_fn: Callable[[str], str] | None = None):
        if (replies is None) == (reply_fn is None):
            raise ValueError("provide exactly one of replies or reply_fn")
        self._replies = list(replies) if replies is not None else None
        self._reply_fn = reply_fn
        self._lock = threading.Lock()
        self.calls: list[CallRecord] = []

    def complete(self, prompt: str, *, temperature: float, top_p: float,
                 max_tokens: int) -> str:
        with self._lock:
            if self._reply_fn is not None:
                reply = self._reply_fn(prompt)
            else:
                if not self._replies:
                    raise ChatServiceError("mock transcript exhausted")
                entry = self._replies.pop(0)
                reply = entry(prompt) if callable(entry) else entry
            self.calls.append(
                CallRecord(prompt=prompt, temperature=temperature, top_p=top_p,
                           reply=reply)
            )
            return reply


@dataclass(frozen=True)
class StructuredResult:
    """Parsed value plus the provenance of how it was obtained."""

    value: object
    raw: str
    retry_count: int
    transcript: tuple[CallRecord, ...] = field(default_factory=tuple)


def run_structured(
    client: ChatClient,
    prompt: str,
    validator: Callable[[str], object],
    config: ChatClientConfig,
    schema_text: str = "",
) -> StructuredResult:
    """Ask for structured output with validation, repair, and escalation.

    ``validator`` maps raw text to the parsed value, raising ValueError on
    any violation; its first error message is quoted in the repair prompt.
    Total client calls never exceed config.max_retries + 1.
    """
    transcript: list[CallRecord] = []
    current_prompt = prompt
    last_raw: str | None = None
    last_error = "no attempts made"
    for attempt in range(config.max_retries + 1):
        temperature, top_p = config.sampling_for_attempt(attempt)
        raw = client.complete(
            current_prompt, temperature=temperature, top_p=top_p,
            max_tokens=config.max_tokens,
        )
        transcript.append(
            CallRecord(prompt=current_prompt, temperature=temperature,
                       top_p=top_p, reply=raw)
        )
        last_raw = raw
        try:
            value = validator(raw)
        except ValueError as exc:
            last_error = str(exc)
            current_prompt = build_repair_prompt(prompt, schema_text, raw, last_error)
            continue
        return StructuredResult(
            value=value, raw=raw, retry_count=attempt, transcript=tuple(transcript)
        )
    raise StructuredOutputError(
        f"structured output failed after {config.max_retries + 1} attempts: "
        f"{last_error}",
        last_output=last_raw,
        attempts=config.max_retries + 1,
    )


def build_repair_prompt(original: str, schema_text: str, raw: str, error: str) -> str:
    """Quote the schema and the first validator error back at the model."""
    parts = [
        "Your previous reply could not be parsed.",
        f"Validator error: {error}",
    ]
    if schema_text:
        parts.append("The required output schema is:\n" + schema_text)
    parts.append("Your previous reply was:\n" + raw)
    parts.append("Answer the original request again, emitting ONLY valid output.")
    parts.append(original)
    return "\n\n".join(parts)


def parse_json_reply(raw: str):
    """Tolerant JSON extraction: strips code fences before parsing."""
    text = raw.strip()
    if text.startswith("```"):
        lines = text.splitlines()
        if lines and lines[0].startswith("```"):
            lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        text = "\n".join(lines).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not valid JSON: {exc}") from exc
