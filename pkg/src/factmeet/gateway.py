"""Chat-completion access: one typed door to the model.

Every pipeline stage goes through :class:`Gateway`, which owns usage
accounting, JSON extraction, and the bounded repair loop for replies
that fail schema validation.  Two transports are provided: an
OpenAI-compatible HTTP backend and a deterministic scripted mock used
for tests and offline fixture runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import requests

from .chunking import TokenEstimator

__all__ = [
    "API_KEY_ENV_VAR",
    "CompletionRequest",
    "DEFAULT_MAX_OUTPUT_TOKENS",
    "DEFAULT_MAX_REPAIRS",
    "Gateway",
    "HttpChatBackend",
    "JsonExtractError",
    "MockExhaustedError",
    "RepairExhaustedError",
    "SchemaError",
    "ScriptedMockBackend",
    "TransportError",
    "UsageRecord",
    "extract_json",
]

logger = logging.getLogger(__name__)

API_KEY_ENV_VAR = "FACTMEET_API_KEY"
DEFAULT_MAX_OUTPUT_TOKENS = 4000
DEFAULT_MAX_REPAIRS = 2
_TRANSPORT_ATTEMPTS = 3


@dataclass(frozen=True)
class CompletionRequest:
    """One chat completion call. Sampling defaults are pinned for reproducibility."""

    user_prompt: str
    system_prompt: str = ""
    temperature: float = 0.1
    top_p: float = 1.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system_prompt:
            msgs.append({"role": "system", "content": self.system_prompt})
        msgs.append({"role": "user", "content": self.user_prompt})
        return msgs


@dataclass(frozen=True)
class UsageRecord:
    stage_tag: str
    input_tokens: int
    output_tokens: int
    wall_time_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage_tag": self.stage_tag,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_time_ms": self.wall_time_ms,
        }


@dataclass(frozen=True)
class BackendReply:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None
    wall_time_ms: int = 0


class TransportError(RuntimeError):
    """The HTTP backend gave up after its retry budget."""


class MockExhaustedError(RuntimeError):
    """The scripted mock ran out of replies."""


class JsonExtractError(ValueError):
    """No parseable JSON payload in the model reply."""


class SchemaError(ValueError):
    """Parsed JSON does not match the expected shape."""


class RepairExhaustedError(RuntimeError):
    """Model kept producing invalid payloads past the repair budget."""

    def __init__(self, stage_tag: str, attempts: int, last_error: Exception | None):
        super().__init__(
            f"stage {stage_tag!r} still invalid after {attempts} attempts: {last_error}"
        )
        self.stage_tag = stage_tag
        self.attempts = attempts
        self.last_error = last_error


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> BackendReply: ...


def prompt_key(request: CompletionRequest) -> str:
    """Stable digest of a request's prompts, for keyed mock replies."""
    blob = request.system_prompt + "\x00" + request.user_prompt
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ScriptedMockBackend:
    """Deterministic replay backend.

    Replies come either from a positional script (consumed in call
    order) or from a prompt-keyed table looked up by sha256 of the
    prompts.  Keyed replies win when both are present and the key
    matches; otherwise the positional script is consumed.
    """

    def __init__(
        self,
        script: Sequence[str | Mapping[str, Any]] = (),
        by_prompt: Mapping[str, str] | None = None,
    ):
        self._script = list(script)
        self._by_prompt = dict(by_prompt or {})
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedMockBackend":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(payload, list):
            return cls(script=payload)
        return cls(script=payload.get("responses", []), by_prompt=payload.get("by_prompt"))

    @property
    def remaining(self) -> int:
        return len(self._script) - self._cursor

    def complete(self, request: CompletionRequest) -> BackendReply:
        keyed = self._by_prompt.get(prompt_key(request))
        if keyed is not None:
            return BackendReply(text=keyed)
        with self._lock:
            if self._cursor >= len(self._script):
                raise MockExhaustedError(
                    f"scripted mock exhausted after {len(self._script)} replies"
                )
            item = self._script[self._cursor]
            self._cursor += 1
        if isinstance(item, str):
            return BackendReply(text=item)
        return BackendReply(
            text=str(item["text"]),
            input_tokens=item.get("input_tokens"),
            output_tokens=item.get("output_tokens"),
        )


class HttpChatBackend:
    """OpenAI-compatible ``/chat/completions`` transport with bounded retries."""

    def __init__(
        self,
        base_url: str,
        model_name: str,
        api_key: str = "",
        timeout_ms: int = 60_000,
        backoff_base: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key
        self.timeout_s = timeout_ms / 1000.0
        self.backoff_base = backoff_base
        self._session = session or requests.Session()

    def complete(self, request: CompletionRequest) -> BackendReply:
        payload = {
            "model": self.model_name,
            "messages": request.messages(),
            "temperature": request.temperature,
            "top_p": request.top_p,
            "frequency_penalty": request.frequency_penalty,
            "presence_penalty": request.presence_penalty,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(_TRANSPORT_ATTEMPTS):
            start = time.perf_counter()
            try:
                response = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
                if response.status_code >= 500 or response.status_code == 429:
                    raise requests.HTTPError(f"retryable status {response.status_code}")
                response.raise_for_status()
                body = response.json()
                usage = body.get("usage", {})
                return BackendReply(
                    text=body["choices"][0]["message"]["content"],
                    input_tokens=usage.get("prompt_tokens"),
                    output_tokens=usage.get("completion_tokens"),
                    wall_time_ms=int((time.perf_counter() - start) * 1000),
                )
            except (requests.RequestException, KeyError, ValueError) as err:
                last_error = err
                if attempt < _TRANSPORT_ATTEMPTS - 1:
                    delay = self.backoff_base * (2**attempt)
                    logger.warning("chat completion attempt %d failed (%s); retrying in %.1fs",
                                   attempt + 1, err, delay)
                    time.sleep(delay)
        raise TransportError(
            f"chat completion failed after {_TRANSPORT_ATTEMPTS} attempts: {last_error}"
        ) from last_error


_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """Pull a JSON payload out of a model reply.

    Accepts bare JSON, code-fenced JSON, and JSON embedded in prose (the
    first decodable ``{...}`` or ``[...]`` block).
    """
    stripped = text.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    for block in _FENCE_RE.findall(text):
        try:
            return json.loads(block.strip())
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    starts = sorted(p for p in (stripped.find("{"), stripped.find("[")) if p >= 0)
    for start in starts:
        try:
            payload, _ = decoder.raw_decode(stripped[start:])
            return payload
        except json.JSONDecodeError:
            continue
    raise JsonExtractError("reply contains no parseable JSON payload")


class Gateway:
    """Backend wrapper owning usage accounting and schema repair."""

    def __init__(self, backend: Backend, estimator: TokenEstimator | None = None):
        self.backend = backend
        self.estimator = estimator or TokenEstimator()
        self.usage_records: list[UsageRecord] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest, stage_tag: str) -> str:
        reply = self.backend.complete(request)
        record = UsageRecord(
            stage_tag=stage_tag,
            input_tokens=(
                reply.input_tokens
                if reply.input_tokens is not None
                else self.estimator.estimate(request.system_prompt) + self.estimator.estimate(request.user_prompt)
            ),
            output_tokens=(
                reply.output_tokens
                if reply.output_tokens is not None
                else self.estimator.estimate(reply.text)
            ),
            wall_time_ms=reply.wall_time_ms,
        )
        with self._lock:
            self.usage_records.append(record)
        return reply.text

    def complete_parsed(
        self,
        request: CompletionRequest,
        stage_tag: str,
        parser: Callable[[str], Any],
        max_repairs: int = DEFAULT_MAX_REPAIRS,
    ) -> Any:
        """Complete and parse, re-prompting on invalid output.

        ``parser`` receives the raw reply text and either returns the
        parsed value or raises :class:`SchemaError` /
        :class:`JsonExtractError`; the message is echoed back to the
        model in the repair prompt.  After ``max_repairs`` failed
        repairs, :class:`RepairExhaustedError`.
        """
        attempt_request = request
        last_error: Exception | None = None
        for _ in range(max_repairs + 1):
            text = self.complete(attempt_request, stage_tag=stage_tag)
            try:
                return parser(text)
            except (JsonExtractError, SchemaError) as err:
                last_error = err
                logger.warning("stage %s produced an invalid reply (%s); repairing", stage_tag, err)
                attempt_request = replace(
                    request,
                    user_prompt=(
                        request.user_prompt
                        + "\n\nYour previous reply was invalid: "
                        + str(err)
                        + "\nReply again in exactly the required format."
                    ),
                )
        raise RepairExhaustedError(stage_tag, max_repairs + 1, last_error)

    def complete_json(
        self,
        request: CompletionRequest,
        stage_tag: str,
        validator: Callable[[Any], Any] | None = None,
        max_repairs: int = DEFAULT_MAX_REPAIRS,
    ) -> Any:
        """Complete and parse a JSON payload, optionally schema-validated.

        The payload may be bare, code-fenced, or embedded in prose; a
        fenced-but-valid reply costs no repair attempt.
        """

        def parse(text: str) -> Any:
            payload = extract_json(text)
            return validator(payload) if validator is not None else payload

        return self.complete_parsed(request, stage_tag, parse, max_repairs=max_repairs)

    def usage_totals(self) -> dict[str, int]:
        with self._lock:
            records = list(self.usage_records)
        return {
            "calls": len(records),
            "input_tokens": sum(r.input_tokens for r in records),
            "output_tokens": sum(r.output_tokens for r in records),
            "wall_time_ms": sum(r.wall_time_ms for r in records),
        }

    def calls_for_stage(self, stage_tag: str) -> int:
        with self._lock:
            return sum(1 for r in self.usage_records if r.stage_tag == stage_tag)
