"""Chat-completion gateway: the only place the package talks to a model.

Two backends sit behind :class:`Gateway`:

* :class:`ScriptedBackend` pops canned responses from per-tag queues, so whole
  simulations replay deterministically without a model.
* :class:`LiveBackend` posts OpenAI-compatible chat-completions requests with
  bounded retries.

Every call, including structured-output repair calls, is appended to an
:class:`AuditLog`.
"""

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
from typing import Any, Mapping, Sequence

import httpx
import jsonschema

from .errors import CupError

log = logging.getLogger(__name__)

API_KEY_ENV = "CUP_API_KEY"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-4o"


class GatewayError(CupError):
    module = "llm-gateway"


class BackendUnavailable(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    def __init__(self, tag: str):
        super().__init__(tag)
        self.tag = tag


class AuthMissing(GatewayError):
    pass


class UnparseableAfterRepair(GatewayError):
    def __init__(self, message: str, first_text: str, second_text: str):
        super().__init__(message)
        self.first_text = first_text
        self.second_text = second_text


class InvalidScript(GatewayError):
    pass


ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    tag: str
    temperature: float = 0.0
    max_tokens: int = 1024
    tick: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        if not self.messages:
            raise GatewayError("chat request needs at least one message")
        for role, _ in self.messages:
            if role not in ROLES:
                raise GatewayError(f"bad role {role!r}")
        if self.temperature < 0:
            raise GatewayError("temperature must be >= 0")

    @classmethod
    def of(cls, tag: str, user: str, system: str | None = None, **kw: Any) -> "ChatRequest":
        msgs = ([("system", system)] if system else []) + [("user", user)]
        return cls(tuple(msgs), tag, **kw)

    @property
    def prompt_text(self) -> str:
        return "\n\n".join(text for _, text in self.messages)

    def prompt_sha256(self) -> str:
        payload = json.dumps([list(m) for m in self.messages], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Completion:
    text: str
    backend: str
    latency_ms: float


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------


@dataclass
class ScriptEntry:
    tag: str
    responses: list[str]
    match: tuple[str, ...] = ()
    default: str | None = None

    def matches(self, text: str) -> bool:
        return all(m in text for m in self.match)


def _as_text(value: Any) -> str:
    # Script files may hold structured responses inline; they are sent as JSON text.
    return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)


@dataclass
class Script:
    """Tag-addressed response queues.

    For a request, entries with the request's tag are scanned in file order; the
    first whose ``match`` substrings all occur in the prompt and that still has
    a queued response (or a per-entry ``default``) answers. The script-level
    ``default`` answers anything left over.
    """

    entries: list[ScriptEntry] = field(default_factory=list)
    default: str | None = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "Script":
        entries = []
        for raw in data.get("entries", []):
            if "tag" not in raw:
                raise InvalidScript("script entry without tag")
            match = raw.get("match") or ()
            if isinstance(match, str):
                match = (match,)
            entries.append(
                ScriptEntry(
                    tag=raw["tag"],
                    responses=[_as_text(r) for r in raw.get("responses", [])],
                    match=tuple(match),
                    default=_as_text(raw["default"]) if raw.get("default") is not None else None,
                )
            )
        default = data.get("default")
        return cls(entries, _as_text(default) if default is not None else None)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"entries": []}
        for e in self.entries:
            item: dict[str, Any] = {"tag": e.tag}
            if e.match:
                item["match"] = list(e.match) if len(e.match) > 1 else e.match[0]
            item["responses"] = list(e.responses)
            if e.default is not None:
                item["default"] = e.default
            out["entries"].append(item)
        if self.default is not None:
            out["default"] = self.default
        return out

    @classmethod
    def load(cls, path: str | Path) -> "Script":
        return cls.from_dict(json.loads(Path(path).read_text()))


class ScriptedBackend:
    name = "scripted"

    def __init__(self, script: Script | Mapping):
        self.script = script if isinstance(script, Script) else Script.from_dict(script)
        self._by_tag: dict[str, list[int]] = {}
        for i, e in enumerate(self.script.entries):
            self._by_tag.setdefault(e.tag, []).append(i)
        self._cursor = [0] * len(self.script.entries)
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> str:
        text = request.prompt_text
        with self._lock:
            fallback = None
            for i in self._by_tag.get(request.tag, ()):
                entry = self.script.entries[i]
                if not entry.matches(text):
                    continue
                if self._cursor[i] < len(entry.responses):
                    self._cursor[i] += 1
                    return entry.responses[self._cursor[i] - 1]
                if fallback is None and entry.default is not None:
                    fallback = entry.default
            if fallback is not None:
                return fallback
            if self.script.default is not None:
                return self.script.default
        raise ScriptExhausted(request.tag)

    def state(self) -> list[int]:
        with self._lock:
            return list(self._cursor)

    def restore(self, cursor: Sequence[int]) -> None:
        if len(cursor) != len(self._cursor):
            raise InvalidScript("cursor does not fit this script")
        with self._lock:
            self._cursor = list(cursor)


# ---------------------------------------------------------------------------
# Live backend
# ---------------------------------------------------------------------------


class LiveBackend:
    """OpenAI-compatible chat-completions over HTTP."""

    name = "live"
    transient_status = frozenset({408, 409, 425, 429, 500, 502, 503, 504})

    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        model: str = DEFAULT_MODEL,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise AuthMissing(f"live backend needs ${API_KEY_ENV}")
        self.endpoint = endpoint
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def body(self, request: ChatRequest) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def send(self, request: ChatRequest) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last: str = ""
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=self.body(request), headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("chat call %s attempt %d failed: %s", request.tag, attempt + 1, last)
                continue
            if resp.status_code in self.transient_status:
                last = f"HTTP {resp.status_code}"
                log.warning("chat call %s attempt %d: %s", request.tag, attempt + 1, last)
                continue
            if resp.status_code in (401, 403):
                raise AuthMissing(f"endpoint rejected credential (HTTP {resp.status_code})")
            if resp.status_code >= 400:
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable(f"malformed completion body: {exc}") from exc
        raise BackendUnavailable(f"{self.max_attempts} attempts failed; last: {last}")

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


class AuditLog:
    """Append-only call log, optionally mirrored to a JSONL file."""

    def __init__(self, path: str | Path | None = None):
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def append(self, entry: dict) -> None:
        with self._lock:
            self.entries.append(entry)
            if self._fh:
                self._fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                self._fh.flush()

    def __len__(self) -> int:
        return len(self.entries)

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "AuditLog":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def extract_json(text: str) -> Any:
    """Parse the JSON document in a completion, tolerating code fences and chatter."""
    text = text.strip()
    fenced = _FENCE.search(text)
    if fenced:
        text = fenced.group(1).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    starts = [i for i in (text.find("{"), text.find("[")) if i >= 0]
    if not starts:
        raise ValueError("no JSON document found")
    start = min(starts)
    closer = "}" if text[start] == "{" else "]"
    end = text.rfind(closer)
    if end <= start:
        raise ValueError("unterminated JSON document")
    return json.loads(text[start : end + 1])


def check_schema(value: Any, schema: Mapping) -> None:
    try:
        jsonschema.validate(value, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"{path}: {exc.message}") from None


REPAIR_INSTRUCTION = (
    "Your previous reply could not be parsed: {error}\n"
    "Previous reply:\n{text}\n\n"
    "Reply again with only a JSON document that satisfies this schema:\n{schema}"
)


class Gateway:
    def __init__(
        self,
        backend: ScriptedBackend | LiveBackend,
        audit: AuditLog | None = None,
        max_in_flight: int = 4,
        temperature_overrides: Mapping[str, float] | None = None,
    ):
        self.backend = backend
        self.audit = audit if audit is not None else AuditLog()
        self.temperature_overrides = dict(temperature_overrides or {})
        self.context: dict[str, Any] = {}
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @property
    def call_count(self) -> int:
        return len(self.audit)

    def complete(self, request: ChatRequest, *, repair: bool = False) -> Completion:
        if request.tag in self.temperature_overrides:
            request = ChatRequest(
                request.messages,
                request.tag,
                self.temperature_overrides[request.tag],
                request.max_tokens,
                request.tick,
            )
        with self._slots:
            started = time.perf_counter()
            text = self.backend.send(request)
            latency = 0.0 if self.backend.name == "scripted" else round((time.perf_counter() - started) * 1000, 3)
        entry = dict(self.context)
        entry.update(
            tick=request.tick,
            tag=request.tag,
            prompt_sha256=request.prompt_sha256(),
            prompt=request.prompt_text,
            response=text,
            backend=self.backend.name,
            latency_ms=latency,
        )
        if repair:
            entry["repair"] = True
        self.audit.append(entry)
        return Completion(text, self.backend.name, latency)

    def complete_structured(self, request: ChatRequest, schema: Mapping) -> Any:
        first = self.complete(request).text
        try:
            value = extract_json(first)
            check_schema(value, schema)
            return value
        except ValueError as exc:
            error = str(exc)
        log.info("repairing unparseable %s reply: %s", request.tag, error)
        fix = REPAIR_INSTRUCTION.format(error=error, text=first, schema=json.dumps(schema))
        repaired = ChatRequest(
            request.messages + (("assistant", first), ("user", fix)),
            request.tag,
            request.temperature,
            request.max_tokens,
            request.tick,
        )
        second = self.complete(repaired, repair=True).text
        try:
            value = extract_json(second)
            check_schema(value, schema)
            return value
        except ValueError as exc:
            raise UnparseableAfterRepair(f"{request.tag}: {exc}", first, second) from None


def make_gateway(
    backend: str,
    script: Script | str | Path | None = None,
    audit: AuditLog | None = None,
    **live_kw: Any,
) -> Gateway:
    max_in_flight = live_kw.pop("max_in_flight", 4)
    overrides = live_kw.pop("temperature_overrides", None)
    if backend == "scripted":
        if script is None:
            raise InvalidScript("scripted backend needs a script")
        if not isinstance(script, Script):
            script = Script.load(script)
        impl: ScriptedBackend | LiveBackend = ScriptedBackend(script)
    elif backend == "live":
        impl = LiveBackend(**live_kw)
    else:
        raise GatewayError(f"unknown backend {backend!r}")
    return Gateway(impl, audit, max_in_flight=max_in_flight, temperature_overrides=overrides)
