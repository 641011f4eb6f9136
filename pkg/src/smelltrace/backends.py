"""Chat backends for the LLM agent: a replayable script and an HTTP chat-completion client."""
from __future__ import annotations

import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

from .appsim import AgentFailure

log = logging.getLogger(__name__)

PROMPT_KINDS = ("plan", "act", "param", "feedback", "observe", "reflect")


class BackendError(AgentFailure):
    pass


class BackendUnreachable(BackendError):
    pass


@dataclass(frozen=True)
class Request:
    kind: str
    messages: tuple[dict, ...]
    temperature: float

    @property
    def text(self) -> str:
        return "\n".join(m["content"] for m in self.messages)


class LlmBackend(Protocol):
    requests: list[Request]

    def complete(self, kind: str, messages: list[dict], temperature: float) -> str: ...


@dataclass
class ScriptEntry:
    kind: str
    response: str
    match: str | None = None
    repeat: int = 1


class ScriptedBackend:
    """Answers each prompt with the next unused scripted response of the same kind.

    An entry may carry a ``match`` regex, searched in the prompt text; entries whose
    pattern does not match are skipped (not consumed). When no entry fits, the
    per-kind default answers; without a default the script is exhausted. A
    ``repeat`` of 0 or less never runs out.
    """

    def __init__(self, entries: list[ScriptEntry] = (), defaults: dict[str, str] | None = None):
        self._queue: list[list] = []  # [entry, remaining uses]
        for e in entries:
            if e.kind not in PROMPT_KINDS:
                raise ValueError(f"unknown prompt kind {e.kind!r}")
            self._queue.append([e, e.repeat if e.repeat > 0 else None])
        self.defaults = dict(defaults or {})
        self.requests: list[Request] = []
        self.responses: list[str] = []

    @classmethod
    def from_dict(cls, doc: dict) -> "ScriptedBackend":
        entries = [ScriptEntry(r["kind"], r["response"], r.get("match"), int(r.get("repeat", 1)))
                   for r in doc.get("responses", [])]
        return cls(entries, doc.get("defaults"))

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, kind: str, messages: list[dict], temperature: float) -> str:
        req = Request(kind, tuple(messages), temperature)
        self.requests.append(req)
        for slot in self._queue:
            entry, left = slot
            if entry.kind != kind or left == 0:
                continue
            if entry.match is not None and not re.search(entry.match, req.text):
                continue
            if left is not None:
                slot[1] -= 1
            self.responses.append(entry.response)
            return entry.response
        if kind in self.defaults:
            self.responses.append(self.defaults[kind])
            return self.defaults[kind]
        raise BackendError(f"script exhausted for a {kind} prompt")


def bundled_scripts() -> list[str]:
    suffix = ".script.json"
    return sorted(p.name[: -len(suffix)] for p in resources.files("smelltrace.oracles").iterdir()
                  if p.name.endswith(suffix))


def load_script(path) -> ScriptedBackend:
    """Load a script file, or a bundled oracle script by app name (e.g. ``"login_home"``)."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_scripts():
        text = resources.files("smelltrace.oracles").joinpath(f"{path}.script.json").read_text(encoding="utf-8")
        return ScriptedBackend.from_dict(json.loads(text))
    return ScriptedBackend.from_file(p)


@dataclass
class HttpBackend:
    """Client for an OpenAI-style ``/chat/completions`` endpoint (Ollama, vLLM, llama.cpp ...)."""

    base_url: str = "http://localhost:11434/v1"
    model: str = "mistral-small3.1:24b"
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    api_key: str | None = None
    requests: list[Request] = field(default_factory=list)
    sleep: object = field(default=time.sleep, repr=False)

    def __post_init__(self):
        self._lock = threading.Lock()

    def _post(self, body: dict) -> dict:
        req = urllib.request.Request(
            self.base_url.rstrip("/") + "/chat/completions",
            data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json",
                     **({"Authorization": f"Bearer {self.api_key}"} if self.api_key else {})},
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def complete(self, kind: str, messages: list[dict], temperature: float) -> str:
        with self._lock:
            self.requests.append(Request(kind, tuple(messages), temperature))
        body = {"model": self.model, "messages": list(messages), "temperature": temperature, "stream": False}
        last: Exception | None = None
        for attempt in range(1, self.max_retries + 1):
            try:
                data = self._post(body)
                return data["choices"][0]["message"]["content"]
            except urllib.error.HTTPError as exc:
                if exc.code != 429 and exc.code < 500:
                    raise BackendError(f"HTTP {exc.code} from {self.base_url}") from exc
                last = exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                last = BackendError(f"malformed completion: {exc}")
            log.warning("attempt %d/%d to %s failed: %s", attempt, self.max_retries, self.base_url, last)
            if attempt < self.max_retries:
                self.sleep(self.backoff * 2 ** (attempt - 1))
        raise BackendUnreachable(f"{self.base_url} failed after {self.max_retries} attempts: {last}")
