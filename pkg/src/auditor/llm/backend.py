"""Chat-completions transport and the single-call ``complete`` operation."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import httpx

from ..context import ContextBlock, Task, estimate_tokens
from ..ingest.types import IssueKey
from .config import PromptTemplate, SamplingConfig
from .parsing import ParseStatus, parse_answer

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "AUDITOR_LLM_ENDPOINT"
MODEL_ENV = "AUDITOR_LLM_MODEL"
TOKEN_ENV = "AUDITOR_LLM_TOKEN"


class LLMError(Exception):
    pass


class BackendUnavailable(LLMError):
    pass


class Timeout(LLMError):
    pass


class ContextTooLarge(LLMError):
    pass


@dataclass(frozen=True)
class ModelAnswer:
    task: Task
    raw_text: str
    parsed: dict[str, Any] | None
    parse_status: ParseStatus
    latency_ms: int
    model: str = ""
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.parse_status is not ParseStatus.UNPARSEABLE

    def to_record(self) -> dict[str, Any]:
        return {
            "task": self.task.value,
            "raw_text": self.raw_text,
            "parsed": self.parsed,
            "parse_status": self.parse_status.value,
            "latency_ms": self.latency_ms,
            "model": self.model,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> ModelAnswer:
        return cls(
            Task(rec["task"]),
            rec["raw_text"],
            rec.get("parsed"),
            ParseStatus(rec["parse_status"]),
            int(rec.get("latency_ms", 0)),
            rec.get("model", ""),
            rec.get("error"),
        )


class ChatBackend:
    """POSTs ``{model, messages, temperature, top_p, max_tokens}`` to a chat-completions URL."""

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        token: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        max_context_tokens: int = 8192,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise BackendUnavailable(f"no chat endpoint configured (set {ENDPOINT_ENV})")
        self.model = model or os.environ.get(MODEL_ENV) or "default"
        token = token if token is not None else os.environ.get(TOKEN_ENV)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_context_tokens = max_context_tokens
        self.sleep = sleep
        self.calls = 0
        self._lock = threading.Lock()
        self._http = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def chat(self, messages: list[dict[str, str]], cfg: SamplingConfig) -> str:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_output_tokens,
        }
        if cfg.seed is not None:
            body["seed"] = cfg.seed
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            with self._lock:
                self.calls += 1
            try:
                resp = self._http.post(self.endpoint, json=body)
            except httpx.TimeoutException as exc:
                last = Timeout(f"chat request timed out: {exc}")
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"chat request failed: {exc}")
            else:
                if resp.status_code < 500 and resp.status_code != 429:
                    if resp.status_code >= 400:
                        raise BackendUnavailable(f"chat endpoint answered HTTP {resp.status_code}")
                    return _content(resp)
                last = BackendUnavailable(f"chat endpoint answered HTTP {resp.status_code}")
            if attempt < self.max_attempts:
                self.sleep(self.backoff_base * 2 ** (attempt - 1))
        assert last is not None
        raise last


def _content(resp: httpx.Response) -> str:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendUnavailable(f"malformed chat response: {exc}") from exc
    return content if isinstance(content, str) else json.dumps(content)


def build_messages(template: PromptTemplate, context: ContextBlock) -> list[dict[str, str]]:
    return [
        {"role": "system", "content": template.instruction_text},
        {"role": "user", "content": context.text},
    ]


def complete(
    template: PromptTemplate,
    context: ContextBlock,
    cfg: SamplingConfig,
    backend: ChatBackend,
) -> ModelAnswer:
    """One model call. Parse failures are returned as data, not retried."""
    if context.task is not template.task:
        raise ValueError(f"context for {context.task.value} given to a {template.task.value} template")
    needed = context.token_estimate + estimate_tokens(template.instruction_text) + cfg.max_output_tokens
    if needed > backend.max_context_tokens:
        raise ContextTooLarge(f"{needed} estimated tokens exceed the backend limit {backend.max_context_tokens}")
    started = time.monotonic()
    raw = backend.chat(build_messages(template, context), cfg)
    latency = int((time.monotonic() - started) * 1000)
    result = parse_answer(raw, template.output_schema)
    return ModelAnswer(template.task, raw, result.parsed, result.status, latency, backend.model, result.error)


CacheKey = tuple[str, str, str, str, int]


class AnswerCache:
    """Line-delimited answers keyed by model, template version, config digest and issue."""

    def __init__(self, path: Path | str) -> None:
        self.path = Path(path)
        self._answers: dict[CacheKey, ModelAnswer] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (rec["model"], rec["template_version"], rec["config_digest"], rec["repo"], int(rec["number"]))
                    self._answers[key] = ModelAnswer.from_record(rec["answer"])
                except (ValueError, KeyError, TypeError):
                    logger.warning("skipping unreadable answer-cache line in %s", self.path)

    @staticmethod
    def key(model: str, template: PromptTemplate, cfg: SamplingConfig, issue: IssueKey) -> CacheKey:
        return (model, template.version, cfg.digest, issue[0].slug, issue[1])

    def __len__(self) -> int:
        return len(self._answers)

    def get(self, key: CacheKey) -> ModelAnswer | None:
        with self._lock:
            found = self._answers.get(key)
            if found is None:
                self.misses += 1
            else:
                self.hits += 1
            return found

    def put(self, key: CacheKey, answer: ModelAnswer) -> None:
        rec = {
            "model": key[0],
            "template_version": key[1],
            "config_digest": key[2],
            "repo": key[3],
            "number": key[4],
            "answer": answer.to_record(),
        }
        with self._lock:
            self._answers[key] = answer
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def cached_complete(
    template: PromptTemplate,
    context: ContextBlock,
    cfg: SamplingConfig,
    backend: ChatBackend,
    cache: AnswerCache | None,
    issue: IssueKey,
) -> ModelAnswer:
    if cache is None:
        return complete(template, context, cfg, backend)
    key = AnswerCache.key(backend.model, template, cfg, issue)
    found = cache.get(key)
    if found is not None:
        return found
    answer = complete(template, context, cfg, backend)
    cache.put(key, answer)
    return answer
