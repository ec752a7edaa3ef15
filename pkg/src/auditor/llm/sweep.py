"""Run a template over many contexts for every sampling configuration of a grid."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..context import ContextBlock
from ..ingest.types import IssueKey
from .backend import AnswerCache, ChatBackend, LLMError, ModelAnswer, cached_complete
from .config import PromptTemplate, SamplingConfig


@dataclass
class SweepCell:
    config: SamplingConfig
    answers: dict[IssueKey, ModelAnswer] = field(default_factory=dict)
    failures: dict[IssueKey, str] = field(default_factory=dict)


def sweep(
    template: PromptTemplate,
    contexts: Mapping[IssueKey, ContextBlock],
    configs: Sequence[SamplingConfig],
    backend: ChatBackend,
    cache: AnswerCache | None = None,
    *,
    workers: int = 1,
) -> dict[SamplingConfig, SweepCell]:
    """Every (config, context) pair; transport failures are recorded per cell."""
    if not configs:
        raise ValueError("the sweep grid is empty")
    cells = {cfg: SweepCell(cfg) for cfg in configs}
    jobs = [(cfg, key) for cfg in configs for key in sorted(contexts)]

    def run(job: tuple[SamplingConfig, IssueKey]) -> tuple[SamplingConfig, IssueKey, ModelAnswer | str]:
        cfg, key = job
        try:
            return cfg, key, cached_complete(template, contexts[key], cfg, backend, cache, key)
        except LLMError as exc:
            return cfg, key, f"{type(exc).__name__}: {exc}"

    if workers <= 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    for cfg, key, outcome in results:
        if isinstance(outcome, ModelAnswer):
            cells[cfg].answers[key] = outcome
        else:
            cells[cfg].failures[key] = outcome
    return cells
