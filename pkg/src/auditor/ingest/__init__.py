"""Fetch and cache issues, timelines and contributor lists from GitHub."""

from __future__ import annotations

from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path

from .cache import Corpus, CorruptSnapshot, RepoCache, load_cache_dir, snapshot_load, snapshot_store
from .client import (
    AuthError,
    GitHubClient,
    Gone,
    IngestError,
    NotFound,
    RateBudget,
    RateLimited,
    TransportError,
)
from .types import (
    ContributorSet,
    IssueKey,
    IssueState,
    RawIssue,
    RawTimelineEvent,
    RepoRef,
    Tombstone,
    format_key,
    is_bot_login,
    parse_key,
)

__all__ = [
    "AuthError", "ContributorSet", "Corpus", "CorruptSnapshot", "GitHubClient", "Gone",
    "IngestError", "IssueKey", "IssueState", "NotFound", "RateBudget", "RateLimited",
    "RawIssue", "RawTimelineEvent", "RepoCache", "RepoRef", "Tombstone", "TransportError",
    "format_key", "ingest_repo", "ingest_repos", "is_bot_login", "load_cache_dir",
    "parse_key", "snapshot_load", "snapshot_store",
]


def ingest_repo(
    client: GitHubClient,
    cache_root: Path | str,
    repo: RepoRef,
    *,
    since: datetime | None = None,
    timelines_for: Callable[[RawIssue], bool] | None = None,
) -> Corpus:
    """Crawl one repository into ``cache_root`` and return its cached corpus.

    ``timelines_for`` selects the issues whose timelines are fetched; by
    default none are, since the audit only needs them for bug reports.
    """
    cache = RepoCache(cache_root, repo)
    for _ in client.fetch_issues(repo, since=since, cache=cache):
        pass
    client.fetch_contributors(repo, cache=cache)
    if timelines_for is not None:
        issues, tombstones = cache.load_issues()
        for number in sorted(issues):
            if number not in tombstones and timelines_for(issues[number]):
                client.fetch_timeline(repo, number, cache=cache)
    return cache.to_corpus()


def ingest_repos(
    client: GitHubClient,
    cache_root: Path | str,
    repos: Iterable[RepoRef],
    *,
    workers: int = 1,
    **kwargs,
) -> Corpus:
    repos = list(repos)
    if workers <= 1:
        parts = [ingest_repo(client, cache_root, r, **kwargs) for r in repos]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda r: ingest_repo(client, cache_root, r, **kwargs), repos))
    corpus = Corpus()
    for part in parts:
        corpus = corpus.merge(part)
    return corpus
