"""GitHub REST client with page-number pagination, rate budgeting and retries."""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from collections.abc import Callable, Iterator
from datetime import datetime, timezone
from typing import Any

import httpx

from .._time import parse_ts
from .cache import RepoCache
from .types import ContributorSet, RawIssue, RawTimelineEvent, RepoRef, Tombstone

logger = logging.getLogger(__name__)

DEFAULT_API = "https://api.github.com"
TOKEN_ENV = "AUDITOR_GITHUB_TOKEN"
API_ENV = "AUDITOR_GITHUB_API"

_LINK_RE = re.compile(r'<([^>]+)>;\s*rel="([^"]+)"')

# dropped from timeline payloads: bulky user objects and hypermedia links
_PAYLOAD_DROP = {
    "actor", "user", "event", "created_at", "id", "node_id", "url", "html_url",
    "issue_url", "performed_via_github_app", "reactions", "assignee", "assigner",
    "requested_reviewer", "review_requester", "author", "committer", "source",
}


class IngestError(Exception):
    pass


class AuthError(IngestError):
    pass


class NotFound(IngestError):
    pass


class Gone(IngestError):
    pass


class TransportError(IngestError):
    pass


class RateLimited(IngestError):
    def __init__(self, reset_at: float) -> None:
        super().__init__(f"rate limit exhausted until {datetime.fromtimestamp(reset_at, timezone.utc):%Y-%m-%dT%H:%M:%SZ}")
        self.reset_at = reset_at


class RateBudget:
    """Remaining-quota tracker shared by every request of a client.

    ``acquire`` blocks (or raises ``RateLimited`` when ``wait`` is off) while
    the tracked remaining count is zero and the reset time lies in the future.
    """

    def __init__(
        self,
        *,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
        wait: bool = True,
        margin: float = 1.0,
    ) -> None:
        self.clock = clock
        self.sleep = sleep
        self.wait = wait
        self.margin = margin
        self.remaining: int | None = None
        self.reset_at: float | None = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            if self.remaining is not None and self.remaining <= 0:
                reset = self.reset_at if self.reset_at is not None else self.clock()
                delay = reset - self.clock()
                if delay > -self.margin:
                    if not self.wait:
                        raise RateLimited(reset)
                    logger.warning("rate limit exhausted; sleeping %.0fs", delay + self.margin)
                    self.sleep(delay + self.margin)
                self.remaining = None
                self.reset_at = None
            if self.remaining is not None:
                self.remaining -= 1

    def update(self, headers: httpx.Headers) -> None:
        remaining = headers.get("X-RateLimit-Remaining")
        reset = headers.get("X-RateLimit-Reset")
        with self._lock:
            if remaining is not None:
                self.remaining = int(remaining)
            if reset is not None:
                self.reset_at = float(reset)

    def exhaust(self, reset_at: float) -> None:
        with self._lock:
            self.remaining = 0
            self.reset_at = reset_at


def parse_link_header(value: str | None) -> dict[str, str]:
    if not value:
        return {}
    return {rel: url for url, rel in _LINK_RE.findall(value)}


def event_from_api(
    repo: RepoRef, number: int, data: dict[str, Any], seq: int, fallback: datetime
) -> RawTimelineEvent:
    kind = data.get("event") or "unknown"
    when = (
        data.get("created_at")
        or data.get("submitted_at")
        or (data.get("committer") or {}).get("date")
        or (data.get("author") or {}).get("date")
    )
    created = parse_ts(when) if isinstance(when, str) else fallback
    ident = data.get("id") or data.get("node_id") or data.get("sha")
    event_id = str(ident) if ident is not None else f"{kind}:{seq}"
    actor = (data.get("actor") or data.get("user") or {}).get("login")
    payload = {k: v for k, v in data.items() if k not in _PAYLOAD_DROP}
    if isinstance(data.get("assignee"), dict):
        payload["assignee_login"] = data["assignee"].get("login")
    if kind == "committed":
        payload["author_name"] = (data.get("author") or {}).get("name")
    source = data.get("source")
    if isinstance(source, dict):
        issue = source.get("issue") or {}
        payload["source"] = {
            "type": source.get("type"),
            "number": issue.get("number"),
            "title": issue.get("title"),
            "state": issue.get("state"),
            "is_pull_request": "pull_request" in issue,
            "merged": bool((issue.get("pull_request") or {}).get("merged_at")),
            "repository": (issue.get("repository") or {}).get("full_name"),
        }
    return RawTimelineEvent(repo, number, event_id, kind, actor, created, payload)


class GitHubClient:
    """Synchronous client for the issue, timeline and contributor endpoints.

    ``transport``, ``clock`` and ``sleep`` exist so tests can drive the client
    against an in-process server with a fake clock.
    """

    def __init__(
        self,
        token: str | None = None,
        *,
        base_url: str | None = None,
        per_page: int = 100,
        wait_on_rate_limit: bool = True,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 64.0,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        token = token if token is not None else os.environ.get(TOKEN_ENV)
        headers = {"Accept": "application/vnd.github+json", "User-Agent": "responsiveness-auditor"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.per_page = per_page
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.clock = clock
        self.sleep = sleep
        self.budget = RateBudget(clock=clock, sleep=sleep, wait=wait_on_rate_limit)
        self.request_count = 0
        self._count_lock = threading.Lock()
        self._http = httpx.Client(
            base_url=base_url or os.environ.get(API_ENV) or DEFAULT_API,
            headers=headers,
            timeout=timeout,
            transport=transport,
            follow_redirects=True,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> GitHubClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def now(self) -> datetime:
        return datetime.fromtimestamp(int(self.clock()), timezone.utc)

    def _backoff(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))

    def get(self, path: str, params: dict[str, Any] | None = None) -> httpx.Response:
        attempt = 0
        while True:
            self.budget.acquire()
            with self._count_lock:
                self.request_count += 1
            try:
                resp = self._http.get(path, params=params)
            except httpx.TransportError as exc:
                attempt += 1
                if attempt >= self.max_attempts:
                    raise TransportError(f"GET {path}: {exc}") from exc
                self.sleep(self._backoff(attempt))
                continue
            self.budget.update(resp.headers)
            status = resp.status_code
            if status in (403, 429) and self._is_rate_limited(resp):
                retry_after = resp.headers.get("Retry-After")
                if retry_after is not None:
                    self.budget.exhaust(self.clock() + float(retry_after))
                elif self.budget.reset_at is None:
                    self.budget.exhaust(self.clock() + 60)
                else:
                    self.budget.exhaust(self.budget.reset_at)
                if not self.budget.wait:
                    raise RateLimited(self.budget.reset_at or self.clock())
                continue
            if status in (401, 403):
                raise AuthError(f"GET {path}: HTTP {status}")
            if status == 404:
                raise NotFound(f"GET {path}: not found")
            if status == 410:
                raise Gone(f"GET {path}: gone")
            if status >= 500:
                attempt += 1
                if attempt >= self.max_attempts:
                    raise TransportError(f"GET {path}: HTTP {status} after {attempt} attempts")
                self.sleep(self._backoff(attempt))
                continue
            if status >= 400:
                raise IngestError(f"GET {path}: HTTP {status}")
            return resp

    @staticmethod
    def _is_rate_limited(resp: httpx.Response) -> bool:
        if resp.headers.get("X-RateLimit-Remaining") == "0" or "Retry-After" in resp.headers:
            return True
        return "rate limit" in resp.text.lower()

    def paginate(
        self, path: str, params: dict[str, Any] | None = None, start_page: int = 1
    ) -> Iterator[tuple[int, list[Any]]]:
        page = start_page
        while True:
            resp = self.get(path, {**(params or {}), "per_page": self.per_page, "page": page})
            items = [] if resp.status_code == 204 or not resp.content else resp.json()
            if not isinstance(items, list):
                raise IngestError(f"GET {path}: expected a JSON array")
            yield page, items
            links = parse_link_header(resp.headers.get("Link"))
            if not items or len(items) < self.per_page or (links and "next" not in links):
                return
            page += 1

    def fetch_issues(
        self, repo: RepoRef, since: datetime | None = None, cache: RepoCache | None = None
    ) -> Iterator[RawIssue]:
        """Yield issues and pull requests in ascending number order.

        With a cache, each record is appended as it is yielded and the next
        page is checkpointed, so a restarted crawl resumes where it stopped.
        """
        since_text = since.strftime("%Y-%m-%dT%H:%M:%SZ") if since else None
        start_page, seen = 1, set()
        if cache is not None:
            cache.ensure_issue_log(self.now())
            progress = cache.read_progress()
            if progress and progress.get("since") == since_text:
                start_page = progress["next_page"]
                seen = set(progress.get("seen", ()))
        params: dict[str, Any] = {"state": "all", "sort": "created", "direction": "asc"}
        if since_text:
            params["since"] = since_text
        path = f"/repos/{repo.owner}/{repo.name}/issues"
        for page, items in self.paginate(path, params, start_page):
            for item in items:
                issue = RawIssue.from_api(repo, item)
                seen.add(issue.number)
                if cache is not None:
                    cache.append(issue)
                yield issue
            if cache is not None:
                cache.write_progress({"since": since_text, "next_page": page + 1, "seen": sorted(seen)})
        if cache is not None:
            if since is None:
                self._tombstone_missing(cache, seen)
            cache.clear_progress()
            cache.compact()

    def _tombstone_missing(self, cache: RepoCache, seen: set[int]) -> None:
        issues, tombstones = cache.load_issues()
        for number in sorted(set(issues) - seen - set(tombstones)):
            cache.append(Tombstone(cache.repo, number, self.now()))

    def fetch_timeline(
        self, repo: RepoRef, number: int, cache: RepoCache | None = None, refresh: bool = False
    ) -> list[RawTimelineEvent]:
        if cache is not None and not refresh:
            cached = cache.load_timeline(number)
            if cached is not None:
                return list(cached)
        path = f"/repos/{repo.owner}/{repo.name}/issues/{number}/timeline"
        events: list[RawTimelineEvent] = []
        fallback = datetime.fromtimestamp(0, timezone.utc)
        try:
            for _, items in self.paginate(path):
                for item in items:
                    event = event_from_api(repo, number, item, len(events), fallback)
                    fallback = event.created_at
                    events.append(event)
        except Gone:
            logger.warning("%s#%d is gone; recording a tombstone", repo, number)
            if cache is not None:
                cache.ensure_issue_log(self.now())
                cache.append(Tombstone(repo, number, self.now()))
            return []
        events.sort(key=lambda e: e.created_at)
        if cache is not None:
            cache.store_timeline(number, events, self.now())
        return events

    def fetch_contributors(self, repo: RepoRef, cache: RepoCache | None = None) -> ContributorSet:
        path = f"/repos/{repo.owner}/{repo.name}/contributors"
        logins: set[str] = set()
        for _, items in self.paginate(path):
            logins.update(item["login"] for item in items if item.get("login"))
        result = ContributorSet(repo, frozenset(logins), self.now())
        if cache is not None:
            cache.store_contributors(result)
        return result
