"""Records mined from the GitHub issue tracker."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from .._time import format_ts, parse_ts

BOT_SUFFIX = "[bot]"


@dataclass(frozen=True, order=True)
class RepoRef:
    owner: str
    name: str

    def __post_init__(self) -> None:
        for part in (self.owner, self.name):
            if not part or "/" in part or part != part.strip():
                raise ValueError(f"invalid repository reference: {self.owner!r}/{self.name!r}")

    @classmethod
    def parse(cls, text: str) -> RepoRef:
        owner, sep, name = text.strip().partition("/")
        if not sep:
            raise ValueError(f"expected owner/name, got {text!r}")
        return cls(owner, name)

    @property
    def slug(self) -> str:
        return f"{self.owner}/{self.name}"

    def __str__(self) -> str:
        return self.slug


IssueKey = tuple[RepoRef, int]


def format_key(key: IssueKey) -> str:
    return f"{key[0].slug}#{key[1]}"


def parse_key(text: str) -> IssueKey:
    slug, sep, number = text.partition("#")
    if not sep:
        raise ValueError(f"expected owner/name#number, got {text!r}")
    return RepoRef.parse(slug), int(number)


def is_bot_login(login: str | None) -> bool:
    return bool(login) and login.lower().endswith(BOT_SUFFIX)


class IssueState(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class RawIssue:
    repo: RepoRef
    number: int
    title: str
    body: str
    labels: tuple[str, ...]
    state: IssueState
    is_pull_request: bool
    created_at: datetime
    closed_at: datetime | None
    author_login: str
    updated_at: datetime | None = None

    def __post_init__(self) -> None:
        if self.number <= 0:
            raise ValueError(f"issue number must be positive, got {self.number}")
        if (self.state is IssueState.CLOSED) != (self.closed_at is not None):
            raise ValueError(f"{self.repo}#{self.number}: state/closed_at mismatch")

    @property
    def key(self) -> IssueKey:
        return (self.repo, self.number)

    @classmethod
    def from_api(cls, repo: RepoRef, data: dict[str, Any]) -> RawIssue:
        closed_at = parse_ts(data.get("closed_at"))
        state = IssueState(data.get("state", "open"))
        # GitHub occasionally reports a closed_at on reopened issues
        if state is IssueState.OPEN:
            closed_at = None
        labels = tuple(
            lab["name"] if isinstance(lab, dict) else str(lab) for lab in data.get("labels") or ()
        )
        return cls(
            repo=repo,
            number=int(data["number"]),
            title=data.get("title") or "",
            body=data.get("body") or "",
            labels=labels,
            state=state,
            is_pull_request="pull_request" in data,
            created_at=parse_ts(data["created_at"]),
            closed_at=closed_at,
            author_login=(data.get("user") or {}).get("login") or "",
            updated_at=parse_ts(data.get("updated_at")),
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "record_kind": "issue",
            "repo": self.repo.slug,
            "number": self.number,
            "title": self.title,
            "body": self.body,
            "labels": list(self.labels),
            "state": self.state.value,
            "is_pull_request": self.is_pull_request,
            "created_at": format_ts(self.created_at),
            "closed_at": format_ts(self.closed_at),
            "author_login": self.author_login,
            "updated_at": format_ts(self.updated_at),
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> RawIssue:
        if not isinstance(rec["labels"], list) or not all(isinstance(x, str) for x in rec["labels"]):
            raise TypeError("labels must be a list of strings")
        if not isinstance(rec["is_pull_request"], bool):
            raise TypeError("is_pull_request must be a boolean")
        return cls(
            repo=RepoRef.parse(rec["repo"]),
            number=_int(rec["number"]),
            title=_str(rec["title"]),
            body=_str(rec["body"]),
            labels=tuple(rec["labels"]),
            state=IssueState(rec["state"]),
            is_pull_request=rec["is_pull_request"],
            created_at=parse_ts(_str(rec["created_at"])),
            closed_at=parse_ts(rec.get("closed_at")),
            author_login=_str(rec["author_login"]),
            updated_at=parse_ts(rec.get("updated_at")),
        )


@dataclass(frozen=True)
class RawTimelineEvent:
    """One timeline entry. Unknown event kinds are kept verbatim."""

    repo: RepoRef
    issue_number: int
    event_id: str
    event_kind: str
    actor_login: str | None
    created_at: datetime
    payload: dict[str, Any] = field(default_factory=dict, hash=False, compare=True)

    @property
    def issue_key(self) -> IssueKey:
        return (self.repo, self.issue_number)

    @property
    def is_bot(self) -> bool:
        return is_bot_login(self.actor_login)

    def to_record(self) -> dict[str, Any]:
        return {
            "record_kind": "timeline_event",
            "repo": self.repo.slug,
            "number": self.issue_number,
            "event_id": self.event_id,
            "event_kind": self.event_kind,
            "actor_login": self.actor_login,
            "created_at": format_ts(self.created_at),
            "payload": self.payload,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> RawTimelineEvent:
        if not isinstance(rec["payload"], dict):
            raise TypeError("payload must be an object")
        actor = rec.get("actor_login")
        if actor is not None and not isinstance(actor, str):
            raise TypeError("actor_login must be a string or null")
        return cls(
            repo=RepoRef.parse(rec["repo"]),
            issue_number=_int(rec["number"]),
            event_id=_str(rec["event_id"]),
            event_kind=_str(rec["event_kind"]),
            actor_login=actor,
            created_at=parse_ts(_str(rec["created_at"])),
            payload=rec["payload"],
        )


@dataclass(frozen=True)
class ContributorSet:
    repo: RepoRef
    logins: frozenset[str]
    fetched_at: datetime

    def __contains__(self, login: object) -> bool:
        return login in self.logins

    def to_record(self) -> dict[str, Any]:
        return {
            "record_kind": "contributor_set",
            "repo": self.repo.slug,
            "logins": sorted(self.logins),
            "fetched_at": format_ts(self.fetched_at),
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> ContributorSet:
        logins = rec["logins"]
        if not isinstance(logins, list) or not all(isinstance(x, str) for x in logins):
            raise TypeError("logins must be a list of strings")
        return cls(
            repo=RepoRef.parse(rec["repo"]),
            logins=frozenset(logins),
            fetched_at=parse_ts(_str(rec["fetched_at"])),
        )


@dataclass(frozen=True)
class Tombstone:
    """Marks an issue that disappeared upstream; its last known record is kept."""

    repo: RepoRef
    number: int
    observed_at: datetime

    @property
    def key(self) -> IssueKey:
        return (self.repo, self.number)

    def to_record(self) -> dict[str, Any]:
        return {
            "record_kind": "tombstone",
            "repo": self.repo.slug,
            "number": self.number,
            "observed_at": format_ts(self.observed_at),
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> Tombstone:
        return cls(RepoRef.parse(rec["repo"]), _int(rec["number"]), parse_ts(_str(rec["observed_at"])))


def _int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"expected integer, got {value!r}")
    return value


def _str(value: Any) -> str:
    if not isinstance(value, str):
        raise TypeError(f"expected string, got {value!r}")
    return value
