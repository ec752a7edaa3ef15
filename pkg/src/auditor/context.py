"""Render the text blocks fed to the two model stages."""

from __future__ import annotations

import enum
import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from ._time import format_ts
from .ingest.types import ContributorSet, RawIssue, RawTimelineEvent, is_bot_login

DEFAULT_EVENT_KINDS = frozenset({
    "commented",
    "closed",
    "reopened",
    "labeled",
    "unlabeled",
    "assigned",
    "referenced",
    "cross-referenced",
    "committed",
    "merged",
    "marked_as_duplicate",
    "unmarked_as_duplicate",
    "renamed",
})
DEFAULT_TOKEN_BUDGET = 6000
DEFAULT_COMMENT_CLIP = 600
TRUNCATION_MARK = " [...]"

_MD_IMAGE = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_HTML_IMAGE = re.compile(r"<img\b[^>]*>", re.IGNORECASE)
_WS = re.compile(r"\s+")


class Task(str, enum.Enum):
    BUG_IDENTIFICATION = "bug_identification"
    RESPONSIVENESS = "responsiveness"


class ActorRole(str, enum.Enum):
    UPSTREAM = "UPSTREAM"
    DOWNSTREAM = "DOWNSTREAM"
    BOT = "BOT"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class ContextBlock:
    task: Task
    text: str
    token_estimate: int
    truncated: bool
    included_events: tuple[str, ...] = ()


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def actor_role(login: str | None, contributors: ContributorSet | None, *, flag_bots: bool = True) -> ActorRole:
    """Contributor status decides upstream; bots are set aside first when ``flag_bots``."""
    if not login:
        return ActorRole.UNKNOWN
    if flag_bots and is_bot_login(login):
        return ActorRole.BOT
    if contributors is not None and login in contributors.logins:
        return ActorRole.UPSTREAM
    return ActorRole.DOWNSTREAM


def strip_images(text: str) -> str:
    return _HTML_IMAGE.sub("[image]", _MD_IMAGE.sub("[image]", text))


def _clip(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    return text[: max(0, limit - len(TRUNCATION_MARK))] + TRUNCATION_MARK


def build_bugid_context(issue: RawIssue, budget: int = DEFAULT_TOKEN_BUDGET) -> ContextBlock:
    title = f"TITLE: {issue.title}\n"
    body = strip_images(issue.body).strip() or "(empty)"
    text = f"{title}DESCRIPTION: {body}"
    if estimate_tokens(text) <= budget:
        return ContextBlock(Task.BUG_IDENTIFICATION, text, estimate_tokens(text), False)
    room = budget * 4 - len(title) - len("DESCRIPTION: ")
    text = f"{title}DESCRIPTION: {_clip(body, max(room, 0))}"
    return ContextBlock(Task.BUG_IDENTIFICATION, text, estimate_tokens(text), True)


def select_events(
    events: Iterable[RawTimelineEvent], kinds: Iterable[str] = DEFAULT_EVENT_KINDS
) -> list[RawTimelineEvent]:
    keep = frozenset(kinds)
    return [e for e in events if e.event_kind in keep]


def summarize_event(event: RawTimelineEvent, comment_clip: int = DEFAULT_COMMENT_CLIP) -> str:
    p = event.payload
    kind = event.event_kind
    if kind == "commented":
        return _clip(_WS.sub(" ", strip_images(p.get("body") or "")).strip(), comment_clip)
    if kind in ("labeled", "unlabeled"):
        return (p.get("label") or {}).get("name", "")
    if kind in ("assigned", "unassigned"):
        return p.get("assignee_login") or ""
    if kind == "renamed":
        rename = p.get("rename") or {}
        return f"{rename.get('from', '')!r} -> {rename.get('to', '')!r}"
    if kind == "cross-referenced":
        src = p.get("source") or {}
        what = "pull request" if src.get("is_pull_request") else "issue"
        state = "merged" if src.get("merged") else src.get("state") or ""
        where = src.get("repository") or ""
        return f"{what} {where}#{src.get('number')} ({state}) {src.get('title') or ''}".strip()
    if kind == "committed":
        msg = (p.get("message") or "").splitlines()
        sha = (p.get("sha") or "")[:7]
        return f"{sha} {msg[0] if msg else ''}".strip()
    if kind in ("referenced", "merged", "closed", "reopened"):
        parts = []
        if p.get("commit_id"):
            parts.append(f"commit {p['commit_id'][:7]}")
        if kind == "closed" and p.get("state_reason"):
            parts.append(str(p["state_reason"]))
        return " ".join(parts)
    return ""


def render_event(event: RawTimelineEvent, role: ActorRole, comment_clip: int = DEFAULT_COMMENT_CLIP) -> str:
    summary = summarize_event(event, comment_clip)
    line = f"[{format_ts(event.created_at)}] {role.value} {event.event_kind}"
    return f"{line}: {summary}" if summary else line


def build_responsiveness_context(
    issue: RawIssue,
    events: Sequence[RawTimelineEvent],
    contributors: ContributorSet | None,
    *,
    budget: int = DEFAULT_TOKEN_BUDGET,
    comment_clip: int = DEFAULT_COMMENT_CLIP,
    flag_bots: bool = True,
) -> ContextBlock:
    """Title, description, reporter role and one line per (pre-selected) event.

    Over budget, the description is clipped first and then the newest events
    are dropped; the title and the last close event always stay.
    """
    head = (
        f"TITLE: {issue.title}\n"
        f"REPORTER: {actor_role(issue.author_login, contributors, flag_bots=flag_bots).value}\n"
    )
    body = strip_images(issue.body).strip() or "(empty)"
    lines = [
        render_event(e, actor_role(e.actor_login, contributors, flag_bots=flag_bots), comment_clip)
        for e in events
    ]
    ids = [e.event_id for e in events]

    def assemble(desc: str, keep: Sequence[int]) -> str:
        timeline = "\n".join(lines[i] for i in keep) if keep else "(no events)"
        return f"{head}DESCRIPTION: {desc}\nTIMELINE:\n{timeline}"

    everything = list(range(len(events)))
    text = assemble(body, everything)
    if estimate_tokens(text) <= budget:
        return ContextBlock(Task.RESPONSIVENESS, text, estimate_tokens(text), False, tuple(ids))

    closes = [i for i, e in enumerate(events) if e.event_kind == "closed"]
    pinned = closes[-1:]
    limit = budget * 4
    fixed = len(assemble("", pinned))
    others = [i for i in everything if i not in pinned]
    others_len = sum(len(lines[i]) + 1 for i in others)
    room = max(limit - fixed, 0)
    # the description gets at least half of what is left, more if events are short
    desc_room = min(len(body), max(room // 2, room - others_len))
    desc = body if desc_room >= len(body) else _clip(body, desc_room)
    used = fixed + len(desc)
    keep = set(pinned)
    for i in others:
        cost = len(lines[i]) + 1
        if used + cost > limit:
            break
        keep.add(i)
        used += cost
    chosen = sorted(keep)
    text = assemble(desc, chosen)
    return ContextBlock(
        Task.RESPONSIVENESS, text, estimate_tokens(text), True, tuple(ids[i] for i in chosen)
    )
