"""Per-project and ecosystem responsiveness statistics and their renderings.

Ratios use only issues with a three-way verdict (Responsive, NotResponsive,
NotApplicable) as the base; Duplicate and Complex issues are counted but
never enter a denominator. Quantiles interpolate linearly between order
statistics: for sorted values ``x[0..n-1]`` the ``p`` quantile is
``x[f] + (h - f) * (x[f+1] - x[f])`` with ``h = (n - 1) * p``, ``f = floor(h)``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .framework import BUG_TYPES, THREE_WAY, BugType, Tally, Verdict, VerdictClass, tally
from .ingest.types import RepoRef

SCHEMA_VERSION = 1

VERDICT_LABELS = {
    VerdictClass.RESPONSIVE: "Responsive",
    VerdictClass.NOT_RESPONSIVE: "Not-responsive",
    VerdictClass.NOT_APPLICABLE: "Not-applicable",
}
TYPE_LABELS = {BugType.INTERNAL: "Internal", BugType.EXTERNAL: "External", BugType.UNKNOWN: "Unknown"}

# cells that the decision diagram can never fill
STRUCTURAL_ZEROS = {
    (VerdictClass.NOT_RESPONSIVE, BugType.INTERNAL),
    (VerdictClass.NOT_APPLICABLE, BugType.EXTERNAL),
    (VerdictClass.NOT_APPLICABLE, BugType.UNKNOWN),
}

ROW_METRIC = {
    VerdictClass.RESPONSIVE: "responsiveness",
    VerdictClass.NOT_RESPONSIVE: "not_responsiveness",
    VerdictClass.NOT_APPLICABLE: "not_applicability",
}
SHARE_METRIC = {b: f"{b.value}_share" for b in BUG_TYPES}
CELL_METRIC = {
    (v, b): f"{b.value}.{v.value}" for v in THREE_WAY for b in BUG_TYPES if (v, b) not in STRUCTURAL_ZEROS
}
METRICS = (*ROW_METRIC.values(), *SHARE_METRIC.values(), *CELL_METRIC.values())


class ReportError(ValueError):
    pass


class MixedRepos(ReportError):
    pass


class NoEligibleProjects(ReportError):
    pass


class Format(str, enum.Enum):
    TEXT = "text"
    JSON = "json"
    CSV = "csv"
    MARKDOWN = "markdown"


def quantile(values: Sequence[float], p: float) -> float:
    if not values:
        raise ValueError("quantile of an empty sequence")
    xs = sorted(values)
    h = (len(xs) - 1) * p
    f = math.floor(h)
    if f + 1 >= len(xs):
        return xs[-1]
    return xs[f] + (h - f) * (xs[f + 1] - xs[f])


def _ratio(part: int, whole: int) -> float | None:
    return part / whole if whole else None


@dataclass(frozen=True)
class ProjectSummary:
    repo: RepoRef
    tally: Tally
    min_verdicts: int = 1

    @property
    def counts(self) -> dict[VerdictClass, int]:
        out = {v: self.tally.row_total(v) for v in THREE_WAY}
        out[VerdictClass.DUPLICATE] = self.tally.duplicate
        out[VerdictClass.COMPLEX] = self.tally.complex
        return out

    @property
    def bug_type_counts(self) -> dict[BugType, int]:
        return {b: self.tally.column_total(b) for b in BUG_TYPES}

    @property
    def eligible(self) -> bool:
        return self.tally.total >= max(self.min_verdicts, 1)

    def ratio(self, metric: str) -> float | None:
        """Ratio for one metric name from ``METRICS``; ``None`` when undefined."""
        t = self.tally
        for v, name in ROW_METRIC.items():
            if name == metric:
                return _ratio(t.row_total(v), t.total)
        for b, name in SHARE_METRIC.items():
            if name == metric:
                return _ratio(t.column_total(b), t.total)
        for (v, b), name in CELL_METRIC.items():
            if name == metric:
                return _ratio(t.cell(v, b), t.column_total(b))
        raise KeyError(metric)

    @property
    def responsiveness_ratio(self) -> float | None:
        return self.ratio("responsiveness")

    @property
    def external_ratio(self) -> float | None:
        return self.ratio("external_share")

    @property
    def internal_ratio(self) -> float | None:
        return self.ratio("internal_share")

    @property
    def unknown_ratio(self) -> float | None:
        return self.ratio("unknown_share")

    def to_json(self) -> dict[str, Any]:
        return {
            "repo": self.repo.slug,
            "cells": {v.value: {b.value: self.tally.cell(v, b) for b in BUG_TYPES} for v in THREE_WAY},
            "duplicate": self.tally.duplicate,
            "complex": self.tally.complex,
            "min_verdicts": self.min_verdicts,
            "eligible": self.eligible,
            "ratios": {m: self.ratio(m) for m in METRICS},
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> ProjectSummary:
        cells = {
            (VerdictClass(v), BugType(b)): n
            for v, row in data["cells"].items()
            for b, n in row.items()
            if n
        }
        t = Tally(cells, data.get("duplicate", 0), data.get("complex", 0))
        return cls(RepoRef.parse(data["repo"]), t, data.get("min_verdicts", 1))


def summarize_project(
    verdicts: Iterable[Any], repo: RepoRef | None = None, *, min_verdicts: int = 1
) -> ProjectSummary:
    """Summarize the verdicts of one repository.

    Items may be ``Verdict`` objects (then ``repo`` is required) or records
    carrying ``key`` and ``verdict`` attributes, as written by a run.
    """
    plain: list[Verdict] = []
    for item in verdicts:
        if isinstance(item, Verdict):
            plain.append(item)
            continue
        item_repo = item.key[0]
        if repo is None:
            repo = item_repo
        elif item_repo != repo:
            raise MixedRepos(f"verdicts from {repo} and {item_repo} in one project summary")
        plain.append(item.verdict)
    if repo is None:
        raise ReportError("repo is required when there are no verdict records")
    return ProjectSummary(repo, tally(plain), min_verdicts)


@dataclass(frozen=True)
class Spread:
    median: float
    q1: float
    q3: float
    n: int

    @property
    def iqr(self) -> tuple[float, float]:
        return (self.q1, self.q3)


@dataclass(frozen=True)
class EcosystemSummary:
    projects: list[ProjectSummary]
    per_metric: dict[str, Spread] = field(default_factory=dict)

    @property
    def eligible_projects(self) -> list[ProjectSummary]:
        return [p for p in self.projects if p.eligible]

    def pooled(self) -> Tally:
        cells: dict[tuple[VerdictClass, BugType], int] = {}
        dup = cx = 0
        for p in self.projects:
            for key, n in p.tally.cells.items():
                cells[key] = cells.get(key, 0) + n
            dup += p.tally.duplicate
            cx += p.tally.complex
        return Tally(cells, dup, cx)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "ecosystem_summary",
            "projects": [p.to_json() for p in self.projects],
            "per_metric": {
                m: {"median": s.median, "iqr": [s.q1, s.q3], "n": s.n} for m, s in self.per_metric.items()
            },
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> EcosystemSummary:
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"unsupported schema_version {data.get('schema_version')!r}")
        projects = [ProjectSummary.from_json(p) for p in data["projects"]]
        per_metric = {
            m: Spread(s["median"], s["iqr"][0], s["iqr"][1], s["n"]) for m, s in data["per_metric"].items()
        }
        return cls(projects, per_metric)


def summarize_ecosystem(summaries: Iterable[ProjectSummary]) -> EcosystemSummary:
    projects = sorted(summaries, key=lambda p: p.repo)
    eligible = [p for p in projects if p.eligible]
    if not eligible:
        raise NoEligibleProjects("no project has enough three-way verdicts")
    per_metric = {}
    for metric in METRICS:
        values = [r for r in (p.ratio(metric) for p in eligible) if r is not None]
        if values:
            per_metric[metric] = Spread(quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75), len(values))
    return EcosystemSummary(projects, per_metric)


def summarize_runs(records: Iterable[Any], *, min_verdicts: int = 1) -> EcosystemSummary:
    """Group verdict records by repository and summarize the ecosystem."""
    by_repo: dict[RepoRef, list[Any]] = {}
    for rec in records:
        by_repo.setdefault(rec.key[0], []).append(rec)
    projects = [summarize_project(recs, repo, min_verdicts=min_verdicts) for repo, recs in by_repo.items()]
    return summarize_ecosystem(projects)


def _num(n: int) -> str:
    return f"{n:,}"


def _pct(x: float | None) -> str:
    return "" if x is None else f" ({x:.0f}%)"


def _grid(t: Tally, cell_pct, row_pct, col_pct) -> list[list[str]]:
    rows = [["", *(TYPE_LABELS[b] for b in BUG_TYPES), "Total"]]
    for v in THREE_WAY:
        row = [VERDICT_LABELS[v]]
        for b in BUG_TYPES:
            n = t.cell(v, b)
            row.append("-" if (v, b) in STRUCTURAL_ZEROS and n == 0 else _num(n) + _pct(cell_pct(v, b)))
        row.append(_num(t.row_total(v)) + _pct(row_pct(v)))
        rows.append(row)
    rows.append(["Total", *(_num(t.column_total(b)) + _pct(col_pct(b)) for b in BUG_TYPES), _num(t.total)])
    return rows


def tally_grid(t: Tally) -> list[list[str]]:
    """Table rows with pooled percentages: cells by bug-type column, totals by grand total."""
    return _grid(t, t.cell_pct, t.row_pct, t.column_pct)


def ecosystem_grid(summary: EcosystemSummary) -> list[list[str]]:
    """Pooled counts with the median per-project ratio in parentheses."""

    def med(metric: str) -> float | None:
        s = summary.per_metric.get(metric)
        return None if s is None else 100 * s.median

    return _grid(
        summary.pooled(),
        lambda v, b: med(CELL_METRIC[(v, b)]) if (v, b) in CELL_METRIC else None,
        lambda v: med(ROW_METRIC[v]),
        lambda b: med(SHARE_METRIC[b]),
    )


def _markdown(rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "|".join("---" for _ in rows[0]) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(lines) + "\n"


def _text(rows: list[list[str]], totals: bool = True) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for i, r in enumerate(rows):
        out.append("  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths))).rstrip())
        if i == 0 or (totals and i == len(rows) - 2):
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def _spread_rows(summary: EcosystemSummary) -> list[list[str]]:
    rows = [["metric", "median", "q1", "q3", "projects"]]
    for m in METRICS:
        s = summary.per_metric.get(m)
        if s is not None:
            rows.append([m, f"{100 * s.median:.1f}%", f"{100 * s.q1:.1f}%", f"{100 * s.q3:.1f}%", str(s.n)])
    return rows


def _tally_json(t: Tally) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "tally",
        "cells": {v.value: {b.value: t.cell(v, b) for b in BUG_TYPES} for v in THREE_WAY},
        "duplicate": t.duplicate,
        "complex": t.complex,
        "total": t.total,
    }


def _csv(summary: EcosystemSummary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    count_cols = [f"n_{v.value}" for v in (VerdictClass.DUPLICATE, VerdictClass.COMPLEX, *THREE_WAY)]
    type_cols = [f"n_{b.value}" for b in BUG_TYPES]
    writer.writerow(["schema_version", "repo", "eligible", *count_cols, *type_cols, *METRICS])
    for p in summary.projects:
        counts = p.counts
        writer.writerow([
            SCHEMA_VERSION,
            p.repo.slug,
            int(p.eligible),
            counts[VerdictClass.DUPLICATE],
            counts[VerdictClass.COMPLEX],
            *(counts[v] for v in THREE_WAY),
            *(p.bug_type_counts[b] for b in BUG_TYPES),
            *("" if p.ratio(m) is None else repr(p.ratio(m)) for m in METRICS),
        ])
    return buf.getvalue()


def render(summary: EcosystemSummary | Tally, fmt: Format | str = Format.TEXT) -> str:
    fmt = Format(fmt)
    if isinstance(summary, Tally):
        if fmt is Format.JSON:
            return json.dumps(_tally_json(summary), indent=2, sort_keys=True) + "\n"
        rows = tally_grid(summary)
        if fmt is Format.CSV:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(rows)
            return buf.getvalue()
        table = _markdown(rows) if fmt is Format.MARKDOWN else _text(rows)
        return table + f"\nDuplicate: {_num(summary.duplicate)}  Complex: {_num(summary.complex)}\n"

    if fmt is Format.JSON:
        return json.dumps(summary.to_json(), indent=2, sort_keys=True) + "\n"
    if fmt is Format.CSV:
        return _csv(summary)
    if not summary.eligible_projects:
        return "no eligible projects\n"
    markdown = fmt is Format.MARKDOWN
    pooled = summary.pooled()
    return (
        (_markdown if markdown else _text)(ecosystem_grid(summary))
        + f"\nDuplicate: {_num(pooled.duplicate)}  Complex: {_num(pooled.complex)}  "
        + f"Projects: {len(summary.eligible_projects)} eligible of {len(summary.projects)}\n\n"
        + (_markdown(_spread_rows(summary)) if markdown else _text(_spread_rows(summary), totals=False))
    )


def summaries_from_run(run_dir: Any, *, min_verdicts: int = 1) -> list[ProjectSummary]:
    """Project summaries from a written run; duplicate and complex issues come from its exclusions."""
    from .pipeline import read_exclusions, read_verdicts

    run = json.loads((Path(run_dir) / "run.json").read_text(encoding="utf-8"))
    by_repo: dict[RepoRef, list[Verdict]] = {RepoRef.parse(slug): [] for slug in run.get("repos", [])}
    for rec in read_verdicts(run_dir):
        by_repo.setdefault(rec.key[0], []).append(rec.verdict)
    for exc in read_exclusions(run_dir):
        if exc["reason"] in (VerdictClass.DUPLICATE.value, VerdictClass.COMPLEX.value):
            by_repo.setdefault(RepoRef.parse(exc["repo"]), []).append(Verdict(VerdictClass(exc["reason"])))
    return [summarize_project(vs, repo, min_verdicts=min_verdicts) for repo, vs in sorted(by_repo.items())]
