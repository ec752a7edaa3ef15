"""Deterministic verdict engine and the non-responsiveness taxonomy.

The decision diagram, in the order it is evaluated:

1. duplicate issues are set aside as ``Duplicate``;
2. complex (tangled or ambiguous) issues are set aside as ``Complex``;
3. a fixed bug is ``Responsive`` whatever its type;
4. an unfixed ``Internal`` bug is ``NotApplicable``;
5. an unfixed ``External`` or ``Unknown`` bug is ``NotResponsive``.
"""

from __future__ import annotations

import enum
import itertools
from collections.abc import Iterable
from dataclasses import dataclass, field


class BugType(str, enum.Enum):
    INTERNAL = "internal"
    EXTERNAL = "external"
    UNKNOWN = "unknown"


class VerdictClass(str, enum.Enum):
    DUPLICATE = "duplicate"
    COMPLEX = "complex"
    RESPONSIVE = "responsive"
    NOT_RESPONSIVE = "not_responsive"
    NOT_APPLICABLE = "not_applicable"

    @property
    def is_three_way(self) -> bool:
        return self in THREE_WAY


THREE_WAY = (VerdictClass.RESPONSIVE, VerdictClass.NOT_RESPONSIVE, VerdictClass.NOT_APPLICABLE)
BUG_TYPES = (BugType.INTERNAL, BugType.EXTERNAL, BugType.UNKNOWN)


class Annotator(str, enum.Enum):
    HUMAN = "human"
    LLM = "llm"


class EvidenceKind(str, enum.Enum):
    """Kinds of proof that a bug was addressed."""

    MERGED_PR = "merged_pr"
    LINKED_COMMIT = "linked_commit"
    UPSTREAM_FIX_COMMENT = "upstream_fix_comment"


class TaxonomyCategory(str, enum.Enum):
    CONTRIBUTION_PRACTICES = "contribution_practices"
    DEPENDENCY = "dependency"
    LIBRARY_STANDARDS = "library_standards"
    LACK_OF_ENGAGEMENT = "lack_of_engagement"


class TaxonomySub(str, enum.Enum):
    TEMPLATE_VIOLATION = "template_violation"
    INSUFFICIENT_INFORMATION = "insufficient_information"
    WAITING_FOR_PULL_REQUEST = "waiting_for_pull_request"
    DEPENDENCY_ISSUE = "dependency_issue"
    INCOMPATIBLE_VERSIONS = "incompatible_versions"
    BEYOND_THE_SCOPE = "beyond_the_scope"
    EDGE_CASE = "edge_case"
    DESIGN_CONCERN = "design_concern"
    PRIORITY = "priority"
    DISCONTINUE_MAINTENANCE = "discontinue_maintenance"
    NO_COMMENTS = "no_comments"
    STALED_INVESTIGATION = "staled_investigation"


TAXONOMY: dict[TaxonomySub, TaxonomyCategory] = {
    TaxonomySub.TEMPLATE_VIOLATION: TaxonomyCategory.CONTRIBUTION_PRACTICES,
    TaxonomySub.INSUFFICIENT_INFORMATION: TaxonomyCategory.CONTRIBUTION_PRACTICES,
    TaxonomySub.WAITING_FOR_PULL_REQUEST: TaxonomyCategory.CONTRIBUTION_PRACTICES,
    TaxonomySub.DEPENDENCY_ISSUE: TaxonomyCategory.DEPENDENCY,
    TaxonomySub.INCOMPATIBLE_VERSIONS: TaxonomyCategory.DEPENDENCY,
    TaxonomySub.BEYOND_THE_SCOPE: TaxonomyCategory.DEPENDENCY,
    TaxonomySub.EDGE_CASE: TaxonomyCategory.LIBRARY_STANDARDS,
    TaxonomySub.DESIGN_CONCERN: TaxonomyCategory.LIBRARY_STANDARDS,
    TaxonomySub.PRIORITY: TaxonomyCategory.LIBRARY_STANDARDS,
    TaxonomySub.DISCONTINUE_MAINTENANCE: TaxonomyCategory.LIBRARY_STANDARDS,
    TaxonomySub.NO_COMMENTS: TaxonomyCategory.LACK_OF_ENGAGEMENT,
    TaxonomySub.STALED_INVESTIGATION: TaxonomyCategory.LACK_OF_ENGAGEMENT,
}

# occurrences among the 87 manually coded not-responsive reports
REFERENCE_REASON_COUNTS: dict[TaxonomySub, int] = {
    TaxonomySub.TEMPLATE_VIOLATION: 34,
    TaxonomySub.INSUFFICIENT_INFORMATION: 6,
    TaxonomySub.WAITING_FOR_PULL_REQUEST: 5,
    TaxonomySub.DEPENDENCY_ISSUE: 13,
    TaxonomySub.INCOMPATIBLE_VERSIONS: 3,
    TaxonomySub.BEYOND_THE_SCOPE: 2,
    TaxonomySub.EDGE_CASE: 3,
    TaxonomySub.DESIGN_CONCERN: 2,
    TaxonomySub.PRIORITY: 1,
    TaxonomySub.DISCONTINUE_MAINTENANCE: 1,
    TaxonomySub.NO_COMMENTS: 5,
    TaxonomySub.STALED_INVESTIGATION: 12,
}


class FrameworkError(ValueError):
    pass


class InvalidAnnotation(FrameworkError):
    pass


class UnknownReason(FrameworkError):
    pass


class MismatchedCategory(FrameworkError):
    pass


@dataclass(frozen=True)
class TaxonomyReason:
    category: TaxonomyCategory
    sub: TaxonomySub

    @classmethod
    def of(cls, category: str | TaxonomyCategory, sub: str | TaxonomySub) -> TaxonomyReason:
        return validate_taxonomy(cls(category, sub))  # type: ignore[arg-type]

    @classmethod
    def for_sub(cls, sub: str | TaxonomySub) -> TaxonomyReason:
        try:
            sub = TaxonomySub(sub)
        except ValueError as exc:
            raise UnknownReason(f"unknown taxonomy subcategory {sub!r}") from exc
        return cls(TAXONOMY[sub], sub)


def validate_taxonomy(reason: TaxonomyReason) -> TaxonomyReason:
    """Return ``reason`` with enum-typed fields, or raise if it is not a known pairing."""
    try:
        category = TaxonomyCategory(reason.category)
    except ValueError as exc:
        raise UnknownReason(f"unknown taxonomy category {reason.category!r}") from exc
    try:
        sub = TaxonomySub(reason.sub)
    except ValueError as exc:
        raise UnknownReason(f"unknown taxonomy subcategory {reason.sub!r}") from exc
    if TAXONOMY[sub] is not category:
        raise MismatchedCategory(f"{sub.value} belongs to {TAXONOMY[sub].value}, not {category.value}")
    return TaxonomyReason(category, sub)


@dataclass(frozen=True)
class Annotation:
    is_duplicate: bool
    is_complex: bool
    bug_type: BugType | None = None
    was_fixed: bool | None = None
    annotator: Annotator = Annotator.HUMAN
    evidence: tuple[str, ...] = ()
    fix_evidence: tuple[EvidenceKind, ...] = field(default=())

    def check(self) -> None:
        if self.is_duplicate or self.is_complex:
            return
        if self.bug_type is None or self.was_fixed is None:
            raise InvalidAnnotation("bug_type and was_fixed are required unless duplicate or complex")
        if not isinstance(self.bug_type, BugType):
            raise InvalidAnnotation(f"bad bug_type {self.bug_type!r}")


@dataclass(frozen=True)
class Verdict:
    value: VerdictClass
    bug_type: BugType | None = None
    reason: TaxonomyReason | None = None

    def __post_init__(self) -> None:
        if self.reason is not None and self.value is not VerdictClass.NOT_RESPONSIVE:
            raise FrameworkError("a taxonomy reason only applies to NotResponsive verdicts")
        if self.value.is_three_way and self.bug_type is None:
            raise FrameworkError(f"{self.value.value} verdict requires a bug type")

    def with_reason(self, reason: TaxonomyReason) -> Verdict:
        return Verdict(self.value, self.bug_type, validate_taxonomy(reason))


def derive_verdict(a: Annotation) -> Verdict:
    a.check()
    if a.is_duplicate:
        return Verdict(VerdictClass.DUPLICATE)
    if a.is_complex:
        return Verdict(VerdictClass.COMPLEX)
    if a.was_fixed:
        return Verdict(VerdictClass.RESPONSIVE, a.bug_type)
    if a.bug_type is BugType.INTERNAL:
        return Verdict(VerdictClass.NOT_APPLICABLE, a.bug_type)
    return Verdict(VerdictClass.NOT_RESPONSIVE, a.bug_type)


def annotation_space() -> list[Annotation]:
    """Every annotation the type admits: flags x bug type x fixed."""
    space = []
    for dup, cx, bug_type, fixed in itertools.product(
        (False, True), (False, True), BUG_TYPES, (False, True)
    ):
        space.append(Annotation(dup, cx, bug_type, fixed))
    for dup, cx in ((True, False), (False, True), (True, True)):
        space.append(Annotation(dup, cx))
    return space


def pct(part: int, whole: int) -> float | None:
    return None if whole == 0 else 100.0 * part / whole


@dataclass(frozen=True)
class Tally:
    """Bug type x three-way verdict counts, plus the set-aside classes."""

    cells: dict[tuple[VerdictClass, BugType], int]
    duplicate: int = 0
    complex: int = 0

    def cell(self, verdict: VerdictClass, bug_type: BugType) -> int:
        return self.cells.get((verdict, bug_type), 0)

    def row_total(self, verdict: VerdictClass) -> int:
        return sum(self.cell(verdict, b) for b in BUG_TYPES)

    def column_total(self, bug_type: BugType) -> int:
        return sum(self.cell(v, bug_type) for v in THREE_WAY)

    @property
    def total(self) -> int:
        return sum(self.cells.values())

    @property
    def grand_total(self) -> int:
        return self.total + self.duplicate + self.complex

    def cell_pct(self, verdict: VerdictClass, bug_type: BugType) -> float | None:
        """Share of the bug-type column."""
        return pct(self.cell(verdict, bug_type), self.column_total(bug_type))

    def row_pct(self, verdict: VerdictClass) -> float | None:
        return pct(self.row_total(verdict), self.total)

    def column_pct(self, bug_type: BugType) -> float | None:
        return pct(self.column_total(bug_type), self.total)


def tally(verdicts: Iterable[Verdict]) -> Tally:
    cells: dict[tuple[VerdictClass, BugType], int] = {}
    duplicate = complex_ = 0
    for v in verdicts:
        if v.value is VerdictClass.DUPLICATE:
            duplicate += 1
        elif v.value is VerdictClass.COMPLEX:
            complex_ += 1
        else:
            cells[(v.value, v.bug_type)] = cells.get((v.value, v.bug_type), 0) + 1
    return Tally(cells, duplicate, complex_)


def decision_table() -> str:
    """Plain-text truth table of the decision diagram."""
    rows = [("duplicate", "complex", "bug_type", "was_fixed", "verdict")]
    for a in annotation_space():
        rows.append((
            "yes" if a.is_duplicate else "no",
            "yes" if a.is_complex else "no",
            a.bug_type.value if a.bug_type else "-",
            "-" if a.was_fixed is None else ("yes" if a.was_fixed else "no"),
            derive_verdict(a).value.value,
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
