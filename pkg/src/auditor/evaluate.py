"""Score predictions against ground truth and compare sweep cells and models."""

from __future__ import annotations

import enum
import json
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

from .framework import VerdictClass

RESPONSIVENESS_CLASSES = (
    VerdictClass.DUPLICATE.value,
    VerdictClass.RESPONSIVE.value,
    VerdictClass.NOT_RESPONSIVE.value,
    VerdictClass.NOT_APPLICABLE.value,
)
BUGID_CLASSES = ("bug", "not_bug")
CRITICAL_CLASS = {"responsiveness": VerdictClass.NOT_RESPONSIVE.value, "bug_identification": "bug"}


class EvalError(ValueError):
    pass


class KeyMismatch(EvalError):
    pass


class UnknownClass(EvalError):
    pass


class ClassSetMismatch(EvalError):
    pass


def _label(value: Any) -> str:
    return value.value if isinstance(value, enum.Enum) else str(value)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold classes, columns predicted classes.

    ``unparseable`` counts, per gold class, items whose prediction could not
    be parsed; they sit outside the square matrix and are always wrong.
    """

    classes: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    unparseable: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts)) + sum(self.unparseable)

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.classes)))

    def gold_support(self, i: int) -> int:
        return sum(self.counts[i]) + self.unparseable[i]

    def predicted(self, j: int) -> int:
        return sum(row[j] for row in self.counts)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    accuracy: float
    support: dict[str, int]
    unparseable_count: int = 0

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.per_class)

    def to_json(self) -> dict[str, Any]:
        return {
            "per_class": {c: asdict(m) for c, m in self.per_class.items()},
            "accuracy": self.accuracy,
            "support": self.support,
            "unparseable_count": self.unparseable_count,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> MetricsReport:
        return cls(
            {c: ClassMetrics(**m) for c, m in data["per_class"].items()},
            data["accuracy"],
            dict(data["support"]),
            data.get("unparseable_count", 0),
        )


@dataclass(frozen=True)
class Score:
    matrix: ConfusionMatrix
    report: MetricsReport


def metrics_from_matrix(matrix: ConfusionMatrix, unparseable_count: int | None = None) -> MetricsReport:
    per_class = {}
    support = {}
    for i, cls in enumerate(matrix.classes):
        tp = matrix.counts[i][i]
        pred = matrix.predicted(i)
        gold = matrix.gold_support(i)
        degenerate = pred == 0 or gold == 0
        p = tp / pred if pred else 0.0
        r = tp / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[cls] = ClassMetrics(p, r, f1, degenerate)
        support[cls] = gold
    total = matrix.total
    accuracy = matrix.trace / total if total else 0.0
    if unparseable_count is None:
        unparseable_count = sum(matrix.unparseable)
    return MetricsReport(per_class, accuracy, support, unparseable_count)


def score(
    gold: Mapping[Hashable, Any],
    pred: Mapping[Hashable, Any],
    classes: Sequence[Any],
    *,
    drop_unparseable: bool = False,
) -> Score:
    """Score predictions keyed like ``gold``; a ``None`` prediction is unparseable.

    Only items present in ``pred`` are scored. Unparseable items count as
    wrong for their gold class unless ``drop_unparseable`` is set.
    """
    names = tuple(_label(c) for c in classes)
    index = {c: i for i, c in enumerate(names)}
    n = len(names)
    counts = [[0] * n for _ in range(n)]
    unparseable = [0] * n
    dropped = 0
    for key, p in pred.items():
        if key not in gold:
            raise KeyMismatch(f"prediction for {key!r} has no gold label")
        g = _label(gold[key])
        if g not in index:
            raise UnknownClass(f"gold label {g!r} is not one of {list(names)}")
        if p is None:
            if drop_unparseable:
                dropped += 1
            else:
                unparseable[index[g]] += 1
            continue
        pl = _label(p)
        if pl not in index:
            raise UnknownClass(f"predicted label {pl!r} is not one of {list(names)}")
        counts[index[g]][index[pl]] += 1
    matrix = ConfusionMatrix(names, tuple(map(tuple, counts)), tuple(unparseable))
    return Score(matrix, metrics_from_matrix(matrix, sum(unparseable) + dropped))


def matrix_from_binary(tp: int, fn: int, fp: int, tn: int, positive: str = "bug", negative: str = "not_bug") -> ConfusionMatrix:
    return ConfusionMatrix((positive, negative), ((tp, fn), (fp, tn)), (0, 0))


@dataclass(frozen=True)
class RankedConfig:
    rank: int
    config: Any
    digest: str
    report: MetricsReport
    key_value: float


def _digest(config: Any) -> str:
    return getattr(config, "digest", None) or str(config)


def sweep_report(
    predictions: Mapping[Any, Mapping[Hashable, Any]],
    gold: Mapping[Hashable, Any],
    classes: Sequence[Any],
    *,
    critical_class: str | None = None,
    metric: str = "f1",
    drop_unparseable: bool = False,
) -> list[RankedConfig]:
    """Rank configurations by ``metric`` of ``critical_class``.

    Ties are broken by accuracy, then by the config digest.
    """
    if not predictions:
        raise EvalError("no configuration to rank")
    critical = _label(critical_class) if critical_class is not None else _label(classes[0])
    scored = []
    for config, preds in predictions.items():
        report = score(gold, preds, classes, drop_unparseable=drop_unparseable).report
        value = getattr(report.per_class[critical], metric)
        scored.append((config, report, value))
    scored.sort(key=lambda item: (-item[2], -item[1].accuracy, _digest(item[0])))
    return [
        RankedConfig(rank, config, _digest(config), report, value)
        for rank, (config, report, value) in enumerate(scored, start=1)
    ]


@dataclass(frozen=True)
class ComparisonRow:
    cls: str
    metric: str
    values: dict[str, float]
    best: str | None


def compare_models(reports: Mapping[str, MetricsReport]) -> list[ComparisonRow]:
    """One row per class and metric plus an accuracy row; ``best`` is set only for a unique maximum."""
    if not reports:
        return []
    class_sets = {tuple(r.classes) for r in reports.values()}
    if len(class_sets) != 1:
        raise ClassSetMismatch(f"reports disagree on classes: {sorted(class_sets)}")
    rows = []
    for cls in next(iter(class_sets)):
        for metric in ("precision", "recall", "f1"):
            values = {m: getattr(r.per_class[cls], metric) for m, r in reports.items()}
            rows.append(ComparisonRow(cls, metric, values, _unique_best(values)))
    values = {m: r.accuracy for m, r in reports.items()}
    rows.append(ComparisonRow("overall", "accuracy", values, _unique_best(values)))
    return rows


def _unique_best(values: Mapping[str, float]) -> str | None:
    top = max(values.values())
    winners = [m for m, v in values.items() if v == top]
    return winners[0] if len(winners) == 1 else None


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), "  ".join("-" * w for w in widths), *map(fmt, rows)]) + "\n"


def render_report(report: MetricsReport) -> str:
    rows = [
        (c, f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.2f}", str(report.support[c]), "*" if m.degenerate else "")
        for c, m in report.per_class.items()
    ]
    text = _table(("class", "precision", "recall", "f1", "support", "degenerate"), rows)
    return text + f"accuracy {report.accuracy:.2f}  unparseable {report.unparseable_count}\n"


def render_comparison(rows: Sequence[ComparisonRow]) -> str:
    if not rows:
        return "no models\n"
    models = list(rows[0].values)
    body = [
        (r.cls, r.metric, *(f"{r.values[m]:.2f}{'*' if r.best == m else ''}" for m in models))
        for r in rows
    ]
    return _table(("class", "metric", *models), body)


def render_ranking(ranked: Sequence[RankedConfig]) -> str:
    rows = [
        (str(r.rank), getattr(r.config, "label", str(r.config)), r.digest, f"{r.key_value:.4f}", f"{r.report.accuracy:.4f}")
        for r in ranked
    ]
    return _table(("rank", "config", "digest", "key", "accuracy"), rows)


def read_labels(path: Path | str, task: str = "responsiveness") -> dict[tuple[str, int], str | None]:
    """Read ``{repo, number, ...}`` lines into labels; a null label marks an unparseable prediction.

    Bug identification reads ``label``, ``classification`` or a boolean
    ``is_bug``; responsiveness reads ``label`` or ``verdict``.
    """
    names = ("label", "classification") if task == "bug_identification" else ("label", "verdict")
    out: dict[tuple[str, int], str | None] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        present = [n for n in names if n in rec]
        if present:
            value = rec[present[0]]
        elif task == "bug_identification" and isinstance(rec.get("is_bug"), bool):
            value = "bug" if rec["is_bug"] else "not_bug"
        else:
            raise EvalError(f"{path}: line for {rec.get('repo')}#{rec.get('number')} carries no label")
        out[(rec["repo"], int(rec["number"]))] = value
    return out
