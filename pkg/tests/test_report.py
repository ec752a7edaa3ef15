import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from auditor.framework import BugType, Verdict, VerdictClass, tally
from auditor.ingest import RepoRef
from auditor.report import (
    METRICS,
    EcosystemSummary,
    MixedRepos,
    NoEligibleProjects,
    ReportError,
    quantile,
    render,
    summarize_ecosystem,
    summarize_project,
    summarize_runs,
    tally_grid,
)

V, B = VerdictClass, BugType


def verdicts(**cells):
    """``verdicts(external_responsive=3, ...)`` plus ``duplicate``/``complex`` counts."""
    out = []
    for name, n in cells.items():
        if name in ("duplicate", "complex"):
            out += [Verdict(V(name))] * n
            continue
        b, v = name.split("_", 1)
        out += [Verdict(V(v), B(b))] * n
    return out


GROUND_TRUTH = dict(
    internal_responsive=16, external_responsive=1384, unknown_responsive=58,
    external_not_responsive=42, unknown_not_responsive=45, internal_not_applicable=73,
    duplicate=64, complex=47,
)


def project(name, responsive, other=0, min_verdicts=1, **extra):
    vs = verdicts(external_responsive=responsive, external_not_responsive=other, **extra)
    return summarize_project(vs, RepoRef("eco", name), min_verdicts=min_verdicts)


@pytest.mark.parametrize(
    "values,p,expected",
    [([0.5, 0.7, 0.9], 0.5, 0.7), ([0.5, 0.7, 0.9], 0.25, 0.6), ([0.5, 0.7, 0.9], 0.75, 0.8),
     ([3.0], 0.25, 3.0), ([1.0, 2.0], 0.5, 1.5), ([4.0, 1.0, 3.0, 2.0], 1.0, 4.0)],
)
def test_quantile(values, p, expected):
    assert quantile(values, p) == pytest.approx(expected, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
def test_quantile_matches_numpy_linear(values, p):
    assert quantile(values, p) == pytest.approx(float(np.quantile(values, p, method="linear")), abs=1e-12)


def test_quantile_empty():
    with pytest.raises(ValueError):
        quantile([], 0.5)


def test_project_ratios_use_three_way_base():
    p = summarize_project(verdicts(**GROUND_TRUTH), RepoRef("a", "b"))
    assert p.tally.total == 1618
    assert p.responsiveness_ratio == pytest.approx(1458 / 1618)
    assert p.external_ratio == pytest.approx(1426 / 1618)
    assert p.ratio("internal.responsive") == pytest.approx(16 / 89)
    assert p.ratio("unknown.not_responsive") == pytest.approx(45 / 103)
    assert p.counts[V.DUPLICATE] == 64 and p.counts[V.COMPLEX] == 47
    with pytest.raises(KeyError):
        p.ratio("internal.not_responsive")  # structural zero, never a metric


def test_ground_truth_grid():
    rows = tally_grid(tally(verdicts(**GROUND_TRUTH)))
    assert rows == [
        ["", "Internal", "External", "Unknown", "Total"],
        ["Responsive", "16 (18%)", "1,384 (97%)", "58 (56%)", "1,458 (90%)"],
        ["Not-responsive", "-", "42 (3%)", "45 (44%)", "87 (5%)"],
        ["Not-applicable", "73 (82%)", "-", "-", "73 (5%)"],
        ["Total", "89 (6%)", "1,426 (88%)", "103 (6%)", "1,618"],
    ]


def test_undefined_ratios():
    p = summarize_project(verdicts(duplicate=3), RepoRef("a", "b"))
    assert not p.eligible
    assert p.responsiveness_ratio is None
    assert all(p.ratio(m) is None for m in METRICS)


def test_mixed_repos_rejected():
    class Rec:
        def __init__(self, repo):
            self.key = (repo, 1)
            self.verdict = Verdict(V.RESPONSIVE, B.EXTERNAL)

    with pytest.raises(MixedRepos):
        summarize_project([Rec(RepoRef("a", "b")), Rec(RepoRef("a", "c"))])
    with pytest.raises(ReportError):
        summarize_project([])


def test_ecosystem_three_projects():
    eco = summarize_ecosystem([project("a", 5, 5), project("b", 7, 3), project("c", 9, 1)])
    s = eco.per_metric["responsiveness"]
    assert s.median == pytest.approx(0.70, abs=1e-9)
    assert s.iqr == pytest.approx((0.60, 0.80), abs=1e-9)
    assert s.n == 3


def test_reference_spread():
    # five projects whose responsiveness ratios are 40, 55, 70, 89, 95 percent
    projects = [project(f"p{i}", r, 100 - r) for i, r in enumerate([89, 40, 70, 95, 55])]
    s = summarize_ecosystem(projects).per_metric["responsiveness"]
    assert (round(100 * s.median), round(100 * s.q1), round(100 * s.q3)) == (70, 55, 89)


def test_eligibility_threshold():
    small = project("small", 1)
    big = [project("a", 8, 2, min_verdicts=5), project("b", 6, 4, min_verdicts=5)]
    eco = summarize_ecosystem([*big, project("small", 1, min_verdicts=5)])
    assert [p.repo.name for p in eco.eligible_projects] == ["a", "b"]
    assert eco.per_metric["responsiveness"].median == pytest.approx(0.7)
    assert small.eligible
    with pytest.raises(NoEligibleProjects):
        summarize_ecosystem([project("small", 1, min_verdicts=5)])


def test_cell_metric_skips_empty_columns():
    eco = summarize_ecosystem([project("a", 3), project("b", 1, unknown_responsive=2)])
    assert eco.per_metric["unknown.responsive"].n == 1
    assert eco.per_metric["external.responsive"].n == 2


def test_json_round_trip():
    eco = summarize_ecosystem([project("a", 5, 5, internal_not_applicable=2, duplicate=1), project("b", 7, 3)])
    data = json.loads(render(eco, "json"))
    assert data["schema_version"] == 1 and data["kind"] == "ecosystem_summary"
    assert EcosystemSummary.from_json(data) == eco
    with pytest.raises(ReportError):
        EcosystemSummary.from_json({**data, "schema_version": 9})


def test_csv_output():
    eco = summarize_ecosystem([project("a", 5, 5, complex=2), project("b", 0, 0)])
    rows = list(csv.DictReader(io.StringIO(render(eco, "csv"))))
    assert [r["repo"] for r in rows] == ["eco/a", "eco/b"]
    assert rows[0]["n_complex"] == "2" and rows[0]["n_responsive"] == "5"
    assert float(rows[0]["responsiveness"]) == 0.5
    assert rows[1]["eligible"] == "0" and rows[1]["responsiveness"] == ""
    assert all(r["schema_version"] == "1" for r in rows)


def test_text_and_markdown_render():
    eco = summarize_ecosystem([project("a", 5, 5), project("b", 7, 3), project("c", 9, 1)])
    text = render(eco, "text")
    assert "Projects: 3 eligible of 3" in text
    spread = {ln.split()[0]: ln.split()[1:] for ln in text.split("\n\n")[-1].splitlines()}
    assert spread["responsiveness"] == ["70.0%", "60.0%", "80.0%", "3"]
    assert not text.rstrip().endswith("-")
    md = render(eco, "markdown")
    assert md.startswith("|  | Internal | External | Unknown | Total |\n|---|")
    assert render(EcosystemSummary([project("z", 0)]), "text") == "no eligible projects\n"


def test_tally_render_formats():
    t = tally(verdicts(**GROUND_TRUTH))
    assert "Duplicate: 64  Complex: 47" in render(t, "text")
    data = json.loads(render(t, "json"))
    assert data["cells"]["responsive"]["external"] == 1384 and data["total"] == 1618
    assert render(t, "csv").splitlines()[1] == 'Responsive,16 (18%),"1,384 (97%)",58 (56%),"1,458 (90%)"'


def test_summarize_runs_groups_by_repo():
    class Rec:
        def __init__(self, repo, v):
            self.key = (RepoRef("o", repo), 1)
            self.verdict = v

    recs = [Rec("a", Verdict(V.RESPONSIVE, B.EXTERNAL)), Rec("b", Verdict(V.NOT_RESPONSIVE, B.UNKNOWN))]
    eco = summarize_runs(recs)
    assert [p.repo.name for p in eco.projects] == ["a", "b"]
    assert eco.per_metric["responsiveness"].median == 0.5


three_way = st.sampled_from([
    Verdict(V.RESPONSIVE, B.INTERNAL), Verdict(V.RESPONSIVE, B.EXTERNAL), Verdict(V.RESPONSIVE, B.UNKNOWN),
    Verdict(V.NOT_RESPONSIVE, B.EXTERNAL), Verdict(V.NOT_RESPONSIVE, B.UNKNOWN),
    Verdict(V.NOT_APPLICABLE, B.INTERNAL), Verdict(V.DUPLICATE), Verdict(V.COMPLEX),
])


@given(st.lists(st.lists(three_way, max_size=30), min_size=1, max_size=8))
def test_ecosystem_invariants(groups):
    projects = [summarize_project(g, RepoRef("o", f"r{i}")) for i, g in enumerate(groups)]
    try:
        eco = summarize_ecosystem(projects)
    except NoEligibleProjects:
        assert not any(p.eligible for p in projects)
        return
    pooled = eco.pooled()
    assert pooled.total == sum(p.tally.total for p in projects)
    for p in eco.eligible_projects:
        assert sum(p.ratio(m) for m in ("responsiveness", "not_responsiveness", "not_applicability")) == pytest.approx(1.0)
        assert sum(p.ratio(m) for m in ("internal_share", "external_share", "unknown_share")) == pytest.approx(1.0)
    for s in eco.per_metric.values():
        assert 0.0 <= s.q1 <= s.median <= s.q3 <= 1.0
        assert 1 <= s.n <= len(eco.eligible_projects)
