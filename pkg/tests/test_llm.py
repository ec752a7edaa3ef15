import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from auditor.context import ContextBlock, Task, build_bugid_context
from auditor.llm import (
    BUGID_DEFAULT,
    RESPONSIVENESS_DEFAULT,
    TEMPERATURE_GRID,
    TOP_P_GRID,
    AnswerCache,
    BackendUnavailable,
    ChatBackend,
    ContextTooLarge,
    ParseStatus,
    PromptTemplate,
    SamplingConfig,
    Timeout,
    cached_complete,
    complete,
    default_template,
    grid,
    parse_answer,
    serialize,
    sweep,
    top_level_objects,
)
from fakes import REPO, CannedChat, bug, make_issue

BUGID = default_template(Task.BUG_IDENTIFICATION)
RESP = default_template(Task.RESPONSIVENESS)
OK, REPAIRED, UNPARSEABLE = ParseStatus.OK, ParseStatus.REPAIRED, ParseStatus.UNPARSEABLE


def backend_for(chat, **kw):
    return ChatBackend("http://llm.test/v1/chat/completions", "mock-8b", transport=chat.transport(), sleep=lambda s: None, **kw)


# --- templates and sampling -------------------------------------------------


def test_default_templates_follow_output_contracts():
    assert BUGID.output_schema == {"classification": ("bug", "not_bug")}
    assert RESP.output_schema == {
        "is_duplicate": (True, False),
        "bug_type": ("internal", "external", "unknown"),
        "was_fixed": (True, False),
    }
    assert BUGID.version != RESP.version


def test_bugid_template_needs_single_field():
    with pytest.raises(ValueError):
        PromptTemplate(Task.BUG_IDENTIFICATION, "x", {"a": ("b",), "c": ("d",)}, "v")


def test_template_load_from_file(tmp_path):
    path = tmp_path / "t.yaml"
    path.write_text("task: bug_identification\nversion: mine\noutput_schema:\n  label: [yes, no]\ninstruction: go\n")
    t = PromptTemplate.load(path)
    assert t.version == "mine" and t.output_schema == {"label": (True, False)}


def test_default_sampling():
    assert (BUGID_DEFAULT.temperature, BUGID_DEFAULT.top_p) == (0.2, 0.9)
    assert (RESPONSIVENESS_DEFAULT.temperature, RESPONSIVENESS_DEFAULT.top_p) == (0.2, 0.7)


def test_grid_dimensions():
    assert TEMPERATURE_GRID == (0.0, 0.2, 0.5, 0.8, 1.0)
    assert TOP_P_GRID == (0.7, 0.8, 0.9, 0.95)
    g = grid()
    assert len(g) == 20 and len({c.digest for c in g}) == 20


@pytest.mark.parametrize("kw", [{"temperature": -0.1, "top_p": 0.5}, {"temperature": 2.1, "top_p": 0.5},
                                {"temperature": 0.2, "top_p": 0.0}, {"temperature": 0.2, "top_p": 1.01},
                                {"temperature": 0.2, "top_p": 0.9, "max_output_tokens": 0}])
def test_sampling_ranges(kw):
    with pytest.raises(ValueError):
        SamplingConfig(**kw)


def test_sampling_round_trip():
    cfg = SamplingConfig(0.5, 0.95, 128, seed=7)
    assert SamplingConfig.from_dict(cfg.to_dict()) == cfg


# --- parsing ----------------------------------------------------------------

RESP_OK = '{"is_duplicate":false,"bug_type":"external","was_fixed":true}'
FULL = {"is_duplicate": False, "bug_type": "external", "was_fixed": True}


def test_full_parse():
    r = parse_answer(RESP_OK, RESP.output_schema)
    assert r.status is OK and r.parsed == FULL


def test_case_is_canonicalized():
    r = parse_answer('{"is_duplicate": false, "bug_type": "EXTERNAL", "was_fixed": true}', RESP.output_schema)
    assert r.status is OK and r.parsed["bug_type"] == "external"


def test_value_outside_schema():
    r = parse_answer('{"is_duplicate": false, "bug_type": "maybe", "was_fixed": true}', RESP.output_schema)
    assert r.status is UNPARSEABLE and r.parsed is None and "bug_type" in r.error


# (raw model output, status, parsed)
MALFORMED = [
    ('{"classification": "bug"}', OK, {"classification": "bug"}),
    ('{"classification": "Not_Bug"}', OK, {"classification": "not_bug"}),
    ('Sure. The answer is {"classification": "bug"}', REPAIRED, {"classification": "bug"}),
    ('```json\n{"classification": "not_bug"}\n```', REPAIRED, {"classification": "not_bug"}),
    ('{"classification": "not_bug"} hmm, no: {"classification": "bug"}', REPAIRED, {"classification": "bug"}),
    ('{"classification": "bug",}', REPAIRED, {"classification": "bug"}),
    ('{"classification": "bug", "confidence": 0.9}', OK, {"classification": "bug"}),
    ('{"label": "bug"}', UNPARSEABLE, None),
    ('{"classification": "feature"}', UNPARSEABLE, None),
    ("This looks like a crash in the parser, so it is a bug.", UNPARSEABLE, None),
    ('{"classification": "bu', UNPARSEABLE, None),
    ('["bug"]', UNPARSEABLE, None),
]


def test_malformed_suite_has_twelve_cases():
    assert len(MALFORMED) == 12


@pytest.mark.parametrize("raw,status,parsed", MALFORMED)
def test_malformed_outputs(raw, status, parsed):
    r = parse_answer(raw, BUGID.output_schema)
    assert r.status is status
    assert r.parsed == parsed


# prose-wrapped answers with the object extracted by hand
HAND_EXTRACTED = [
    ('Answer: {"is_duplicate": false, "bug_type": "internal", "was_fixed": false}',
     {"is_duplicate": False, "bug_type": "internal", "was_fixed": False}),
    ('I think {"is_duplicate": true, "bug_type": "unknown", "was_fixed": false} fits.',
     {"is_duplicate": True, "bug_type": "unknown", "was_fixed": False}),
    ('{"is_duplicate": False, "bug_type": "external", "was_fixed": True}', FULL),
    ('<think>{"draft": 1}</think>\n{"is_duplicate": false, "bug_type": "external", "was_fixed": true}', FULL),
    ('```\n{"is_duplicate": "false", "bug_type": "External", "was_fixed": "TRUE"}\n```', FULL),
    ('Result:\n{\n  "is_duplicate": false,\n  "bug_type": "external",\n  "was_fixed": true,\n}\n', FULL),
    ('note {"x": "}"} then {"is_duplicate": false, "bug_type": "external", "was_fixed": true}', FULL),
    ('{"is_duplicate": false, "bug_type": "external", "was_fixed": true, "why": {"a": 1}} done', FULL),
    ('final: {"bug_type": "unknown", "was_fixed": false, "is_duplicate": false}',
     {"is_duplicate": False, "bug_type": "unknown", "was_fixed": False}),
    ('The JSON: {"is_duplicate": false, "bug_type": "internal", "was_fixed": true} -- end',
     {"is_duplicate": False, "bug_type": "internal", "was_fixed": True}),
]


@pytest.mark.parametrize("raw,expected", HAND_EXTRACTED)
def test_bracket_scan_repairs(raw, expected):
    r = parse_answer(raw, RESP.output_schema)
    assert r.status is REPAIRED
    assert r.parsed == expected


def test_top_level_objects_ignores_braces_in_strings():
    assert top_level_objects('a {"k": "}{"} b {"n": {"m": 1}}') == ['{"k": "}{"}', '{"n": {"m": 1}}']


def test_parse_never_raises_on_garbage():
    for raw in [None, "", "{", "}", "{{}}", "\x00", '{"a":' * 50]:
        assert parse_answer(raw, RESP.output_schema).status is UNPARSEABLE


resp_values = st.fixed_dictionaries({
    "is_duplicate": st.booleans(),
    "bug_type": st.sampled_from(["internal", "external", "unknown"]),
    "was_fixed": st.booleans(),
})


@given(resp_values)
def test_serialize_round_trip(value):
    assert parse_answer(serialize(value), RESP.output_schema).parsed == value


@given(st.text(max_size=200))
def test_parsed_values_stay_in_schema(raw):
    r = parse_answer(raw, RESP.output_schema)
    if r.parsed is not None:
        for field, allowed in RESP.output_schema.items():
            assert r.parsed[field] in allowed
    else:
        assert r.status is UNPARSEABLE


# --- backend ----------------------------------------------------------------


def _ctx(title="bug 1"):
    return build_bugid_context(make_issue(1, title=title, body="it crashes"))


def test_complete_happy_path():
    chat = CannedChat(bugid={"bug 1": bug("bug")})
    answer = complete(BUGID, _ctx(), BUGID_DEFAULT, backend_for(chat))
    assert answer.parse_status is OK and answer.parsed == {"classification": "bug"}
    assert answer.task is Task.BUG_IDENTIFICATION and answer.latency_ms >= 0
    assert answer.model == "mock-8b"


def test_complete_prose_only_is_data_not_retry():
    chat = CannedChat()
    answer = complete(BUGID, _ctx(), BUGID_DEFAULT, backend_for(chat))
    assert answer.parse_status is UNPARSEABLE
    assert chat.calls == 1


def test_request_body_and_token(monkeypatch):
    seen = {}

    def handle(request):
        seen["auth"] = request.headers.get("Authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": bug("not_bug")}}]})

    monkeypatch.setenv("AUDITOR_LLM_TOKEN", "sekrit")
    b = ChatBackend("http://llm.test/c", "m", transport=httpx.MockTransport(handle))
    complete(BUGID, _ctx(), SamplingConfig(0.5, 0.8, 64, seed=3), b)
    assert seen["auth"] == "Bearer sekrit"
    body = seen["body"]
    assert body["model"] == "m" and body["temperature"] == 0.5 and body["top_p"] == 0.8
    assert body["max_tokens"] == 64 and body["seed"] == 3
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert body["messages"][1]["content"] == _ctx().text


def test_env_configuration(monkeypatch):
    monkeypatch.delenv("AUDITOR_LLM_ENDPOINT", raising=False)
    with pytest.raises(BackendUnavailable):
        ChatBackend()
    monkeypatch.setenv("AUDITOR_LLM_ENDPOINT", "http://llm.test/c")
    monkeypatch.setenv("AUDITOR_LLM_MODEL", "llama-3-8b")
    b = ChatBackend()
    assert b.endpoint == "http://llm.test/c" and b.model == "llama-3-8b"


def test_transport_failures_are_retried():
    chat = CannedChat(bugid={"bug 1": bug("bug")})
    attempts = []

    def handle(request):
        attempts.append(1)
        if len(attempts) < 3:
            return httpx.Response(503)
        return chat.transport().handle_request(request)

    sleeps = []
    b = ChatBackend("http://llm.test/c", "m", transport=httpx.MockTransport(handle), sleep=sleeps.append)
    assert complete(BUGID, _ctx(), BUGID_DEFAULT, b).parse_status is OK
    assert len(attempts) == 3 and sleeps == [1.0, 2.0]


def test_client_errors_are_not_retried():
    calls = []
    b = ChatBackend("http://llm.test/c", "m", transport=httpx.MockTransport(lambda r: calls.append(1) or httpx.Response(400)))
    with pytest.raises(BackendUnavailable):
        complete(BUGID, _ctx(), BUGID_DEFAULT, b)
    assert len(calls) == 1


def test_timeout_surfaces_after_retries():
    def handle(request):
        raise httpx.ReadTimeout("slow", request=request)

    b = ChatBackend("http://llm.test/c", "m", transport=httpx.MockTransport(handle), sleep=lambda s: None)
    with pytest.raises(Timeout):
        complete(BUGID, _ctx(), BUGID_DEFAULT, b)
    assert b.calls == 3


def test_context_too_large_before_sending():
    chat = CannedChat()
    b = backend_for(chat, max_context_tokens=100)
    big = build_bugid_context(make_issue(1, body="z" * 4000))
    with pytest.raises(ContextTooLarge):
        complete(BUGID, big, BUGID_DEFAULT, b)
    assert chat.calls == 0


def test_complete_does_not_mutate_inputs():
    chat = CannedChat(bugid={"bug 1": bug("bug")})
    ctx, schema = _ctx(), dict(BUGID.output_schema)
    complete(BUGID, ctx, BUGID_DEFAULT, backend_for(chat))
    assert ctx == _ctx() and BUGID.output_schema == schema


def test_task_mismatch_rejected():
    with pytest.raises(ValueError):
        complete(RESP, _ctx(), BUGID_DEFAULT, backend_for(CannedChat()))


# --- answer cache and sweep -------------------------------------------------


def _contexts(n):
    return {(REPO, i): build_bugid_context(make_issue(i, title=f"bug {i}")) for i in range(1, n + 1)}


def test_answer_cache_persists(tmp_path):
    chat = CannedChat(bugid={"bug 1": bug("bug")})
    b = backend_for(chat)
    path = tmp_path / "answers.jsonl"
    first = cached_complete(BUGID, _ctx(), BUGID_DEFAULT, b, AnswerCache(path), (REPO, 1))
    cache = AnswerCache(path)
    again = cached_complete(BUGID, _ctx(), BUGID_DEFAULT, b, cache, (REPO, 1))
    assert chat.calls == 1 and cache.hits == 1
    assert again == first


def test_sweep_full_grid():
    chat = CannedChat(bugid={f"bug {i}": bug("bug") for i in range(1, 3)})
    cells = sweep(BUGID, _contexts(2), grid(), backend_for(chat))
    assert len(cells) == 20
    assert all(len(c.answers) == 2 and not c.failures for c in cells.values())


def test_sweep_single_config():
    chat = CannedChat()
    cells = sweep(BUGID, _contexts(3), [BUGID_DEFAULT], backend_for(chat), workers=3)
    assert len(cells[BUGID_DEFAULT].answers) == 3


def test_sweep_empty_grid():
    with pytest.raises(ValueError):
        sweep(BUGID, _contexts(1), [], backend_for(CannedChat()))


def test_sweep_resume_issues_no_duplicate_calls(tmp_path):
    contexts = _contexts(5)
    configs = grid()[:4]
    path = tmp_path / "answers.jsonl"
    chat = CannedChat(bugid={f"bug {i}": bug("bug") for i in range(1, 6)})

    limit = 7

    def flaky(request):
        if chat.calls >= limit:
            raise httpx.ConnectError("killed", request=request)
        return chat.transport().handle_request(request)

    b1 = ChatBackend("http://llm.test/c", "mock-8b", transport=httpx.MockTransport(flaky), max_attempts=1)
    first = sweep(BUGID, contexts, configs, b1, AnswerCache(path))
    done = sum(len(c.answers) for c in first.values())
    assert done == limit
    assert sum(len(c.failures) for c in first.values()) == 20 - limit

    chat_calls_before = chat.calls
    cache = AnswerCache(path)
    second = sweep(BUGID, contexts, configs, backend_for(chat), cache)
    assert cache.hits == done
    assert chat.calls - chat_calls_before == 20 - done
    assert all(len(c.answers) == 5 for c in second.values())

    cache = AnswerCache(path)
    sweep(BUGID, contexts, configs, backend_for(chat), cache)
    assert cache.misses == 0 and chat.calls - chat_calls_before == 20 - done


def test_cache_key_includes_model(tmp_path):
    chat = CannedChat()
    path = tmp_path / "a.jsonl"
    cache = AnswerCache(path)
    cached_complete(BUGID, _ctx(), BUGID_DEFAULT, backend_for(chat), cache, (REPO, 1))
    other = ChatBackend("http://llm.test/c", "other-model", transport=chat.transport())
    cached_complete(BUGID, _ctx(), BUGID_DEFAULT, other, cache, (REPO, 1))
    assert chat.calls == 2


def test_context_block_is_frozen():
    block = ContextBlock(Task.BUG_IDENTIFICATION, "TITLE: x", 2, False)
    with pytest.raises(AttributeError):
        block.text = "y"
