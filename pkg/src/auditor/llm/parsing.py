"""Validate model output against a field -> allowed-values schema."""

from __future__ import annotations

import enum
import json
import re
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

Schema = Mapping[str, tuple[Any, ...]]

_TRAILING_COMMA = re.compile(r",(\s*[}\]])")
_PY_LITERALS = {"True": "true", "False": "false", "None": "null"}


class ParseStatus(str, enum.Enum):
    OK = "ok"
    REPAIRED = "repaired"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class ParseResult:
    status: ParseStatus
    parsed: dict[str, Any] | None = None
    error: str | None = None


class SchemaViolation(ValueError):
    pass


def top_level_objects(text: str) -> list[str]:
    """Balanced ``{...}`` spans at nesting depth zero, in order of appearance."""
    spans = []
    depth = 0
    start = 0
    in_string = escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                spans.append(text[start : i + 1])
    return spans


def _repair(candidate: str) -> str:
    out = []
    in_string = escaped = False
    token = ""
    for ch in candidate:
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch.isalpha():
            token += ch
            continue
        if token:
            out.append(_PY_LITERALS.get(token, token))
            token = ""
        if ch == '"':
            in_string = True
        out.append(ch)
    if token:
        out.append(_PY_LITERALS.get(token, token))
    return _TRAILING_COMMA.sub(r"\1", "".join(out))


def _loads(candidate: str) -> tuple[Any, bool] | None:
    try:
        return json.loads(candidate), False
    except json.JSONDecodeError:
        pass
    try:
        return json.loads(_repair(candidate)), True
    except json.JSONDecodeError:
        return None


def _canonical_value(field: str, value: Any, allowed: tuple[Any, ...]) -> Any:
    if any(isinstance(a, bool) for a in allowed):
        if isinstance(value, bool):
            result = value
        elif isinstance(value, str) and value.strip().lower() in ("true", "false"):
            result = value.strip().lower() == "true"
        else:
            raise SchemaViolation(f"{field}: {value!r} is not a boolean")
        if result not in allowed:
            raise SchemaViolation(f"{field}: {result!r} not allowed")
        return result
    if not isinstance(value, str):
        raise SchemaViolation(f"{field}: expected a string, got {value!r}")
    norm = re.sub(r"[\s\-]+", "_", value.strip().lower())
    for option in allowed:
        if norm == str(option).lower():
            return option
    raise SchemaViolation(f"{field}: {value!r} is not one of {list(allowed)}")


def validate(data: Any, schema: Schema) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise SchemaViolation("answer is not a JSON object")
    out = {}
    for field, allowed in schema.items():
        if field not in data:
            raise SchemaViolation(f"missing field {field!r}")
        out[field] = _canonical_value(field, data[field], allowed)
    return out


def parse_answer(raw: str, schema: Schema) -> ParseResult:
    """Parse a model answer; never raises.

    An answer that is exactly a JSON object is ``ok``. Otherwise the last
    top-level object found by a bracket scan is used and the result is
    ``repaired``. Unknown extra fields are dropped; missing fields or values
    outside the schema make the answer ``unparseable``.
    """
    text = (raw or "").strip()
    direct = None
    try:
        direct = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        pass
    if isinstance(direct, dict):
        try:
            return ParseResult(ParseStatus.OK, validate(direct, schema))
        except SchemaViolation as exc:
            return ParseResult(ParseStatus.UNPARSEABLE, None, str(exc))
    for candidate in reversed(top_level_objects(text)):
        loaded = _loads(candidate)
        if loaded is None:
            continue
        try:
            return ParseResult(ParseStatus.REPAIRED, validate(loaded[0], schema))
        except SchemaViolation as exc:
            return ParseResult(ParseStatus.UNPARSEABLE, None, str(exc))
    return ParseResult(ParseStatus.UNPARSEABLE, None, "no JSON object found")


def serialize(parsed: Mapping[str, Any]) -> str:
    return json.dumps(dict(parsed), sort_keys=True)
