"""Model-backed classification: templates, transport, output parsing and sweeps."""

from .backend import (
    AnswerCache,
    BackendUnavailable,
    ChatBackend,
    ContextTooLarge,
    LLMError,
    ModelAnswer,
    Timeout,
    build_messages,
    cached_complete,
    complete,
)
from .config import (
    BUGID_DEFAULT,
    RESPONSIVENESS_DEFAULT,
    TEMPERATURE_GRID,
    TOP_P_GRID,
    PromptTemplate,
    SamplingConfig,
    default_template,
    grid,
)
from .parsing import ParseResult, ParseStatus, parse_answer, serialize, top_level_objects
from .sweep import SweepCell, sweep

__all__ = [
    "AnswerCache", "BUGID_DEFAULT", "BackendUnavailable", "ChatBackend", "ContextTooLarge",
    "LLMError", "ModelAnswer", "ParseResult", "ParseStatus", "PromptTemplate",
    "RESPONSIVENESS_DEFAULT", "SamplingConfig", "SweepCell", "TEMPERATURE_GRID", "TOP_P_GRID",
    "Timeout", "build_messages", "cached_complete", "complete", "default_template", "grid",
    "parse_answer", "serialize", "sweep", "top_level_objects",
]
