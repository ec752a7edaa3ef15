"""Sampling configurations and prompt templates."""

from __future__ import annotations

import hashlib
import itertools
import json
from collections.abc import Mapping
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..context import Task

TEMPERATURE_GRID = (0.0, 0.2, 0.5, 0.8, 1.0)
TOP_P_GRID = (0.7, 0.8, 0.9, 0.95)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float
    top_p: float
    max_output_tokens: int = 256
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_output_tokens": self.max_output_tokens,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SamplingConfig:
        return cls(
            float(data["temperature"]),
            float(data["top_p"]),
            int(data.get("max_output_tokens", 256)),
            data.get("seed"),
        )

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def label(self) -> str:
        return f"T={self.temperature:g}/top_p={self.top_p:g}"


# best cells reported for each task
BUGID_DEFAULT = SamplingConfig(temperature=0.2, top_p=0.9)
RESPONSIVENESS_DEFAULT = SamplingConfig(temperature=0.2, top_p=0.7)


def grid(
    temperatures=TEMPERATURE_GRID, top_ps=TOP_P_GRID, max_output_tokens: int = 256, seed: int | None = None
) -> list[SamplingConfig]:
    return [
        SamplingConfig(t, p, max_output_tokens, seed) for t, p in itertools.product(temperatures, top_ps)
    ]


@dataclass(frozen=True)
class PromptTemplate:
    task: Task
    instruction_text: str
    output_schema: dict[str, tuple[Any, ...]]
    version: str

    def __post_init__(self) -> None:
        if not self.output_schema:
            raise ValueError("output_schema must declare at least one field")
        if self.task is Task.BUG_IDENTIFICATION and len(self.output_schema) != 1:
            raise ValueError("the bug identification schema has exactly one field")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> PromptTemplate:
        schema = {str(k): tuple(v) for k, v in data["output_schema"].items()}
        return cls(Task(data["task"]), str(data["instruction"]), schema, str(data["version"]))

    @classmethod
    def load(cls, path: Path | str) -> PromptTemplate:
        return cls.from_mapping(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


def default_template(task: Task | str) -> PromptTemplate:
    task = Task(task)
    text = resources.files(__package__).joinpath(f"templates/{task.value}.yaml").read_text(encoding="utf-8")
    return PromptTemplate.from_mapping(yaml.safe_load(text))
