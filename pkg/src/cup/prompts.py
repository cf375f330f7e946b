"""Prompt templates, system roles and reply schemas.

Templates live in ``templates/*.txt``; the first line names the template and
its version and is not sent to the model.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

RESIDENT_SYSTEM = "You role-play a resident of an urban neighborhood. Stay in character."
PLANNER_SYSTEM = "You are an experienced urban planner revising a land-use plan."
JUDGE_SYSTEM = "You evaluate land-use plans and give actionable suggestions for their renewal."


@lru_cache(maxsize=None)
def _load(name: str) -> tuple[str, Template]:
    raw = resources.files(__package__).joinpath("templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    header, _, body = raw.partition("\n")
    return header.lstrip("# ").strip(), Template(body.strip("\n"))


def version(name: str) -> str:
    return _load(name)[0]


def render(name: str, **fields: object) -> str:
    return _load(name)[1].substitute(**{k: str(v) for k, v in fields.items()})


def resident_header(resident_id: str) -> str:
    # Stable marker that scripts can match on; "R_1" alone is a prefix of "R_12".
    return f"[resident:{resident_id}]"


_STR = {"type": "string"}

DETAILS_SCHEMA = {
    "type": "object",
    "properties": {
        "hobbies": {"type": "array", "items": _STR, "minItems": 1},
        "lifestyle": _STR,
        "pursuits": _STR,
    },
    "required": ["hobbies", "lifestyle", "pursuits"],
}

DECIDE_SCHEMA = {
    "type": "object",
    "properties": {
        "intent": _STR,
        "target": _STR,
        "dwell": {"type": "integer", "minimum": 1},
        "depart_in": {"type": "integer", "minimum": 0},
        "social": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "properties": {"type": {"const": "post"}, "text": _STR},
                    "required": ["type", "text"],
                },
                {
                    "type": "object",
                    "properties": {"type": {"const": "comment"}, "post_id": _STR, "text": _STR},
                    "required": ["type", "post_id", "text"],
                },
            ]
        },
    },
    "required": ["target", "dwell"],
}

REFLECT_SCHEMA = {
    "type": "object",
    "properties": {"thoughts": {"type": "array", "items": _STR}},
    "required": ["thoughts"],
}

CHANGES_SCHEMA = {
    "type": "object",
    "properties": {
        "changes": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"area": _STR, "land_use": _STR},
                "required": ["area", "land_use"],
            },
        }
    },
    "required": ["changes"],
}

INTERVIEW_SCHEMA = {
    "type": "object",
    "properties": {
        "answers": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"question": _STR, "score": {"type": "number"}, "rationale": _STR},
                "required": ["question", "score"],
            },
        }
    },
    "required": ["answers"],
}

SUGGEST_SCHEMA = {
    "type": "object",
    "properties": {
        "suggestions": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"target": _STR, "proposed": _STR, "rationale": _STR},
                "required": ["target", "proposed"],
            },
        }
    },
    "required": ["suggestions"],
}
