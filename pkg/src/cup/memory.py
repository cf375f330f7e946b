"""Per-resident memory stream with scored retrieval and reflection."""

from __future__ import annotations

import heapq
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .errors import CupError

if TYPE_CHECKING:
    from .gateway import Gateway

KINDS = ("event", "behavior", "thought")
DEFAULT_IMPORTANCE = {"event": 3, "behavior": 4, "thought": 8}

_WORD = re.compile(r"\w+")


class MemoryPoolError(CupError):
    module = "memory"


class ImportanceOutOfRange(MemoryPoolError):
    pass


def tokenize(text: str) -> Counter:
    return Counter(_WORD.findall(text.lower()))


def cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    dot = sum(n * b[t] for t, n in a.items() if t in b)
    if not dot:
        return 0.0
    na = math.sqrt(sum(n * n for n in a.values()))
    nb = math.sqrt(sum(n * n for n in b.values()))
    return dot / (na * nb)


@dataclass
class MemoryEntry:
    kind: str
    text: str
    created: int
    importance: int
    last_access: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise MemoryPoolError(f"unknown memory kind {self.kind!r}")
        if self.last_access is None:
            self.last_access = self.created
        if self.last_access < self.created:
            raise MemoryPoolError("last_access precedes creation")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "text": self.text,
            "created": self.created,
            "last_access": self.last_access,
            "importance": self.importance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryEntry":
        return cls(d["kind"], d["text"], int(d["created"]), int(d["importance"]), int(d["last_access"]))


@dataclass(frozen=True)
class ScoreWeights:
    recency: float = 1.0
    importance: float = 1.0
    relevance: float = 1.0
    decay: float = 0.995


def score(entry: MemoryEntry, now: int, relevance: float, weights: ScoreWeights = ScoreWeights()) -> float:
    gap = now - entry.last_access
    if gap < 0:
        raise MemoryPoolError(f"now={now} precedes last access {entry.last_access}")
    return (
        weights.recency * weights.decay**gap
        + weights.importance * entry.importance / 10
        + weights.relevance * relevance
    )


@dataclass
class MemoryPool:
    entries: list[MemoryEntry] = field(default_factory=list)
    importance_since_reflection: int = 0
    weights: ScoreWeights = ScoreWeights()
    reflect_threshold: int = 30
    _tokens: list[Counter] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, entry: MemoryEntry) -> "MemoryPool":
        if not 1 <= entry.importance <= 10:
            raise ImportanceOutOfRange(f"importance {entry.importance} outside [1, 10]")
        self.entries.append(entry)
        self._tokens.append(tokenize(entry.text))
        self.importance_since_reflection += entry.importance
        return self

    def record(self, kind: str, text: str, tick: int, importance: int | None = None) -> MemoryEntry:
        entry = MemoryEntry(kind, text, tick, DEFAULT_IMPORTANCE[kind] if importance is None else importance)
        self.add(entry)
        return entry

    def retrieve(self, query: str, k: int, now: int) -> list[MemoryEntry]:
        """Top-k by score; ties go to the newer entry, then the earlier insertion."""
        if k < 1:
            raise MemoryPoolError("k must be >= 1")
        q = tokenize(query)
        ranked = heapq.nsmallest(
            k,
            (
                (-score(e, now, cosine(q, toks), self.weights), -e.created, i)
                for i, (e, toks) in enumerate(zip(self.entries, self._tokens))
            ),
        )
        hits = [self.entries[i] for _, _, i in ranked]
        for e in hits:
            e.last_access = now
        return hits

    def should_reflect(self) -> bool:
        return self.importance_since_reflection >= self.reflect_threshold

    def reflect(self, gateway: "Gateway", now: int, who: str = "", max_thoughts: int = 3) -> list[MemoryEntry]:
        from . import prompts
        from .gateway import ChatRequest

        recent = " ".join(e.text for e in self.entries[-5:])
        top = self.retrieve(recent, 10, now) if self.entries else []
        request = ChatRequest.of(
            "live.reflect",
            prompts.render("live_reflect", who=who, memories=format_memories(top)),
            system=prompts.RESIDENT_SYSTEM,
            tick=now,
        )
        reply = gateway.complete_structured(request, prompts.REFLECT_SCHEMA)
        added = []
        for thought in reply["thoughts"][:max_thoughts]:
            thought = str(thought).strip()
            if thought:
                added.append(self.record("thought", thought, now, DEFAULT_IMPORTANCE["thought"]))
        self.importance_since_reflection = 0
        return added

    def dump_lines(self) -> Iterable[str]:
        for e in self.entries:
            yield json.dumps(e.to_dict(), ensure_ascii=False)

    def to_state(self) -> dict:
        return {
            "importance_since_reflection": self.importance_since_reflection,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_state(cls, state: dict, **kw) -> "MemoryPool":
        pool = cls(**kw)
        for d in state["entries"]:
            pool.add(MemoryEntry.from_dict(d))
        pool.importance_since_reflection = int(state["importance_since_reflection"])
        return pool


def format_memories(entries: Iterable[MemoryEntry]) -> str:
    lines = [f"- [{e.kind} @ {e.created}] {e.text}" for e in entries]
    return "\n".join(lines) if lines else "(none)"


def write_dump(pool: MemoryPool, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in pool.dump_lines()), encoding="utf-8")


def read_dump(path: str | Path) -> MemoryPool:
    pool = MemoryPool()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            pool.add(MemoryEntry.from_dict(json.loads(line)))
    pool.importance_since_reflection = 0
    return pool
