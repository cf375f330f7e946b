"""Planner draft, resident discussion, planner finalize; plus the random baseline."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

from . import prompts
from .errors import CupError
from .gateway import ChatRequest, Gateway, GatewayError
from .memory import MemoryPool, format_memories
from .plan_model import (
    PLANNABLE_TYPES,
    LandUse,
    PlanModelError,
    Region,
    UrbanPlan,
    apply_assignments,
    validate_region,
)
from .profiling import ResidentProfile

if TYPE_CHECKING:
    from .judging import SuggestionList

log = logging.getLogger(__name__)

DISCUSSION_MEMORY_QUERY = "land use plan neighborhood shops school park open space commute daily life"


class PlanningError(CupError):
    module = "planning"


class DiscussionAborted(PlanningError):
    pass


@dataclass(frozen=True)
class PlannerKnowledge:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise PlanningError("planner knowledge is empty")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PlannerKnowledge":
        if path is None:
            return cls(resources.files(__package__).joinpath("data").joinpath("knowledge.md").read_text(encoding="utf-8"))
        return cls(Path(path).read_text(encoding="utf-8"))


@dataclass
class DiscussionTranscript:
    rounds: list[tuple[str, str]] = field(default_factory=list)
    summary: str = ""
    skipped: list[str] = field(default_factory=list)

    def render(self) -> str:
        if not self.rounds:
            return "(nobody has spoken yet)"
        return "\n".join(f"{rid}: {text}" for rid, text in self.rounds)

    def to_dict(self) -> dict:
        return {
            "rounds": [{"resident": r, "utterance": u} for r, u in self.rounds],
            "summary": self.summary,
            "skipped": list(self.skipped),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiscussionTranscript":
        return cls([(x["resident"], x["utterance"]) for x in d["rounds"]], d["summary"], list(d.get("skipped", [])))


@dataclass
class PlanUpdate:
    plan: UrbanPlan
    applied: list[tuple[str, LandUse]] = field(default_factory=list)
    dropped: list[dict] = field(default_factory=list)


def _types_text() -> str:
    return ", ".join(u.value for u in PLANNABLE_TYPES) + ", Vacant"


def apply_changes_leniently(plan: UrbanPlan, raw_changes: Sequence[Mapping]) -> PlanUpdate:
    """Apply planner-proposed changes one by one, dropping (and logging) the invalid ones."""
    update = PlanUpdate(plan)
    for ch in raw_changes:
        area, land_use = str(ch.get("area", "")), str(ch.get("land_use", ""))
        try:
            parsed = LandUse.parse(land_use)
            if parsed is LandUse.RESIDENTIAL:
                raise PlanningError("new residential areas are not planned")
            update.plan = apply_assignments(update.plan, [(area, parsed)])
            update.applied.append((area, parsed))
        except (PlanModelError, PlanningError) as exc:
            log.warning("dropping planner change %s -> %s: %s: %s", area, land_use, type(exc).__name__, exc)
            update.dropped.append({"area": area, "land_use": land_use, "reason": type(exc).__name__})
    return update


def draft_plan(
    knowledge: PlannerKnowledge,
    prev_plan: UrbanPlan,
    suggestions: "SuggestionList",
    gateway: Gateway,
    iteration: int | None = None,
) -> UrbanPlan:
    k = prev_plan.iteration + 1 if iteration is None else iteration
    request = ChatRequest.of(
        "plan.draft",
        prompts.render(
            "plan_draft",
            knowledge=knowledge.text.strip(),
            prev_iteration=prev_plan.iteration,
            plan=prev_plan.describe(),
            suggestions=suggestions.to_prompt(),
            types=_types_text(),
            iteration=k,
        ),
        system=prompts.PLANNER_SYSTEM,
    )
    reply = gateway.complete_structured(request, prompts.CHANGES_SCHEMA)
    return apply_changes_leniently(prev_plan, reply["changes"]).plan.with_iteration(k)


def discuss(
    population: Sequence[ResidentProfile],
    plan: UrbanPlan,
    gateway: Gateway,
    rounds: int = 2,
    iteration: int = 1,
    pools: Mapping[str, MemoryPool] | None = None,
    now: int = 0,
) -> DiscussionTranscript:
    """Round-robin discussion of ``plan``; memories join the prompt from iteration 2 on."""
    if rounds < 1:
        raise PlanningError("discussion needs at least one round")
    transcript = DiscussionTranscript()
    attempts = 0
    for _ in range(rounds):
        for resident in population:
            memory_section = ""
            if iteration >= 2 and pools is not None and resident.id in pools:
                recalled = pools[resident.id].retrieve(DISCUSSION_MEMORY_QUERY, 3, now)
                memory_section = f"\nYour recent living experiences:\n{format_memories(recalled)}\n"
            request = ChatRequest.of(
                "plan.discuss",
                prompts.render(
                    "plan_discuss",
                    header=prompts.resident_header(resident.id),
                    profile=resident.describe(),
                    plan=plan.describe(),
                    memory_section=memory_section,
                    transcript=transcript.render(),
                ),
                system=prompts.RESIDENT_SYSTEM,
            )
            attempts += 1
            try:
                text = gateway.complete(request).text.strip()
            except GatewayError as exc:
                log.warning("discussion: %s skipped: %s", resident.id, exc)
                transcript.skipped.append(resident.id)
                continue
            transcript.rounds.append((resident.id, text))
    if len(transcript.skipped) * 2 > attempts:
        raise DiscussionAborted(f"{len(transcript.skipped)} of {attempts} utterances failed")
    summary_request = ChatRequest.of(
        "plan.summarize",
        prompts.render("plan_summarize", iteration=iteration, transcript=transcript.render()),
        system=prompts.PLANNER_SYSTEM,
    )
    transcript.summary = gateway.complete(summary_request).text.strip()
    if transcript.rounds and not transcript.summary:
        raise PlanningError("discussion summary is empty")
    return transcript


def finalize_plan(
    knowledge: PlannerKnowledge,
    draft: UrbanPlan,
    suggestions: "SuggestionList",
    discussion_summary: str,
    gateway: Gateway,
) -> UrbanPlan:
    request = ChatRequest.of(
        "plan.final",
        prompts.render(
            "plan_final",
            knowledge=knowledge.text.strip(),
            iteration=draft.iteration,
            plan=draft.describe(),
            suggestions=suggestions.to_prompt(),
            discussion=discussion_summary,
            types=_types_text(),
        ),
        system=prompts.PLANNER_SYSTEM,
    )
    reply = gateway.complete_structured(request, prompts.CHANGES_SCHEMA)
    return apply_changes_leniently(draft, reply["changes"]).plan


def random_baseline_plan(region: Region, rng: random.Random) -> UrbanPlan:
    validate_region(region)
    assignment = {
        a.id: (a.land_use if a.fixed else PLANNABLE_TYPES[rng.randrange(len(PLANNABLE_TYPES))])
        for a in region.areas
    }
    return UrbanPlan(region, 0, assignment)


def baseline_rng(seed: int) -> random.Random:
    """Random stream for the baseline plan, separate from the profiling stream."""
    return random.Random(f"{seed}/baseline")


def save_transcript(transcript: DiscussionTranscript, path: str | Path) -> None:
    Path(path).write_text(json.dumps(transcript.to_dict(), indent=2, ensure_ascii=False) + "\n")
