"""Plan evaluation: accessibility, ecology, resident interviews, overall score, suggestions."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import prompts
from .errors import CupError
from .gateway import ChatRequest, Gateway, GatewayError
from .memory import MemoryPool, format_memories
from .plan_model import ESSENTIAL_CATEGORIES, GREENING, LandUse, Region, UnknownLandUse, UrbanPlan, natural_key
from .profiling import ResidentProfile

log = logging.getLogger(__name__)

INTERVIEW_MEMORY_QUERY = "commute shops school clinic park open space neighbors social life satisfaction"


class JudgingError(CupError):
    module = "judging"


class NoResidentialArea(JudgingError):
    pass


class InterviewAborted(JudgingError):
    pass


def percent(value: Fraction | Decimal | float | int) -> float:
    """Round half-up to two decimals."""
    if isinstance(value, Fraction):
        value = Decimal(value.numerator) / Decimal(value.denominator)
    elif not isinstance(value, Decimal):
        value = Decimal(repr(value)) if isinstance(value, float) else Decimal(value)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Quantitative metrics
# ---------------------------------------------------------------------------


def accessibility(
    plan: UrbanPlan,
    region: Region,
    radius: float = 500.0,
    categories: Mapping[str, frozenset[LandUse]] = ESSENTIAL_CATEGORIES,
) -> float:
    """Share of homes with each essential category inside ``radius``, averaged over categories."""
    if radius <= 0:
        raise JudgingError("radius must be positive")
    homes = [a for a in region.areas if plan[a.id] is LandUse.RESIDENTIAL]
    if not homes:
        raise NoResidentialArea(region.name)
    xy = np.array([(a.x, a.y) for a in region.areas], dtype=float)
    home_xy = np.array([(a.x, a.y) for a in homes], dtype=float)
    dist = np.sqrt(((home_xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
    uses = [plan[a.id] for a in region.areas]
    covered = 0
    for members in categories.values():
        cols = [j for j, u in enumerate(uses) if u in members]
        if cols:
            covered += int((dist[:, cols].min(axis=1) <= radius).sum())
    return percent(Fraction(100 * covered, len(homes) * len(categories)))


def ecology(plan: UrbanPlan, region: Region, by: str = "size") -> float:
    """Greening share of land (``by="size"``) or of area count (``by="count"``)."""
    if by == "size":
        sizes = [Decimal(repr(a.size)) for a in region.areas]
    elif by == "count":
        sizes = [Decimal(1)] * len(region.areas)
    else:
        raise JudgingError(f"unknown ecology basis {by!r}")
    green = sum((s for a, s in zip(region.areas, sizes) if plan[a.id] in GREENING), Decimal(0))
    return percent(Decimal(100) * green / sum(sizes, Decimal(0)))


@dataclass(frozen=True)
class QuantScores:
    accessibility: float
    ecology: float

    def __post_init__(self) -> None:
        for v in (self.accessibility, self.ecology):
            if not 0 <= v <= 100:
                raise JudgingError(f"score {v} outside [0, 100]")

    def to_dict(self) -> dict:
        return {"accessibility": self.accessibility, "ecology": self.ecology}


def automatic(
    plan: UrbanPlan,
    final_env: object,
    population: Sequence[ResidentProfile],
    region: Region,
    radius: float = 500.0,
    ecology_by: str = "size",
) -> QuantScores:
    # The environment and population are accepted for future environment-derived metrics.
    log.debug(
        "automatic metrics ignore final environment (tick %s) and %d residents",
        getattr(final_env, "tick", None),
        len(population),
    )
    return QuantScores(accessibility(plan, region, radius), ecology(plan, region, ecology_by))


# ---------------------------------------------------------------------------
# Interviews
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Question:
    id: str
    text: str


def load_questionnaire(path: str | Path | None = None) -> list[Question]:
    if path is None:
        raw = resources.files(__package__).joinpath("data").joinpath("questionnaire.json").read_text()
    else:
        raw = Path(path).read_text()
    questions = [Question(str(q["id"]), str(q["text"])) for q in json.loads(raw)]
    if not questions:
        raise JudgingError("questionnaire has no questions")
    return questions


@dataclass(frozen=True)
class Answer:
    resident: str
    question: str
    score: float
    rationale: str

    def to_dict(self) -> dict:
        return {"resident": self.resident, "question": self.question, "score": self.score, "rationale": self.rationale}


@dataclass(frozen=True)
class QualScore:
    experience: float
    answers: tuple[Answer, ...]
    excluded: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "experience": self.experience,
            "answers": [a.to_dict() for a in self.answers],
            "excluded": list(self.excluded),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QualScore":
        return cls(
            d["experience"],
            tuple(Answer(a["resident"], a["question"], a["score"], a["rationale"]) for a in d["answers"]),
            tuple(d.get("excluded", ())),
        )


def mean_score(scores: Iterable[float]) -> float:
    values = [Decimal(repr(float(s))) for s in scores]
    if not values:
        raise JudgingError("no scores to average")
    return percent(sum(values, Decimal(0)) / len(values))


def _clamp(score: float, who: str, qid: str) -> float:
    if 0 <= score <= 100:
        return score
    clamped = min(100.0, max(0.0, score))
    log.warning("%s/%s: score %s clamped to %s", who, qid, score, clamped)
    return clamped


def _parse_answers(reply: Mapping, resident: str, questions: Sequence[Question]) -> list[Answer]:
    by_id = {}
    for item in reply["answers"]:
        qid = str(item["question"])
        if qid in by_id:
            continue
        by_id[qid] = item
    missing = [q.id for q in questions if q.id not in by_id]
    if missing:
        raise JudgingError(f"{resident} left questions {missing} unanswered")
    return [
        Answer(
            resident,
            q.id,
            _clamp(float(by_id[q.id]["score"]), resident, q.id),
            str(by_id[q.id].get("rationale", "")).strip(),
        )
        for q in questions
    ]


def interview(
    population: Sequence[ResidentProfile],
    questionnaire: Sequence[Question],
    gateway: Gateway,
    pools: Mapping[str, MemoryPool] | None = None,
    now: int = 0,
) -> QualScore:
    if not questionnaire:
        raise JudgingError("questionnaire has no questions")
    questions_text = "\n".join(f"{q.id}: {q.text}" for q in questionnaire)
    answers: list[Answer] = []
    excluded: list[str] = []
    for resident in population:
        pool = pools.get(resident.id) if pools else None
        recalled = pool.retrieve(INTERVIEW_MEMORY_QUERY, 5, now) if pool is not None and len(pool) else []
        request = ChatRequest.of(
            "judge.interview",
            prompts.render(
                "judge_interview",
                header=prompts.resident_header(resident.id),
                profile=resident.describe(),
                memories=format_memories(recalled),
                questions=questions_text,
            ),
            system=prompts.RESIDENT_SYSTEM,
        )
        try:
            reply = gateway.complete_structured(request, prompts.INTERVIEW_SCHEMA)
            answers.extend(_parse_answers(reply, resident.id, questionnaire))
        except (GatewayError, JudgingError) as exc:
            log.warning("interview: %s excluded: %s", resident.id, exc)
            excluded.append(resident.id)
    if len(excluded) * 2 > len(population):
        raise InterviewAborted(f"{len(excluded)} of {len(population)} residents excluded")
    answers.sort(key=lambda a: natural_key(a.resident))
    return QualScore(mean_score(a.score for a in answers), tuple(answers), tuple(sorted(excluded, key=natural_key)))


# ---------------------------------------------------------------------------
# Overall score
# ---------------------------------------------------------------------------


def overall(quant: QuantScores, qual: QualScore, mode: str = "three_way") -> float:
    """Mean of accessibility, ecology and experience (``three_way``), or of the
    quantitative mean and experience (``halves``)."""
    parts = [Decimal(repr(float(v))) for v in (quant.accessibility, quant.ecology, qual.experience)]
    for p in parts:
        if not 0 <= p <= 100:
            raise JudgingError(f"component {p} outside [0, 100]")
    if mode == "three_way":
        return percent(sum(parts, Decimal(0)) / 3)
    if mode == "halves":
        return percent(((parts[0] + parts[1]) / 2 + parts[2]) / 2)
    raise JudgingError(f"unknown overall mode {mode!r}")


# ---------------------------------------------------------------------------
# Suggestions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Suggestion:
    target: str
    proposed: str
    rationale: str = ""
    level: str = "area"  # "area" | "category"

    def to_dict(self) -> dict:
        return {"target": self.target, "proposed": self.proposed, "rationale": self.rationale, "level": self.level}


@dataclass(frozen=True)
class SuggestionList:
    items: tuple[Suggestion, ...] = ()

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.items]

    def to_prompt(self) -> str:
        if not self.items:
            return "(none)"
        return json.dumps(self.to_list(), ensure_ascii=False)

    @classmethod
    def from_list(cls, items: Sequence[Mapping]) -> "SuggestionList":
        return cls(
            tuple(Suggestion(s["target"], s["proposed"], s.get("rationale", ""), s.get("level", "area")) for s in items)
        )

    @classmethod
    def load(cls, path: str | Path) -> "SuggestionList":
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = data.get("suggestions", [])
        return cls.from_list(data)


CATEGORY_NAMES = frozenset(ESSENTIAL_CATEGORIES) | {"general"}


def _category_of(text: str) -> str | None:
    key = text.strip().lower()
    if key in CATEGORY_NAMES:
        return key
    try:
        return LandUse.parse(text).value
    except UnknownLandUse:
        return None


def resolve_suggestion(raw: Mapping, region: Region) -> Suggestion:
    target = str(raw["target"]).strip()
    proposed = str(raw["proposed"]).strip()
    rationale = str(raw.get("rationale", "")).strip()
    if target in region:
        return Suggestion(target, proposed, rationale, "area")
    category = _category_of(target)
    if category is not None:
        return Suggestion(category, proposed, rationale, "category")
    demoted = _category_of(proposed) or "general"
    log.warning("suggestion target %r does not resolve; demoted to category %r", target, demoted)
    return Suggestion(demoted, proposed, f"{rationale} (originally targeted {target})".strip(), "category")


def _complaints(qual: QualScore, limit: int = 10) -> str:
    worst = sorted(
        enumerate(qual.answers), key=lambda ia: (ia[1].score, natural_key(ia[1].resident), ia[0])
    )[:limit]
    if not worst:
        return "(none)"
    return "\n".join(f"- {a.resident} on {a.question} ({a.score:g}): {a.rationale}" for _, a in worst)


def suggest(
    quant: QuantScores,
    qual: QualScore,
    plan: UrbanPlan,
    region: Region,
    gateway: Gateway,
) -> SuggestionList:
    request = ChatRequest.of(
        "judge.suggest",
        prompts.render(
            "judge_suggest",
            iteration=plan.iteration,
            accessibility=f"{quant.accessibility:.2f}",
            ecology=f"{quant.ecology:.2f}",
            experience=f"{qual.experience:.2f}",
            complaints=_complaints(qual),
            plan=plan.describe(),
        ),
        system=prompts.JUDGE_SYSTEM,
    )
    reply = gateway.complete_structured(request, prompts.SUGGEST_SCHEMA)
    return SuggestionList(tuple(resolve_suggestion(s, region) for s in reply["suggestions"]))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

TABLE_CAPTION = "Planning efficacy (%)"
TABLE_HEADER = "| Method | Access. | Ecology | Experi. |"
TABLE_RULE = "|---|---:|---:|---:|"


def method_label(k: int) -> str:
    return "MA-LLM (iteration 1)" if k == 1 else f"CUP (iteration {k})"


def fmt(value: float | None) -> str:
    return "—" if value is None else f"{value:.2f}"


@dataclass
class JudgeReport:
    iteration: int
    quant: QuantScores
    qual: QualScore
    overall: float
    suggestions: SuggestionList = field(default_factory=SuggestionList)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "quant": self.quant.to_dict(),
            "qual": self.qual.to_dict(),
            "overall": self.overall,
            "suggestions": self.suggestions.to_list(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JudgeReport":
        return cls(
            int(d["iteration"]),
            QuantScores(**d["quant"]),
            QualScore.from_dict(d["qual"]),
            float(d["overall"]),
            SuggestionList.from_list(d["suggestions"]),
        )

    def to_markdown(self) -> str:
        row = (
            f"| {method_label(self.iteration)} | {fmt(self.quant.accessibility)} | "
            f"{fmt(self.quant.ecology)} | {fmt(self.qual.experience)} |"
        )
        lines = [f"{TABLE_CAPTION}", "", TABLE_HEADER, TABLE_RULE, row, "", f"Overall: {fmt(self.overall)}"]
        if self.suggestions.items:
            lines += ["", "Suggestions:"]
            lines += [f"- {s.target} -> {s.proposed} ({s.level}): {s.rationale}" for s in self.suggestions]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / f"report_{self.iteration}.json").write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"
        )
        (out / f"report_{self.iteration}.md").write_text(self.to_markdown())


def judge(
    plan: UrbanPlan,
    day_env: object,
    population: Sequence[ResidentProfile],
    region: Region,
    questionnaire: Sequence[Question],
    gateway: Gateway,
    pools: Mapping[str, MemoryPool] | None = None,
    now: int = 0,
    radius: float = 500.0,
    ecology_by: str = "size",
    overall_mode: str = "three_way",
) -> JudgeReport:
    quant = automatic(plan, day_env, population, region, radius, ecology_by)
    qual = interview(population, questionnaire, gateway, pools, now)
    score = overall(quant, qual, overall_mode)
    suggestions = suggest(quant, qual, plan, region, gateway)
    return JudgeReport(plan.iteration, quant, qual, score, suggestions)
