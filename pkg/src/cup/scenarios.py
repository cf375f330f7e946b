"""Scripted scenarios for the 12-area fixture region.

``gardener_script`` reproduces the open-space story end to end: an elderly
gardener posts a wish for the vacant lot next to his home, a neighbour
supports it, the judge turns his low greenery score into a suggestion and
the planner rezones the lot in the next iteration.  ``adversarial_script``
hammers the feed so ordering laws can be checked.  Both are plain dicts in
the scripted-backend format and are also shipped under ``data/``.
"""

from __future__ import annotations

import json
from pathlib import Path

from .plan_model import natural_key

GARDENER_SEED = 240  # R_19 is 64, male, lives in a_11; R_16 is his neighbour in a_11
GARDENER = "R_19"
SUPPORTER = "R_16"
WISH = "I wish the vacant lot a_12 next to my street could become an open space with trees and flower beds."
SUPPORT = "I support R_19: an open space at a_12 would be lovely for all of us on this side."
GREENERY_COMPLAINT = (
    "I look forward to more open spaces close to home; the vacant lot a_12 should become an open space."
)
# Target experience per iteration, as a sum over 30 residents x 5 questions.
EXPERIENCE_SUMS = (9754, 9990, 10354)

DRAFT_1 = {
    "a_2": "Commercial",
    "a_4": "School",
    "a_5": "Park",
    "a_7": "Clinic",
    "a_9": "Recreation",
    "a_10": "Office",
}
DRAFT_3 = {"a_10": "Recreation", "a_9": "Office"}

OCCUPATIONS = [
    "nurse", "software developer", "bus driver", "primary school teacher", "accountant",
    "chef", "electrician", "pharmacist", "graphic designer", "retired postman",
    "shop owner", "university student", "civil engineer", "librarian", "delivery courier",
    "retired nurse", "police officer", "hairdresser", "retired gardener", "journalist",
    "plumber", "dentist", "bank clerk", "social worker", "musician",
    "retired factory worker", "architect", "taxi driver", "lab technician", "baker",
]
HOBBIES = [
    "cycling", "board games", "running", "reading", "photography",
    "cooking", "fishing", "yoga", "painting", "chess",
    "basketball", "video games", "hiking", "knitting", "football",
    "bird watching", "swimming", "dancing", "gardening", "writing",
    "woodworking", "tennis", "baking", "volunteering", "guitar",
    "table tennis", "sketching", "skateboarding", "astronomy", "pottery",
]
PERSONALITIES = [
    "Calm and caring, a good listener.",
    "Curious and analytical, likes quiet evenings.",
    "Punctual and friendly with everyone.",
    "Patient and cheerful, loves children.",
    "Careful and reserved.",
    "Energetic and sociable.",
    "Practical and direct.",
    "Thoughtful and precise.",
    "Creative and a little chaotic.",
    "Talkative and warm.",
]
QUESTIONS = ("commute", "amenities", "greenery", "social", "overall")
GENERIC_RATIONALE = {
    "commute": "Daily trips are manageable.",
    "amenities": "Most of what I need is within reach.",
    "greenery": "There is some green space nearby.",
    "social": "Neighbours are friendly.",
    "overall": "Living here is fine.",
}
GARDENER_ANSWERS = (
    {
        "commute": (70, "I rarely need to travel far."),
        "amenities": (60, "The clinic is close enough."),
        "greenery": (30, GREENERY_COMPLAINT),
        "social": (75, "My neighbours share my love of plants."),
        "overall": (60, "Good, but the empty lot by my street is a waste."),
    },
    {
        "commute": (70, "I rarely need to travel far."),
        "amenities": (62, "The clinic is close enough."),
        "greenery": (85, "The lot a_12 has been approved to be altered into an open space."),
        "social": (78, "We plan to plant flowers there together."),
        "overall": (72, "Much happier with the new open space."),
    },
    {
        "commute": (72, "I rarely need to travel far."),
        "amenities": (64, "The clinic is close enough."),
        "greenery": (90, "The open space at a_12 is a joy every morning."),
        "social": (80, "We meet in the open space to garden."),
        "overall": (76, "This is a good place to grow old."),
    },
)

DEFAULT_DECIDE = {"intent": "stay put", "target": "here", "dwell": 60, "depart_in": 0, "social": None}
OUTING_AREAS = ("a_2", "a_4", "a_5", "a_7", "a_9", "a_10")


def _j(value: object) -> str:
    return json.dumps(value, ensure_ascii=False)


def _rid(i: int) -> str:
    return f"R_{i}"


def _profiling_entries(n: int) -> list[dict]:
    entries = []
    for i in range(1, n + 1):
        rid = _rid(i)
        header = f"[resident:{rid}]"
        if rid == GARDENER:
            personality = "Gentle and patient; happiest with soil on his hands."
            details = {
                "hobbies": ["gardening"],
                "lifestyle": "Up at dawn, spends mornings tending plants and chatting with neighbours.",
                "pursuits": "Wants a green corner near home where neighbours can garden together.",
            }
        else:
            personality = PERSONALITIES[(i - 1) % len(PERSONALITIES)]
            details = {
                "hobbies": [HOBBIES[(i - 1) % len(HOBBIES)]],
                "lifestyle": "Keeps a regular daily routine.",
                "pursuits": "Wants a convenient and pleasant neighbourhood.",
            }
        entries.append({"tag": "profile.personality", "match": header, "responses": [personality]})
        entries.append(
            {"tag": "profile.occupation", "match": header, "responses": [OCCUPATIONS[(i - 1) % len(OCCUPATIONS)]]}
        )
        entries.append({"tag": "profile.details", "match": header, "responses": [_j(details)]})
    return entries


def _outing(i: int, day: int) -> dict:
    area = OUTING_AREAS[(i + day) % len(OUTING_AREAS)]
    action = {"intent": "go out", "target": area, "dwell": 240, "depart_in": 420 + 7 * i, "social": None}
    if i % 5 == 0:
        action["social"] = {"type": "post", "text": f"Morning errands at {area}."}
    return action


def _home() -> dict:
    return {"intent": "go home", "target": "home", "dwell": 600, "depart_in": 0, "social": None}


def _living_entries(n: int, days: int) -> list[dict]:
    entries = [
        {
            "tag": "live.decide",
            "match": [f"[resident:{SUPPORTER}]", WISH],
            "responses": [
                _j(
                    {
                        "intent": "head home after reading the news",
                        "target": "home",
                        "dwell": 60,
                        "depart_in": 0,
                        "social": {"type": "comment", "post_id": "p_1", "text": SUPPORT},
                    }
                )
            ],
        }
    ]
    for i in range(1, n + 1):
        rid = _rid(i)
        responses = []
        for day in range(days):
            if rid == GARDENER and day == 0:
                responses.append(
                    _j(
                        {
                            "intent": "look at the vacant lot",
                            "target": "a_12",
                            "dwell": 30,
                            "depart_in": 0,
                            "social": {"type": "post", "text": WISH},
                        }
                    )
                )
            else:
                responses.append(_j(_outing(i, day)))
            responses.append(_j(_home()))
        entries.append(
            {"tag": "live.decide", "match": f"[resident:{rid}]", "responses": responses, "default": _j(DEFAULT_DECIDE)}
        )
    entries.append(
        {
            "tag": "live.reflect",
            "default": _j({"thoughts": ["My days follow a steady rhythm.", "The neighbourhood shapes my routine."]}),
        }
    )
    return entries


def _discussion_entries(iterations: int, rounds: int) -> list[dict]:
    gardener = []
    supporter = []
    for k in range(1, iterations + 1):
        for r in range(1, rounds + 1):
            if k == 1:
                gardener.append(f"The vacant lot a_12 should become an open space; we need greenery near our homes (round {r}).")
                supporter.append(f"I agree with R_19 about an open space at a_12 (round {r}).")
            else:
                gardener.append(f"Thank you for the open space at a_12; please keep it green (iteration {k}, round {r}).")
                supporter.append(f"The new open space is used every day (iteration {k}, round {r}).")
    summaries = [
        "Residents ask for more greenery. R_19 insists that the vacant lot a_12 become an open space, and R_16 supports him.",
        "Residents welcome the open space at a_12 and ask for recreation facilities closer to the southern homes.",
        "Residents are broadly satisfied; remaining requests concern clinic access from the north-west.",
    ]
    return [
        {"tag": "plan.discuss", "match": f"[resident:{GARDENER}]", "responses": gardener},
        {"tag": "plan.discuss", "match": f"[resident:{SUPPORTER}]", "responses": supporter},
        {"tag": "plan.discuss", "default": "The plan looks reasonable to me; I would like shorter daily trips."},
        {"tag": "plan.summarize", "responses": summaries[:iterations]},
    ]


def _changes(assign: dict[str, str]) -> str:
    return _j({"changes": [{"area": a, "land_use": u} for a, u in assign.items()]})


def _planner_entries() -> list[dict]:
    return [
        {"tag": "plan.draft", "match": '"target": "a_12"', "responses": [_changes({"a_12": "OpenSpace"})]},
        {"tag": "plan.draft", "match": '"target": "a_10"', "responses": [_changes(DRAFT_3)]},
        {"tag": "plan.draft", "responses": [_changes(DRAFT_1)], "default": _changes({})},
        {"tag": "plan.final", "default": _changes({})},
    ]


def _interview_scores(n: int, total: int, fixed: dict[str, dict[str, tuple[int, str]]]) -> dict[str, list[dict]]:
    """Spread ``total`` over all answers so the mean hits a chosen value."""
    fixed_sum = sum(s for answers in fixed.values() for s, _ in answers.values())
    free = [(_rid(i), q) for i in range(1, n + 1) if _rid(i) not in fixed for q in QUESTIONS]
    base, extra = divmod(total - fixed_sum, len(free))
    out: dict[str, list[dict]] = {}
    for j, (rid, q) in enumerate(free):
        out.setdefault(rid, []).append(
            {"question": q, "score": base + (1 if j < extra else 0), "rationale": GENERIC_RATIONALE[q]}
        )
    for rid, answers in fixed.items():
        out[rid] = [{"question": q, "score": s, "rationale": r} for q, (s, r) in answers.items()]
    return out


def _judging_entries(n: int, iterations: int) -> list[dict]:
    per_resident: dict[str, list[str]] = {_rid(i): [] for i in range(1, n + 1)}
    for k in range(iterations):
        total = EXPERIENCE_SUMS[k] if k < len(EXPERIENCE_SUMS) else EXPERIENCE_SUMS[-1]
        scores = _interview_scores(n, total, {GARDENER: GARDENER_ANSWERS[min(k, len(GARDENER_ANSWERS) - 1)]})
        for rid, answers in scores.items():
            per_resident[rid].append(_j({"answers": answers}))
    entries = [
        {"tag": "judge.interview", "match": f"[resident:{rid}]", "responses": responses}
        for rid, responses in sorted(per_resident.items(), key=lambda kv: natural_key(kv[0]))
    ]
    entries += [
        {
            "tag": "judge.suggest",
            "match": GREENERY_COMPLAINT,
            "responses": [
                _j(
                    {
                        "suggestions": [
                            {
                                "target": "a_12",
                                "proposed": "OpenSpace",
                                "rationale": "Residents near a_12 lack green space; R_19 wishes the vacant lot became an open space.",
                            }
                        ]
                    }
                )
            ],
        },
        {
            "tag": "judge.suggest",
            "match": "Ecology: 16.67%",
            "responses": [
                _j(
                    {
                        "suggestions": [
                            {
                                "target": "a_10",
                                "proposed": "Recreation",
                                "rationale": "Homes in a_6 and a_11 have no recreation within walking distance.",
                            }
                        ]
                    }
                )
            ],
        },
        {
            "tag": "judge.suggest",
            "default": _j(
                {
                    "suggestions": [
                        {"target": "healthcare", "proposed": "Clinic", "rationale": "a_1 is far from the clinic."}
                    ]
                }
            ),
        },
    ]
    return entries


def gardener_script(n: int = 30, iterations: int = 3, rounds: int = 2) -> dict:
    if n < 19:
        raise ValueError("the gardener scenario needs at least 19 residents")
    entries = (
        _profiling_entries(n)
        + _living_entries(n, iterations)
        + _discussion_entries(iterations, rounds)
        + _planner_entries()
        + _judging_entries(n, iterations)
    )
    return {"entries": entries}


def gardener_config(iterations: int = 3, population_size: int = 30) -> dict:
    return {
        "iterations": iterations,
        "population_size": population_size,
        "seed": GARDENER_SEED,
        "backend": "scripted",
        "paths": {"script": "gardener_script.json"},
    }


def adversarial_script(n: int = 6) -> dict:
    """Every decision posts; movers bounce between opposite corners, stayers
    re-decide every few minutes and try to comment on posts that may not exist yet."""
    entries = []
    for i in range(1, n + 1):
        header = f"[resident:R_{i}]"
        if i % 2:
            for here, there in (("a_1", "a_12"), ("a_12", "a_1")):
                entries.append(
                    {
                        "tag": "live.decide",
                        "match": [header, f"You are at {here} ("],
                        "default": _j(
                            {
                                "intent": "bounce",
                                "target": there,
                                "dwell": 1,
                                "depart_in": 0,
                                "social": {"type": "post", "text": f"{header} leaving {here}"},
                            }
                        ),
                    }
                )
            entries.append(
                {"tag": "live.decide", "match": header, "default": _j({"target": "a_1", "dwell": 1, "depart_in": 0})}
            )
        else:
            entries.append(
                {
                    "tag": "live.decide",
                    "match": header,
                    "default": _j(
                        {
                            "intent": "watch the feed",
                            "target": "here",
                            "dwell": 3,
                            "depart_in": 0,
                            "social": {"type": "comment", "post_id": f"p_{i}", "text": f"{header} replying"},
                        }
                    ),
                }
            )
    entries.append({"tag": "live.reflect", "default": _j({"thoughts": ["Busy day."]})})
    return {"entries": entries}


def write_gardener(directory: str | Path, iterations: int = 3, population_size: int = 30) -> Path:
    """Write ``gardener.json`` (a cycle config) and its script into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "gardener_script.json").write_text(
        json.dumps(gardener_script(population_size, iterations), indent=1, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (d / "gardener.json").write_text(json.dumps(gardener_config(iterations, population_size), indent=2) + "\n")
    return d / "gardener.json"
