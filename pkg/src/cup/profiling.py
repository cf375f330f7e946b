"""Resident personas: demographic sampling followed by a prompt chain."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from . import prompts
from .errors import CupError
from .gateway import ChatRequest, Gateway
from .plan_model import Region

log = logging.getLogger(__name__)

OCCUPATION_RETRIES = 2


class ProfilingError(CupError):
    module = "profiling"


class InvalidDemographics(ProfilingError):
    pass


class NoResidentialArea(ProfilingError):
    pass


class EmptyField(ProfilingError):
    pass


@dataclass(frozen=True)
class AgeBucket:
    min: int
    max: int
    p: float


@dataclass(frozen=True)
class DemographicSpec:
    age_buckets: tuple[AgeBucket, ...]
    genders: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        for name, probs in (("age", [b.p for b in self.age_buckets]), ("gender", [p for _, p in self.genders])):
            if not probs or any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
                raise InvalidDemographics(f"{name} probabilities must be non-negative and sum to 1")
        ordered = sorted(self.age_buckets, key=lambda b: b.min)
        for b in ordered:
            if b.min > b.max:
                raise InvalidDemographics(f"empty age range [{b.min}, {b.max}]")
        for lo, hi in zip(ordered, ordered[1:]):
            if hi.min <= lo.max:
                raise InvalidDemographics(f"age ranges [{lo.min}, {lo.max}] and [{hi.min}, {hi.max}] overlap")

    @classmethod
    def from_dict(cls, data: Mapping) -> "DemographicSpec":
        return cls(
            tuple(AgeBucket(int(b["min"]), int(b["max"]), float(b["p"])) for b in data["age_buckets"]),
            tuple((str(g["label"]), float(g["p"])) for g in data["genders"]),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "DemographicSpec":
        if path is None:
            text = resources.files(__package__).joinpath("data").joinpath("demographics.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Basics:
    age: int
    gender: str
    home_area: str

    def describe(self) -> str:
        return f"age {self.age}, {self.gender}, lives in area {self.home_area}"


@dataclass(frozen=True)
class ResidentProfile:
    id: str
    age: int
    gender: str
    personality: str
    occupation: str
    hobbies: tuple[str, ...]
    lifestyle: str
    pursuits: str
    home_area: str

    def describe(self) -> str:
        return (
            f"You are resident {self.id}, a {self.age}-year-old {self.gender} {self.occupation} "
            f"living in area {self.home_area}.\n"
            f"Personality: {self.personality}\n"
            f"Hobbies: {', '.join(self.hobbies)}\n"
            f"Lifestyle: {self.lifestyle}\n"
            f"Pursuits: {self.pursuits}"
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hobbies"] = list(self.hobbies)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResidentProfile":
        return cls(**{**d, "hobbies": tuple(d["hobbies"]), "age": int(d["age"])})


def _categorical(rng: random.Random, weights: Sequence[float]) -> int:
    u = rng.random()
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    return len(weights) - 1


def sample_basics(spec: DemographicSpec, region: Region, rng: random.Random) -> Basics:
    homes = region.residential_ids
    if not homes:
        raise NoResidentialArea(region.name)
    bucket = spec.age_buckets[_categorical(rng, [b.p for b in spec.age_buckets])]
    age = rng.randint(bucket.min, bucket.max)
    gender = spec.genders[_categorical(rng, [p for _, p in spec.genders])][0]
    return Basics(age, gender, homes[rng.randrange(len(homes))])


def _avoid_text(values: Sequence[str]) -> str:
    return ", ".join(values) if values else "(none yet)"


def _nonblank(text: str, field_name: str, resident_id: str) -> str:
    text = text.strip()
    if not text:
        raise EmptyField(f"{resident_id}: blank {field_name}")
    return text


def generate_profile(
    basics: Basics,
    prior_profiles: Sequence[ResidentProfile],
    gateway: Gateway,
    resident_id: str = "R_1",
) -> ResidentProfile:
    used_occupations = list(dict.fromkeys(p.occupation for p in prior_profiles))
    used_hobbies = list(dict.fromkeys(h for p in prior_profiles for h in p.hobbies))
    avoid_all = _avoid_text(used_occupations + used_hobbies)
    header = prompts.resident_header(resident_id)
    taken = {o.lower() for o in used_occupations}

    personality = _nonblank(
        gateway.complete(
            ChatRequest.of(
                "profile.personality",
                prompts.render("profile_personality", header=header, basics=basics.describe(), avoid=avoid_all),
            )
        ).text,
        "personality",
        resident_id,
    )

    occupation = ""
    for attempt in range(1 + OCCUPATION_RETRIES):
        avoid = list(used_occupations)
        if occupation:
            avoid.append(occupation)
        occupation = _nonblank(
            gateway.complete(
                ChatRequest.of(
                    "profile.occupation",
                    prompts.render(
                        "profile_occupation",
                        header=header,
                        basics=basics.describe(),
                        personality=personality,
                        avoid=_avoid_text(avoid),
                    ),
                )
            ).text,
            "occupation",
            resident_id,
        )
        if occupation.lower() not in taken:
            break
        log.info("%s: occupation %r already used (attempt %d)", resident_id, occupation, attempt + 1)
    else:
        log.warning("%s: keeping repeated occupation %r", resident_id, occupation)

    details = gateway.complete_structured(
        ChatRequest.of(
            "profile.details",
            prompts.render(
                "profile_details",
                header=header,
                basics=basics.describe(),
                personality=personality,
                occupation=occupation,
                avoid=_avoid_text(used_hobbies + [occupation]),
            ),
        ),
        prompts.DETAILS_SCHEMA,
    )
    hobbies = tuple(h.strip() for h in details["hobbies"] if h.strip())
    if not hobbies:
        raise EmptyField(f"{resident_id}: blank hobbies")
    return ResidentProfile(
        id=resident_id,
        age=basics.age,
        gender=basics.gender,
        personality=personality,
        occupation=occupation,
        hobbies=hobbies,
        lifestyle=_nonblank(details["lifestyle"], "lifestyle", resident_id),
        pursuits=_nonblank(details["pursuits"], "pursuits", resident_id),
        home_area=basics.home_area,
    )


def build_population(
    n: int,
    spec: DemographicSpec,
    region: Region,
    gateway: Gateway,
    rng: random.Random,
) -> list[ResidentProfile]:
    if n < 1:
        raise ProfilingError("population size must be >= 1")
    population: list[ResidentProfile] = []
    for i in range(1, n + 1):
        basics = sample_basics(spec, region, rng)
        try:
            population.append(generate_profile(basics, population, gateway, f"R_{i}"))
        except CupError as exc:
            exc.resident_index = i
            log.error("profiling failed for R_%d: %s", i, exc)
            raise
    return population


def save_population(population: Sequence[ResidentProfile], path: str | Path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in population], indent=2, ensure_ascii=False) + "\n")


def load_population(path: str | Path, region: Region | None = None) -> list[ResidentProfile]:
    population = [ResidentProfile.from_dict(d) for d in json.loads(Path(path).read_text())]
    if region is not None:
        homes = set(region.residential_ids)
        for p in population:
            if p.home_area not in homes:
                raise ProfilingError(f"{p.id}: home {p.home_area!r} is not a residential area")
    return population
