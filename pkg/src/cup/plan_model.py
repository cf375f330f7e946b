"""Region partition, land-use vocabulary and plan values.

Areas are points with a size: a centroid in a planar metric frame plus a
land area in square meters. Plans are immutable; revisions produce new plans.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import CupError


class PlanModelError(CupError):
    module = "plan-model"


class DuplicateAreaId(PlanModelError):
    pass


class NonPositiveSize(PlanModelError):
    pass


class CentroidOutOfExtent(PlanModelError):
    pass


class UnfixedResidential(PlanModelError):
    pass


class UnknownArea(PlanModelError):
    pass


class FixedAreaReassignment(PlanModelError):
    pass


class RegionMismatch(PlanModelError):
    pass


class UnknownLandUse(PlanModelError):
    pass


class LandUse(str, Enum):
    RESIDENTIAL = "Residential"
    COMMERCIAL = "Commercial"
    OFFICE = "Office"
    SCHOOL = "School"
    HOSPITAL = "Hospital"
    CLINIC = "Clinic"
    PARK = "Park"
    OPEN_SPACE = "OpenSpace"
    RECREATION = "Recreation"
    VACANT = "Vacant"

    @classmethod
    def parse(cls, value: "str | LandUse") -> "LandUse":
        """Lenient lookup: ``"open space"``, ``"open_space"`` and ``"OpenSpace"`` all match."""
        if isinstance(value, LandUse):
            return value
        key = re.sub(r"[\s_\-]+", "", str(value)).lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise UnknownLandUse(f"unknown land-use type {value!r}")

    def __str__(self) -> str:
        return self.value


GREENING = frozenset({LandUse.PARK, LandUse.OPEN_SPACE})

# Essential-service categories used for accessibility. Healthcare and greening
# each merge two land-use types into one category.
ESSENTIAL_CATEGORIES: Mapping[str, frozenset[LandUse]] = MappingProxyType(
    {
        "commercial": frozenset({LandUse.COMMERCIAL}),
        "school": frozenset({LandUse.SCHOOL}),
        "healthcare": frozenset({LandUse.HOSPITAL, LandUse.CLINIC}),
        "greening": GREENING,
        "recreation": frozenset({LandUse.RECREATION}),
    }
)

# Types a planner may hand out to a non-fixed area.
PLANNABLE_TYPES = tuple(u for u in LandUse if u not in (LandUse.RESIDENTIAL, LandUse.VACANT))


def natural_key(identifier: str) -> tuple:
    """Sort key that orders ``a_2`` before ``a_10``."""
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", identifier))


@dataclass(frozen=True)
class Extent:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def contains(self, x: float, y: float) -> bool:
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y


@dataclass(frozen=True)
class Area:
    id: str
    x: float
    y: float
    size: float
    land_use: LandUse = LandUse.VACANT
    fixed: bool = False

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Region:
    name: str
    areas: tuple[Area, ...]
    extent: Extent
    _index: Mapping[str, Area] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "areas", tuple(self.areas))
        object.__setattr__(self, "_index", MappingProxyType({a.id: a for a in self.areas}))

    def __len__(self) -> int:
        return len(self.areas)

    def area(self, area_id: str) -> Area:
        try:
            return self._index[area_id]
        except KeyError:
            raise UnknownArea(f"unknown area {area_id!r}") from None

    def __contains__(self, area_id: object) -> bool:
        return area_id in self._index

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.areas]

    @property
    def residential_ids(self) -> list[str]:
        return [a.id for a in self.areas if a.land_use is LandUse.RESIDENTIAL]

    def to_dict(self) -> dict:
        e = self.extent
        return {
            "name": self.name,
            "extent": {"min_x": e.min_x, "min_y": e.min_y, "max_x": e.max_x, "max_y": e.max_y},
            "areas": [
                {
                    "id": a.id,
                    "x": a.x,
                    "y": a.y,
                    "size_m2": a.size,
                    "land_use": a.land_use.value,
                    "fixed": a.fixed,
                }
                for a in self.areas
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Region":
        ext = data["extent"]
        areas = tuple(
            Area(
                id=str(a["id"]),
                x=float(a["x"]),
                y=float(a["y"]),
                size=float(a["size_m2"]),
                land_use=LandUse.parse(a.get("land_use", "Vacant")),
                fixed=bool(a.get("fixed", False)),
            )
            for a in data["areas"]
        )
        return cls(
            name=str(data["name"]),
            areas=areas,
            extent=Extent(
                float(ext["min_x"]), float(ext["min_y"]), float(ext["max_x"]), float(ext["max_y"])
            ),
        )


def validate_region(region: Region) -> None:
    seen: set[str] = set()
    for a in region.areas:
        if a.id in seen:
            raise DuplicateAreaId(a.id)
        seen.add(a.id)
        if not a.size > 0:
            raise NonPositiveSize(f"{a.id}: size {a.size}")
        if not region.extent.contains(a.x, a.y):
            raise CentroidOutOfExtent(f"{a.id}: ({a.x}, {a.y}) outside extent")
        if a.land_use is LandUse.RESIDENTIAL and not a.fixed:
            raise UnfixedResidential(a.id)
    if not region.areas:
        raise PlanModelError("region has no areas")


def load_region(path: str | Path) -> Region:
    region = Region.from_dict(json.loads(Path(path).read_text()))
    validate_region(region)
    return region


@dataclass(frozen=True)
class UrbanPlan:
    region: Region = field(repr=False)
    iteration: int
    assignment: Mapping[str, LandUse]

    def __post_init__(self) -> None:
        ordered = {a.id: LandUse.parse(self.assignment[a.id]) for a in self.region.areas if a.id in self.assignment}
        extra = set(self.assignment) - set(ordered)
        if extra:
            raise UnknownArea(f"unknown area {sorted(extra, key=natural_key)[0]!r}")
        missing = [a.id for a in self.region.areas if a.id not in ordered]
        if missing:
            raise PlanModelError(f"assignment missing areas {missing}")
        for a in self.region.areas:
            if a.fixed and ordered[a.id] is not a.land_use:
                raise FixedAreaReassignment(a.id)
        object.__setattr__(self, "assignment", MappingProxyType(ordered))

    def __getitem__(self, area_id: str) -> LandUse:
        try:
            return self.assignment[area_id]
        except KeyError:
            raise UnknownArea(f"unknown area {area_id!r}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UrbanPlan):
            return NotImplemented
        return (
            self.iteration == other.iteration
            and self.region == other.region
            and dict(self.assignment) == dict(other.assignment)
        )

    def __hash__(self) -> int:
        return hash((self.iteration, tuple(self.assignment.items())))

    def with_iteration(self, k: int) -> "UrbanPlan":
        return UrbanPlan(self.region, k, self.assignment)

    def areas_of(self, types: Iterable[LandUse]) -> list[str]:
        wanted = set(types)
        return [aid for aid, u in self.assignment.items() if u in wanted]

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "assignment": {aid: u.value for aid, u in self.assignment.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping, region: Region) -> "UrbanPlan":
        return cls(region, int(data["iteration"]), dict(data["assignment"]))

    def describe(self) -> str:
        """One line per area, for prompts."""
        lines = []
        for a in self.region.areas:
            tag = " (fixed)" if a.fixed else ""
            lines.append(f"{a.id}: {self.assignment[a.id].value}{tag} at ({a.x:.0f}, {a.y:.0f}), {a.size:.0f} m2")
        return "\n".join(lines)


def load_plan(path: str | Path, region: Region) -> UrbanPlan:
    return UrbanPlan.from_dict(json.loads(Path(path).read_text()), region)


def init_plan(region: Region) -> UrbanPlan:
    """P0: fixed areas keep their surveyed use, everything else is Vacant."""
    validate_region(region)
    return UrbanPlan(
        region,
        0,
        {a.id: (a.land_use if a.fixed else LandUse.VACANT) for a in region.areas},
    )


def apply_assignments(plan: UrbanPlan, changes: Iterable[tuple[str, "LandUse | str"]]) -> UrbanPlan:
    assignment = dict(plan.assignment)
    for area_id, land_use in changes:
        area = plan.region.area(area_id)
        land_use = LandUse.parse(land_use)
        if area.fixed and land_use is not assignment[area_id]:
            raise FixedAreaReassignment(area_id)
        assignment[area_id] = land_use
    return UrbanPlan(plan.region, plan.iteration, assignment)


@dataclass(frozen=True)
class PlanChange:
    area: str
    old: LandUse
    new: LandUse

    def to_dict(self) -> dict:
        return {"area": self.area, "from": self.old.value, "to": self.new.value}


@dataclass(frozen=True)
class PlanDiff:
    changes: tuple[PlanChange, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.changes)

    def __len__(self) -> int:
        return len(self.changes)

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.changes]


def diff(old: UrbanPlan, new: UrbanPlan) -> PlanDiff:
    if old.region != new.region:
        raise RegionMismatch(f"{old.region.name!r} vs {new.region.name!r}")
    changed = [
        PlanChange(aid, old.assignment[aid], new.assignment[aid])
        for aid in old.assignment
        if old.assignment[aid] is not new.assignment[aid]
    ]
    changed.sort(key=lambda c: natural_key(c.area))
    return PlanDiff(tuple(changed))


def distance(region: Region, a: str, b: str) -> float:
    pa, pb = region.area(a), region.area(b)
    return math.hypot(pa.x - pb.x, pa.y - pb.y)
