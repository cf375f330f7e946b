"""One simulated day of resident mobility and social-media activity.

Every tick, each resident steps against the same read-only snapshot of the
previous environment; the results are merged by :func:`sync` into the next
snapshot. Cognition (a gateway call) only happens at decision points; travel
between decisions is straight-line at constant speed.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

from . import prompts
from .errors import CupError
from .gateway import ChatRequest, Gateway, GatewayError
from .memory import MemoryPool, format_memories
from .plan_model import LandUse, Region, UrbanPlan, natural_key
from .profiling import ResidentProfile

log = logging.getLogger(__name__)


class LivingError(CupError):
    module = "living-sim"


class MissingResidentLocation(LivingError):
    pass


class InvalidAction(LivingError):
    pass


@dataclass(frozen=True)
class SimConfig:
    T: int = 1440
    decision_horizon: int = 60
    perceive_feed_k: int = 5
    speed: float = 80.0
    memory_k: int = 5
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("T", "decision_horizon", "perceive_feed_k", "speed", "memory_k", "workers"):
            if not getattr(self, name) > 0:
                raise LivingError(f"SimConfig.{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "decision_horizon": self.decision_horizon,
            "perceive_feed_k": self.perceive_feed_k,
            "speed": self.speed,
            "memory_k": self.memory_k,
            "workers": self.workers,
        }


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Comment:
    author: str
    tick: int
    text: str


@dataclass(frozen=True)
class Post:
    id: str
    author: str
    tick: int
    text: str
    comments: tuple[Comment, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "author": self.author,
            "tick": self.tick,
            "text": self.text,
            "comments": [{"author": c.author, "tick": c.tick, "text": c.text} for c in self.comments],
        }


@dataclass(frozen=True)
class SocialFeed:
    posts: tuple[Post, ...] = ()

    def __len__(self) -> int:
        return len(self.posts)

    def get(self, post_id: str) -> Post | None:
        for p in self.posts:
            if p.id == post_id:
                return p
        return None

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.posts]


@dataclass(frozen=True)
class Environment:
    tick: int
    physical: Mapping[str, str]
    feed: SocialFeed = SocialFeed()

    def __post_init__(self) -> None:
        object.__setattr__(self, "physical", MappingProxyType(dict(self.physical)))


@dataclass(frozen=True)
class SocialAction:
    kind: str  # "post" | "comment"
    text: str
    post_id: str | None = None


@dataclass(frozen=True)
class Social:
    """A social action as emitted into sync."""

    resident: str
    tick: int
    kind: str
    text: str
    post_id: str | None = None


@dataclass(frozen=True)
class ActionPlan:
    intent: str
    target: str
    depart: int
    dwell: int
    social: SocialAction | None = None
    degraded: str | None = None


@dataclass(frozen=True)
class Observation:
    tick: int
    resident: str
    area: str
    land_use: LandUse
    neighbors: tuple[tuple[str, LandUse], ...]
    co_located: tuple[str, ...]
    posts: tuple[Post, ...]

    def describe(self) -> str:
        lines = [f"You are at {self.area} ({self.land_use.value})."]
        lines.append("Nearby: " + ", ".join(f"{a} ({u.value})" for a, u in self.neighbors))
        lines.append("People here: " + (", ".join(self.co_located) if self.co_located else "nobody else"))
        if self.posts:
            lines.append("New social media posts:")
            for p in self.posts:
                lines.append(f"  [{p.id}] {p.author} (minute {p.tick}): {p.text}")
                for c in p.comments:
                    lines.append(f"    - {c.author}: {c.text}")
        else:
            lines.append("No new social media posts.")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Spatial helpers
# ---------------------------------------------------------------------------


class World:
    """Region + plan with precomputed neighbor lists."""

    def __init__(self, region: Region, plan: UrbanPlan, n_neighbors: int = 3):
        self.region = region
        self.plan = plan
        self._pts = [(a.id, a.x, a.y) for a in region.areas]
        self.neighbors: dict[str, tuple[str, ...]] = {}
        for aid, x, y in self._pts:
            others = sorted(
                ((math.hypot(x - ox, y - oy), i, oid) for i, (oid, ox, oy) in enumerate(self._pts) if oid != aid)
            )
            self.neighbors[aid] = tuple(oid for _, _, oid in others[:n_neighbors])

    def centroid(self, area_id: str) -> tuple[float, float]:
        a = self.region.area(area_id)
        return (a.x, a.y)

    def nearest(self, x: float, y: float) -> str:
        best, best_d = "", math.inf
        for aid, ax, ay in self._pts:
            d = (ax - x) ** 2 + (ay - y) ** 2
            if d < best_d:
                best, best_d = aid, d
        return best


def clock(tick: int) -> str:
    return f"{(tick // 60) % 24:02d}:{tick % 60:02d}"


# ---------------------------------------------------------------------------
# Resident runtime state
# ---------------------------------------------------------------------------


@dataclass
class ResidentAgent:
    profile: ResidentProfile
    pool: MemoryPool
    x: float
    y: float
    area: str
    seen: set[str] = field(default_factory=set)
    action: ActionPlan | None = None
    departed: bool = True
    traveling: bool = False
    next_decision: float = 1
    last_place: str | None = None
    last_company: tuple[str, ...] = ()

    @property
    def id(self) -> str:
        return self.profile.id

    @classmethod
    def at_home(cls, profile: ResidentProfile, pool: MemoryPool, world: World) -> "ResidentAgent":
        x, y = world.centroid(profile.home_area)
        return cls(profile, pool, x, y, profile.home_area)

    def _arrive(self, tick: int, config: SimConfig) -> None:
        self.traveling = False
        assert self.action is not None
        self.area = self.action.target
        self.next_decision = tick + min(self.action.dwell, config.decision_horizon)

    def _advance(self, tick: int, world: World, config: SimConfig) -> None:
        assert self.action is not None
        tx, ty = world.centroid(self.action.target)
        dx, dy = tx - self.x, ty - self.y
        d = math.hypot(dx, dy)
        if d <= config.speed:
            self.x, self.y = tx, ty
            self._arrive(tick, config)
        else:
            self.x += dx * config.speed / d
            self.y += dy * config.speed / d
            self.area = world.nearest(self.x, self.y)


@dataclass(frozen=True)
class StepResult:
    area: str
    social: Social | None = None
    observation: Observation | None = None
    degraded: str | None = None


def perceive(agent: ResidentAgent, env: Environment, world: World, config: SimConfig, now: int) -> Observation:
    area = env.physical[agent.id]
    plan = world.plan
    co_located = tuple(
        sorted((rid for rid, a in env.physical.items() if a == area and rid != agent.id), key=natural_key)
    )
    fresh = [(p.tick, i, p) for i, p in enumerate(env.feed.posts) if p.id not in agent.seen]
    fresh.sort(reverse=True)
    shown = tuple(p for _, _, p in fresh[: config.perceive_feed_k])
    agent.seen.update(p.id for p in shown)
    obs = Observation(
        tick=env.tick + 1,
        resident=agent.id,
        area=area,
        land_use=plan[area],
        neighbors=tuple((n, plan[n]) for n in world.neighbors[area]),
        co_located=co_located,
        posts=shown,
    )
    if area != agent.last_place:
        agent.pool.record("event", f"I am at {area}, a {plan[area].value} area.", now)
        agent.last_place = area
    if co_located and co_located != agent.last_company:
        agent.pool.record("event", f"At {area} I met {', '.join(co_located)}.", now)
    agent.last_company = co_located
    for p in shown:
        agent.pool.record("event", f"{p.author} posted online: {p.text}", now)
    return obs


def _resolve_target(raw: str, agent: ResidentAgent, world: World) -> str:
    key = raw.strip()
    if key.lower() in ("home", "my home"):
        return agent.profile.home_area
    if key.lower() in ("here", "stay", "current"):
        return agent.area
    if key in world.region:
        return key
    raise InvalidAction(f"{agent.id}: unknown target {raw!r}")


def _stay(agent: ResidentAgent, tick: int, config: SimConfig, reason: str) -> ActionPlan:
    return ActionPlan("stay in place", agent.area, tick, config.decision_horizon, None, degraded=reason)


def decide(
    agent: ResidentAgent,
    observation: Observation,
    gateway: Gateway,
    tick: int,
    world: World,
    config: SimConfig,
    now: int,
) -> ActionPlan:
    memories = agent.pool.retrieve(observation.describe(), config.memory_k, now)
    request = ChatRequest.of(
        "live.decide",
        prompts.render(
            "live_decide",
            header=prompts.resident_header(agent.id),
            profile=agent.profile.describe(),
            tick=tick,
            clock=clock(tick),
            observation=observation.describe(),
            memories=format_memories(memories),
            areas=world.plan.describe(),
        ),
        system=prompts.RESIDENT_SYSTEM,
        tick=tick,
    )
    try:
        reply = gateway.complete_structured(request, prompts.DECIDE_SCHEMA)
        target = _resolve_target(reply["target"], agent, world)
    except (GatewayError, InvalidAction) as exc:
        plan = _stay(agent, tick, config, f"{type(exc).__name__}: {exc}")
        log.warning("%s tick %d: degraded decision (%s)", agent.id, tick, plan.degraded)
        agent.pool.record("behavior", f"Unsure what to do, I stayed at {agent.area}.", now)
        return plan

    social = None
    degraded = None
    raw_social = reply.get("social")
    if raw_social:
        if raw_social["type"] == "post":
            social = SocialAction("post", raw_social["text"])
        elif raw_social["post_id"] in agent.seen:
            social = SocialAction("comment", raw_social["text"], raw_social["post_id"])
        else:
            degraded = f"comment on unseen post {raw_social['post_id']!r} dropped"
            log.warning("%s tick %d: %s", agent.id, tick, degraded)
    intent = str(reply.get("intent") or "move").strip()
    plan = ActionPlan(intent, target, tick + int(reply.get("depart_in", 0)), int(reply["dwell"]), social, degraded)

    text = f"I decided to {intent}: go to {target} and stay {plan.dwell} minutes."
    if social is not None and social.kind == "post":
        text += f" I posted: {social.text}"
    elif social is not None:
        text += f" I commented on {social.post_id}: {social.text}"
    agent.pool.record("behavior", text, now)
    return plan


def step_agent(
    agent: ResidentAgent,
    tick: int,
    env_prev: Environment,
    world: World,
    gateway: Gateway,
    config: SimConfig,
    clock_offset: int = 0,
) -> StepResult:
    """Advance one resident from ``env_prev`` (tick - 1) to ``tick``.

    ``clock_offset`` shifts memory timestamps so pools stay monotone across days.
    """
    if env_prev.tick != tick - 1:
        raise LivingError(f"snapshot tick {env_prev.tick} does not precede {tick}")
    now = clock_offset + tick
    observation = None
    degraded = None

    if agent.traveling:
        agent._advance(tick, world, config)
    elif agent.departed and tick >= agent.next_decision:
        observation = perceive(agent, env_prev, world, config, now)
        agent.action = decide(agent, observation, gateway, tick, world, config, now)
        agent.departed = False
        degraded = agent.action.degraded
        if agent.pool.should_reflect():
            try:
                agent.pool.reflect(gateway, now, who=agent.profile.describe())
            except GatewayError as exc:
                log.warning("%s tick %d: reflection failed: %s", agent.id, tick, exc)

    social = None
    action = agent.action
    if action is not None and not agent.departed and tick >= action.depart:
        agent.departed = True
        if action.social is not None:
            s = action.social
            social = Social(agent.id, tick, s.kind, s.text, s.post_id)
        if (agent.x, agent.y) == world.centroid(action.target):
            agent._arrive(tick, config)
        else:
            agent.traveling = True
            agent._advance(tick, world, config)

    return StepResult(agent.area, social, observation, degraded)


def sync(
    env_prev: Environment,
    all_locations: Mapping[str, str],
    all_socials: Sequence[Social],
) -> Environment:
    for rid in env_prev.physical:
        if rid not in all_locations:
            raise MissingResidentLocation(rid)
    tick = env_prev.tick + 1
    posts = list(env_prev.feed.posts)
    where = {p.id: i for i, p in enumerate(posts)}
    for s in sorted(all_socials, key=lambda s: (s.tick, natural_key(s.resident))):
        if s.kind == "post":
            pid = f"p_{len(posts) + 1}"
            where[pid] = len(posts)
            posts.append(Post(pid, s.resident, s.tick, s.text))
        else:
            i = where.get(s.post_id or "")
            if i is None or posts[i].tick > s.tick:
                log.warning("tick %d: %s commented on unknown post %r; dropped", tick, s.resident, s.post_id)
                continue
            parent = posts[i]
            posts[i] = Post(
                parent.id, parent.author, parent.tick, parent.text,
                parent.comments + (Comment(s.resident, s.tick, s.text),),
            )
    feed = env_prev.feed if len(posts) == len(env_prev.feed) and not all_socials else SocialFeed(tuple(posts))
    return Environment(tick, dict(all_locations), feed)


# ---------------------------------------------------------------------------
# Day driver
# ---------------------------------------------------------------------------


@dataclass
class DayLog:
    residents: list[str]
    mobility: list[list[str]]  # mobility[t - 1][i]: area of residents[i] at tick t
    feed: SocialFeed
    final_env: Environment
    memory_dumps: dict[str, list[str]]
    degraded: list[dict] = field(default_factory=list)
    observations: list[Observation] = field(default_factory=list)
    positions: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    targets: dict[str, list[str | None]] = field(default_factory=dict)

    @property
    def record_count(self) -> int:
        return sum(len(row) for row in self.mobility)

    def records(self):
        for t, row in enumerate(self.mobility, start=1):
            for rid, area in zip(self.residents, row):
                yield {"tick": t, "resident": rid, "area": area}

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "memories").mkdir(parents=True, exist_ok=True)
        with open(out / "mobility.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")
        (out / "feed.json").write_text(json.dumps(self.feed.to_list(), indent=2, ensure_ascii=False) + "\n")
        for rid, lines in self.memory_dumps.items():
            (out / "memories" / f"{rid}.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def run_day(
    plan: UrbanPlan,
    population: Sequence[ResidentProfile],
    region: Region,
    gateway: Gateway,
    config: SimConfig = SimConfig(),
    pools: dict[str, MemoryPool] | None = None,
    clock_offset: int = 0,
) -> DayLog:
    """Simulate ticks 1..T. ``pools`` is updated in place so memories carry over."""
    if not population:
        raise LivingError("population is empty")
    if pools is None:
        pools = {}
    world = World(region, plan)
    agents = [ResidentAgent.at_home(p, pools.setdefault(p.id, MemoryPool()), world) for p in population]
    ids = [a.id for a in agents]
    env = Environment(0, {a.id: a.area for a in agents})
    log_ = DayLog(ids, [], env.feed, env, {})
    log_.positions = {a.id: [(a.x, a.y)] for a in agents}
    log_.targets = {a.id: [None] for a in agents}

    pool_exec = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(1, config.T + 1):
            snapshot = env

            def step(agent: ResidentAgent) -> StepResult:
                return step_agent(agent, t, snapshot, world, gateway, config, clock_offset)

            results = list(pool_exec.map(step, agents)) if pool_exec else [step(a) for a in agents]
            socials = [r.social for r in results if r.social is not None]
            env = sync(snapshot, {a.id: r.area for a, r in zip(agents, results)}, socials)
            log_.mobility.append([r.area for r in results])
            for a, r in zip(agents, results):
                log_.positions[a.id].append((a.x, a.y))
                log_.targets[a.id].append(a.action.target if a.traveling and a.action else None)
                if r.observation is not None:
                    log_.observations.append(r.observation)
                if r.degraded:
                    log_.degraded.append({"tick": t, "resident": a.id, "reason": r.degraded})
    finally:
        if pool_exec:
            pool_exec.shutdown()
    log_.feed = env.feed
    log_.final_env = env
    log_.memory_dumps = {a.id: list(a.pool.dump_lines()) for a in agents}
    return log_
