"""The closed planning -> living -> judging loop, with on-disk records and resume."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import random
import shutil
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from . import report as report_mod
from .errors import ConfigError, CupError
from .gateway import AuditLog, Gateway, ScriptedBackend, make_gateway
from .judging import JudgeReport, SuggestionList, interview, judge, load_questionnaire
from .living import SimConfig, run_day
from .memory import MemoryPool
from .plan_model import PlanDiff, PlanChange, LandUse, Region, UrbanPlan, diff, init_plan, load_region
from .planning import (
    PlannerKnowledge,
    baseline_rng,
    discuss,
    draft_plan,
    finalize_plan,
    random_baseline_plan,
    save_transcript,
)
from .profiling import DemographicSpec, build_population, load_population, save_population

log = logging.getLogger(__name__)

PATH_KEYS = ("region", "demographics", "knowledge", "questionnaire", "script")
DEFAULT_DATA = {
    "region": "region_12.json",
    "demographics": "demographics.json",
    "knowledge": "knowledge.md",
    "questionnaire": "questionnaire.json",
}


class OrchestratorError(CupError):
    module = "orchestrator"


class CorruptRecord(OrchestratorError):
    def __init__(self, k: int, why: str):
        super().__init__(f"record {k}: {why}")
        self.k = k


class ConfigMismatch(OrchestratorError):
    pass


class IterationAborted(OrchestratorError):
    def __init__(self, k: int, cause: BaseException):
        super().__init__(f"iteration {k} aborted: {type(cause).__name__}: {cause}")
        self.k = k
        self.cause = cause


@dataclass
class CycleConfig:
    iterations: int = 3
    population_size: int = 30
    seed: int = 0
    backend: str = "scripted"
    sim: SimConfig = field(default_factory=SimConfig)
    paths: dict[str, str | None] = field(default_factory=dict)
    output: str | None = None
    discussion_rounds: int = 2
    discuss_on: str = "previous"
    radius: float = 500.0
    ecology_by: str = "size"
    overall_mode: str = "three_way"
    reflect_threshold: int = 30
    baseline_day: bool = False
    live: dict[str, Any] = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.population_size < 1:
            raise ConfigError("population_size must be >= 1")
        if self.backend not in ("scripted", "live"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.discuss_on not in ("previous", "draft"):
            raise ConfigError("discuss_on must be 'previous' or 'draft'")
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown path keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | Path = ".") -> "CycleConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "sim" in data:
            try:
                data["sim"] = SimConfig(**data["sim"])
            except TypeError as exc:
                raise ConfigError(f"bad sim section: {exc}") from None
        return cls(**data, base_dir=str(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> "CycleConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def path(self, key: str) -> Path | None:
        """Resolved input path; packaged defaults stand in for missing data files."""
        value = self.paths.get(key)
        if value:
            p = Path(value)
            return p if p.is_absolute() else Path(self.base_dir) / p
        if key in DEFAULT_DATA:
            return Path(str(resources.files(__package__).joinpath("data").joinpath(DEFAULT_DATA[key])))
        return None

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "population_size": self.population_size,
            "seed": self.seed,
            "backend": self.backend,
            "sim": self.sim.to_dict(),
            "paths": {k: self.paths.get(k) for k in PATH_KEYS},
            "discussion_rounds": self.discussion_rounds,
            "discuss_on": self.discuss_on,
            "radius": self.radius,
            "ecology_by": self.ecology_by,
            "overall_mode": self.overall_mode,
            "reflect_threshold": self.reflect_threshold,
            "baseline_day": self.baseline_day,
            "live": dict(self.live),
        }

    def digest(self) -> str:
        """Hash of everything that determines results, except the iteration count."""
        payload = self.to_dict()
        payload.pop("iterations")
        payload.pop("paths")
        inputs = {}
        for key in PATH_KEYS:
            p = self.path(key)
            if p is None:
                inputs[key] = None
                continue
            try:
                inputs[key] = hashlib.sha256(p.read_bytes()).hexdigest()
            except OSError as exc:
                raise ConfigError(f"cannot read {key} file {p}: {exc}") from None
        payload["inputs"] = inputs
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class IterationRecord:
    k: int
    plan: UrbanPlan
    plan_diff: PlanDiff
    day_log_ref: str
    report: JudgeReport
    gateway_call_count: int
    audit_offset: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "plan": self.plan.to_dict(),
            "plan_diff": self.plan_diff.to_list(),
            "day_log_ref": self.day_log_ref,
            "report": self.report.to_dict(),
            "gateway_call_count": self.gateway_call_count,
            "audit_offset": self.audit_offset,
        }

    @classmethod
    def from_dict(cls, d: Mapping, region: Region) -> "IterationRecord":
        return cls(
            int(d["k"]),
            UrbanPlan.from_dict(d["plan"], region),
            PlanDiff(tuple(PlanChange(c["area"], LandUse(c["from"]), LandUse(c["to"])) for c in d["plan_diff"])),
            d["day_log_ref"],
            JudgeReport.from_dict(d["report"]),
            int(d["gateway_call_count"]),
            int(d["audit_offset"]),
        )


GatewayFactory = Callable[[CycleConfig, AuditLog], Gateway]


def default_gateway(cfg: CycleConfig, audit: AuditLog) -> Gateway:
    live = dict(cfg.live)
    return make_gateway(cfg.backend, cfg.path("script"), audit, **live)


def _dump(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _new_pool(cfg: CycleConfig) -> MemoryPool:
    return MemoryPool(reflect_threshold=cfg.reflect_threshold)


@dataclass
class _LoopState:
    region: Region
    population: list
    pools: dict[str, MemoryPool]
    plan: UrbanPlan
    suggestions: SuggestionList
    records: list[IterationRecord]
    audit_base: int


def _load_inputs(cfg: CycleConfig) -> tuple[Region, PlannerKnowledge, list]:
    region_path = cfg.path("region")
    try:
        region = load_region(region_path)
        knowledge = PlannerKnowledge.load(cfg.path("knowledge"))
        questionnaire = load_questionnaire(cfg.path("questionnaire"))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load inputs: {type(exc).__name__}: {exc}") from None
    return region, knowledge, questionnaire


def _write_config(out: Path, cfg: CycleConfig) -> None:
    _dump(out / "config.json", {"config": cfg.to_dict(), "config_hash": cfg.digest()})


def run_cycle(config: CycleConfig, gateway_factory: GatewayFactory = default_gateway) -> list[IterationRecord]:
    if not config.output:
        raise ConfigError("config has no output directory")
    out = Path(config.output)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"output directory {out} is not empty; use resume")
    out.mkdir(parents=True, exist_ok=True)
    region, knowledge, questionnaire = _load_inputs(config)
    try:
        spec = DemographicSpec.load(config.path("demographics"))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load demographics: {exc}") from None

    _write_config(out, config)
    _dump(out / "region.json", region.to_dict())
    audit = AuditLog(out / "audit.jsonl")
    try:
        gateway = gateway_factory(config, audit)
        gateway.context = {"iteration": 0}
        population = build_population(config.population_size, spec, region, gateway, random.Random(config.seed))
        save_population(population, out / "population.json")
        _save_state(out, 0, {}, gateway, gateway.call_count)
        state = _LoopState(
            region,
            population,
            {p.id: _new_pool(config) for p in population},
            init_plan(region),
            SuggestionList(),
            [],
            0,
        )
        _iterate(config, out, gateway, knowledge, questionnaire, state, start=1)
        _finish(config, out, gateway, questionnaire, state)
    finally:
        audit.close()
    return state.records


def _iterate(
    cfg: CycleConfig,
    out: Path,
    gateway: Gateway,
    knowledge: PlannerKnowledge,
    questionnaire: list,
    state: _LoopState,
    start: int,
) -> None:
    T = cfg.sim.T
    for k in range(start, cfg.iterations + 1):
        gateway.context = {"iteration": k}
        calls_before = gateway.call_count
        prev = state.plan
        try:
            draft = draft_plan(knowledge, prev, state.suggestions, gateway, iteration=k)
            discussed = prev if cfg.discuss_on == "previous" else draft
            transcript = discuss(
                state.population, discussed, gateway, cfg.discussion_rounds, k, state.pools, now=(k - 1) * T
            )
            plan = finalize_plan(knowledge, draft, state.suggestions, transcript.summary, gateway)
            day = run_day(plan, state.population, state.region, gateway, cfg.sim, state.pools, clock_offset=(k - 1) * T)
            report = judge(
                plan, day.final_env, state.population, state.region, questionnaire, gateway, state.pools,
                now=k * T, radius=cfg.radius, ecology_by=cfg.ecology_by, overall_mode=cfg.overall_mode,
            )
        except CupError as exc:
            log.error("iteration %d aborted: %s", k, exc)
            raise IterationAborted(k, exc) from exc

        calls = gateway.call_count - calls_before
        record = IterationRecord(
            k, plan, diff(prev, plan), f"run_{k}", report, calls, state.audit_base + gateway.call_count
        )
        _dump(out / f"plan_{k}.json", plan.to_dict())
        save_transcript(transcript, out / f"discussion_{k}.json")
        day.write(out / f"run_{k}")
        report.write(out)
        _save_state(out, k, state.pools, gateway, record.audit_offset)
        _dump(out / f"record_{k}.json", record.to_dict())
        state.records.append(record)
        state.plan, state.suggestions = plan, report.suggestions
        log.info(
            "iteration %d: access %.2f ecology %.2f experience %.2f overall %.2f (%d calls)",
            k, report.quant.accessibility, report.quant.ecology, report.qual.experience, report.overall, calls,
        )


def _save_state(out: Path, k: int, pools: Mapping[str, MemoryPool], gateway: Gateway, audit_offset: int) -> None:
    backend = gateway.backend
    _dump(
        out / f"state_{k}.json",
        {
            "audit_offset": audit_offset,
            "memories": {rid: pool.to_state() for rid, pool in pools.items()},
            "script_cursor": backend.state() if isinstance(backend, ScriptedBackend) else None,
        },
    )


def _finish(cfg: CycleConfig, out: Path, gateway: Gateway, questionnaire: list, state: _LoopState) -> None:
    if cfg.baseline_day and not (out / "report_baseline.json").exists():
        gateway.context = {"iteration": "baseline"}
        baseline = random_baseline_plan(state.region, baseline_rng(cfg.seed))
        pools = copy.deepcopy(state.pools)
        k = cfg.iterations + 1
        day = run_day(baseline, state.population, state.region, gateway, cfg.sim, pools, clock_offset=(k - 1) * cfg.sim.T)
        qual = interview(state.population, questionnaire, gateway, pools, now=k * cfg.sim.T)
        _dump(out / "report_baseline.json", {"plan": baseline.to_dict(), "qual": qual.to_dict()})
    report_mod.write_summary(out)


# ---------------------------------------------------------------------------
# Resume
# ---------------------------------------------------------------------------


def load_records(out: Path, region: Region) -> list[IterationRecord]:
    records = []
    k = 1
    while (out / f"record_{k}.json").exists():
        try:
            rec = IterationRecord.from_dict(json.loads((out / f"record_{k}.json").read_text()), region)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, CupError) as exc:
            raise CorruptRecord(k, f"{type(exc).__name__}: {exc}") from None
        if rec.k != k or rec.plan.iteration != k:
            raise CorruptRecord(k, "iteration number mismatch")
        for name in (f"plan_{k}.json", f"state_{k}.json", f"report_{k}.json"):
            if not (out / name).exists():
                raise CorruptRecord(k, f"missing {name}")
        records.append(rec)
        k += 1
    return records


def _truncate_lines(path: Path, n: int) -> None:
    if not path.exists():
        if n:
            raise CorruptRecord(0, "audit log missing")
        return
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    if len(lines) < n:
        raise CorruptRecord(0, f"audit log has {len(lines)} lines, records expect {n}")
    path.write_text("".join(lines[:n]), encoding="utf-8")


def _clear_after(out: Path, j: int) -> None:
    for p in out.iterdir():
        stem = p.name.split(".")[0]
        prefix, _, num = stem.rpartition("_")
        if prefix in ("plan", "discussion", "run", "report", "state", "record") and num.isdigit() and int(num) > j:
            shutil.rmtree(p) if p.is_dir() else p.unlink()
    for name in ("summary.md", "summary.svg", "report_baseline.json"):
        (out / name).unlink(missing_ok=True)


def resume(out_dir: str | Path, config: CycleConfig, gateway_factory: GatewayFactory = default_gateway) -> list[IterationRecord]:
    out = Path(out_dir)
    try:
        stored = json.loads((out / "config.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{out} has no readable config.json: {exc}") from None
    if stored.get("config_hash") != config.digest():
        raise ConfigMismatch("supplied config differs from the one stored with the run")
    region = load_region(out / "region.json")
    records = load_records(out, region)
    j = len(records)
    if j >= config.iterations and (out / "summary.md").exists():
        return records
    if not (out / "population.json").exists() or not (out / "state_0.json").exists():
        raise CorruptRecord(0, "profiling did not finish; start a fresh run instead")

    _, knowledge, questionnaire = _load_inputs(config)
    population = load_population(out / "population.json", region)
    try:
        saved = json.loads((out / f"state_{j}.json").read_text())
        pools = {
            rid: MemoryPool.from_state(s, reflect_threshold=config.reflect_threshold)
            for rid, s in saved["memories"].items()
        }
        audit_offset = int(saved["audit_offset"])
    except (OSError, json.JSONDecodeError, KeyError, CupError) as exc:
        raise CorruptRecord(j, f"state: {type(exc).__name__}: {exc}") from None
    for p in population:
        pools.setdefault(p.id, _new_pool(config))
    cursor = saved.get("script_cursor")
    _truncate_lines(out / "audit.jsonl", audit_offset)
    _clear_after(out, j)
    _write_config(out, config)

    audit = AuditLog(out / "audit.jsonl")
    try:
        gateway = gateway_factory(config, audit)
        if isinstance(gateway.backend, ScriptedBackend) and cursor is not None:
            gateway.backend.restore(cursor)
        state = _LoopState(
            region,
            population,
            pools,
            records[-1].plan if records else init_plan(region),
            records[-1].report.suggestions if records else SuggestionList(),
            records,
            audit_offset,
        )
        _iterate(config, out, gateway, knowledge, questionnaire, state, start=j + 1)
        _finish(config, out, gateway, questionnaire, state)
    finally:
        audit.close()
    return state.records

