"""Command-line entry point: ``cup {profile,plan,live,judge,cycle,report}``.

Exit codes: 0 success, 1 domain or file error (reported as
``error [module] Variant: message`` on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path
from typing import Sequence

from . import report as report_mod
from .errors import CupError
from .gateway import AuditLog, Gateway, make_gateway
from .judging import SuggestionList, judge, load_questionnaire
from .living import SimConfig, run_day
from .memory import MemoryPool, read_dump
from .orchestrator import DEFAULT_DATA, CycleConfig, resume, run_cycle
from .plan_model import init_plan, load_plan, load_region
from .planning import PlannerKnowledge, discuss, draft_plan, finalize_plan, save_transcript
from .profiling import DemographicSpec, build_population, load_population, save_population

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("cup")


class UsageError(Exception):
    pass


def _default_path(key: str) -> Path:
    return CycleConfig().path(key)  # packaged data file


def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("scripted", "live"), default="scripted")
    p.add_argument("--script", help="script file for the scripted backend")
    p.add_argument("--endpoint", help="chat-completions URL for the live backend")
    p.add_argument("--model", help="model name for the live backend")


def _add_region(p: argparse.ArgumentParser) -> None:
    p.add_argument("--region", help=f"region file (default: packaged {DEFAULT_DATA['region']})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cup", description="Closed-loop land-use planning with simulated residents.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("profile", help="generate a resident population")
    _add_region(p)
    p.add_argument("--demographics", help="demographics file (default: packaged)")
    p.add_argument("-n", "--size", type=int, default=30, help="number of residents")
    p.add_argument("--seed", type=int, default=0)
    _add_backend(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("plan", help="draft, discuss and finalize one plan iteration")
    _add_region(p)
    p.add_argument("--plan", help="previous plan (default: the initial plan)")
    p.add_argument("--pop", required=True, help="population file")
    p.add_argument("--knowledge", help="planner knowledge file (default: packaged)")
    p.add_argument("--suggestions", help="suggestions file from a judge report")
    p.add_argument("--rounds", type=int, default=2)
    _add_backend(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("live", help="simulate one day under a plan")
    _add_region(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--pop", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; a day is deterministic")
    p.add_argument("--ticks", type=int, default=SimConfig().T)
    _add_backend(p)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("judge", help="score a plan and interview residents")
    _add_region(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--pop", required=True)
    p.add_argument("--run", help="run directory whose memories feed the interviews")
    p.add_argument("--questionnaire", help="questionnaire file (default: packaged)")
    _add_backend(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("cycle", help="run (or resume) the full loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=("scripted", "live"))
    p.add_argument("--script")
    p.add_argument("--baseline-day", action="store_true", default=None, help="also simulate a day under the random plan")
    p.add_argument("--resume", action="store_true", help="continue an interrupted run in --out")

    p = sub.add_parser("report", help="write summary.md and summary.svg for a run directory")
    p.add_argument("run_dir", nargs="?")
    p.add_argument("--out", help="run directory (alternative to the positional argument)")
    return parser


def _gateway(args: argparse.Namespace, audit: AuditLog) -> Gateway:
    if args.backend == "scripted" and not args.script:
        raise UsageError("--backend scripted needs --script")
    live = {k: v for k, v in (("endpoint", args.endpoint), ("model", args.model)) if v}
    return make_gateway(args.backend, args.script, audit, **live)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _region(args: argparse.Namespace):
    return load_region(args.region or _default_path("region"))


def cmd_profile(args: argparse.Namespace) -> int:
    if args.size < 1:
        raise UsageError("-n must be >= 1")
    region = _region(args)
    spec = DemographicSpec.load(args.demographics)
    out = _out_dir(args.out)
    with AuditLog(out / "audit.jsonl") as audit:
        population = build_population(args.size, spec, region, _gateway(args, audit), random.Random(args.seed))
    save_population(population, out / "population.json")
    print(out / "population.json")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    if args.rounds < 1:
        raise UsageError("--rounds must be >= 1")
    region = _region(args)
    prev = load_plan(args.plan, region) if args.plan else init_plan(region)
    population = load_population(args.pop, region)
    knowledge = PlannerKnowledge.load(args.knowledge)
    suggestions = SuggestionList.load(args.suggestions) if args.suggestions else SuggestionList()
    out = _out_dir(args.out)
    k = prev.iteration + 1
    with AuditLog(out / "audit.jsonl") as audit:
        gateway = _gateway(args, audit)
        gateway.context = {"iteration": k}
        draft = draft_plan(knowledge, prev, suggestions, gateway, iteration=k)
        transcript = discuss(population, prev, gateway, args.rounds, k)
        plan = finalize_plan(knowledge, draft, suggestions, transcript.summary, gateway)
    (out / f"plan_{k}.json").write_text(json.dumps(plan.to_dict(), indent=2) + "\n")
    save_transcript(transcript, out / f"discussion_{k}.json")
    print(out / f"plan_{k}.json")
    return EXIT_OK


def cmd_live(args: argparse.Namespace) -> int:
    region = _region(args)
    plan = load_plan(args.plan, region)
    population = load_population(args.pop, region)
    out = _out_dir(args.out)
    with AuditLog(out / "audit.jsonl") as audit:
        gateway = _gateway(args, audit)
        gateway.context = {"iteration": plan.iteration}
        day = run_day(plan, population, region, gateway, SimConfig(T=args.ticks))
    day.write(out)
    print(f"{day.record_count} mobility records, {len(day.feed)} posts -> {out}")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    region = _region(args)
    plan = load_plan(args.plan, region)
    population = load_population(args.pop, region)
    questionnaire = load_questionnaire(args.questionnaire)
    pools: dict[str, MemoryPool] = {}
    if args.run:
        for p in population:
            dump = Path(args.run) / "memories" / f"{p.id}.jsonl"
            if dump.exists():
                pools[p.id] = read_dump(dump)
    now = max((e.created for pool in pools.values() for e in pool.entries), default=0)
    out = _out_dir(args.out)
    with AuditLog(out / "audit.jsonl") as audit:
        gateway = _gateway(args, audit)
        gateway.context = {"iteration": plan.iteration}
        result = judge(plan, None, population, region, questionnaire, gateway, pools, now=now)
    result.write(out)
    print(result.to_markdown(), end="")
    return EXIT_OK


def cmd_cycle(args: argparse.Namespace) -> int:
    config = CycleConfig.load(args.config)
    for key in ("iterations", "seed", "backend", "baseline_day"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    if args.script:
        config.paths["script"] = str(Path(args.script).resolve())
    if args.out:
        config.output = args.out
    if not config.output:
        raise UsageError("no output directory: pass --out or set 'output' in the config")
    config.__post_init__()
    if args.resume:
        records = resume(config.output, config)
    else:
        records = run_cycle(config)
    print(f"{len(records)} iteration(s) in {config.output}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = args.run_dir or args.out
    if not run_dir:
        raise UsageError("report needs a run directory")
    path = report_mod.write_summary(run_dir)
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


COMMANDS = {
    "profile": cmd_profile,
    "plan": cmd_plan,
    "live": cmd_live,
    "judge": cmd_judge,
    "cycle": cmd_cycle,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cup: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CupError as exc:
        print(f"error [{exc.module}] {exc.variant}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error [cli] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
