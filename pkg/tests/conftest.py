from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cup.gateway import AuditLog, Gateway, ScriptedBackend
from cup.orchestrator import CycleConfig, run_cycle
from cup.plan_model import load_region
from cup.profiling import ResidentProfile
from cup.scenarios import gardener_config, write_gardener

DATA = Path(__file__).resolve().parents[1] / "src" / "cup" / "data"


def scripted(script: dict, path: Path | None = None) -> Gateway:
    return Gateway(ScriptedBackend(script), AuditLog(path))


def resident(i: int, home: str, **kw) -> ResidentProfile:
    fields = dict(
        id=f"R_{i}",
        age=30 + i,
        gender="female",
        personality="Friendly.",
        occupation=f"job {i}",
        hobbies=(f"hobby {i}",),
        lifestyle="Regular.",
        pursuits="Comfort.",
        home_area=home,
    )
    fields.update(kw)
    return ResidentProfile(**fields)


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()


def file_hashes(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture
def region12():
    return load_region(DATA / "region_12.json")


@pytest.fixture(scope="session")
def gardener_dir(tmp_path_factory) -> Path:
    return write_gardener(tmp_path_factory.mktemp("scenario")).parent


def gardener_cycle(scenario_dir: Path, out: Path, **overrides) -> CycleConfig:
    data = gardener_config()
    data.update(overrides)
    data["output"] = str(out)
    return CycleConfig.from_dict(data, base_dir=scenario_dir)


@pytest.fixture(scope="session")
def gardener_runs(gardener_dir, tmp_path_factory):
    """Two uninterrupted K=3 runs with identical inputs, with wall times."""
    runs = []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name) / "out"
        t0 = time.perf_counter()
        records = run_cycle(gardener_cycle(gardener_dir, out))
        runs.append({"out": out, "records": records, "seconds": time.perf_counter() - t0})
    return runs


def audit_entries(out: Path) -> list[dict]:
    return [json.loads(line) for line in (out / "audit.jsonl").read_text().splitlines()]


# --- acceptance summary ------------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and "::test_criterion_" in report.nodeid:
        if report.when == "call" or report.outcome != "passed":
            _ACCEPTANCE.setdefault(report.nodeid, report.outcome)
            if report.outcome != "passed":
                _ACCEPTANCE[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in sorted(_ACCEPTANCE.items(), key=lambda kv: int(kv[0].split("test_criterion_")[1].split("_")[0])):
        name = nodeid.split("::")[-1]
        num = name.split("_")[2]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:>2}: {verdict}  {name}")
