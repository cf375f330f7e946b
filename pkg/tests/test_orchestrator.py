from __future__ import annotations

import json
import shutil

import pytest

from conftest import DATA, audit_entries, file_hashes
from cup.errors import ConfigError
from cup.gateway import AuditLog, BackendUnavailable, make_gateway
from cup.orchestrator import (
    ConfigMismatch,
    CorruptRecord,
    CycleConfig,
    IterationAborted,
    default_gateway,
    load_records,
    resume,
    run_cycle,
)
from cup.plan_model import LandUse, load_region

N = 3


def small_script(n=N, fail_interview_at=None):
    entries = []
    for i in range(1, n + 1):
        h = f"[resident:R_{i}]"
        entries += [
            {"tag": "profile.personality", "match": h, "default": f"Person {i}."},
            {"tag": "profile.occupation", "match": h, "default": f"job {i}"},
            {"tag": "profile.details", "match": h, "default": {"hobbies": [f"h{i}"], "lifestyle": "l", "pursuits": "p"}},
        ]
    entries += [
        {"tag": "live.decide", "default": {"target": "here", "dwell": 60}},
        {"tag": "live.reflect", "default": {"thoughts": ["t"]}},
        {"tag": "plan.discuss", "default": "Please add a park."},
        {"tag": "plan.summarize", "responses": ["D_1 summary", "D_2 summary", "D_3 summary"]},
        {"tag": "plan.draft", "match": '"target": "a_12"', "responses": [{"changes": [{"area": "a_12", "land_use": "Park"}]}]},
        {"tag": "plan.draft", "responses": [{"changes": [{"area": "a_2", "land_use": "Commercial"}, {"area": "a_1", "land_use": "Park"}]}],
         "default": {"changes": []}},
        {"tag": "plan.final", "default": {"changes": []}},
        {"tag": "judge.suggest", "responses": [{"suggestions": [{"target": "a_12", "proposed": "Park", "rationale": "green"}]}],
         "default": {"suggestions": []}},
    ]
    answer = {"answers": [{"question": q, "score": 60} for q in ("commute", "amenities", "greenery", "social", "overall")]}
    if fail_interview_at is None:
        entries.append({"tag": "judge.interview", "default": answer})
    else:
        entries.append({"tag": "judge.interview", "responses": [answer] * (n * (fail_interview_at - 1))})
    return {"entries": entries}


def make_config(tmp_path, out="out", script=None, **kw):
    sdir = tmp_path / "inputs"
    sdir.mkdir(exist_ok=True)
    (sdir / "script.json").write_text(json.dumps(script or small_script()))
    data = {"iterations": 3, "population_size": N, "seed": 1, "sim": {"T": 120}, "paths": {"script": "script.json"},
            "output": str(tmp_path / out)}
    data.update(kw)
    return CycleConfig.from_dict(data, base_dir=sdir)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        CycleConfig(iterations=0)
    with pytest.raises(ConfigError):
        CycleConfig(population_size=0)
    with pytest.raises(ConfigError):
        CycleConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigError):
        CycleConfig.from_dict({"sim": {"ticks": 3}})
    with pytest.raises(ConfigError):
        CycleConfig(paths={"moon": "x"})
    bad = tmp_path / "c.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        CycleConfig.load(bad)


def test_digest(tmp_path):
    base = make_config(tmp_path).digest()
    assert make_config(tmp_path, iterations=7).digest() == base
    assert make_config(tmp_path, output=str(tmp_path / "elsewhere")).digest() == base
    assert make_config(tmp_path, seed=2).digest() != base
    assert make_config(tmp_path, script=small_script(4)).digest() != base


def test_packaged_defaults():
    cfg = CycleConfig()
    assert load_region(cfg.path("region")).name == "synthetic-12"
    assert cfg.path("script") is None


def test_run_cycle_layout_and_contracts(tmp_path):
    cfg = make_config(tmp_path)
    records = run_cycle(cfg)
    out = tmp_path / "out"
    assert [r.k for r in records] == [1, 2, 3]
    for name in ["config.json", "region.json", "population.json", "audit.jsonl", "summary.md", "summary.svg", "state_0.json"]:
        assert (out / name).exists(), name
    for k in (1, 2, 3):
        for name in [f"plan_{k}.json", f"discussion_{k}.json", f"report_{k}.json", f"report_{k}.md", f"record_{k}.json",
                     f"state_{k}.json", f"run_{k}/mobility.jsonl", f"run_{k}/feed.json", f"run_{k}/memories/R_1.jsonl"]:
            assert (out / name).exists(), name
    stored = json.loads((out / "config.json").read_text())
    assert stored["config_hash"] == cfg.digest()

    region = load_region(out / "region.json")
    for r in load_records(out, region):
        assert r.plan.iteration == r.k
        for a in region.areas:
            if a.fixed:
                assert r.plan[a.id] is LandUse.RESIDENTIAL
    assert records[0].plan["a_2"] is LandUse.COMMERCIAL
    assert records[1].plan["a_12"] is LandUse.PARK
    assert [c.area for c in records[1].plan_diff.changes] == ["a_12"]

    log = audit_entries(out)
    assert len(log) == records[-1].audit_offset
    for k in (1, 2, 3):
        planning = [e for e in log if e["iteration"] == k and e["tag"].startswith("plan.")]
        assert len(planning) == 2 + cfg.discussion_rounds * N + 1
        assert sum(e["iteration"] == k for e in log) == records[k - 1].gateway_call_count
    draft2 = next(e for e in log if e["iteration"] == 2 and e["tag"] == "plan.draft")
    assert json.dumps(records[0].report.suggestions.to_list()) in draft2["prompt"]
    final2 = next(e for e in log if e["iteration"] == 2 and e["tag"] == "plan.final")
    assert "D_2 summary" in final2["prompt"] and "D_2 summary" not in draft2["prompt"]
    disc2 = [e for e in log if e["iteration"] == 2 and e["tag"] == "plan.discuss"]
    assert all("Your recent living experiences" in e["prompt"] for e in disc2)
    mobility = (out / "run_1" / "mobility.jsonl").read_text().splitlines()
    assert len(mobility) == 120 * N


def test_discuss_on_draft_switch(tmp_path):
    run_cycle(make_config(tmp_path, discuss_on="draft", iterations=1))
    log = audit_entries(tmp_path / "out")
    disc = next(e for e in log if e["tag"] == "plan.discuss")
    assert "a_2: Commercial" in disc["prompt"]


def test_output_must_be_empty(tmp_path):
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / "x").write_text("")
    with pytest.raises(ConfigError):
        run_cycle(make_config(tmp_path))
    with pytest.raises(ConfigError):
        run_cycle(make_config(tmp_path, output=None))


def test_bad_region_fails_fast(tmp_path):
    data = json.loads((DATA / "region_12.json").read_text())
    data["areas"][1]["id"] = "a_1"
    (tmp_path / "bad.json").write_text(json.dumps(data))
    cfg = make_config(tmp_path, paths={"script": "script.json", "region": str(tmp_path / "bad.json")})
    from cup.plan_model import DuplicateAreaId

    with pytest.raises(DuplicateAreaId):
        run_cycle(cfg)


def test_aborted_iteration_keeps_earlier_records(tmp_path):
    cfg = make_config(tmp_path, script=small_script(fail_interview_at=2))
    with pytest.raises(IterationAborted) as info:
        run_cycle(cfg)
    assert info.value.k == 2
    out = tmp_path / "out"
    assert (out / "record_1.json").exists() and not (out / "record_2.json").exists()
    assert len(load_records(out, load_region(out / "region.json"))) == 1


def test_resume_after_crash_matches_uninterrupted(tmp_path):
    ref = make_config(tmp_path, out="ref")
    run_cycle(ref)

    cfg = make_config(tmp_path, out="crash")
    def flaky(config, audit):
        gw = default_gateway(config, audit)
        real = gw.backend.send

        def send(request):
            if request.tag == "judge.suggest" and gw.context.get("iteration") == 2:
                raise BackendUnavailable("simulated outage")
            return real(request)

        gw.backend.send = send
        return gw

    with pytest.raises(IterationAborted):
        run_cycle(cfg, flaky)
    out = tmp_path / "crash"
    assert (out / "record_1.json").exists() and not (out / "record_2.json").exists()
    resume(out, cfg)
    assert file_hashes(out) == file_hashes(tmp_path / "ref")


def test_resume_complete_run_is_noop(tmp_path):
    cfg = make_config(tmp_path)
    first = run_cycle(cfg)
    before = file_hashes(tmp_path / "out")
    again = resume(tmp_path / "out", cfg)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in first]
    assert file_hashes(tmp_path / "out") == before


def test_resume_errors(tmp_path):
    cfg = make_config(tmp_path)
    run_cycle(make_config(tmp_path, iterations=1))
    with pytest.raises(ConfigMismatch):
        resume(tmp_path / "out", make_config(tmp_path, seed=99))
    (tmp_path / "out" / "record_1.json").write_text("{not json")
    with pytest.raises(CorruptRecord) as info:
        resume(tmp_path / "out", cfg)
    assert info.value.k == 1
    with pytest.raises(ConfigError):
        resume(tmp_path / "nowhere", cfg)


def test_resume_missing_state_is_corrupt(tmp_path):
    cfg = make_config(tmp_path, iterations=1)
    run_cycle(cfg)
    (tmp_path / "out" / "state_1.json").unlink()
    with pytest.raises(CorruptRecord):
        resume(tmp_path / "out", make_config(tmp_path))


def test_extend_run_equals_longer_run(tmp_path):
    run_cycle(make_config(tmp_path, out="ref"))
    run_cycle(make_config(tmp_path, out="ext", iterations=1))
    resume(tmp_path / "ext", make_config(tmp_path, out="ext"))
    assert file_hashes(tmp_path / "ext") == file_hashes(tmp_path / "ref")


def test_baseline_day(tmp_path):
    run_cycle(make_config(tmp_path, iterations=1, baseline_day=True))
    out = tmp_path / "out"
    base = json.loads((out / "report_baseline.json").read_text())
    assert base["qual"]["experience"] == 60.0
    row = (out / "summary.md").read_text().splitlines()[4]
    assert row.startswith("| Random |") and "60.00" in row and "—" not in row


def test_live_backend_without_key_fails(tmp_path, monkeypatch):
    monkeypatch.delenv("CUP_API_KEY", raising=False)
    from cup.gateway import AuthMissing

    with pytest.raises(AuthMissing):
        run_cycle(make_config(tmp_path, backend="live"))
