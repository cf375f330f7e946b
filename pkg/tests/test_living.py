from __future__ import annotations

import json
import math

import pytest

from conftest import resident, scripted, tree_hash
from cup.living import (
    ActionPlan,
    Environment,
    LivingError,
    MissingResidentLocation,
    Post,
    ResidentAgent,
    SimConfig,
    Social,
    SocialFeed,
    World,
    decide,
    perceive,
    run_day,
    step_agent,
    sync,
)
from cup.memory import MemoryPool
from cup.plan_model import Area, Extent, LandUse, Region, apply_assignments, init_plan
from cup.scenarios import DRAFT_1, WISH

CFG = SimConfig()


def plan1(region):
    return apply_assignments(init_plan(region), DRAFT_1.items())


def agent_at(profile, world, pool=None):
    return ResidentAgent.at_home(profile, pool or MemoryPool(), world)


def decide_script(rid, *responses, default=None):
    entry = {"tag": "live.decide", "match": f"[resident:{rid}]", "responses": [json.dumps(r) for r in responses]}
    if default is not None:
        entry["default"] = json.dumps(default)
    return entry


STAY = {"target": "here", "dwell": 60}


def test_sim_config_validation():
    with pytest.raises(LivingError):
        SimConfig(T=0)


def test_perceive_alone_empty_feed(region12):
    world = World(region12, plan1(region12))
    a = agent_at(resident(1, "a_1"), world)
    obs = perceive(a, Environment(0, {"R_1": "a_1"}), world, CFG, 1)
    assert obs.area == "a_1" and obs.land_use is LandUse.RESIDENTIAL
    assert [n for n, _ in obs.neighbors] == ["a_2", "a_5", "a_6"]
    assert obs.co_located == () and obs.posts == ()
    assert [e.kind for e in a.pool.entries] == ["event"]


def test_perceive_newest_five_unseen(region12):
    world = World(region12, plan1(region12))
    a = agent_at(resident(1, "a_1"), world)
    posts = tuple(Post(f"p_{i}", "R_2", tick, f"post {i}") for i, tick in enumerate([3, 9, 1, 7, 5, 8, 2], 1))
    env = Environment(10, {"R_1": "a_1"}, SocialFeed(posts))
    obs = perceive(a, env, world, CFG, 11)
    expected = [p.id for p in sorted(posts, key=lambda p: -p.tick)[:5]]
    assert [p.id for p in obs.posts] == expected
    again = perceive(a, env, world, CFG, 12)
    assert {p.id for p in again.posts} == {p.id for p in posts} - set(expected)


def test_perceive_co_location_symmetric(region12):
    world = World(region12, plan1(region12))
    a, b = agent_at(resident(1, "a_1"), world), agent_at(resident(2, "a_1"), world)
    env = Environment(0, {"R_1": "a_1", "R_2": "a_1"})
    assert perceive(a, env, world, CFG, 1).co_located == ("R_2",)
    assert perceive(b, env, world, CFG, 1).co_located == ("R_1",)


def _decide(region12, response, rid="R_1"):
    world = World(region12, plan1(region12))
    a = agent_at(resident(int(rid[2:]), "a_1"), world)
    env = Environment(0, {a.id: "a_1"})
    gw = scripted({"entries": [{"tag": "live.decide", "responses": [json.dumps(response)]}]})
    obs = perceive(a, env, world, CFG, 1)
    return decide(a, obs, gw, 1, world, CFG, 1), a, gw


def test_decide_scripted_post(region12):
    plan, a, gw = _decide(region12, {"target": "a_7", "dwell": 120, "social": {"type": "post", "text": "lovely park"}})
    assert (plan.target, plan.dwell, plan.social.kind, plan.social.text) == ("a_7", 120, "post", "lovely park")
    assert plan.degraded is None
    assert a.pool.entries[-1].kind == "behavior"
    assert gw.audit.entries[0]["tag"] == "live.decide"


def test_decide_unknown_target_falls_back(region12):
    plan, a, _ = _decide(region12, {"target": "a_99", "dwell": 30})
    assert plan.target == "a_1" and plan.dwell == CFG.decision_horizon and plan.degraded
    assert "InvalidAction" in plan.degraded


def test_decide_gateway_failure_falls_back(region12):
    world = World(region12, plan1(region12))
    a = agent_at(resident(1, "a_1"), world)
    obs = perceive(a, Environment(0, {"R_1": "a_1"}), world, CFG, 1)
    plan = decide(a, obs, scripted({}), 1, world, CFG, 1)
    assert "ScriptExhausted" in plan.degraded and plan.target == "a_1"


def test_decide_comment_on_unseen_post_dropped(region12):
    plan, _, _ = _decide(region12, {"target": "here", "dwell": 5, "social": {"type": "comment", "post_id": "p_9", "text": "hm"}})
    assert plan.social is None and "unseen" in plan.degraded


def test_gardener_wish_is_open_space_post(region12):
    from cup.scenarios import gardener_script

    script = gardener_script()
    world = World(region12, plan1(region12))
    a = agent_at(resident(19, "a_11"), world)
    obs = perceive(a, Environment(0, {"R_19": "a_11"}), world, CFG, 1)
    plan = decide(a, obs, scripted(script), 1, world, CFG, 1)
    assert plan.social.kind == "post" and "open space" in plan.social.text and plan.target == "a_12"


def two_point_region(d=1000.0):
    areas = (Area("a_1", 0, 0, 1, LandUse.RESIDENTIAL, True), Area("a_2", d, 0, 1))
    return Region("line", areas, Extent(0, 0, d, 10))


def test_travel_arrives_after_distance_over_speed():
    region = two_point_region()
    world = World(region, init_plan(region))
    a = agent_at(resident(1, "a_1"), world)
    a.action = ActionPlan("go", "a_2", 1, 30)
    a.traveling, a.departed = True, True
    a.x = 840.0  # 160 m from a_2
    env = Environment(4, {"R_1": "a_2"})
    step_agent(a, 5, env, world, scripted({}), CFG)
    assert a.traveling and a.x == 920.0
    step_agent(a, 6, Environment(5, {"R_1": "a_2"}), world, scripted({}), CFG)
    assert not a.traveling and a.x == 1000.0 and a.area == "a_2"
    assert a.next_decision == 6 + 30


def test_no_calls_while_dwelling(region12):
    world = World(region12, plan1(region12))
    a = agent_at(resident(1, "a_1"), world)
    gw = scripted({"entries": [decide_script("R_1", {"target": "here", "dwell": 30})]})
    env = Environment(0, {"R_1": "a_1"})
    for t in range(1, 31):
        r = step_agent(a, t, env, world, gw, CFG)
        env = sync(env, {"R_1": r.area}, [])
    assert gw.call_count == 1
    with pytest.raises(LivingError):
        step_agent(a, 40, env, world, gw, CFG)


def test_post_emitted_once_at_depart(region12):
    world = World(region12, plan1(region12))
    a = agent_at(resident(1, "a_1"), world)
    action = {"target": "a_12", "dwell": 200, "depart_in": 5, "social": {"type": "post", "text": "off"}}
    gw = scripted({"entries": [decide_script("R_1", action, default=STAY)]})
    env = Environment(0, {"R_1": "a_1"})
    emitted = []
    for t in range(1, 120):
        r = step_agent(a, t, env, world, gw, CFG)
        if r.social:
            emitted.append(r.social.tick)
        env = sync(env, {"R_1": r.area}, [r.social] if r.social else [])
    assert emitted == [6]


def test_sync_basics():
    env = Environment(3, {"R_1": "a_1"})
    nxt = sync(env, {"R_1": "a_1"}, [])
    assert nxt.tick == 4 and dict(nxt.physical) == dict(env.physical) and nxt.feed == env.feed
    with pytest.raises(MissingResidentLocation):
        sync(env, {}, [])


def test_sync_orders_by_resident_index():
    env = Environment(0, {"R_3": "a_1", "R_9": "a_1"})
    nxt = sync(env, dict(env.physical), [Social("R_9", 1, "post", "nine"), Social("R_3", 1, "post", "three")])
    assert [(p.id, p.author) for p in nxt.feed.posts] == [("p_1", "R_3"), ("p_2", "R_9")]


def test_sync_same_tick_comment_on_lower_index_post():
    env = Environment(0, {"R_2": "a_1", "R_5": "a_1"})
    socials = [Social("R_5", 1, "comment", "yes", "p_1"), Social("R_2", 1, "post", "hello")]
    nxt = sync(env, dict(env.physical), socials)
    (post,) = nxt.feed.posts
    assert post.author == "R_2" and [c.author for c in post.comments] == ["R_5"]


def test_stay_home_day(region12):
    gw = scripted({"entries": [decide_script("R_1", {"target": "home", "dwell": 600})]})
    day = run_day(plan1(region12), [resident(1, "a_3")], region12, gw, SimConfig(T=300))
    assert day.record_count == 300 and all(row == ["a_3"] for row in day.mobility)


def _busy_script(n):
    entries = []
    for i in range(1, n + 1):
        go = {"target": ["a_12", "a_4", "a_9"][i % 3], "dwell": 20 + i, "depart_in": i,
              "social": {"type": "post", "text": f"hi from R_{i}"}}
        back = {"target": "home", "dwell": 45, "social": {"type": "comment", "post_id": "p_1", "text": "agreed"}}
        entries.append(decide_script(f"R_{i}", go, back, go, back, default=STAY))
    entries.append({"tag": "live.reflect", "default": '{"thoughts": ["ok"]}'})
    return {"entries": entries}


def _population(n, region):
    homes = region.residential_ids
    return [resident(i, homes[i % len(homes)]) for i in range(1, n + 1)]


def test_day_invariants_and_determinism(region12, tmp_path):
    pop = _population(6, region12)
    cfg = SimConfig(T=400)
    days = []
    for name in ("a", "b"):
        day = run_day(plan1(region12), pop, region12, scripted(_busy_script(6)), cfg)
        day.write(tmp_path / name)
        days.append(day)
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")
    day = days[0]
    assert all(len(row) == 6 for row in day.mobility) and len(day.mobility) == 400
    assert len(day.feed) > 0
    for post in day.feed.posts:
        assert all(c.tick >= post.tick for c in post.comments)
    for obs in day.observations:
        assert all(p.tick < obs.tick for p in obs.posts)
    for rid, pts in day.positions.items():
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            assert math.hypot(x1 - x0, y1 - y0) <= cfg.speed + 1e-9
    lines = (tmp_path / "a" / "mobility.jsonl").read_text().splitlines()
    assert len(lines) == 2400 and json.loads(lines[0]) == {"tick": 1, "resident": "R_1", "area": "a_3"}


def test_parallel_steps_match_sequential(region12):
    pop = _population(8, region12)
    seq = run_day(plan1(region12), pop, region12, scripted(_busy_script(8)), SimConfig(T=300))
    par = run_day(plan1(region12), pop, region12, scripted(_busy_script(8)), SimConfig(T=300, workers=4))
    assert seq.mobility == par.mobility
    assert seq.feed == par.feed
    assert seq.memory_dumps == par.memory_dumps


def test_memories_persist_in_supplied_pools(region12):
    pools = {}
    pop = _population(2, region12)
    run_day(plan1(region12), pop, region12, scripted(_busy_script(2)), SimConfig(T=100), pools)
    n = len(pools["R_1"])
    run_day(plan1(region12), pop, region12, scripted(_busy_script(2)), SimConfig(T=100), pools, clock_offset=100)
    assert len(pools["R_1"]) > n
    created = [e.created for e in pools["R_1"].entries]
    assert created == sorted(created) and max(created) > 100


def test_empty_population(region12):
    with pytest.raises(LivingError):
        run_day(plan1(region12), [], region12, scripted({}))


def test_wish_text_constant():
    assert "open space" in WISH and "a_12" in WISH
