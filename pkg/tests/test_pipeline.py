from __future__ import annotations

import json
import socket

import pytest

from mechforge import browser
from mechforge.gateway import ScriptedProvider
from mechforge.memory import MechanicArchive
from mechforge.model import GameArtifact, MechanicPlan, Role
from mechforge.pipeline import (
    CONTINUE,
    STOP,
    EvaluationUnparseable,
    FormatFailed,
    GenerationRequest,
    MissingMechanicSet,
    PipelineConfig,
    PipelineFailed,
    PromptSet,
    extract_final_html,
    loop_decision,
    parse_evaluation,
    parse_mechanic_plan,
    render_contract,
)
from mechforge.store import UnknownParent
from pipeline_support import data_text, fenced, rig, script

DEMO = data_text("demo_game.html")
BROKEN = data_text("broken_game.html")


# --- parsers ----------------------------------------------------------------


def test_plan_grammar_example():
    text = "Plan.\n```CURRENT_MECHANIC_SET\nPRESERVE: dash\nADD: wall-jump | rebound off walls | actions\nREMOVE:\nRECOMBINE:\n```"
    p = parse_mechanic_plan(text)
    assert p.preserve == ("dash",)
    assert [(m.name, m.description, sorted(x.value for x in m.delta_layers)) for m in p.add] == [
        ("wall-jump", "rebound off walls", ["actions"])
    ]


def test_plan_dedup_and_clash():
    w = []
    text = "```CURRENT_MECHANIC_SET\nPRESERVE: dash; Dash; fuel\nADD: dash | again | actions\nREMOVE: fuel; coins\nRECOMBINE: dash + coins | dash collects\n```"
    p = parse_mechanic_plan(text, w)
    assert p.preserve == ("dash", "fuel")
    assert p.add == ()
    assert p.remove == ("coins",)
    assert p.recombine == (("dash", "coins", "dash collects"),)
    assert any("both preserved and removed" in x for x in w)


def test_plan_header_inside_fence_and_skips():
    w = []
    text = "```\nCURRENT_MECHANIC_SET\nADD: orbit | circle | representation; tether | pull | actions, transition\nRECOMBINE: lonely\n```"
    p = parse_mechanic_plan(text, w)
    assert [m.name for m in p.add] == ["tether"]
    assert len(w) == 2


def test_plan_missing_block():
    with pytest.raises(MissingMechanicSet):
        parse_mechanic_plan("PRESERVE: dash\nADD: x | y | actions")


def test_contract_round_trips():
    text = "```CURRENT_MECHANIC_SET\nPRESERVE: dash\nADD: wall-jump | rebound off walls | actions,transition\nREMOVE: coins\nRECOMBINE: dash + tether | swing\n```"
    p = parse_mechanic_plan(text)
    assert parse_mechanic_plan(render_contract(p)) == p


EVAL = {"creativity": 7, "playability": 6, "overall": 6.5, "structural_change": 0.4,
        "realized_mechanics": [{"name": "dash", "description": "burst", "delta_layers": ["actions"], "realized": True}]}


def test_eval_passthrough():
    ev = parse_evaluation("Scores:\n" + json.dumps(EVAL))
    assert ev.creativity_10 == 7 and ev.structural_change_score == 0.4
    assert ev.realization_flags == {"dash": True}
    assert ev.meaningful_play_asserted is None and ev.learnability_asserted is None


def test_eval_clamp_warns():
    w = []
    ev = parse_evaluation(json.dumps({**EVAL, "creativity": 12}), w)
    assert ev.creativity_10 == 10 and any("creativity" in x for x in w)


def test_eval_first_complete_object_wins():
    text = '{"note": 1} then ' + json.dumps({**EVAL, "overall": 3}) + " and " + json.dumps(EVAL)
    assert parse_evaluation(text).overall_10 == 3


def test_eval_prose_fails():
    with pytest.raises(EvaluationUnparseable):
        parse_evaluation("It is a fine game, 7 out of 10.")


def test_extract_examples():
    assert extract_final_html(fenced(DEMO), None).html == DEMO.strip()
    bare = "Sure! " + DEMO + "\nThanks."
    assert extract_final_html(bare, None).html == DEMO.strip()
    last = GameArtifact(DEMO)
    w = []
    assert extract_final_html("garbage", last, w) is last and w
    with pytest.raises(FormatFailed):
        extract_final_html("garbage", None)


def test_loop_decision_examples():
    cfg = PipelineConfig()
    assert loop_decision(3, 0.1, CONTINUE, cfg) == STOP
    assert loop_decision(1, 0.8, CONTINUE, cfg) == STOP
    assert loop_decision(1, 0.3, CONTINUE, cfg) == CONTINUE
    assert loop_decision(1, 0.3, STOP, cfg) == STOP
    with pytest.raises(ValueError):
        PipelineConfig(max_iterations=4)


def test_prompt_templates_have_placeholders():
    ps = PromptSet()
    for role in Role:
        system, user = ps.template(role)
        assert system and user
    _, user = ps.template(Role.PLANNING)
    for name in ("PROMPT", "PARENT_CODE", "MEMORY_CONTEXT", "ARCHIVE_CONTEXT"):
        assert "{" + name + "}" in user
    # substituted text is not rescanned
    _, out = ps.render(Role.PLANNING, {"PROMPT": "{PARENT_CODE}", "PARENT_CODE": "X"})
    assert "{PARENT_CODE}" in out


def test_prompt_dir_override(tmp_path):
    (tmp_path / "planning.txt").write_text("SYS\n---\nmake {PROMPT}")
    assert PromptSet(tmp_path).render(Role.PLANNING, {"PROMPT": "pong"}) == ("SYS", "make pong")


# --- orchestration ------------------------------------------------------------

CONTINUE_REFLECT = [{"response": '{"verdict": "continue", "notes": "push further"}'}]
LOW_EVAL = [{"response": json.dumps({**EVAL, "creativity": 4, "playability": 5})}]


def nodes_in(store, lid):
    return sorted(p.name for p in (store.lineage_dir(lid) / "nodes").iterdir())


def stages(store, lid, nid):
    return [r["stage"] for r in store.load_trace(lid, nid)["stages"]]


def test_stop_at_first_iteration(tmp_path):
    p, prov = rig(tmp_path, script())
    res = p.generate(GenerationRequest("a gravity glider"))
    assert res.iterations_used == 1
    assert nodes_in(p.store, res.lineage_id) == [f"node_{res.node_id}.json"]
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert [m.name for m in node.mechanic_plan.add] == ["gravity flip", "fuel cells"]
    assert node.reward.final_reward == pytest.approx(0.7606, abs=1e-4)
    assert stages(p.store, res.lineage_id, res.node_id) == [
        "context", "plan", "skeleton", "feature", "visual", "validate", "evaluate", "reward", "reflect", "decide", "format"
    ]


def test_repair_invoked_once(tmp_path):
    broken = [{"response": fenced(BROKEN)}]
    p, prov = rig(tmp_path, script(skeleton=broken, feature=broken, visual=broken))
    res = p.generate(GenerationRequest("glider"))
    st = stages(p.store, res.lineage_id, res.node_id)
    assert st.count("repair") == 1 and st.count("revalidate") == 1
    assert st.index("validate") < st.index("repair") < st.index("revalidate") < st.index("evaluate")
    assert sum(r.role == Role.REPAIR for r in prov.requests) == 1
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert node.validation.error_count == 0


def test_repair_that_does_not_help_keeps_best(tmp_path):
    broken = [{"response": fenced(BROKEN)}]
    p, prov = rig(tmp_path, script(skeleton=broken, feature=broken, visual=broken, repair=[{"response": "no idea"}],
                                   formatting=[{"response": "formatted"}]))
    res = p.generate(GenerationRequest("glider"))
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert node.validation.outcome("loop_invoked").severity == "error"
    assert node.reward.hard_gate_applied


def test_continue_runs_three_iterations_one_node(tmp_path):
    p, prov = rig(tmp_path, script(reflection=CONTINUE_REFLECT, evaluation=LOW_EVAL))
    res = p.generate(GenerationRequest("glider"))
    assert res.iterations_used == 3
    assert len(nodes_in(p.store, res.lineage_id)) == 1
    assert sum(r.role == Role.REFINEMENT for r in prov.requests) == 2
    assert sum(r.role == Role.FORMATTING for r in prov.requests) == 1
    tree = p.store.load_tree(res.lineage_id)
    assert list(tree.nodes) == [res.node_id]


def test_contract_identical_across_stages(tmp_path):
    p, prov = rig(tmp_path, script(reflection=CONTINUE_REFLECT, evaluation=LOW_EVAL))
    p.generate(GenerationRequest("glider"))
    heads = [r.user_text.split("\n\n", 1)[0] for r in prov.requests
             if r.role in (Role.SKELETON, Role.FEATURE, Role.VISUAL, Role.REFINEMENT)]
    assert len(heads) == 5
    assert len(set(heads)) == 1 and heads[0].startswith("```CURRENT_MECHANIC_SET")


def test_evolve_delta_against_parent(tmp_path):
    p, prov = rig(tmp_path, script())
    first = p.generate(GenerationRequest("glider"))
    ev = {**EVAL, "realized_mechanics": [
        {"name": "gravity flip", "description": "space or click inverts gravity for the glider", "delta_layers": ["actions", "transition"]},
        {"name": "echo trail", "description": "your last flips replay as hazards", "delta_layers": ["outcomes"]},
    ]}
    p2, _ = rig(tmp_path, script(evaluation=[{"response": json.dumps(ev)}]))
    second = p2.generate(GenerationRequest("add echoes", first.lineage_id, first.node_id))
    node = p2.store.load_node(second.lineage_id, second.node_id)
    assert node.parent_id == first.node_id
    d = node.mechanic_delta
    assert [m.name for m in d.added] == ["echo trail"]
    assert [m.name for m in d.removed] == ["fuel cells"]
    assert [(a.name, b.name) for a, b in d.preserved] == [("gravity flip", "gravity flip")]
    assert p2.store.load_tree(first.lineage_id).edges() == [(first.node_id, second.node_id)]


def test_parent_rules(tmp_path):
    p, _ = rig(tmp_path, script())
    first = p.generate(GenerationRequest("glider"))
    with pytest.raises(UnknownParent):
        p.generate(GenerationRequest("again", first.lineage_id))
    with pytest.raises(UnknownParent):
        p.generate(GenerationRequest("again", first.lineage_id, "n999-ghost"))
    with pytest.raises(ValueError):
        GenerationRequest("x", parent_node_id="n001")


def test_total_failure_leaves_partial_trace(tmp_path):
    dead = [{"failure": "down"}]
    p, _ = rig(tmp_path, script(skeleton=dead, feature=dead, visual=dead))
    with pytest.raises(PipelineFailed):
        p.generate(GenerationRequest("glider"))
    (lid,) = p.store.list_lineages()
    trace_dir = p.store.lineage_dir(lid) / "trace"
    (partial,) = list(trace_dir.iterdir())
    assert partial.name.startswith("partial_")
    data = json.loads(partial.read_text())
    assert data["failed"] and [r["stage"] for r in data["stages"]][-1] == "visual"
    assert nodes_in(p.store, lid) == []


def test_stage_fallback_reuses_previous_artifact(tmp_path):
    p, _ = rig(tmp_path, script(feature=[{"failure": "down"}], visual=[{"response": "I could not do it."}]))
    res = p.generate(GenerationRequest("glider"))
    trace = p.store.load_trace(res.lineage_id, res.node_id)
    by_stage = {r["stage"]: r for r in trace["stages"]}
    assert by_stage["feature"]["outcome"]["status"] == "exhausted"
    assert by_stage["feature"]["attempts"] == 4
    assert by_stage["visual"]["outcome"]["degraded"] is True
    assert sum("stage fallback" in w for w in trace["warnings"]) == 2


def test_unparseable_evaluation_defaults(tmp_path):
    p, prov = rig(tmp_path, script(evaluation=[{"response": "Looks fun, 8/10."}]))
    res = p.generate(GenerationRequest("glider"))
    assert sum(r.role == Role.EVALUATION for r in prov.requests) == 2
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert node.evaluation.creativity_10 == 0 and node.evaluation.realized_mechanics == ()
    assert res.reward.final_reward < 0.3


def test_missing_plan_block_gives_empty_plan(tmp_path):
    p, prov = rig(tmp_path, script(planning=[{"response": "Just make it fun."}]))
    res = p.generate(GenerationRequest("glider"))
    assert sum(r.role == Role.PLANNING for r in prov.requests) == 2
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert node.mechanic_plan == MechanicPlan()
    assert any("empty plan" in w for w in p.store.load_trace(res.lineage_id, res.node_id)["warnings"])


def test_garbage_format_keeps_last_artifact(tmp_path):
    p, _ = rig(tmp_path, script(formatting=[{"response": "Done!"}]))
    res = p.generate(GenerationRequest("glider"))
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert "Flip Glider" in node.artifact.html


def closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def test_browser_without_driver_degrades(tmp_path):
    p, _ = rig(tmp_path, script())
    cfg = PipelineConfig(browser_enabled=True, browser_endpoint=f"http://127.0.0.1:{closed_port()}", browser_timeout_ms=1000)
    res = p.generate(GenerationRequest("glider", config=cfg))
    node = p.store.load_node(res.lineage_id, res.node_id)
    assert node.validation.runtime is not None and node.validation.runtime.degraded
    assert not node.reward.hard_gate_applied


def test_browser_result_feeds_reward(tmp_path):
    calls = []

    def fake(artifact, endpoint, timeout_ms):
        calls.append(endpoint)
        return browser.RuntimeResult.observed(False, ["TypeError: x is undefined"], 12)

    p, _ = rig(tmp_path, script(), browser_check=fake)
    res = p.generate(GenerationRequest("glider", config=PipelineConfig(browser_enabled=True)))
    assert calls and res.reward.hard_gate_applied


def test_memory_and_archive_updates(tmp_path):
    p, _ = rig(tmp_path, script())
    first = p.generate(GenerationRequest("gravity glider with fuel"))
    mem = p.store.load_memory(first.lineage_id)
    assert [(i.id, i.visits) for i in mem.items] == [("mem0001", 1)]
    assert mem.items[0].value == pytest.approx(0.3 * (2 * first.reward.final_reward - 1))
    archive = p.store.load_archive()
    seed = MechanicArchive.seed()
    assert len(archive) == len(seed) + 2  # both realized mechanics were new
    # an unchanged child scores below the write-back threshold
    second = p.generate(GenerationRequest("gravity glider with fuel", first.lineage_id, first.node_id))
    assert second.reward.final_reward < 0.5
    mem = p.store.load_memory(first.lineage_id)
    assert [(i.id, i.visits) for i in mem.items] == [("mem0001", 2), ("mem0002", 1)]
    assert p.store.load_archive().to_dict() == archive.to_dict()
    # a fresh root realizing the same mechanics counts as duplicate usage
    p.generate(GenerationRequest("another glider"))
    again = p.store.load_archive()
    assert len(again) == len(archive)
    assert [e.usage_count for e in again.entries[-2:]] == [2, 2]


def test_low_reward_skips_write_back(tmp_path):
    p, _ = rig(tmp_path, script(evaluation=[{"response": "no scores"}]))
    p.generate(GenerationRequest("glider"))
    assert p.store.load_archive().to_dict() == MechanicArchive.seed().to_dict()


def test_lineage_isolation(tmp_path):
    p, _ = rig(tmp_path, script())
    a = p.generate(GenerationRequest("first"))
    snapshot = {f: f.read_bytes() for f in p.store.lineage_dir(a.lineage_id).rglob("*") if f.is_file()}
    b = p.generate(GenerationRequest("second"))
    p.generate(GenerationRequest("second", b.lineage_id, b.node_id))
    after = {f: f.read_bytes() for f in p.store.lineage_dir(a.lineage_id).rglob("*") if f.is_file()}
    assert after == snapshot


def test_same_script_same_bytes(tmp_path):
    outs = []
    for name in ("a", "b"):
        p, _ = rig(tmp_path / name, script())
        res = p.generate(GenerationRequest("glider"))
        d = p.store.lineage_dir(res.lineage_id)
        outs.append({str(f.relative_to(d)): f.read_bytes() for f in d.rglob("*") if f.is_file()})
    assert outs[0] == outs[1]
