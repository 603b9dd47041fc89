import math

import pytest
from hypothesis import given, settings, strategies as st

from s3forge.adapters import ScriptedAdapter, const_adapter
from s3forge.errors import AdapterError, ClockError
from s3forge.exploration import Action
from s3forge.qa import MC, NUM, QAPair
from s3forge.stream import (PRIOR_TEMPLATE, FrameRef, SimExplorationEnv, StreamConfig, assemble, blind_filter,
                            budget, expected_budget, format_query, ingest, maybe_fold, new_state,
                            predictions_from_transcript, run_session, simulate_budget, strict_joint_violations,
                            trajectory_frames, transcript_from_jsonl)


def feed(state, t_end, fps=1.0, adapter=None):
    adapter = adapter or const_adapter("")
    for k in range(int(round(t_end * fps)) + 1):
        ingest(state, FrameRef(f"f{k}", k / fps))
        maybe_fold(state, adapter, k / fps)
    return state


def mc(id, t, chain=None, turn=1, answer=0):
    return QAPair(id=id, scene_id="s", trajectory_id="tr", timestamp_s=t, task="depth_order", format=MC,
                  question=f"Which is closer ({id})?", answer=answer, choices=["chair", "sofa", "lamp", "desk"],
                  chain_id=chain, turn_idx=turn)


def test_dense_ring_keeps_last_ten_seconds():
    s = feed(new_state(StreamConfig()), 25)
    assert [f.t for f in s.dense] == [float(k) for k in range(16, 26)]


def test_high_rate_input_is_decimated():
    s = feed(new_state(StreamConfig()), 12, fps=24)
    assert len(s.dense) == 10
    assert all(f.t == int(f.t) for f in s.dense)


def test_clock_must_not_go_backwards():
    s = new_state(StreamConfig())
    ingest(s, FrameRef("a", 3.0))
    with pytest.raises(ClockError):
        ingest(s, FrameRef("b", 2.0))


def test_folds_run_on_the_k_grid():
    ad = ScriptedAdapter(lambda l, i: "")
    s = feed(new_state(StreamConfig(K=5)), 23, adapter=ad)
    assert [m["t_fold"] for m in s.memories] == [5.0, 10.0, 15.0, 20.0]
    assert [f.t for f in s.sparse] == [5.0, 10.0, 15.0, 20.0]
    assert ad.fold_calls == 4
    assert s.global_summary.count("|") == 3


def test_failed_fold_is_retried():
    calls = {"n": 0}

    def flaky(frames, prev):
        calls["n"] += 1
        if calls["n"] == 1:
            raise AdapterError("busy")
        return "ok"

    s = new_state(StreamConfig(K=2))
    ad = ScriptedAdapter(lambda l, i: "", summary=flaky)
    for k in range(3):
        ingest(s, FrameRef(f"f{k}", float(k)))
        try:
            maybe_fold(s, ad, float(k))
        except AdapterError:
            assert k == 2 and not s.memories
    maybe_fold(s, ad, 2.0)
    assert len(s.memories) == 1


@pytest.mark.parametrize("t", [5, 35, 600, 3600])
def test_budget_matches_closed_form(t):
    assert simulate_budget(t, StreamConfig(K=10)) == \
        {"dense_count": min(t, 10), "sparse_count": t // 10, "memory_count": t // 10}


@settings(max_examples=40)
@given(st.integers(0, 400), st.sampled_from([1.0, 2.0, 5.0, 7.5, 15.0]))
def test_budget_property(t, K):
    cfg = StreamConfig(K=K)
    assert simulate_budget(t, cfg) == expected_budget(t, cfg)


def test_layout_order_and_times():
    s = feed(new_state(StreamConfig(K=10)), 34)
    lay = assemble(s, "Q?", 34.0)
    kinds = [(it["kind"], it.get("role")) for it in lay]
    assert kinds[0] == ("sink", None) and kinds[-1] == ("query", None)
    assert kinds[1:7] == [("frame", "sparse"), ("memory", None)] * 3
    dense = [it for it in lay if it.get("role") == "dense"]
    assert [it["t"] for it in dense] == [31.0, 32.0, 33.0, 34.0]
    ts = [it["t"] for it in lay]
    assert ts == sorted(ts)


def test_blind_filter_drops_frames_only():
    s = feed(new_state(StreamConfig()), 30)
    lay = assemble(s, "Q?")
    assert not any(it["kind"] == "frame" for it in blind_filter(lay, True))
    assert blind_filter(lay, False) == lay
    b = feed(new_state(StreamConfig(blind=True)), 30)
    assert [it["kind"] for it in assemble(b, "Q?")] == ["sink", "query"]
    assert budget(b)["memory_count"] == 0


def test_format_query_prior_and_choices():
    q = mc("q2", 9.0, chain="c", turn=2)
    text = format_query(q, "B")
    assert text.startswith(PRIOR_TEMPLATE.format("B") + "\n")
    assert "A. chair" in text and "D. desk" in text
    num = QAPair(id="n", scene_id="s", trajectory_id="tr", timestamp_s=1.0, task="cam_obj_distance", format=NUM,
                 question="How far?", answer=1.0, unit="m")
    assert format_query(num).endswith("meters.")


def chain_schedule():
    return [mc("a1", 12.0, chain="c0", turn=1), mc("a2", 17.0, chain="c0", turn=2, answer=2), mc("solo", 3.0)]


def test_turn_two_quotes_own_answer():
    seen = []

    def policy(layout, i):
        seen.append(layout[-1]["text"])
        return f"pick-{i}"

    frames = [FrameRef(f"f{k}", float(k)) for k in range(20)]
    tr = run_session(frames, chain_schedule(), ScriptedAdapter(policy), None, StreamConfig(), record_layouts=True)
    assert [r["qa_id"] for r in tr.records] == ["solo", "a1", "a2"]
    assert tr.records[2]["query"].startswith(PRIOR_TEMPLATE.format("pick-1"))
    assert strict_joint_violations(tr, chain_schedule()) == []
    assert tr.records[2]["layouts"][-1][-1]["text"] == tr.records[2]["query"]


def test_tampered_prior_is_flagged():
    frames = [FrameRef(f"f{k}", float(k)) for k in range(20)]
    tr = run_session(frames, chain_schedule(), const_adapter("B"), None, StreamConfig())
    tr.records[2]["query"] = tr.records[2]["query"].replace('"B"', '"A"')
    assert strict_joint_violations(tr, chain_schedule())


def test_action_reply_without_env_is_terminal():
    frames = [FrameRef(f"f{k}", float(k)) for k in range(5)]
    tr = run_session(frames, [mc("q", 4.0)], const_adapter('{"action": "rotate_left_45"}'), None, StreamConfig())
    r = tr.records[0]
    assert r["is_action"] and r["explore_rounds"] == 0
    assert predictions_from_transcript(tr)[0]["is_action"]


def test_explore_round_appends_frames(small_world):
    w = small_world
    q = w.episodes[0].qa

    def policy(layout, i):
        return '{"action": "rotate_left_45"}' if i == 0 else "1.5"

    env = SimExplorationEnv(w.scene, w.trajectory)
    tr = run_session(trajectory_frames(w.trajectory), [q], ScriptedAdapter(policy), env, StreamConfig(),
                     record_layouts=True)
    r = tr.records[0]
    assert r["explore_rounds"] == 1 and r["answer"] == "1.5"
    # 0.75 s of turning is shorter than one 1 FPS tick: only the final pose is kept
    assert len(r["appended_frames"]) == 1
    last = r["layouts"][-1]
    explore = [it for it in last if it.get("role") == "explore"]
    assert [it["ref"] for it in explore] == r["appended_frames"]
    assert last[-1]["kind"] == "query"


def test_sweep_is_sampled_at_one_fps(small_world):
    w = small_world
    env = SimExplorationEnv(w.scene, w.trajectory)
    env.reset(w.episodes[0].qa)
    refs = env.execute(Action("sweep_360"))
    assert len(refs) == 6
    assert refs[-1].t - refs[0].t == pytest.approx(5.0)


def test_explore_rounds_are_capped(small_world):
    w = small_world
    env = SimExplorationEnv(w.scene, w.trajectory)
    tr = run_session(trajectory_frames(w.trajectory), [w.episodes[0].qa],
                     const_adapter('{"action": "rotate_right_45"}'), env, StreamConfig(max_explore_rounds=2))
    assert tr.records[0]["explore_rounds"] == 2 and tr.records[0]["is_action"]


def test_adapter_error_is_recorded_not_raised():
    def policy(layout, i):
        raise AdapterError("gone")

    tr = run_session([FrameRef("f0", 0.0)], [mc("q", 0.0)], ScriptedAdapter(policy), None, StreamConfig())
    assert tr.records[0]["error"].startswith("adapter") and tr.records[0]["answer"] is None


def test_transcript_round_trip():
    frames = [FrameRef(f"f{k}", float(k)) for k in range(20)]
    tr = run_session(frames, chain_schedule(), const_adapter("C"), None, StreamConfig())
    _, back = transcript_from_jsonl(tr.to_jsonl({"kind": "transcript"}))
    assert back.records == tr.records
    assert back.prior_answers == {"c0": "C"}


def test_config_validation():
    with pytest.raises(ValueError):
        StreamConfig(K=0)
    with pytest.raises(ValueError):
        StreamConfig(max_explore_rounds=-1)
    assert math.isclose(StreamConfig().dense_window_s, 10.0)
