import pytest

from conftest import tiny_store
from groupsim.dataset import TestCase as Case
from groupsim.grouping import GroupContext, HashEmbedder
from groupsim.llm import BackendError
from groupsim.profiling import UserProfile
from groupsim.simulation import (
    GroupInputs,
    SimulationError,
    heuristic_rank,
    recommend_all,
    result_record,
    run_dynamic,
    run_static,
    speaking_order,
)

CANDS = ("i3", "i1", "i4", "i2")


def make_inputs(leader="u2", leadership=True, members=("u1", "u2", "u3")):
    store = tiny_store([("u1", "i1")], [("g1", "i1")], [("g1", u) for u in members],
                       texts={i: f"text {i}" for i in CANDS})
    profiles = {u: UserProfile(u, "p", "p", "p", ((f"likes [i{n + 1}]", "because"),))
                for n, u in enumerate(members)}
    ctx = GroupContext("g1", "t", "t", "topic", (), leader)
    return GroupInputs(Case("g1", "i2", CANDS), members, profiles, ctx, leadership), store.catalog


def test_static_outputs_permutation_and_marks_leader(mock_client):
    inputs, cat = make_inputs()
    seen = {}

    def rerank(req):
        seen.update(req.variables)
        return "[i4]"

    client = mock_client(overrides={"group_rerank": rerank})
    rec = run_static(inputs, cat, client)
    assert rec.ranked_items == ("i4", "i1", "i2", "i3")
    assert "[u2] (leader):" in "\n".join(seen["rankings"])
    assert "[u2]" in seen["leader_cue"]
    assert client.backend.calls_by_template["member_rank"] == 3


def test_static_without_leadership_has_no_cue(mock_client):
    inputs, cat = make_inputs(leadership=False)
    seen = {}
    client = mock_client(overrides={"group_rerank": lambda r: seen.update(r.variables) or "[i1]"})
    run_static(inputs, cat, client)
    assert seen["leader_cue"] == "" and "(leader)" not in "\n".join(seen["rankings"])


def test_leader_speaks_first():
    assert speaking_order(["u3", "u1", "u2"], "u2") == ["u2", "u1", "u3"]
    assert speaking_order(["u3", "u1"], None) == ["u1", "u3"]


def test_dynamic_runs_all_rounds_without_consensus(mock_client):
    inputs, cat = make_inputs()
    client = mock_client(overrides={"consensus_judge": lambda r: "CONSENSUS: NO"})
    rec, transcript = run_dynamic(inputs, cat, client, max_rounds=3)
    assert rec.rounds_used == 3 and rec.consensus is False
    assert len(transcript.rounds) == 3
    assert rec.ranked_items == transcript.rounds[-1].summary
    assert sorted(rec.ranked_items) == sorted(CANDS)
    assert client.backend.calls_by_template["consensus_judge"] == 3
    assert all(r.utterances[0].user_id == "u2" for r in transcript.rounds)


def test_dynamic_stops_at_consensus(mock_client):
    inputs, cat = make_inputs()
    client = mock_client(overrides={"consensus_judge": lambda r: "Consensus reached."})
    rec, transcript = run_dynamic(inputs, cat, client, max_rounds=5)
    assert rec.rounds_used == 1 and rec.consensus is True
    assert client.backend.calls_by_template["discussion_summary"] == 1


def test_later_speakers_see_earlier_utterances(mock_client):
    inputs, cat = make_inputs()
    transcripts = []

    def utter(req):
        transcripts.append("\n".join(req.variables["transcript"]) if not isinstance(req.variables["transcript"], str)
                           else req.variables["transcript"])
        return f"I pick [i{len(transcripts)}]"

    client = mock_client(overrides={"discussion_utterance": utter, "consensus_judge": lambda r: "no consensus"})
    run_dynamic(inputs, cat, client, max_rounds=2)
    assert "[u2] (leader): I pick [i1]" in transcripts[1]
    assert "Round 1:" in transcripts[3]


def test_dynamic_failure_reports_round(mock_client):
    inputs, cat = make_inputs()
    calls = {"n": 0}

    def judge(req):
        calls["n"] += 1
        if calls["n"] == 2:
            raise BackendError("down")
        return "no consensus"

    client = mock_client(overrides={"consensus_judge": judge})
    with pytest.raises(SimulationError) as info:
        run_dynamic(inputs, cat, client, max_rounds=3)
    assert info.value.stage == "judge" and info.value.round_index == 2


def test_heuristic_is_deterministic_permutation():
    inputs, cat = make_inputs()
    a = heuristic_rank(inputs, cat, HashEmbedder())
    assert sorted(a.ranked_items) == sorted(CANDS)
    assert a == heuristic_rank(inputs, cat, HashEmbedder())


def test_recommend_all_isolates_failures(mock_client):
    good, cat = make_inputs()
    bad_case = Case("g2", "i1", CANDS)
    bad = GroupInputs(bad_case, ("u1", "missing"), good.profiles, good.context)
    batch = recommend_all([good, bad], "static", cat, mock_client())
    assert [r.group_id for r in batch.results] == ["g1"]
    assert [e.group_id for e in batch.errors] == ["g2"]
    assert batch.errors[0].backend_failure is False


def test_recommend_all_flags_backend_failure(mock_client):
    inputs, cat = make_inputs()

    def down(req):
        raise BackendError("unavailable")

    batch = recommend_all([inputs], "static", cat, mock_client(overrides={"member_rank": down}))
    assert batch.errors[0].backend_failure


def test_recommend_all_rejects_unknown_strategy(mock_client):
    inputs, cat = make_inputs()
    with pytest.raises(ValueError):
        recommend_all([inputs], "vote", cat, mock_client())


def test_parallel_matches_serial(mock_client):
    a_in, cat = make_inputs()
    b_in = GroupInputs(Case("g2", "i3", CANDS), a_in.members, a_in.profiles, a_in.context)
    serial = recommend_all([a_in, b_in], "dynamic", cat, mock_client())
    parallel = recommend_all([a_in, b_in], "dynamic", cat, mock_client(), workers=2)
    assert serial.results == parallel.results
    rec = serial.results[0]
    assert result_record(rec, serial.telemetry["g1"]) == result_record(rec, parallel.telemetry["g1"])
