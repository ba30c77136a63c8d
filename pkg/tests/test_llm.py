import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupsim.llm import (
    BackendError,
    HttpBackend,
    LLMClient,
    MockBackend,
    PromptBudgetError,
    PromptRequest,
    ResponseCache,
)
from groupsim.llm.client import estimate_tokens, fit_to_budget, render
from groupsim.llm.mock import mock_complete
from groupsim.llm.parsers import (
    CONSENSUS,
    NO_CONSENSUS,
    bracket_ids,
    parse_consensus,
    parse_keywords,
    parse_ranked_list,
    parse_rating,
)
from groupsim.llm.templates import TEMPLATES, get_template


def test_cache_hit_skips_backend(mock_client):
    client = mock_client()
    a = client.ask("intra_topic", group_id="g1", items=["- [i1]: a"])
    b = client.ask("intra_topic", group_id="g1", items=["- [i1]: a"])
    assert a == b
    assert client.backend.calls == 1
    assert client.telemetry.cache_hits == 1 and client.telemetry.requests == 2


def test_cache_bypassed_at_nonzero_temperature(mock_client):
    client = mock_client(temperature=0.7)
    for _ in range(2):
        client.ask("intra_topic", group_id="g1", items=["- [i1]: a"])
    assert client.backend.calls == 2


def test_retry_index_changes_cache_key(mock_client):
    client = mock_client()
    client.ask("intra_topic", group_id="g1", items=[])
    client.ask("intra_topic", retry_index=1, group_id="g1", items=[])
    assert client.backend.calls == 2


def test_file_cache_survives_new_client(tmp_path):
    def make():
        return LLMClient(MockBackend(0), ResponseCache(tmp_path / "cache"))

    first = make()
    text = first.ask("intra_topic", group_id="g1", items=["- [i1]: a"])
    second = make()
    assert second.ask("intra_topic", group_id="g1", items=["- [i1]: a"]) == text
    assert second.backend.calls == 0
    assert second.telemetry.deterministic() == first.telemetry.deterministic()
    entries = list((tmp_path / "cache").rglob("*.json"))
    assert len(entries) == 1
    assert json.loads(entries[0].read_text())["value"] == text


def test_unreadable_cache_entry_is_ignored(tmp_path):
    client = LLMClient(MockBackend(0), ResponseCache(tmp_path))
    client.ask("intra_topic", group_id="g1", items=[])
    for p in tmp_path.rglob("*.json"):
        p.write_text("{broken")
    fresh = LLMClient(MockBackend(0), ResponseCache(tmp_path))
    fresh.ask("intra_topic", group_id="g1", items=[])
    assert fresh.backend.calls == 1


def test_template_change_invalidates_cache(mock_client):
    client = mock_client()
    client.ask("intra_topic", group_id="g1", items=[])
    other = LLMClient(MockBackend(0, {"intra_topic": lambda r: "x"}), client.cache)
    other.ask("intra_topic", group_id="g1", items=[])
    assert other.backend.calls == 1


def test_truncation_fits_budget():
    tpl = get_template("intra_topic")
    items = [f"- [i{k}]: a fairly long description of item {k}" for k in range(300)]
    fitted = fit_to_budget(tpl, {"group_id": "g1", "items": items}, 600)
    system, user = render(tpl, fitted)
    assert estimate_tokens(system) + estimate_tokens(user) <= 600
    assert 0 < len(fitted["items"]) < 300
    assert fitted["items"] == items[: len(fitted["items"])]


def test_budget_error_when_nothing_left_to_drop():
    with pytest.raises(PromptBudgetError):
        fit_to_budget(get_template("intra_topic"), {"group_id": "g" * 4000, "items": ["x"]}, 100)


def test_every_template_renders():
    for name, tpl in TEMPLATES.items():
        system, user = render(tpl, {f: "value" for f in tpl.fields})
        assert system and user


def test_negative_temperature_rejected():
    with pytest.raises(ValueError):
        PromptRequest("intra_topic", {}, temperature=-0.1)


def mock_http(responses, seen=None):
    queue = list(responses)

    def handler(request):
        if seen is not None:
            seen.append(request)
        return queue.pop(0)

    return httpx.MockTransport(handler)


def ok(text, usage=None):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": usage or {}})


def test_rate_limit_then_success_backs_off():
    sleeps = []
    transport = mock_http([httpx.Response(429, headers={"Retry-After": "2"}), httpx.Response(503), ok("hello")])
    client = LLMClient(HttpBackend("http://x/v1", "m", api_key="k", transport=transport),
                       sleep=sleeps.append, backoff=0.5)
    assert client.ask("intra_topic", group_id="g1", items=[]) == "hello"
    assert sleeps == [2.0, 1.0]
    assert client.telemetry.retries == 2 and client.telemetry.backend_calls == 3


def test_retries_exhausted():
    transport = mock_http([httpx.Response(500)] * 3)
    client = LLMClient(HttpBackend("http://x", "m", transport=transport), sleep=lambda s: None, max_retries=2)
    with pytest.raises(BackendError, match="giving up after 3"):
        client.ask("intra_topic", group_id="g1", items=[])


def test_client_error_is_not_retried():
    seen = []
    transport = mock_http([httpx.Response(401, text="bad key")], seen)
    client = LLMClient(HttpBackend("http://x", "m", transport=transport), sleep=lambda s: None)
    with pytest.raises(BackendError, match="401"):
        client.ask("intra_topic", group_id="g1", items=[])
    assert len(seen) == 1


def test_empty_reply_is_an_error():
    client = LLMClient(HttpBackend("http://x", "m", transport=mock_http([ok("  ")])))
    with pytest.raises(BackendError, match="empty reply"):
        client.ask("intra_topic", group_id="g1", items=[])


def test_malformed_payload():
    client = LLMClient(HttpBackend("http://x", "m", transport=mock_http([httpx.Response(200, json={"x": 1})])))
    with pytest.raises(BackendError, match="malformed"):
        client.ask("intra_topic", group_id="g1", items=[])


def test_request_body_and_usage():
    seen = []
    transport = mock_http([ok("fine", {"prompt_tokens": 11, "completion_tokens": 3})], seen)
    client = LLMClient(HttpBackend("http://x", "model-a", api_key="secret", transport=transport), max_tokens=77)
    client.ask("intra_topic", group_id="g1", items=["- [i1]: a"])
    body = json.loads(seen[0].content)
    assert body["model"] == "model-a" and body["max_tokens"] == 77 and body["temperature"] == 0
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert seen[0].headers["authorization"] == "Bearer secret"
    assert client.telemetry.prompt_tokens == 11 and client.telemetry.completion_tokens == 3


def test_wire_protocol_against_local_server():
    received = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            received.append(json.loads(self.rfile.read(int(self.headers["Content-Length"]))))
            body = json.dumps({"choices": [{"message": {"content": "served"}}]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        backend = HttpBackend(f"http://127.0.0.1:{server.server_port}/v1/chat/completions", "m", timeout=5)
        assert LLMClient(backend).ask("intra_topic", group_id="g1", items=[]) == "served"
        assert received[0]["messages"][1]["role"] == "user"
    finally:
        server.shutdown()


def test_fork_has_separate_telemetry(mock_client):
    client = mock_client()
    child = client.fork()
    child.ask("intra_topic", group_id="g1", items=[])
    assert child.telemetry.requests == 1 and client.telemetry.requests == 0
    client.ask("intra_topic", group_id="g1", items=[])
    assert client.telemetry.cache_hits == 1


RANKED_EXAMPLES = [
    ("1. [b]\n2. [a]\n3. [c]", ["b", "a", "c"]),
    ("c first, then a", ["c", "a", "b"]),
    ("[zz] [b] [b] [a]", ["b", "a", "c"]),
    ("", ["a", "b", "c"]),
    ("I cannot decide.", ["a", "b", "c"]),
    ("ranking: [c] > [a] > [b] > [c]", ["c", "a", "b"]),
]


@pytest.mark.parametrize("text,expected", RANKED_EXAMPLES)
def test_ranked_list_examples(text, expected):
    assert parse_ranked_list(text, ["a", "b", "c"]) == expected


def test_ranked_list_ids_that_are_prefixes():
    universe = ["i1", "i10", "i100"]
    assert parse_ranked_list("[i100] then i10", universe) == ["i100", "i10", "i1"]
    assert parse_ranked_list("item-i1 is not an id", universe) == ["i1", "i10", "i100"]


@settings(max_examples=300, deadline=None)
@given(
    universe=st.lists(st.from_regex(r"[a-z0-9]{1,4}", fullmatch=True), min_size=1, max_size=20, unique=True),
    text=st.text(max_size=300),
)
def test_ranked_list_is_always_a_permutation(universe, text):
    out = parse_ranked_list(text, universe)
    assert sorted(out) == sorted(universe)


@settings(max_examples=200, deadline=None)
@given(universe=st.lists(st.from_regex(r"[a-z]{1,3}[0-9]{1,3}", fullmatch=True), min_size=1, max_size=15, unique=True),
       data=st.data())
def test_ranked_list_respects_mentions(universe, data):
    order = data.draw(st.permutations(universe))
    k = data.draw(st.integers(0, len(universe)))
    text = "\n".join(f"{n}. [{i}]" for n, i in enumerate(order[:k], start=1))
    out = parse_ranked_list(text, universe)
    assert out[:k] == list(order[:k])
    assert out[k:] == sorted(order[k:])


RATING_TABLE = [
    ("high", "high"), ("HIGH", "high"), ("High.", "high"), ("  medium\n", "medium"),
    ("Alignment: low", "low"), ("**Medium**", "medium"), ("rating = high!", "high"),
    ("I'd say low", "low"), ("medium-high", None), ("high or low", None), ("", None),
    ("unsure", None), ("highly aligned", None), ("Level: MEDIUM", "medium"),
    ("'low'", "low"), ("low low low", "low"), ("The answer is: high", "high"),
    ("mediocre", None), ("below average", None), ("high; definitely high", "high"),
]


@pytest.mark.parametrize("text,expected", RATING_TABLE)
def test_rating_fixture_table(text, expected):
    assert parse_rating(text) == expected


CONSENSUS_TABLE = [
    ("CONSENSUS: YES", CONSENSUS),
    ("consensus: no", NO_CONSENSUS),
    ("Yes, consensus has been reached.", CONSENSUS),
    ("The group has reached a consensus on [i3].", CONSENSUS),
    ("Everyone agrees on the top item.", CONSENSUS),
    ("No consensus yet.", NO_CONSENSUS),
    ("Consensus has not been reached.", NO_CONSENSUS),
    ("The members haven't agreed.", NO_CONSENSUS),
    ("They disagree about [i2].", NO_CONSENSUS),
    ("We should continue the discussion.", NO_CONSENSUS),
    ("Not sure.", NO_CONSENSUS),
    ("", NO_CONSENSUS),
    ("consensus", NO_CONSENSUS),
    ("Agreement reached on all items.", CONSENSUS),
    ("Consensus reached? No, members did not reach agreement.", NO_CONSENSUS),
    ("The question of consensus remains unresolved.", NO_CONSENSUS),
]


@pytest.mark.parametrize("text,expected", CONSENSUS_TABLE)
def test_consensus_fixture_table(text, expected):
    assert parse_consensus(text) == expected


def test_keywords_parse_and_cap():
    text = "1. **lakes**: many water trips\n- hiking: mountain items\nnoise line\n: empty\nart: museums"
    assert parse_keywords(text, 8) == [("lakes", "many water trips"), ("hiking", "mountain items"),
                                       ("art", "museums")]
    assert len(parse_keywords(text, 2)) == 2


def test_bracket_ids_dedup():
    assert bracket_ids("[a] [b] [a] [c d]") == ["a", "b"]


def test_mock_is_deterministic_and_seeded():
    req = PromptRequest("member_rank", {"user_id": "u1", "profile": "likes [i2]", "topic": "t",
                                        "candidates": ["- [i1]: a", "- [i2]: b", "- [i3]: c"]})
    assert mock_complete(req, 0) == mock_complete(req, 0)
    assert mock_complete(req, 0).startswith("1. [i2]")
    outputs = {mock_complete(req, s) for s in range(10)}
    assert len(outputs) > 1


def test_mock_topic_ignores_item_order():
    a = PromptRequest("intra_topic", {"group_id": "g", "items": ["- [i1]: a", "- [i2]: b"]})
    b = PromptRequest("intra_topic", {"group_id": "g", "items": ["- [i2]: b", "- [i1]: a"]})
    assert mock_complete(a) == mock_complete(b)


def test_mock_rerank_weights_leader():
    rankings = "[u1] (leader): [b] > [a] > [c]\n[u2]: [a] > [c] > [b]"
    req = PromptRequest("group_rerank", {"topic": "t", "leader_cue": "", "rankings": rankings,
                                         "candidates": ["- [a]: x", "- [b]: y", "- [c]: z"]})
    assert parse_ranked_list(mock_complete(req), ["a", "b", "c"])[0] == "b"


def test_mock_override_and_counts():
    backend = MockBackend(1, {"consensus_judge": lambda r: "CONSENSUS: NO"})
    client = LLMClient(backend)
    assert client.ask("consensus_judge", group_id="g", round="1", current_round="", summary="") == "CONSENSUS: NO"
    assert backend.calls_by_template == {"consensus_judge": 1}
    assert backend.model.endswith("consensus_judge")
