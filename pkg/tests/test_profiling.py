import pytest

from conftest import tiny_store
from groupsim.metapath import build_metapaths
from groupsim.profiling import (
    NO_PREFERENCES,
    UNKNOWN_KEYWORDS,
    ProfileStore,
    ProfilingError,
    UserProfile,
    induce_single_view,
    integrate_views,
    profile_user,
    profile_users,
    refine_keywords,
)


@pytest.fixture
def setup():
    store = tiny_store(
        [("u1", "i1"), ("u1", "i2"), ("u2", "i2"), ("u2", "i3")],
        [("g1", "i2")],
        [("g1", "u1"), ("g1", "u2"), ("g2", "u3")],
    )
    return store, build_metapaths(store, store.B, 2)


def test_user_without_history_gets_sentinels(setup, mock_client):
    store, mps = setup
    client = mock_client()
    profile = profile_user("u3", mps, store.catalog, client)
    assert profile.user_view_pref == NO_PREFERENCES
    assert profile.group_view_pref == NO_PREFERENCES
    assert profile.integrated_pref == NO_PREFERENCES
    assert profile.keywords == UNKNOWN_KEYWORDS
    assert client.backend.calls == 0


def test_keywords_come_from_integrated_profile_only(setup, mock_client):
    store, mps = setup
    seen = []

    def keywords(req):
        seen.append(dict(req.variables))
        return "travel: likes trips"

    client = mock_client(overrides={"keyword_refinement": keywords})
    profile = profile_user("u1", mps, store.catalog, client, keyword_cap=3)
    assert set(seen[0]) == {"profile", "cap"}
    assert seen[0]["profile"] == profile.integrated_pref
    assert profile.keywords == (("travel", "likes trips"),)
    assert profile.keyword_text == "travel"


def test_evidence_reaches_prompt(setup, mock_client):
    store, mps = setup
    text = induce_single_view("u1", "user", mps, store.catalog, mock_client())
    assert "[i1]" in text and "[i2]" in text


def test_unknown_view(setup, mock_client):
    store, mps = setup
    with pytest.raises(ValueError):
        induce_single_view("u1", "item", mps, store.catalog, mock_client())


def test_integration_short_circuits(mock_client):
    client = mock_client()
    assert integrate_views(NO_PREFERENCES, "likes lakes", client) == "likes lakes"
    assert integrate_views("likes hills", NO_PREFERENCES, client) == "likes hills"
    assert client.backend.calls == 0


def test_keyword_retry_then_failure(mock_client):
    client = mock_client(overrides={"keyword_refinement": lambda r: "nothing useful"}, max_retries=1)
    with pytest.raises(Exception, match="keyword"):
        refine_keywords("likes lakes", 4, client)
    assert client.backend.calls == 2


def test_keyword_cap_respected(mock_client):
    reply = "\n".join(f"k{n}: reason {n}" for n in range(20))
    client = mock_client(overrides={"keyword_refinement": lambda r: reply})
    assert len(refine_keywords("likes lakes", 5, client)) == 5


def test_failure_names_stage(setup, mock_client):
    store, mps = setup
    client = mock_client(overrides={"keyword_refinement": lambda r: "???"}, max_retries=0)
    with pytest.raises(ProfilingError) as info:
        profile_user("u1", mps, store.catalog, client)
    assert info.value.stage == "keywords" and info.value.user == "u1"


def test_profiles_stable_and_roundtrip(setup, mock_client, tmp_path):
    store, mps = setup
    a = profile_users(["u1", "u2"], mps, store.catalog, mock_client())
    b = profile_users(["u1", "u2"], mps, store.catalog, mock_client(), workers=2)
    assert a == b
    ps = ProfileStore(tmp_path / "profiles")
    assert not ps.exists()
    ps.save(a["u1"], fingerprint="abc")
    assert ps.exists()
    assert ps.load("u1") == a["u1"]


def test_profile_json_roundtrip():
    p = UserProfile("u/1", "a", "b", "c", (("k", "j"),))
    assert UserProfile.from_json(p.to_json()) == p
