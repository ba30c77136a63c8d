"""Chain-of-preference user profiling.

Three stages per user: a preference text per meta-path view, one integrated
profile, then a short keyword list distilled from the integrated profile only.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .dataset import Catalog
from .jsonio import read_json, safe_name, write_json
from .llm import LLMClient, UnparseableReply, parse_keywords
from .metapath import MetaPathSet, textualize_metapaths

logger = logging.getLogger(__name__)

NO_PREFERENCES = "no observable preferences"
UNKNOWN_KEYWORDS = (("unknown", "no interaction history"),)
DEFAULT_KEYWORD_CAP = 8
VIEWS = ("user", "group")


class ProfilingError(RuntimeError):
    def __init__(self, user: str, stage: str, cause: Exception):
        super().__init__(f"profiling user {user} failed at stage {stage}: {cause}")
        self.user = user
        self.stage = stage


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    user_view_pref: str
    group_view_pref: str
    integrated_pref: str
    keywords: tuple[tuple[str, str], ...]

    @property
    def keyword_text(self) -> str:
        """Keywords joined in stored order; what leader selection embeds."""
        return ", ".join(k for k, _ in self.keywords)

    def prompt_text(self) -> str:
        return "\n".join(f"- {k}: {j}" for k, j in self.keywords)

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "user_view_pref": self.user_view_pref,
            "group_view_pref": self.group_view_pref,
            "integrated_pref": self.integrated_pref,
            "keywords": [{"keyword": k, "justification": j} for k, j in self.keywords],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "UserProfile":
        return cls(
            doc["user_id"], doc["user_view_pref"], doc["group_view_pref"], doc["integrated_pref"],
            tuple((k["keyword"], k["justification"]) for k in doc["keywords"]),
        )


def induce_single_view(
    user: str, view: str, metapaths: MetaPathSet, catalog: Catalog, client: LLMClient, top_k: int = 10
) -> str:
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    evidence = metapaths.user_evidence(user) if view == "user" else metapaths.group_evidence(user)
    if not any(evidence.values()):
        return NO_PREFERENCES
    fragment = textualize_metapaths(evidence, catalog, top_k)
    return client.ask(
        "preference_induction", view=view, user_id=user, evidence=fragment.splitlines()
    )


def integrate_views(user_view_pref: str, group_view_pref: str, client: LLMClient) -> str:
    if user_view_pref == NO_PREFERENCES:
        return group_view_pref
    if group_view_pref == NO_PREFERENCES:
        return user_view_pref
    return client.ask("preference_integration", user_view=user_view_pref, group_view=group_view_pref)


def refine_keywords(integrated_pref: str, cap: int, client: LLMClient) -> list[tuple[str, str]]:
    if cap < 1:
        raise ValueError("keyword cap must be >= 1")
    if integrated_pref == NO_PREFERENCES:
        return list(UNKNOWN_KEYWORDS)
    reply = ""
    for attempt in range(client.max_retries + 1):
        reply = client.ask("keyword_refinement", retry_index=attempt, profile=integrated_pref, cap=str(cap))
        pairs = parse_keywords(reply, cap)
        if pairs:
            return pairs
    raise UnparseableReply("no `keyword: justification` lines in reply", reply)


def profile_user(
    user: str,
    metapaths: MetaPathSet,
    catalog: Catalog,
    client: LLMClient,
    keyword_cap: int = DEFAULT_KEYWORD_CAP,
    top_k: int = 10,
) -> UserProfile:
    stage = "user_view"
    try:
        user_pref = induce_single_view(user, "user", metapaths, catalog, client, top_k)
        stage = "group_view"
        group_pref = induce_single_view(user, "group", metapaths, catalog, client, top_k)
        stage = "integration"
        integrated = integrate_views(user_pref, group_pref, client)
        stage = "keywords"
        keywords = refine_keywords(integrated, keyword_cap, client)
    except Exception as exc:
        raise ProfilingError(user, stage, exc) from exc
    return UserProfile(user, user_pref, group_pref, integrated, tuple(keywords))


def profile_users(
    users: Iterable[str],
    metapaths: MetaPathSet,
    catalog: Catalog,
    client: LLMClient,
    keyword_cap: int = DEFAULT_KEYWORD_CAP,
    top_k: int = 10,
    workers: int = 1,
) -> dict[str, UserProfile]:
    users = list(users)

    def run(u: str) -> UserProfile:
        return profile_user(u, metapaths, catalog, client, keyword_cap, top_k)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            profiles = list(pool.map(run, users))
    else:
        profiles = [run(u) for u in users]
    return dict(zip(users, profiles))


class ProfileStore:
    """One JSON document per user."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path(self, user: str) -> Path:
        return self.directory / f"{safe_name(user)}.json"

    def save(self, profile: UserProfile, **stamp: str) -> None:
        write_json(self.path(profile.user_id), {**profile.to_json(), **stamp})

    def load(self, user: str) -> UserProfile:
        return UserProfile.from_json(read_json(self.path(user)))

    def exists(self) -> bool:
        return self.directory.is_dir() and any(self.directory.glob("*.json"))
