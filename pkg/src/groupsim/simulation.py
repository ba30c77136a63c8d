"""Group decision simulation.

``static``: each member agent ranks the candidates, then a group agent
re-ranks them from all member rankings (leader's ranking marked).

``dynamic``: members discuss in rounds (leader first), a group agent turns
each round into a ranking and an external judge decides whether the group
has converged; the last summary wins when rounds run out.

``heuristic``: no agents at all; candidates are scored by embedding
similarity to the members' keyword profiles (the no-simulation ablation).
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import Catalog, EvaluationSplit, TestCase
from .grouping import NO_TOPIC, Embedder, GroupContext, HashEmbedder
from .llm import CONSENSUS, BackendError, LLMClient, Telemetry, parse_consensus, parse_ranked_list
from .profiling import UserProfile

logger = logging.getLogger(__name__)

STRATEGIES = ("static", "dynamic", "heuristic")
DEFAULT_MAX_ROUNDS = 3


class SimulationError(RuntimeError):
    def __init__(self, group: str, stage: str, cause: Exception, round_index: int | None = None):
        where = f"stage {stage}" + (f", round {round_index}" if round_index is not None else "")
        super().__init__(f"group {group}: {where}: {cause}")
        self.group = group
        self.stage = stage
        self.round_index = round_index


@dataclass(frozen=True)
class MemberRanking:
    user_id: str
    ranked_items: tuple[str, ...]


@dataclass(frozen=True)
class GroupRecommendation:
    group_id: str
    strategy: str
    ranked_items: tuple[str, ...]
    rounds_used: int | None = None
    consensus: bool | None = None


@dataclass(frozen=True)
class Utterance:
    user_id: str
    text: str
    is_leader: bool = False

    def line(self) -> str:
        marker = " (leader)" if self.is_leader else ""
        return f"[{self.user_id}]{marker}: " + " ".join(self.text.split())


@dataclass(frozen=True)
class RoundRecord:
    index: int
    utterances: tuple[Utterance, ...]
    summary: tuple[str, ...]
    verdict: str


@dataclass(frozen=True)
class DiscussionTranscript:
    group_id: str
    rounds: tuple[RoundRecord, ...]

    def to_json(self) -> dict:
        return {
            "group_id": self.group_id,
            "rounds": [
                {
                    "round": r.index,
                    "utterances": [
                        {"user_id": u.user_id, "leader": u.is_leader, "text": u.text} for u in r.utterances
                    ],
                    "summary": list(r.summary),
                    "verdict": r.verdict,
                }
                for r in self.rounds
            ],
        }


@dataclass(frozen=True)
class GroupInputs:
    """Everything one group's simulation needs."""

    case: TestCase
    members: tuple[str, ...]
    profiles: Mapping[str, UserProfile]
    context: GroupContext
    leadership: bool = True

    @property
    def leader(self) -> str | None:
        return self.context.leader if self.leadership else None

    @property
    def topic(self) -> str:
        return self.context.topic


def candidate_lines(candidates: Sequence[str], catalog: Catalog) -> list[str]:
    return [f"- [{i}]: {catalog.item_text[i]}" for i in candidates]


def leader_cue(leader: str | None) -> str:
    if leader is None:
        return ""
    return f"Member [{leader}] is the group's leader; weigh their preferences more heavily.\n"


def ranking_line(user: str, items: Sequence[str], is_leader: bool) -> str:
    marker = " (leader)" if is_leader else ""
    return f"[{user}]{marker}: " + " > ".join(f"[{i}]" for i in items)


def static_rank_member(
    user: str,
    profile: UserProfile,
    topic: str,
    candidates: Sequence[str],
    catalog: Catalog,
    client: LLMClient,
) -> MemberRanking:
    reply = client.ask(
        "member_rank", user_id=user, profile=profile.prompt_text(), topic=topic,
        candidates=candidate_lines(candidates, catalog),
    )
    return MemberRanking(user, tuple(parse_ranked_list(reply, candidates)))


def static_rerank(
    group: str,
    topic: str,
    rankings: Sequence[MemberRanking],
    candidates: Sequence[str],
    leader: str | None,
    catalog: Catalog,
    client: LLMClient,
) -> GroupRecommendation:
    lines = [ranking_line(r.user_id, r.ranked_items, r.user_id == leader) for r in rankings]
    reply = client.ask(
        "group_rerank", topic=topic, leader_cue=leader_cue(leader), rankings=lines,
        candidates=candidate_lines(candidates, catalog),
    )
    return GroupRecommendation(group, "static", tuple(parse_ranked_list(reply, candidates)))


def run_static(inputs: GroupInputs, catalog: Catalog, client: LLMClient) -> GroupRecommendation:
    g, cands = inputs.case.group, inputs.case.candidates
    rankings = []
    for u in inputs.members:
        try:
            rankings.append(static_rank_member(u, inputs.profiles[u], inputs.topic, cands, catalog, client))
        except Exception as exc:
            raise SimulationError(g, f"member_rank[{u}]", exc) from exc
    try:
        return static_rerank(g, inputs.topic, rankings, cands, inputs.leader, catalog, client)
    except Exception as exc:
        raise SimulationError(g, "group_rerank", exc) from exc


def speaking_order(members: Sequence[str], leader: str | None) -> list[str]:
    rest = sorted(u for u in members if u != leader)
    return ([leader] if leader in members else []) + rest


def _history(rounds: Sequence[RoundRecord], partial: Sequence[Utterance] = ()) -> list[str]:
    lines = []
    for r in rounds:
        lines.append(f"Round {r.index}:")
        lines.extend(u.line() for u in r.utterances)
        lines.append("Group summary: " + " > ".join(f"[{i}]" for i in r.summary))
        lines.append(f"Judge: {'consensus' if r.verdict == CONSENSUS else 'no consensus'}")
    if partial:
        lines.append(f"Round {len(rounds) + 1} (in progress):")
        lines.extend(u.line() for u in partial)
    return lines


def run_dynamic(
    inputs: GroupInputs, catalog: Catalog, client: LLMClient, max_rounds: int = DEFAULT_MAX_ROUNDS
) -> tuple[GroupRecommendation, DiscussionTranscript]:
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    g, cands = inputs.case.group, inputs.case.candidates
    leader = inputs.leader
    cue = leader_cue(leader)
    cand_lines = candidate_lines(cands, catalog)
    rounds: list[RoundRecord] = []
    ranking: list[str] = sorted(cands)
    verdict = ""
    for r in range(1, max_rounds + 1):
        stage = "utterance"
        try:
            utterances: list[Utterance] = []
            for u in speaking_order(inputs.members, leader):
                text = client.ask(
                    "discussion_utterance", user_id=u, profile=inputs.profiles[u].prompt_text(),
                    topic=inputs.topic, leader_cue=cue, transcript=_history(rounds, utterances),
                    candidates=cand_lines,
                )
                utterances.append(Utterance(u, text, u == leader))
            current = [u.line() for u in utterances]
            stage = "summary"
            summary = client.ask(
                "discussion_summary", topic=inputs.topic, leader_cue=cue, transcript=_history(rounds),
                current_round=current, candidates=cand_lines,
            )
            ranking = parse_ranked_list(summary, cands)
            stage = "judge"
            verdict = parse_consensus(client.ask(
                "consensus_judge", group_id=g, round=str(r), current_round=current,
                summary=" > ".join(f"[{i}]" for i in ranking),
            ))
        except Exception as exc:
            raise SimulationError(g, stage, exc, round_index=r) from exc
        rounds.append(RoundRecord(r, tuple(utterances), tuple(ranking), verdict))
        if verdict == CONSENSUS:
            break
    rec = GroupRecommendation(g, "dynamic", tuple(ranking), len(rounds), verdict == CONSENSUS)
    return rec, DiscussionTranscript(g, tuple(rounds))


def heuristic_rank(inputs: GroupInputs, catalog: Catalog, embedder: Embedder) -> GroupRecommendation:
    """Mean cosine similarity between each candidate and the members' keyword profiles."""
    member_vecs = np.array([embedder.embed(inputs.profiles[u].keyword_text) for u in inputs.members])
    scores = {}
    for i in inputs.case.candidates:
        v = embedder.embed(f"{i} {catalog.item_text[i]}")
        scores[i] = float(np.mean(member_vecs @ v))
    ranked = sorted(inputs.case.candidates, key=lambda i: (-scores[i], i))
    return GroupRecommendation(inputs.case.group, "heuristic", tuple(ranked))


@dataclass(frozen=True)
class ErrorRecord:
    group_id: str
    strategy: str
    error: str
    stage: str | None = None
    backend_failure: bool = False


@dataclass
class BatchResult:
    results: list[GroupRecommendation] = field(default_factory=list)
    errors: list[ErrorRecord] = field(default_factory=list)
    telemetry: dict[str, Telemetry] = field(default_factory=dict)
    transcripts: dict[str, DiscussionTranscript] = field(default_factory=dict)
    wall_time: float = 0.0

    def total_telemetry(self) -> Telemetry:
        total = Telemetry()
        for t in self.telemetry.values():
            total.add(t)
        return total


def build_inputs(
    split: EvaluationSplit,
    profiles: Mapping[str, UserProfile],
    contexts: Mapping[str, GroupContext],
    leadership: bool = True,
) -> list[GroupInputs]:
    out = []
    for case in split.test_cases:
        members = tuple(split.train.members(case.group))
        ctx = contexts.get(case.group) or GroupContext(case.group, NO_TOPIC, NO_TOPIC, NO_TOPIC, ())
        out.append(GroupInputs(case, members, profiles, ctx, leadership))
    return out


def recommend_all(
    inputs: Sequence[GroupInputs],
    strategy: str,
    catalog: Catalog,
    client: LLMClient | None,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    workers: int = 1,
    embedder: Embedder | None = None,
) -> BatchResult:
    """Run one strategy over all groups; a failing group becomes an error record."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if strategy != "heuristic" and client is None:
        raise ValueError(f"strategy {strategy} needs a chat client")
    embedder = embedder or HashEmbedder()

    def one(item: GroupInputs):
        local = client.fork() if client is not None else None
        start = time.perf_counter()
        transcript = None
        try:
            if strategy == "static":
                rec = run_static(item, catalog, local)
            elif strategy == "dynamic":
                rec, transcript = run_dynamic(item, catalog, local, max_rounds)
            else:
                rec = heuristic_rank(item, catalog, embedder)
            outcome: GroupRecommendation | ErrorRecord = rec
        except Exception as exc:  # isolate per-group failures
            logger.warning("group %s failed: %s", item.case.group, exc)
            root = exc.__cause__ or exc
            outcome = ErrorRecord(
                item.case.group, strategy, str(exc), getattr(exc, "stage", None),
                isinstance(root, BackendError) or isinstance(exc, BackendError),
            )
        tele = local.telemetry if local is not None else Telemetry()
        tele.wall_time = time.perf_counter() - start
        return item.case.group, outcome, tele, transcript

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(one, inputs))
    else:
        done = [one(x) for x in inputs]

    batch = BatchResult()
    for group, outcome, tele, transcript in done:
        batch.telemetry[group] = tele
        if isinstance(outcome, ErrorRecord):
            batch.errors.append(outcome)
        else:
            batch.results.append(outcome)
        if transcript is not None:
            batch.transcripts[group] = transcript
    batch.wall_time = time.perf_counter() - start
    return batch


def result_record(rec: GroupRecommendation, telemetry: Telemetry, **stamp) -> dict:
    return {
        "group_id": rec.group_id,
        "strategy": rec.strategy,
        "ranked_items": list(rec.ranked_items),
        "rounds_used": rec.rounds_used,
        "consensus": rec.consensus,
        "telemetry": telemetry.deterministic(),
        **stamp,
    }


def error_record(err: ErrorRecord, **stamp) -> dict:
    return {
        "group_id": err.group_id,
        "strategy": err.strategy,
        "error": err.error,
        "stage": err.stage,
        **stamp,
    }
