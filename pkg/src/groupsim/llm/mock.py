"""Deterministic stand-in for a chat model.

Replies are pure functions of (seed, template name, variables), so whole
pipeline runs are reproducible byte for byte. The mock is mildly informed:
rankers put candidates that the profile or topic mentions ahead of the rest,
and the group agents aggregate member rankings by a Borda count with the
leader's ranking counted twice.
"""

from __future__ import annotations

import hashlib
import re
import threading
from typing import Callable, Mapping

from .client import BackendReply, PromptRequest, Variable
from .parsers import LEVELS, bracket_ids, mentioned_ids, parse_ranked_list


def hash64(*parts: object) -> int:
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "big")


def _text(value: Variable | None) -> str:
    if value is None:
        return ""
    return value if isinstance(value, str) else "\n".join(value)


def _ids_line(ids: list[str]) -> str:
    return " ".join(f"[{i}]" for i in ids) if ids else "nothing specific"


def _numbered(ids: list[str]) -> str:
    return "\n".join(f"{k}. [{i}]" for k, i in enumerate(ids, start=1))


def _candidates(v: Mapping[str, Variable]) -> list[str]:
    return bracket_ids(_text(v.get("candidates")))


def _member_order(seed: int, v: Mapping[str, Variable]) -> list[str]:
    cands = _candidates(v)
    cues = set(mentioned_ids(_text(v.get("profile")) + "\n" + _text(v.get("topic")), cands))
    return sorted(cands, key=lambda i: (i not in cues, hash64(seed, "rank", i), i))


def _borda(seed: int, lines: str, cands: list[str]) -> list[str]:
    """Aggregate ``[speaker] ...: [i] > [j]`` lines; a ``(leader)`` line counts twice."""
    n = len(cands)
    score = dict.fromkeys(cands, 0)
    for line in lines.splitlines():
        m = re.match(r"\s*\[([^\]]+)\]([^:]*):(.*)", line)
        if not m or not cands:
            continue
        weight = 2 if "leader" in m.group(2) else 1
        ranking = [i for i in bracket_ids(m.group(3)) if i in score]
        if not ranking:
            continue
        for pos, item in enumerate(parse_ranked_list(" ".join(f"[{i}]" for i in ranking), cands)):
            score[item] += weight * (n - pos)
    return sorted(cands, key=lambda i: (-score[i], hash64(seed, "rank", i), i))


def _rate(seed, v):
    return LEVELS[hash64(seed, "rate", _text(v.get("group_id")), _text(v.get("user_id"))) % 3]


def _induce(seed, v):
    ids = bracket_ids(_text(v.get("evidence")))
    return f"{_text(v.get('view'))}-view preferences: {_ids_line(ids)}"


def _integrate(seed, v):
    direct = bracket_ids(_text(v.get("user_view")))
    aux = [i for i in bracket_ids(_text(v.get("group_view"))) if i not in direct]
    return f"integrated preferences: {_ids_line(direct)}; auxiliary: {_ids_line(aux)}"


def _keywords(seed, v):
    ids = bracket_ids(_text(v.get("profile")))
    if not ids:
        return "general: no specific item evidence"
    return "\n".join(f"{i}: appears in the preference profile" for i in ids)


def _intra(seed, v):
    return f"topic: {_ids_line(sorted(bracket_ids(_text(v.get('items')))))}"


def _inter(seed, v):
    ids = bracket_ids(_text(v.get("neighbor_topics")))
    return f"shared topic: {_ids_line(sorted(ids))}"


def _fuse(seed, v):
    intra = bracket_ids(_text(v.get("intra")))
    inter = [i for i in bracket_ids(_text(v.get("inter"))) if i not in intra]
    return f"fused topic: {_ids_line(intra + inter)}"


def _member_rank(seed, v):
    return _numbered(_member_order(seed, v))


def _rerank(seed, v):
    return _numbered(_borda(seed, _text(v.get("rankings")), _candidates(v)))


def _utterance(seed, v):
    return "I would prefer " + " > ".join(f"[{i}]" for i in _member_order(seed, v))


def _summary(seed, v):
    return _numbered(_borda(seed, _text(v.get("current_round")), _candidates(v)))


def _judge(seed, v):
    verdict = hash64(seed, "judge", _text(v.get("group_id")), _text(v.get("round"))) % 2
    return "CONSENSUS: YES" if verdict == 0 else "CONSENSUS: NO"


HANDLERS: dict[str, Callable[[int, Mapping[str, Variable]], str]] = {
    "member_alignment": _rate,
    "preference_induction": _induce,
    "preference_integration": _integrate,
    "keyword_refinement": _keywords,
    "intra_topic": _intra,
    "inter_topic": _inter,
    "topic_fusion": _fuse,
    "member_rank": _member_rank,
    "group_rerank": _rerank,
    "discussion_utterance": _utterance,
    "discussion_summary": _summary,
    "consensus_judge": _judge,
}


def mock_complete(req: PromptRequest, seed: int = 0) -> str:
    try:
        handler = HANDLERS[req.template_name]
    except KeyError:
        return f"mock reply for {req.template_name}"
    return handler(seed, req.variables)


class MockBackend:
    """Counting mock backend. ``overrides`` maps template names to reply functions."""

    backend_id = "mock"

    def __init__(
        self,
        seed: int = 0,
        overrides: Mapping[str, Callable[[PromptRequest], str]] | None = None,
    ):
        self.seed = seed
        self.overrides = dict(overrides or {})
        suffix = "-" + "-".join(sorted(self.overrides)) if self.overrides else ""
        self.model = f"mock-seed{seed}{suffix}"
        self.calls = 0
        self.calls_by_template: dict[str, int] = {}
        self._lock = threading.Lock()

    def generate(self, request: PromptRequest, messages: list[dict]) -> BackendReply:
        with self._lock:
            self.calls += 1
            name = request.template_name
            self.calls_by_template[name] = self.calls_by_template.get(name, 0) + 1
        if request.template_name in self.overrides:
            return BackendReply(self.overrides[request.template_name](request))
        return BackendReply(mock_complete(request, self.seed))
