"""Decoders for model replies. All are pure functions."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

LEVELS = ("high", "medium", "low")
CONSENSUS = "consensus"
NO_CONSENSUS = "no_consensus"

_BRACKET_ID = re.compile(r"\[([^\[\]\s]+)\]")


def bracket_ids(text: str) -> list[str]:
    """Ids written as ``[id]``, first-mention order, deduplicated."""
    seen: dict[str, None] = {}
    for m in _BRACKET_ID.finditer(text):
        seen.setdefault(m.group(1), None)
    return list(seen)


def _id_pattern(ids: Iterable[str]) -> re.Pattern | None:
    ids = sorted(set(ids), key=lambda s: (-len(s), s))
    if not ids:
        return None
    alternation = "|".join(re.escape(i) for i in ids)
    return re.compile(rf"(?<![\w-])(?:{alternation})(?![\w-])")


def mentioned_ids(text: str, universe: Iterable[str]) -> list[str]:
    """Universe ids occurring in ``text`` as whole tokens, first-mention order."""
    pattern = _id_pattern(universe)
    if pattern is None:
        return []
    seen: dict[str, None] = {}
    for m in pattern.finditer(text):
        seen.setdefault(m.group(0), None)
    return list(seen)


def parse_ranked_list(text: str, universe: Sequence[str]) -> list[str]:
    """Always returns a permutation of ``universe``.

    Mentioned ids come first in first-mention order; unknown ids are dropped,
    repeats ignored, and unmentioned universe ids appended in ascending order.
    """
    ranked = mentioned_ids(text or "", universe)
    seen = set(ranked)
    ranked.extend(sorted(i for i in set(universe) if i not in seen))
    return ranked


def parse_rating(text: str) -> str | None:
    """Level named in the reply, or None when absent or ambiguous."""
    words = set(re.findall(r"[a-z]+", text.lower()))
    found = [lvl for lvl in LEVELS if lvl in words]
    return found[0] if len(found) == 1 else None


_NEGATIVE = [
    r"consensus\s*[:=\-]?\s*(no|false|not)\b",
    r"\bno\s+consensus\b",
    r"\bnot\s+(yet\s+)?(been\s+)?(reached|achieved|agreed|converged)\b",
    r"\b(has|have|did|do|does)\s*n[o']t\s+(yet\s+)?(reach|agree|achieve|converge)",
    r"\b(hasn't|haven't|didn't|don't|doesn't)\b",
    r"\bdisagree",
    r"\bno\s+agreement\b",
    r"\bnot\s+(in\s+)?agree",
    r"\bcontinue\s+(the\s+)?discussion\b",
    r"\bunresolved\b",
]
_AFFIRMATIVE = [
    r"consensus\s*[:=\-]?\s*(yes|true|reached|achieved)\b",
    r"\bconsensus\s+(has\s+been\s+|was\s+|is\s+)?(reached|achieved)\b",
    r"\b(reached|achieved)\s+(a\s+)?consensus\b",
    r"\b(all|everyone|the\s+group|members)\s+(have\s+|has\s+)?agree[sd]?\b",
    r"\bagreement\s+(has\s+been\s+|was\s+|is\s+)?reached\b",
    r"^\s*yes\b",
]


def parse_consensus(text: str) -> str:
    """Conservative verdict: any negative marker, or no affirmative one, means no consensus."""
    t = (text or "").lower()
    if any(re.search(p, t, re.MULTILINE) for p in _NEGATIVE):
        return NO_CONSENSUS
    if any(re.search(p, t, re.MULTILINE) for p in _AFFIRMATIVE):
        return CONSENSUS
    return NO_CONSENSUS


_LIST_PREFIX = re.compile(r"^\s*(?:[-*•]+|\d+[.)])\s*")


def parse_keywords(text: str, cap: int) -> list[tuple[str, str]]:
    """``keyword: justification`` lines, markdown bullets and numbering tolerated."""
    pairs: list[tuple[str, str]] = []
    for line in (text or "").splitlines():
        line = _LIST_PREFIX.sub("", line).strip()
        if ":" not in line:
            continue
        keyword, justification = line.split(":", 1)
        keyword = keyword.strip().strip("*_`\"'").strip()
        justification = justification.strip()
        if not keyword or not justification or len(keyword) > 80:
            continue
        pairs.append((keyword, justification))
        if len(pairs) >= cap:
            break
    return pairs
