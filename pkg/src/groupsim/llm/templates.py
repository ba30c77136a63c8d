"""Named prompt templates.

Every template instructs the reply grammar that ``groupsim.llm.parsers``
decodes. Ids are always written in square brackets (``[i12]``) so replies can
be scanned for them reliably. Changing a template's wording requires bumping
its version: the version is part of the response cache key.
"""

from __future__ import annotations

import string
from dataclasses import dataclass


@dataclass(frozen=True)
class Template:
    name: str
    version: int
    system: str
    user: str

    @property
    def fields(self) -> tuple[str, ...]:
        return tuple(
            sorted({f for _, f, _, _ in string.Formatter().parse(self.user) if f})
        )


_RANK_GRAMMAR = (
    "Answer with a numbered list containing every candidate id exactly once, "
    "best first, one per line, e.g.\n1. [id]\n2. [id]"
)

TEMPLATES: dict[str, Template] = {}


def register(t: Template) -> Template:
    TEMPLATES[t.name] = t
    return t


register(Template(
    "member_alignment", 1,
    "You judge how well one group member's tastes align with the group's shared interests.",
    "Group [{group_id}] interacted with these items:\n{group_items}\n\n"
    "Member [{user_id}] interacted with these items:\n{user_items}\n\n"
    "How well does the member's preference align with the group's? "
    "Reply with exactly one word: high, medium or low.",
))

register(Template(
    "preference_induction", 1,
    "You infer a user's preferences from structured interaction evidence.",
    "The following evidence comes from the {view} view of user [{user_id}]. "
    "Order-1 entries are the user's own interactions; higher orders are items "
    "reached through similar users or fellow group members, with walk counts "
    "as strength.\n{evidence}\n\n"
    "Describe this user's preferences in a short paragraph, citing item ids in brackets.",
))

register(Template(
    "preference_integration", 1,
    "You merge two descriptions of the same user's preferences into one profile.",
    "Preferences from the user's own interactions (primary evidence):\n{user_view}\n\n"
    "Preferences inferred from group co-members (auxiliary evidence):\n{group_view}\n\n"
    "Write one unified preference profile. Weight the primary evidence most; "
    "use the auxiliary evidence only where it is consistent with it.",
))

register(Template(
    "keyword_refinement", 1,
    "You distill preference profiles into a few representative keywords.",
    "Profile:\n{profile}\n\n"
    "Re-think the profile and distill it into at most {cap} keywords. "
    "Write one per line as `keyword: one-line justification`.",
))

register(Template(
    "intra_topic", 1,
    "You summarize the shared interest of a group from the items it chose.",
    "Group [{group_id}] interacted with:\n{items}\n\n"
    "Summarize the group's topic of interest in one or two sentences, citing item ids in brackets.",
))

register(Template(
    "inter_topic", 1,
    "You abstract the common topic across several related groups.",
    "Topics of groups similar to [{group_id}], most similar first:\n{neighbor_topics}\n\n"
    "State the topic these groups have in common in one or two sentences.",
))

register(Template(
    "topic_fusion", 1,
    "You write the final topic description of a group.",
    "The group's own topic (primary):\n{intra}\n\n"
    "Topic shared with similar groups (secondary):\n{inter}\n\n"
    "Fuse them into one topic description, keeping the group's own topic central.",
))

register(Template(
    "member_rank", 1,
    "You role-play a group member choosing among candidate items.",
    "You are member [{user_id}] of a group. Your preference keywords:\n{profile}\n\n"
    "The group's topic: {topic}\n\nCandidates:\n{candidates}\n\n"
    "Rank all candidates by how much you would like them. " + _RANK_GRAMMAR,
))

register(Template(
    "group_rerank", 1,
    "You are the group recommendation agent combining members' rankings.",
    "Group topic: {topic}\n{leader_cue}\n"
    "Member rankings (best first):\n{rankings}\n\nCandidates:\n{candidates}\n\n"
    "Produce the group's final ranking. " + _RANK_GRAMMAR,
))

register(Template(
    "discussion_utterance", 1,
    "You role-play a group member in a discussion about what the group should choose.",
    "You are member [{user_id}]. Your preference keywords:\n{profile}\n\n"
    "The group's topic: {topic}\n{leader_cue}\n"
    "Discussion so far:\n{transcript}\n\nCandidates:\n{candidates}\n\n"
    "State your view in a few sentences, naming your preferred candidates in order as [id].",
))

register(Template(
    "discussion_summary", 1,
    "You are the group recommendation agent summarizing a discussion.",
    "Group topic: {topic}\n{leader_cue}\n"
    "Earlier rounds:\n{transcript}\n\nThis round:\n{current_round}\n\n"
    "Candidates:\n{candidates}\n\n"
    "Summarize the outcome as the group's ranking. " + _RANK_GRAMMAR,
))

register(Template(
    "consensus_judge", 1,
    "You are an external judge deciding whether a group discussion reached consensus.",
    "Group [{group_id}], round {round}.\nThis round:\n{current_round}\n\n"
    "Proposed group ranking:\n{summary}\n\n"
    "Has the group reached consensus on this ranking? "
    "Reply with `CONSENSUS: YES` or `CONSENSUS: NO` on the first line.",
))


def get_template(name: str) -> Template:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise KeyError(f"unknown prompt template {name!r}") from None
