"""User-view and group-view meta-path matrices.

Entries are walk counts between a user and an item:

* user view, order h:  (A_UI A_UI^T)^(h-1) A_UI   user (-> item -> user)^(h-1) -> item
* group view, order h: (A_UG Â_GU)^(h-1) A_UI     user (-> group -> selected user)^(h-1) -> item

``Â_GU`` keeps the members whose tastes the chat model rated as highly aligned
with their group.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .dataset import Catalog, InteractionStore
from .llm import LLMClient, UnparseableReply, parse_rating

logger = logging.getLogger(__name__)

INT64_MAX = np.iinfo(np.int64).max
MAX_ORDER = 3


class UnparseableRating(UnparseableReply):
    pass


def checked_product(a: sp.spmatrix, b: sp.spmatrix) -> sp.csr_matrix:
    """Integer sparse product that refuses to overflow int64.

    Each entry of a @ b is at most (row sum of a) * (max entry of b), so the
    bound is checked before multiplying rather than detecting a wrap after.
    """
    a = sp.csr_matrix(a, dtype=np.int64)
    b = sp.csr_matrix(b, dtype=np.int64)
    if a.nnz and b.nnz:
        cumulative = np.concatenate([[0.0], np.cumsum(a.data, dtype=np.float64)])
        row_max = float(np.max(cumulative[a.indptr[1:]] - cumulative[a.indptr[:-1]]))
        entry_max = float(b.data.max())
        if row_max * entry_max >= float(INT64_MAX):
            raise OverflowError("walk counts exceed 64-bit range")
    out = (a @ b).tocsr()
    out.sort_indices()
    return out


def build_user_view(A_ui: sp.spmatrix, H: int) -> dict[int, sp.csr_matrix]:
    if H < 1:
        raise ValueError("max order must be >= 1")
    A = sp.csr_matrix(A_ui, dtype=np.int64)
    step = checked_product(A, A.T)
    view = {1: A}
    for h in range(2, H + 1):
        view[h] = checked_product(step, view[h - 1])
    return view


def build_group_view(
    A_ug: sp.spmatrix, A_hat_gu: sp.spmatrix, A_ui: sp.spmatrix, H: int
) -> dict[int, sp.csr_matrix]:
    step = checked_product(A_ug, A_hat_gu)
    view: dict[int, sp.csr_matrix] = {}
    prev = sp.csr_matrix(A_ui, dtype=np.int64)
    for h in range(2, H + 1):
        prev = checked_product(step, prev)
        view[h] = prev
    return view


@dataclass(frozen=True)
class MemberAlignment:
    ratings: Mapping[tuple[str, str], str]  # (group, user) -> high/medium/low
    selected: sp.csr_matrix  # groups x users

    def to_json(self, catalog: Catalog) -> dict:
        sel = self.selected.tocoo()
        return {
            "ratings": [[g, u, lvl] for (g, u), lvl in sorted(self.ratings.items())],
            "selected": sorted([catalog.groups[r], catalog.users[c]] for r, c in zip(sel.row, sel.col)),
        }

    @classmethod
    def from_json(cls, doc: Mapping, catalog: Catalog) -> "MemberAlignment":
        ratings = {(g, u): lvl for g, u, lvl in doc["ratings"]}
        coords = [(catalog.group_index[g], catalog.user_index[u]) for g, u in doc["selected"]]
        return cls(ratings, _boolean(coords, (len(catalog.groups), len(catalog.users))))


@dataclass(frozen=True)
class MetaPathSet:
    users: tuple[str, ...]
    items: tuple[str, ...]
    user_view: Mapping[int, sp.csr_matrix]
    group_view: Mapping[int, sp.csr_matrix]
    max_order: int

    def _row(self, m: sp.csr_matrix, user: str) -> dict[str, int]:
        k = self._uidx[user]
        start, end = m.indptr[k], m.indptr[k + 1]
        return {self.items[j]: int(c) for j, c in zip(m.indices[start:end], m.data[start:end]) if c}

    def __post_init__(self) -> None:
        object.__setattr__(self, "_uidx", {u: k for k, u in enumerate(self.users)})

    def user_evidence(self, user: str) -> dict[int, dict[str, int]]:
        return {h: self._row(m, user) for h, m in sorted(self.user_view.items())}

    def group_evidence(self, user: str) -> dict[int, dict[str, int]]:
        return {h: self._row(m, user) for h, m in sorted(self.group_view.items())}

    def to_json(self) -> dict:
        def triplets(m: sp.csr_matrix) -> list:
            c = m.tocoo()
            order = np.lexsort((c.col, c.row))
            return [[self.users[c.row[k]], self.items[c.col[k]], int(c.data[k])] for k in order]

        return {
            "max_order": self.max_order,
            "users": list(self.users),
            "items": list(self.items),
            "user_view": {str(h): triplets(m) for h, m in sorted(self.user_view.items())},
            "group_view": {str(h): triplets(m) for h, m in sorted(self.group_view.items())},
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "MetaPathSet":
        users, items = tuple(doc["users"]), tuple(doc["items"])
        uidx = {u: k for k, u in enumerate(users)}
        iidx = {i: k for k, i in enumerate(items)}
        shape = (len(users), len(items))

        def matrix(rows: list) -> sp.csr_matrix:
            if not rows:
                return sp.csr_matrix(shape, dtype=np.int64)
            r = [uidx[u] for u, _, _ in rows]
            c = [iidx[i] for _, i, _ in rows]
            v = np.array([n for _, _, n in rows], dtype=np.int64)
            return sp.csr_matrix((v, (r, c)), shape=shape)

        return cls(
            users, items,
            {int(h): matrix(t) for h, t in doc["user_view"].items()},
            {int(h): matrix(t) for h, t in doc["group_view"].items()},
            int(doc["max_order"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _boolean(coords, shape) -> sp.csr_matrix:
    coords = sorted(set(coords))
    data = np.ones(len(coords), dtype=np.int64)
    r = np.array([c[0] for c in coords], dtype=np.int64)
    c = np.array([c[1] for c in coords], dtype=np.int64)
    return sp.csr_matrix((data, (r, c)), shape=shape)


def item_lines(items: list[str], catalog: Catalog) -> list[str]:
    return [f"- [{i}]: {catalog.item_text[i]}" for i in items]


def rate_member_alignment(
    group: str,
    user: str,
    group_texts: list[str],
    user_texts: list[str],
    client: LLMClient,
) -> str:
    """Ask for a high/medium/low alignment level, re-asking on unparseable replies."""
    reply = ""
    for attempt in range(client.max_retries + 1):
        reply = client.ask(
            "member_alignment", retry_index=attempt,
            group_id=group, user_id=user, group_items=group_texts, user_items=user_texts,
        )
        level = parse_rating(reply)
        if level is not None:
            return level
    raise UnparseableRating(f"no alignment level for ({group}, {user})", reply)


def rate_all_members(store: InteractionStore, client: LLMClient, workers: int = 1) -> dict[tuple[str, str], str]:
    cat = store.catalog
    pairs = [(g, u) for g in cat.groups for u in store.members(g)]

    def rate(pair: tuple[str, str]) -> str:
        g, u = pair
        return rate_member_alignment(
            g, u, item_lines(store.group_items(g), cat), item_lines(store.user_items(u), cat), client
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            levels = list(pool.map(rate, pairs))
    else:
        levels = [rate(p) for p in pairs]
    return dict(zip(pairs, levels))


def build_selected_members(
    catalog: Catalog, B: sp.spmatrix, ratings: Mapping[tuple[str, str], str]
) -> sp.csr_matrix:
    """Keep high-rated members; a group with none falls back to medium, then to everyone."""
    B = sp.csr_matrix(B)
    coords = []
    for gi, g in enumerate(catalog.groups):
        members = [catalog.users[j] for j in sorted(B.indices[B.indptr[gi]:B.indptr[gi + 1]])]
        for level in ("high", "medium", None):
            chosen = [u for u in members if level is None or ratings[(g, u)] == level]
            if chosen:
                break
        coords.extend((gi, catalog.user_index[u]) for u in chosen)
    return _boolean(coords, B.shape)


def build_metapaths(store: InteractionStore, selected: sp.spmatrix, max_order: int) -> MetaPathSet:
    if not 1 <= max_order <= MAX_ORDER:
        raise ValueError(f"max order must be in 1..{MAX_ORDER}")
    cat = store.catalog
    return MetaPathSet(
        cat.users, cat.items,
        build_user_view(store.X, max_order),
        build_group_view(store.B.T, selected, store.X, max_order),
        max_order,
    )


def textualize_metapaths(
    evidence: Mapping[int, Mapping[str, int]], catalog: Catalog, top_k: int
) -> str:
    """Render per-order walk counts as prompt lines, strongest first (count desc, id asc)."""
    blocks = []
    for h in sorted(evidence):
        label = "direct interactions" if h == 1 else f"order {h} evidence"
        ranked = sorted(evidence[h].items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        if not ranked:
            blocks.append(f"{label}: none")
            continue
        lines = [f"{label}:"]
        lines.extend(f"- [{i}] ({n}): {catalog.item_text[i]}" for i, n in ranked)
        blocks.append("\n".join(lines))
    return "\n".join(blocks)
