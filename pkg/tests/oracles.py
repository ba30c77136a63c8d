"""Reference implementations kept independent of the code they check.

Walk counts are enumerated over adjacency lists (memoised recursion), never
through matrix products; metrics are computed from their definitions.
"""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache


def user_view_walks(A: list[list[int]], h: int) -> list[list[int]]:
    """Walks user (-> item -> user)^(h-1) -> item, by enumeration."""
    n_users, n_items = len(A), len(A[0]) if A else 0
    items_of = [[i for i in range(n_items) if A[u][i]] for u in range(n_users)]
    users_of = [[u for u in range(n_users) if A[u][i]] for i in range(n_items)]

    @lru_cache(maxsize=None)
    def walks(u: int, remaining: int) -> tuple:
        c: Counter = Counter()
        for i in items_of[u]:
            if remaining == 1:
                c[i] += 1
            else:
                for v in users_of[i]:
                    c.update(dict(walks(v, remaining - 1)))
        return tuple(sorted(c.items()))

    out = [[0] * n_items for _ in range(n_users)]
    for u in range(n_users):
        for i, n in walks(u, h):
            out[u][i] = n
    return out


def group_view_walks(A: list[list[int]], B: list[list[int]], S: list[list[int]], h: int) -> list[list[int]]:
    """Walks user (-> group -> selected user)^(h-1) -> item.

    B is groups x users membership, S the selected members (groups x users).
    """
    n_users, n_items = len(A), len(A[0]) if A else 0
    n_groups = len(B)
    groups_of = [[g for g in range(n_groups) if B[g][u]] for u in range(n_users)]
    selected = [[v for v in range(n_users) if S[g][v]] for g in range(n_groups)]

    @lru_cache(maxsize=None)
    def walks(u: int, remaining: int) -> tuple:
        c: Counter = Counter()
        if remaining == 1:
            for i in range(n_items):
                if A[u][i]:
                    c[i] += 1
        else:
            for g in groups_of[u]:
                for v in selected[g]:
                    c.update(dict(walks(v, remaining - 1)))
        return tuple(sorted(c.items()))

    out = [[0] * n_items for _ in range(n_users)]
    for u in range(n_users):
        for i, n in walks(u, h):
            out[u][i] = n
    return out


def naive_hr(ranked, positive, k):
    top = ranked[:k]
    return 1 if positive in top else 0


def naive_ndcg(ranked, positive, k):
    dcg = 0.0
    for pos, item in enumerate(ranked[:k]):
        if item == positive:
            dcg += 1.0 / math.log(pos + 2, 2)
    return dcg  # ideal DCG with one relevant item is 1


def jaccard_neighbors(item_sets: dict[str, set], g: str, top_k: int) -> list[str]:
    scored = []
    for q, items in item_sets.items():
        if q == g:
            continue
        inter = len(item_sets[g] & items)
        if inter == 0:
            continue
        scored.append((-inter / len(item_sets[g] | items), q))
    return [q for _, q in sorted(scored)[:top_k]]
