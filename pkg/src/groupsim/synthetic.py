"""Synthetic datasets in the TSV layout the loader expects.

Users, groups and items share a handful of latent themes so that profiles,
topics and leaders have structure to pick up.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

THEMES = ("lake", "mountain", "museum", "beach", "food", "temple", "desert", "city")
ADJECTIVES = ("quiet", "famous", "hidden", "scenic", "historic", "lively", "remote", "family")


def make_synthetic(
    out_dir: str | Path,
    n_users: int = 60,
    n_items: int = 120,
    n_groups: int = 30,
    seed: int = 0,
    n_themes: int = 4,
    timestamps: bool = True,
) -> Path:
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    themes = THEMES[: max(1, min(n_themes, len(THEMES)))]

    items = [f"i{k}" for k in range(n_items)]
    item_theme = rng.integers(len(themes), size=n_items)
    by_theme = {t: [i for i, th in zip(items, item_theme) if th == t] for t in range(len(themes))}
    users = [f"u{k}" for k in range(n_users)]
    user_theme = rng.integers(len(themes), size=n_users)

    clock = 0
    with open(out / "items.tsv", "w", encoding="utf-8") as fh:
        for i, th in zip(items, item_theme):
            adj = ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]
            fh.write(f"{i}\t{adj} {themes[th]} destination {i}\n")

    def pick(theme: int, n: int) -> list[str]:
        n_on = max(1, int(round(n * 0.8)))
        pool = by_theme.get(theme) or items
        on = list(rng.choice(pool, size=min(n_on, len(pool)), replace=False))
        off = list(rng.choice(items, size=n - len(on), replace=False)) if n > len(on) else []
        return list(dict.fromkeys(on + off))

    def row(*cols: str) -> str:
        nonlocal clock
        clock += 1
        return "\t".join(cols + ((str(clock),) if timestamps else ())) + "\n"

    with open(out / "user_item.tsv", "w", encoding="utf-8") as fh:
        for u, th in zip(users, user_theme):
            for i in pick(int(th), int(rng.integers(2, 8))):
                fh.write(row(u, i))

    groups = [f"g{k}" for k in range(n_groups)]
    with open(out / "group_user.tsv", "w", encoding="utf-8") as gu, \
            open(out / "group_item.tsv", "w", encoding="utf-8") as gi:
        for g in groups:
            theme = int(rng.integers(len(themes)))
            same = [u for u, th in zip(users, user_theme) if th == theme] or users
            size = int(rng.integers(2, 6))
            members = set(rng.choice(same, size=min(size - 1, len(same)), replace=False))
            members.add(users[int(rng.integers(n_users))])
            for u in sorted(members):
                gu.write(f"{g}\t{u}\n")
            for i in pick(theme, int(rng.integers(2, 7))):
                gi.write(row(g, i))
    return out
