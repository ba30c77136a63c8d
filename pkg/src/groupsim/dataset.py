"""Catalog and interaction loading, leave-one-out splits and candidate sampling.

Input files are UTF-8 TSV without a header row::

    items.tsv        item_id <TAB> description
    user_item.tsv    user_id <TAB> item_id [<TAB> timestamp]
    group_item.tsv   group_id <TAB> item_id [<TAB> timestamp]
    group_user.tsv   group_id <TAB> user_id

Users are every id seen in ``user_item.tsv`` or ``group_user.tsv``; groups are
defined by ``group_user.tsv`` so that every group has at least one member.
"""

from __future__ import annotations

import hashlib
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

ITEMS_FILE = "items.tsv"
USER_ITEM_FILE = "user_item.tsv"
GROUP_ITEM_FILE = "group_item.tsv"
GROUP_USER_FILE = "group_user.tsv"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class DataPaths:
    items: Path
    user_item: Path
    group_item: Path
    group_user: Path

    @classmethod
    def from_dir(cls, data_dir: str | Path) -> "DataPaths":
        d = Path(data_dir)
        return cls(d / ITEMS_FILE, d / USER_ITEM_FILE, d / GROUP_ITEM_FILE, d / GROUP_USER_FILE)

    def all(self) -> tuple[Path, ...]:
        return (self.items, self.user_item, self.group_item, self.group_user)


@dataclass(frozen=True)
class Catalog:
    """Id universes plus item descriptions. Ids are kept sorted; position is the matrix index."""

    users: tuple[str, ...]
    items: tuple[str, ...]
    groups: tuple[str, ...]
    item_text: Mapping[str, str]
    duplicate_count: int = 0
    user_index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    item_index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    group_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("users", "items", "groups"):
            ids = getattr(self, name)
            if len(set(ids)) != len(ids):
                raise DataError(f"duplicate ids in catalog {name}")
            object.__setattr__(self, name, tuple(sorted(ids)))
        if not self.items:
            raise DataError("no items")
        missing = set(self.item_text) - set(self.items)
        if missing:
            raise DataError(f"item_text references unknown items: {sorted(missing)[:5]}")
        for item in self.items:
            if not self.item_text.get(item, "").strip():
                raise DataError(f"item {item} has an empty description")
        object.__setattr__(self, "user_index", {u: k for k, u in enumerate(self.users)})
        object.__setattr__(self, "item_index", {i: k for k, i in enumerate(self.items)})
        object.__setattr__(self, "group_index", {g: k for k, g in enumerate(self.groups)})


@dataclass(frozen=True)
class InteractionStore:
    """Boolean relations as 0/1 int64 CSR matrices.

    ``group_sequences`` keeps each group's distinct items in interaction order
    (timestamp when every row of the file carries one, file order otherwise);
    it drives the leave-one-out split.
    """

    catalog: Catalog
    X: sp.csr_matrix  # users x items
    Y: sp.csr_matrix  # groups x items
    B: sp.csr_matrix  # groups x users
    group_sequences: Mapping[str, tuple[str, ...]]

    def group_items(self, group: str) -> list[str]:
        row = self.Y.getrow(self.catalog.group_index[group])
        return [self.catalog.items[j] for j in sorted(row.indices)]

    def user_items(self, user: str) -> list[str]:
        row = self.X.getrow(self.catalog.user_index[user])
        return [self.catalog.items[j] for j in sorted(row.indices)]

    def members(self, group: str) -> list[str]:
        row = self.B.getrow(self.catalog.group_index[group])
        return [self.catalog.users[j] for j in sorted(row.indices)]

    def groups_of(self, user: str) -> list[str]:
        col = self.B.getcol(self.catalog.user_index[user]).tocoo()
        return [self.catalog.groups[j] for j in sorted(col.row)]


@dataclass(frozen=True)
class TestCase:
    group: str
    positive: str
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class EvaluationSplit:
    train: InteractionStore
    test_cases: tuple[TestCase, ...]
    held_out: Mapping[str, str]  # group -> held-out item

    def case_for(self, group: str) -> TestCase:
        for case in self.test_cases:
            if case.group == group:
                return case
        raise KeyError(group)

    def manifest(self) -> dict:
        """JSON-ready description of the split (held-out pairs and candidate lists)."""
        return {
            "test_cases": [
                {"group": c.group, "positive": c.positive, "candidates": list(c.candidates)}
                for c in self.test_cases
            ],
        }


def _read_tsv(
    path: Path, min_cols: int, max_cols: int, required: int = 2
) -> list[tuple[int, list[str]]]:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if not (min_cols <= len(parts) <= max_cols) or any(not p.strip() for p in parts[:required]):
                raise DataError(f"{path}:{lineno}: malformed line {line!r}")
            rows.append((lineno, [p.strip() for p in parts]))
    return rows


def load_catalog(paths: DataPaths) -> Catalog:
    item_text: dict[str, str] = {}
    duplicates = 0
    for _, (item, text) in _read_tsv(paths.items, 2, 2, required=1):
        if item in item_text:
            duplicates += 1
            continue
        if not text:
            raise DataError(f"{paths.items}: item {item} has an empty description")
        item_text[item] = text
    if not item_text:
        raise DataError("no items")
    if duplicates:
        logger.warning("%s: %d duplicate item ids ignored", paths.items, duplicates)

    users = {parts[0] for _, parts in _read_tsv(paths.user_item, 2, 3)}
    groups = set()
    for _, parts in _read_tsv(paths.group_user, 2, 2):
        groups.add(parts[0])
        users.add(parts[1])
    return Catalog(
        users=tuple(users), items=tuple(item_text), groups=tuple(groups),
        item_text=item_text, duplicate_count=duplicates,
    )


def _ordered(rows: list[tuple[int, list[str]]]) -> list[tuple[int, list[str]]]:
    timed = bool(rows) and all(len(parts) == 3 for _, parts in rows)
    if not timed:
        return rows
    try:
        return sorted(rows, key=lambda r: (float(r[1][2]), r[0]))
    except ValueError:
        # non-numeric timestamps (ISO strings) sort lexicographically
        return sorted(rows, key=lambda r: (r[1][2], r[0]))


def _boolean_matrix(coords: Iterable[tuple[int, int]], shape: tuple[int, int]) -> sp.csr_matrix:
    coords = sorted(set(coords))
    if coords:
        r, c = zip(*coords)
    else:
        r, c = (), ()
    data = np.ones(len(coords), dtype=np.int64)
    return sp.csr_matrix((data, (np.array(r, dtype=np.int64), np.array(c, dtype=np.int64))), shape=shape)


def build_store(
    catalog: Catalog,
    user_items: Iterable[tuple[str, str]],
    group_items: Sequence[tuple[str, str]],
    memberships: Iterable[tuple[str, str]],
) -> InteractionStore:
    """Assemble a store from id pairs; ``group_items`` must already be in interaction order."""
    def idx(mapping: Mapping[str, int], key: str, kind: str, source: str) -> int:
        try:
            return mapping[key]
        except KeyError:
            raise DataError(f"unknown {kind} {key} in {source}") from None

    X = _boolean_matrix(
        ((idx(catalog.user_index, u, "user", "user_item"), idx(catalog.item_index, i, "item", "user_item"))
         for u, i in user_items),
        (len(catalog.users), len(catalog.items)),
    )
    sequences: dict[str, list[str]] = {}
    y_coords = []
    for g, i in group_items:
        y_coords.append((idx(catalog.group_index, g, "group", "group_item"),
                         idx(catalog.item_index, i, "item", "group_item")))
        seq = sequences.setdefault(g, [])
        if i in seq:
            seq.remove(i)  # a repeat moves the item to its latest position
        seq.append(i)
    Y = _boolean_matrix(y_coords, (len(catalog.groups), len(catalog.items)))
    B = _boolean_matrix(
        ((idx(catalog.group_index, g, "group", "group_user"), idx(catalog.user_index, u, "user", "group_user"))
         for g, u in memberships),
        (len(catalog.groups), len(catalog.users)),
    )
    sizes = np.asarray(B.sum(axis=1)).ravel()
    empty = [catalog.groups[k] for k in np.flatnonzero(sizes == 0)]
    if empty:
        raise DataError(f"groups without members: {empty[:5]}")
    return InteractionStore(catalog, X, Y, B, {g: tuple(s) for g, s in sequences.items()})


def load_interactions(catalog: Catalog, paths: DataPaths) -> InteractionStore:
    def pairs(path: Path, max_cols: int) -> list[tuple[str, str]]:
        rows = _read_tsv(path, 2, max_cols)
        return [(p[0], p[1]) for _, p in _ordered(rows)]

    try:
        return build_store(
            catalog,
            pairs(paths.user_item, 3),
            pairs(paths.group_item, 3),
            pairs(paths.group_user, 2),
        )
    except DataError as exc:
        msg = str(exc)
        for key, path in (("user_item", paths.user_item), ("group_item", paths.group_item),
                          ("group_user", paths.group_user)):
            msg = msg.replace(f"in {key}", f"in {path}")
        raise DataError(msg) from None


def leave_one_out_split(
    store: InteractionStore,
    order_key: Callable[[str, str], object] | None = None,
) -> EvaluationSplit:
    """Hold out each group's last interaction.

    Groups with a single interaction stay in training and get no test case.
    ``order_key(group, item)`` overrides the stored interaction order.
    """
    cat = store.catalog
    held_out: dict[str, str] = {}
    cases = []
    for g in cat.groups:
        seq = list(store.group_sequences.get(g, ()))
        if order_key is not None:
            seq.sort(key=lambda i: order_key(g, i))
        if len(seq) < 2:
            continue
        held_out[g] = seq[-1]
        cases.append(TestCase(g, seq[-1], (seq[-1],)))

    Y = store.Y.tolil(copy=True)
    for g, i in held_out.items():
        Y[cat.group_index[g], cat.item_index[i]] = 0
    Y = Y.tocsr()
    Y.eliminate_zeros()
    sequences = {
        g: tuple(i for i in seq if held_out.get(g) != i)
        for g, seq in store.group_sequences.items()
    }
    train = InteractionStore(cat, store.X, Y, store.B, sequences)
    return EvaluationSplit(train, tuple(cases), held_out)


def case_rng(seed: int, group: str) -> np.random.Generator:
    """Independent stream per test case, stable under reordering of groups."""
    return np.random.default_rng([seed, zlib.crc32(group.encode("utf-8"))])


def sample_candidates(split: EvaluationSplit, n_negatives: int, seed: int) -> EvaluationSplit:
    if n_negatives < 1:
        raise ValueError("n_negatives must be >= 1")
    cat = split.train.catalog
    cases = []
    for case in split.test_cases:
        seen = set(split.train.group_items(case.group)) | {case.positive}
        pool = [i for i in cat.items if i not in seen]
        rng = case_rng(seed, case.group)
        if len(pool) < n_negatives:
            logger.warning(
                "group %s: only %d negatives available (wanted %d)", case.group, len(pool), n_negatives
            )
            negatives = pool
        else:
            picks = rng.choice(len(pool), size=n_negatives, replace=False)
            negatives = [pool[k] for k in sorted(picks)]
        candidates = negatives + [case.positive]
        order = rng.permutation(len(candidates))
        cases.append(TestCase(case.group, case.positive, tuple(candidates[k] for k in order)))
    return EvaluationSplit(split.train, tuple(cases), split.held_out)


def apply_manifest(store: InteractionStore, manifest: Mapping) -> EvaluationSplit:
    """Rebuild a split from full data plus a stored manifest."""
    split = leave_one_out_split(store)
    cases = tuple(
        TestCase(c["group"], c["positive"], tuple(c["candidates"])) for c in manifest["test_cases"]
    )
    expected = {c.group: c.positive for c in cases}
    if expected != dict(split.held_out):
        raise DataError("split manifest does not match the interaction data")
    return EvaluationSplit(split.train, cases, split.held_out)


def data_digest(paths: DataPaths) -> str:
    h = hashlib.sha256()
    for p in paths.all():
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()
