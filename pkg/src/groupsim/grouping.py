"""Group topics (own items, similar groups, fused) and leader selection."""

from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np
import scipy.sparse as sp

from .dataset import Catalog, InteractionStore
from .jsonio import read_json, safe_name, write_json
from .llm import LLMClient
from .metapath import item_lines

logger = logging.getLogger(__name__)

NO_TOPIC = "no observable topic"
DEFAULT_NEIGHBORS = 5
TIE_TOLERANCE = 1e-12


class EmbedderUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class GroupContext:
    group_id: str
    intra_topic: str
    inter_topic: str
    topic: str
    neighbors: tuple[str, ...]
    leader: str | None = None

    def to_json(self) -> dict:
        doc = {
            "group_id": self.group_id,
            "intra_topic": self.intra_topic,
            "inter_topic": self.inter_topic,
            "topic": self.topic,
            "neighbors": list(self.neighbors),
        }
        if self.leader is not None:
            doc["leader"] = self.leader
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "GroupContext":
        return cls(
            doc["group_id"], doc["intra_topic"], doc["inter_topic"], doc["topic"],
            tuple(doc["neighbors"]), doc.get("leader"),
        )


class GroupContextStore:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path(self, group: str) -> Path:
        return self.directory / f"{safe_name(group)}.json"

    def save(self, ctx: GroupContext, **stamp: str) -> None:
        write_json(self.path(ctx.group_id), {**ctx.to_json(), **stamp})

    def load(self, group: str) -> GroupContext:
        return GroupContext.from_json(read_json(self.path(group)))

    def exists(self) -> bool:
        return self.directory.is_dir() and any(self.directory.glob("*.json"))


# -- topics -----------------------------------------------------------------

def intra_topic(group: str, items: Sequence[str], catalog: Catalog, client: LLMClient) -> str:
    """Topic from the group's own items; item order does not matter."""
    if not items:
        return NO_TOPIC
    return client.ask("intra_topic", group_id=group, items=item_lines(sorted(set(items)), catalog))


def neighbor_groups(
    group: str, Y: sp.spmatrix, groups: Sequence[str], top_k: int = DEFAULT_NEIGHBORS, min_shared: int = 1
) -> list[str]:
    """Groups sharing at least ``min_shared`` items, by Jaccard similarity desc then id asc."""
    Y = sp.csr_matrix(Y)
    g = list(groups).index(group)
    binary = (Y > 0).astype(np.int64)
    shared = np.asarray((binary @ binary[g].T).todense()).ravel()
    sizes = np.asarray(binary.sum(axis=1)).ravel()
    scored = []
    for q in np.flatnonzero(shared >= max(1, min_shared)):
        if q == g:
            continue
        union = sizes[g] + sizes[q] - shared[q]
        scored.append((-(shared[q] / union), groups[q]))
    scored.sort()
    return [gid for _, gid in scored[:top_k]]


def inter_topic(group: str, neighbor_topics: Sequence[tuple[str, str]], client: LLMClient) -> str:
    """Common topic over neighbours' own topics, given in neighbour rank order."""
    lines = [f"- [{gid}]: {text}" for gid, text in neighbor_topics if text != NO_TOPIC]
    if not lines:
        return NO_TOPIC
    return client.ask("inter_topic", group_id=group, neighbor_topics=lines)


def fuse_topic(intra: str, inter: str, client: LLMClient) -> str:
    if inter == NO_TOPIC:
        return intra
    if intra == NO_TOPIC:
        return inter
    return client.ask("topic_fusion", intra=intra, inter=inter)


def recognize_topics(
    store: InteractionStore,
    client: LLMClient,
    top_k: int = DEFAULT_NEIGHBORS,
    min_shared: int = 1,
    workers: int = 1,
) -> dict[str, GroupContext]:
    """All intra topics first, then inter topics and fusion (inter needs the neighbours' intra)."""
    cat = store.catalog
    groups = list(cat.groups)

    def pmap(fn, xs):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(fn, xs))
        return [fn(x) for x in xs]

    intra = dict(zip(groups, pmap(lambda g: intra_topic(g, store.group_items(g), cat, client), groups)))
    neighbors = {g: neighbor_groups(g, store.Y, cat.groups, top_k, min_shared) for g in groups}

    def second_phase(g: str) -> GroupContext:
        inter = inter_topic(g, [(q, intra[q]) for q in neighbors[g]], client)
        return GroupContext(g, intra[g], inter, fuse_topic(intra[g], inter, client), tuple(neighbors[g]))

    return dict(zip(groups, pmap(second_phase, groups)))


# -- embeddings and leaders ------------------------------------------------

class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / norm


class HashEmbedder:
    """Seeded signed feature hashing over lowercase word tokens.

    Deterministic and dependency-free; similar token bags give similar vectors.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _slot(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(
            hashlib.blake2b(f"{self.seed}\x1f{token}".encode("utf-8"), digest_size=8).digest(), "big"
        )
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def raw(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        tokens = re.findall(r"\w+", text.lower()) or ["<empty>"]
        for tok in tokens:
            k, sign = self._slot(tok)
            v[k] += sign
        if not v.any():
            # every token cancelled out; fall back to a fixed direction
            k, sign = self._slot("<cancelled>")
            v[k] = sign
        return v

    def embed(self, text: str) -> np.ndarray:
        return normalize(self.raw(text))


class HttpEmbedder:
    """Text encoder served over HTTP (``{model, input}`` -> ``data[0].embedding``)."""

    def __init__(self, endpoint: str, model: str, api_key: str = "", timeout: float = 30.0,
                 transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def embed(self, text: str) -> np.ndarray:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.endpoint, json={"model": self.model, "input": text}, headers=headers)
            resp.raise_for_status()
            vector = resp.json()["data"][0]["embedding"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise EmbedderUnavailable(f"embedding endpoint {self.endpoint}: {exc}") from exc
        return normalize(np.asarray(vector, dtype=np.float64))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(normalize(a), normalize(b)))


def select_leader(topic_vector: np.ndarray, member_vectors: Mapping[str, np.ndarray]) -> str:
    """Member most similar to the topic; near-ties (1e-12) go to the smallest id."""
    if not member_vectors:
        raise ValueError("group has no members")
    topic = normalize(topic_vector)
    scores = {u: float(np.dot(topic, normalize(v))) for u, v in member_vectors.items()}
    best = max(scores.values())
    return min(u for u, s in scores.items() if s >= best - TIE_TOLERANCE)


def assign_leaders(
    contexts: Mapping[str, GroupContext],
    members: Mapping[str, Sequence[str]],
    keyword_texts: Mapping[str, str],
    embedder: Embedder,
) -> dict[str, GroupContext]:
    cache: dict[str, np.ndarray] = {}

    def vec(text: str) -> np.ndarray:
        if text not in cache:
            cache[text] = embedder.embed(text)
        return cache[text]

    out = {}
    for g, ctx in contexts.items():
        member_vectors = {u: vec(keyword_texts[u]) for u in members[g]}
        out[g] = replace(ctx, leader=select_leader(vec(ctx.topic), member_vectors))
    return out
