"""Word-vector ingestion and embedding propagation up the graph.

Leaves take the mean vector of their name's tokens; every internal node
takes the mean of its direct children's vectors, computed children-first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .graph import RelationalGraph, UnknownNodeError, validate


class EmbeddingError(Exception):
    pass


@dataclass
class WordVectorTable:
    dim: int
    entries: dict[str, np.ndarray]

    def __contains__(self, token: str) -> bool:
        return token in self.entries


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def __getitem__(self, node_id: str) -> np.ndarray:
        try:
            return self.vectors[node_id]
        except KeyError:
            raise UnknownNodeError(f"no embedding for node {node_id!r}") from None


def load_word_vectors(path) -> WordVectorTable:
    """Parse the common text vector format: "<count> <dim>" header then
    one "<token> <c1> ... <cd>" line per token."""
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"malformed header: expected '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError(f"malformed header: {header!r}") from None
        if count < 0 or dim <= 0:
            raise EmbeddingError(f"malformed header values: {count} {dim}")
        for line in f:
            if not line.strip():
                continue
            parts = line.split()
            token = parts[0]
            if token in entries:
                raise EmbeddingError(f"duplicate token: {token!r}")
            if len(parts) - 1 != dim:
                raise EmbeddingError(
                    f"dimension mismatch for {token!r}: got {len(parts) - 1}, want {dim}"
                )
            entries[token] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
    if len(entries) != count:
        raise EmbeddingError(
            f"header declares {count} entries but file holds {len(entries)}"
        )
    return WordVectorTable(dim=dim, entries=entries)


def save_word_vectors(table: WordVectorTable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table.entries)} {table.dim}\n")
        for token in sorted(table.entries):
            comps = " ".join(repr(float(c)) for c in table.entries[token])
            f.write(f"{token} {comps}\n")


def tokenize(name: str) -> list[str]:
    tokens = name.lower().replace("_", " ").split()
    if not tokens:
        raise EmbeddingError(f"name {name!r} yields no tokens")
    return tokens


def _hashed_unit_vector(token: str, dim: int) -> np.ndarray:
    """Deterministic out-of-vocabulary fallback, seeded by the token text."""
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def leaf_embedding(
    name: str, wv: WordVectorTable, oov_fallback: bool = False
) -> np.ndarray:
    """Mean of the token vectors of a category name."""
    tokens = tokenize(name)
    vecs = []
    for t in tokens:
        if t in wv.entries:
            vecs.append(wv.entries[t])
        elif oov_fallback:
            vecs.append(_hashed_unit_vector(t, wv.dim))
        else:
            raise EmbeddingError(f"token {t!r} absent from word vector table")
    return np.mean(vecs, axis=0)


def propagate(g: RelationalGraph, leaf_vectors: dict[str, np.ndarray]) -> EmbeddingTable:
    """Assign every internal node the mean of its direct children's vectors.

    Children are resolved before parents; ties in the reverse topological
    order are broken by node id for reproducible snapshots.
    """
    violations = validate(g)
    if violations:
        raise EmbeddingError(f"graph invalid: {violations[0].kind}: {violations[0].detail}")
    dims = {v.shape for v in leaf_vectors.values()}
    if len(dims) > 1:
        raise EmbeddingError(f"leaf vectors disagree on dimension: {sorted(dims)}")

    vectors: dict[str, np.ndarray] = {}
    for leaf in g.leaf_ids:
        if leaf not in leaf_vectors:
            raise EmbeddingError(f"missing leaf vector for {leaf!r}")
        vectors[leaf] = np.asarray(leaf_vectors[leaf], dtype=np.float64)
    dim = next(iter(vectors.values())).shape[0] if vectors else 0

    resolved = set(vectors)
    # Kahn over child links, id-ordered at every level.
    level = sorted(
        i for i in g.internal_ids if g.nodes[i].children <= resolved
    )
    while level:
        next_level: set[str] = set()
        for node_id in level:
            children = sorted(g.nodes[node_id].children)
            vectors[node_id] = np.mean([vectors[c] for c in children], axis=0)
            resolved.add(node_id)
        for node_id in g.internal_ids:
            if node_id not in resolved and g.nodes[node_id].children <= resolved:
                next_level.add(node_id)
        level = sorted(next_level)
    return EmbeddingTable(dim=dim, vectors=vectors)


def video_embedding(labels, table: EmbeddingTable) -> np.ndarray:
    """Mean of the embedding vectors of a video's labels."""
    label_list = sorted(set(labels))
    if not label_list:
        raise EmbeddingError("label set must be nonempty")
    return np.mean([table[l] for l in label_list], axis=0)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise EmbeddingError("cosine distance undefined for zero-norm input")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def save_embeddings(table: EmbeddingTable, path) -> None:
    doc = {i: [float(c) for c in v] for i, v in sorted(table.vectors.items())}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    vectors = {i: np.array(v, dtype=np.float64) for i, v in doc.items()}
    dims = {v.shape[0] for v in vectors.values()}
    if len(dims) > 1:
        raise EmbeddingError(f"snapshot dimensions disagree: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    return EmbeddingTable(dim=dim, vectors=vectors)
