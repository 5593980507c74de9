"""Power-set-labeled training examples and reference/query ranking tasks."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import embed
from .corpus import Corpus
from .embed import EmbeddingTable
from .graph import (
    RelationalGraph,
    ancestors,
    descendant_leaves,
    lowest_common_abstractions,
)
from .kernels import cosine_distances

log = logging.getLogger(__name__)

QUERY_QUANTILES = (0.02, 0.25, 0.50, 0.75, 0.98)


@dataclass
class SubsetTarget:
    nodes: tuple[str, ...]  # sorted abstraction node ids
    embedding: np.ndarray  # mean of the target nodes' vectors


@dataclass
class TrainingExample:
    video_ids: list[str]
    subset_targets: dict[int, SubsetTarget]  # bitmask (bit i = video i) -> target


@dataclass
class RankingTask:
    task_id: str
    abstraction_ids: tuple[str, ...]
    reference_ids: list[str]
    reference_vector: np.ndarray
    query_ids: list[str]  # served order (seeded shuffle)
    query_distances: list[float]  # aligned with query_ids
    ground_truth_order: list[int]  # indices into query_ids, ascending distance
    is_vigilance: bool = False
    planted_similar_id: str | None = None
    planted_dissimilar_id: str | None = None


def subset_masks(n: int):
    return range(1, 1 << n)


def _subset_target(
    g: RelationalGraph,
    emb: EmbeddingTable,
    member_labels: list[tuple[str, ...]],
) -> SubsetTarget:
    if len(member_labels) == 1:
        nodes = tuple(sorted(set(member_labels[0])))
    else:
        union = set().union(*member_labels)
        nodes = tuple(lowest_common_abstractions(g, union))
    vec = np.mean([emb[n] for n in nodes], axis=0)
    return SubsetTarget(nodes=nodes, embedding=vec)


def make_subset_targets(
    g: RelationalGraph,
    emb: EmbeddingTable,
    labels_per_video: list[tuple[str, ...]],
) -> dict[int, SubsetTarget]:
    n = len(labels_per_video)
    targets = {}
    for mask in subset_masks(n):
        members = [labels_per_video[i] for i in range(n) if mask >> i & 1]
        targets[mask] = _subset_target(g, emb, members)
    return targets


def sample_training_examples(
    g: RelationalGraph,
    corpus: Corpus,
    emb: EmbeddingTable,
    n: int = 4,
    count: int = 10_000,
    seed: int = 0,
    split: str = "train",
):
    """Yield power-set-labeled examples, deterministically for a given seed.

    Internal nodes are visited round-robin; under each, n leaf classes are
    drawn uniformly (with replacement only when fewer than n leaves hold
    videos), then one video per class from the requested split.
    """
    rng = np.random.default_rng(seed)
    eligible = []
    skipped = 0
    for node_id in g.internal_ids:
        leaves = [
            l for l in descendant_leaves(g, node_id) if corpus.ids_with_label(l, split)
        ]
        if leaves:
            eligible.append((node_id, leaves))
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d internal nodes with no %s videos", skipped, split)
    if not eligible:
        raise ValueError(f"no internal node has {split} videos")

    produced = 0
    for node_id, leaves in itertools.cycle(eligible):
        if produced >= count:
            return
        replace = len(leaves) < n
        classes = [leaves[i] for i in rng.choice(len(leaves), size=n, replace=replace)]
        video_ids = []
        for leaf in classes:
            pool = corpus.ids_with_label(leaf, split)
            video_ids.append(pool[rng.integers(len(pool))])
        labels = [corpus.records[v].labels for v in video_ids]
        yield TrainingExample(
            video_ids=video_ids,
            subset_targets=make_subset_targets(g, emb, labels),
        )
        produced += 1


def _quantile_indices(pool_size: int, quantiles=QUERY_QUANTILES) -> list[int]:
    """Distinct candidate indices at the given distance quantiles."""
    if pool_size < len(quantiles):
        raise ValueError(f"candidate pool of {pool_size} cannot yield 5 queries")
    picked: list[int] = []
    for q in quantiles:
        idx = int(round(q * (pool_size - 1)))
        while idx in picked and idx < pool_size - 1:
            idx += 1
        while idx in picked:
            idx -= 1
        picked.append(idx)
    return picked


def build_ranking_task(
    g: RelationalGraph,
    corpus: Corpus,
    emb: EmbeddingTable,
    n_reference: int,
    seed: int,
    split: str = "test",
    task_id: str | None = None,
) -> RankingTask:
    """Reference set of N videos under one abstraction; five queries spread
    across the cosine-distance quantiles of the candidate pool."""
    rng = np.random.default_rng(seed)
    split_ids = corpus.split_ids(split)
    eligible = []
    for node_id in g.internal_ids:
        leaves = [
            l for l in descendant_leaves(g, node_id) if corpus.ids_with_label(l, split)
        ]
        n_videos = sum(len(corpus.ids_with_label(l, split)) for l in leaves)
        if leaves and n_videos >= n_reference and len(split_ids) - n_reference >= 5:
            eligible.append((node_id, leaves))
    if not eligible:
        raise ValueError("no abstraction node has enough videos for a ranking task")
    node_id, leaves = eligible[rng.integers(len(eligible))]

    replace = len(leaves) < n_reference
    classes = [
        leaves[i] for i in rng.choice(len(leaves), size=n_reference, replace=replace)
    ]
    reference_ids: list[str] = []
    for leaf in classes:
        pool = [
            v for v in corpus.ids_with_label(leaf, split) if v not in reference_ids
        ]
        if not pool:
            pool = corpus.ids_with_label(leaf, split)
        reference_ids.append(pool[rng.integers(len(pool))])

    ref_video_vecs = [
        embed.video_embedding(corpus.records[v].labels, emb) for v in reference_ids
    ]
    reference_vector = np.mean(ref_video_vecs + [emb[node_id]], axis=0)

    candidates = [v for v in split_ids if v not in set(reference_ids)]
    cand_vecs = np.stack(
        [embed.video_embedding(corpus.records[v].labels, emb) for v in candidates]
    )
    dists = cosine_distances(reference_vector, cand_vecs)
    order = sorted(range(len(candidates)), key=lambda i: (dists[i], candidates[i]))
    picked = [order[i] for i in _quantile_indices(len(candidates))]
    picked_ids = [candidates[i] for i in picked]
    picked_dists = [float(dists[i]) for i in picked]

    served = list(rng.permutation(len(picked_ids)))
    query_ids = [picked_ids[i] for i in served]
    query_distances = [picked_dists[i] for i in served]
    gt = sorted(range(5), key=lambda i: (query_distances[i], query_ids[i]))
    return RankingTask(
        task_id=task_id or f"task-{node_id}-{seed}",
        abstraction_ids=(node_id,),
        reference_ids=reference_ids,
        reference_vector=reference_vector,
        query_ids=query_ids,
        query_distances=query_distances,
        ground_truth_order=gt,
    )


def build_vigilance_task(
    g: RelationalGraph,
    corpus: Corpus,
    emb: EmbeddingTable,
    n_reference: int,
    seed: int,
    split: str = "test",
    task_id: str | None = None,
) -> RankingTask:
    """Ranking task with an unambiguous extreme at each end: one query
    sharing the reference labels, one from a disjoint root subtree."""
    base = build_ranking_task(
        g, corpus, emb, n_reference, seed, split=split, task_id=task_id
    )
    rng = np.random.default_rng(seed + 1)
    ref_labels = set()
    for v in base.reference_ids:
        ref_labels.update(corpus.records[v].labels)
    taken = set(base.reference_ids)

    same_pool = [
        v
        for v in corpus.split_ids(split)
        if v not in taken and set(corpus.records[v].labels) & ref_labels
    ]
    ref_anc = set()
    for l in ref_labels:
        ref_anc |= (ancestors(g, l) | {l}) - set(g.roots)
    far_pool = []
    for v in corpus.split_ids(split):
        if v in taken:
            continue
        labels = corpus.records[v].labels
        anc = set()
        for l in labels:
            anc |= (ancestors(g, l) | {l}) - set(g.roots)
        if not anc & ref_anc:
            far_pool.append(v)
    if not same_pool or not far_pool:
        raise ValueError("graph/corpus cannot support a vigilance round")

    def dist(v):
        vec = embed.video_embedding(corpus.records[v].labels, emb)
        return float(embed.cosine_distance(base.reference_vector, vec))

    # Extremes of their pools, so no other query can beat either plant.
    similar = min(same_pool, key=lambda v: (dist(v), v))
    dissimilar = max(far_pool, key=lambda v: (dist(v), v))
    middle_pool = sorted(
        v
        for v in corpus.split_ids(split)
        if v not in taken
        and v not in (similar, dissimilar)
        and dist(similar) < dist(v) < dist(dissimilar)
    )
    if len(middle_pool) < 3:
        raise ValueError("graph/corpus cannot support a vigilance round")
    middle = [
        middle_pool[i] for i in rng.choice(len(middle_pool), size=3, replace=False)
    ]

    picked = [similar] + middle + [dissimilar]
    served = list(rng.permutation(5))
    query_ids = [picked[i] for i in served]
    dists = [dist(v) for v in query_ids]
    gt = sorted(range(5), key=lambda i: (dists[i], query_ids[i]))
    return RankingTask(
        task_id=(task_id or base.task_id) + "-vigilance",
        abstraction_ids=base.abstraction_ids,
        reference_ids=base.reference_ids,
        reference_vector=base.reference_vector,
        query_ids=query_ids,
        query_distances=dists,
        ground_truth_order=gt,
        is_vigilance=True,
        planted_similar_id=similar,
        planted_dissimilar_id=dissimilar,
    )


# --- serialization ---------------------------------------------------------


def example_to_doc(ex: TrainingExample) -> dict:
    return {
        "video_ids": ex.video_ids,
        "subset_targets": {
            str(mask): {
                "nodes": list(t.nodes),
                "embedding": [float(c) for c in t.embedding],
            }
            for mask, t in sorted(ex.subset_targets.items())
        },
    }


def example_from_doc(doc: dict) -> TrainingExample:
    return TrainingExample(
        video_ids=list(doc["video_ids"]),
        subset_targets={
            int(mask): SubsetTarget(
                nodes=tuple(t["nodes"]),
                embedding=np.array(t["embedding"], dtype=np.float64),
            )
            for mask, t in doc["subset_targets"].items()
        },
    )


def save_examples(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(example_to_doc(ex), sort_keys=True) + "\n")


def load_examples(path) -> list[TrainingExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(example_from_doc(json.loads(line)))
    return out


def task_to_doc(task: RankingTask) -> dict:
    return {
        "task_id": task.task_id,
        "abstraction_ids": list(task.abstraction_ids),
        "reference_ids": task.reference_ids,
        "reference_vector": [float(c) for c in task.reference_vector],
        "query_ids": task.query_ids,
        "query_distances": task.query_distances,
        "ground_truth_order": task.ground_truth_order,
        "is_vigilance": task.is_vigilance,
        "planted_similar_id": task.planted_similar_id,
        "planted_dissimilar_id": task.planted_dissimilar_id,
    }


def task_from_doc(doc: dict) -> RankingTask:
    return RankingTask(
        task_id=doc["task_id"],
        abstraction_ids=tuple(doc["abstraction_ids"]),
        reference_ids=list(doc["reference_ids"]),
        reference_vector=np.array(doc["reference_vector"], dtype=np.float64),
        query_ids=list(doc["query_ids"]),
        query_distances=[float(d) for d in doc["query_distances"]],
        ground_truth_order=list(doc["ground_truth_order"]),
        is_vigilance=bool(doc.get("is_vigilance", False)),
        planted_similar_id=doc.get("planted_similar_id"),
        planted_dissimilar_id=doc.get("planted_dissimilar_id"),
    )


def save_tasks(tasks, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in tasks:
            f.write(json.dumps(task_to_doc(t), sort_keys=True) + "\n")


def load_tasks(path) -> list[RankingTask]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(task_from_doc(json.loads(line)))
    return out
