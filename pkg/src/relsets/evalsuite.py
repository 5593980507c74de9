"""Task evaluations: abstraction recognition, set completion, odd one out,
plus the graph-lookup and mean-probability baselines and chance levels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import embed
from .corpus import Corpus
from .embed import EmbeddingTable, cosine_distance
from .graph import (
    NoCommonAncestorError,
    RelationalGraph,
    ancestors,
    descendant_leaves,
    lowest_common_abstractions,
)
from .sam import LabelVocab, SamModel
from .sampler import RankingTask


@dataclass
class EvalReport:
    task: str
    n: int
    metrics: dict[str, float]
    items: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if "correlation" in name or name.startswith("rho"):
                assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12, (name, value)
            elif name.startswith("top"):
                assert -1e-12 <= value <= 1.0 + 1e-12, (name, value)

    def to_json(self, path) -> None:
        doc = {
            "task": self.task,
            "n": self.n,
            "metrics": self.metrics,
            "items": self.items,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True, indent=2)
            f.write("\n")

    def to_text(self) -> str:
        keys = sorted(self.metrics)
        width = max(len(k) for k in keys) if keys else 0
        lines = [f"{self.task}  (N = {self.n}, items = {len(self.items)})"]
        for k in keys:
            lines.append(f"  {k:<{width}}  {self.metrics[k]:.4f}")
        return "\n".join(lines)


def report_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text table, one row per report."""
    keys = sorted({k for r in reports for k in r.metrics})
    header = ["task", "N"] + keys
    rows = [header]
    for r in reports:
        rows.append(
            [r.task, str(r.n)]
            + [f"{r.metrics[k]:.4f}" if k in r.metrics else "-" for k in keys]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows
    )


# --- rank correlation -------------------------------------------------------


def spearman_rho(ranks_a, ranks_b) -> float:
    """Spearman's rho for two tie-free rankings of the same items."""
    a = list(ranks_a)
    b = list(ranks_b)
    if sorted(a) != list(range(len(a))) or sorted(b) != list(range(len(b))):
        raise ValueError("inputs must be tie-free rank vectors 0..n-1")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two items")
    d2 = sum((x - y) ** 2 for x, y in zip(a, b))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def ranks_of(values, tiebreak_keys=None) -> list[int]:
    """Rank positions (0 = smallest) of values; ties broken by key."""
    n = len(values)
    keys = tiebreak_keys if tiebreak_keys is not None else list(range(n))
    order = sorted(range(n), key=lambda i: (values[i], keys[i]))
    ranks = [0] * n
    for pos, i in enumerate(order):
        ranks[i] = pos
    return ranks


# --- abstraction recognition -------------------------------------------------


@dataclass
class EvalSetItem:
    video_ids: list[str]
    target_nodes: tuple[str, ...]


def build_eval_sets(
    g: RelationalGraph,
    corpus: Corpus,
    emb: EmbeddingTable,
    n: int,
    count: int,
    seed: int,
    split: str = "test",
) -> list[EvalSetItem]:
    """N-video sets with ground-truth abstraction nodes, sampled like the
    training stream but over the evaluation split."""
    from .sampler import sample_training_examples

    items = []
    for ex in sample_training_examples(
        g, corpus, emb, n=n, count=count, seed=seed, split=split
    ):
        full = (1 << n) - 1
        items.append(
            EvalSetItem(
                video_ids=ex.video_ids,
                target_nodes=ex.subset_targets[full].nodes,
            )
        )
    return items


def _topk_metrics(ranked_per_item, targets_per_item, ks=(1, 5)):
    metrics = {}
    records = []
    for ranked, targets in zip(ranked_per_item, targets_per_item):
        rec = {"targets": list(targets), "ranked": list(ranked[: max(ks)])}
        for k in ks:
            rec[f"top{k}"] = bool(set(ranked[:k]) & set(targets))
        records.append(rec)
    for k in ks:
        metrics[f"top{k}"] = float(np.mean([r[f"top{k}"] for r in records]))
    return metrics, records


def eval_abstraction(
    model: SamModel, items: list[EvalSetItem], corpus: Corpus
) -> EvalReport:
    """Whole-set top-1/top-5 accuracy; a hit is any ground-truth node."""
    ranked = []
    for item in items:
        features = [corpus.features_of(v) for v in item.video_ids]
        ranked.append(model.predict_topk(features, k=5))
    metrics, records = _topk_metrics(ranked, [i.target_nodes for i in items])
    n = len(items[0].video_ids) if items else 0
    return EvalReport("abstraction/sam", n, metrics, records)


def baseline_graph_lookup(
    predicted_leaves: list[list[str]],
    items: list[EvalSetItem],
    g: RelationalGraph,
) -> EvalReport:
    """Set prediction via LCA of the per-video top-1 leaf predictions."""
    ranked = []
    for leaves in predicted_leaves:
        try:
            ranked.append(lowest_common_abstractions(g, leaves))
        except NoCommonAncestorError:
            ranked.append([])
    metrics, records = _topk_metrics(ranked, [i.target_nodes for i in items])
    n = len(items[0].video_ids) if items else 0
    return EvalReport("abstraction/graph-lookup", n, metrics, records)


def baseline_bce(
    per_video_probs: list[list[np.ndarray]],
    items: list[EvalSetItem],
    vocab: LabelVocab,
) -> EvalReport:
    """Set prediction = nodes ranked by mean probability across the videos."""
    ranked = []
    for probs in per_video_probs:
        mean = np.mean(probs, axis=0)
        order = np.argsort(-mean, kind="stable")
        ranked.append([vocab.ids[i] for i in order[:5]])
    metrics, records = _topk_metrics(ranked, [i.target_nodes for i in items])
    n = len(items[0].video_ids) if items else 0
    return EvalReport("abstraction/bce", n, metrics, records)


def chance_level(frequencies: dict[str, float], k: int) -> float:
    """Sum of the top-k most frequent abstraction-node frequencies."""
    if k > len(frequencies):
        raise ValueError(f"k = {k} exceeds vocabulary of {len(frequencies)}")
    return float(sum(sorted(frequencies.values(), reverse=True)[:k]))


def target_frequencies(items: list[EvalSetItem]) -> dict[str, float]:
    """Distribution over abstraction nodes presented during evaluation.

    Multi-node targets contribute fractionally so the mass sums to one.
    """
    counts: dict[str, float] = {}
    for item in items:
        share = 1.0 / len(item.target_nodes)
        for node in item.target_nodes:
            counts[node] = counts.get(node, 0.0) + share
    total = sum(counts.values())
    return {node: c / total for node, c in counts.items()}


# --- leaf classifier (feeds the graph-lookup baseline) -----------------------


class LeafClassifier:
    """Two-layer softmax classifier over leaf categories."""

    def __init__(self, feature_dim: int, hidden: int, vocab: LabelVocab, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        shapes = {
            "w1": (feature_dim, hidden),
            "b1": (hidden,),
            "w2": (hidden, len(vocab)),
            "b2": (len(vocab),),
        }
        fan = {"w1": feature_dim, "b1": feature_dim, "w2": hidden, "b2": hidden}
        self.tensors = {
            n: rng.uniform(-1 / np.sqrt(fan[n]), 1 / np.sqrt(fan[n]), size=s)
            for n, s in shapes.items()
        }

    def _logits_tape(self, x):
        p = {n: ad.Tensor(v) for n, v in self.tensors.items()}
        hid = ad.relu(ad.affine(ad.Tensor(x), p["w1"], p["b1"]))
        return p, ad.affine(hid, p["w2"], p["b2"])

    def fit(self, features, leaf_ids, epochs=30, lr=0.05, momentum=0.9, seed=0):
        rng = np.random.default_rng(seed)
        velocity = {n: np.zeros_like(v) for n, v in self.tensors.items()}
        targets = [self.vocab.target_distribution([l]) for l in leaf_ids]
        for _ in range(epochs):
            for i in rng.permutation(len(features)):
                p, logits = self._logits_tape(features[i])
                loss = ad.softmax_cross_entropy(logits, targets[i])
                loss.backward()
                for n, w in self.tensors.items():
                    velocity[n] = momentum * velocity[n] + p[n].grad
                    w -= lr * velocity[n]
        return self

    def predict(self, x) -> str:
        _, logits = self._logits_tape(x)
        return self.vocab.ids[int(np.argmax(logits.value))]

    def accuracy(self, features, leaf_ids) -> float:
        hits = sum(self.predict(x) == l for x, l in zip(features, leaf_ids))
        return hits / len(features)


# --- set completion ----------------------------------------------------------


def model_completion_representer(model: SamModel, corpus: Corpus):
    def rep(task: RankingTask):
        ref_feats = [corpus.features_of(v) for v in task.reference_ids]
        ref_vec = model.abstraction_representation(ref_feats)
        qvecs = {
            q: model.abstraction_representation([corpus.features_of(q)])
            for q in task.query_ids
        }
        return ref_vec, qvecs

    return rep


def mean_feature_representer(corpus: Corpus):
    """Baseline: average the raw reference features, compare in feature space."""

    def rep(task: RankingTask):
        ref_vec = np.mean([corpus.features_of(v) for v in task.reference_ids], axis=0)
        qvecs = {q: corpus.features_of(q) for q in task.query_ids}
        return ref_vec, qvecs

    return rep


def oracle_embedding_representer(corpus: Corpus, emb: EmbeddingTable):
    """Ground-truth embeddings; closes the loop with the task generator."""

    def rep(task: RankingTask):
        qvecs = {
            q: embed.video_embedding(corpus.records[q].labels, emb)
            for q in task.query_ids
        }
        return task.reference_vector, qvecs

    return rep


def eval_completion(
    tasks: list[RankingTask], representer, name: str = "completion"
) -> EvalReport:
    """Mean Spearman correlation of the representer's ranking against the
    stored ground-truth order. Ties are broken by query id."""
    rhos = []
    records = []
    for task in tasks:
        ref_vec, qvecs = representer(task)
        dists = [cosine_distance(ref_vec, qvecs[q]) for q in task.query_ids]
        model_ranks = ranks_of(dists, tiebreak_keys=task.query_ids)
        gt_ranks = [0] * 5
        for pos, idx in enumerate(task.ground_truth_order):
            gt_ranks[idx] = pos
        rho = spearman_rho(model_ranks, gt_ranks)
        rhos.append(rho)
        records.append(
            {
                "task_id": task.task_id,
                "rho": rho,
                "model_ranks": model_ranks,
                "ground_truth_ranks": gt_ranks,
            }
        )
    n = len(tasks[0].reference_ids) if tasks else 0
    return EvalReport(name, n, {"rank_correlation": float(np.mean(rhos))}, records)


# --- odd one out -------------------------------------------------------------


@dataclass
class OddOneOutSet:
    video_ids: list[str]
    outlier_index: int
    abstraction_id: str


def build_odd_one_out_sets(
    g: RelationalGraph,
    corpus: Corpus,
    n: int,
    count: int,
    seed: int,
    split: str = "test",
) -> list[OddOneOutSet]:
    """Sets of n videos: n-1 under one abstraction, one from a branch
    sharing no below-root ancestor with the in-set leaves."""
    rng = np.random.default_rng(seed)
    roots = set(g.roots)

    def branch_closure(leaf):
        return (ancestors(g, leaf) | {leaf}) - roots

    nodes = []
    for node_id in g.internal_ids:
        if node_id in roots:
            # Members drawn under a root need not cohere, which would make
            # the planted outlier ambiguous.
            continue
        leaves = [
            l for l in descendant_leaves(g, node_id) if corpus.ids_with_label(l, split)
        ]
        if leaves:
            nodes.append((node_id, leaves))
    if not nodes:
        raise ValueError("no abstraction node has evaluation videos")
    all_leaves = [l for l in g.leaf_ids if corpus.ids_with_label(l, split)]

    sets: list[OddOneOutSet] = []
    attempts = 0
    while len(sets) < count and attempts < 50 * count:
        attempts += 1
        node_id, leaves = nodes[rng.integers(len(nodes))]
        replace = len(leaves) < n - 1
        members = [
            leaves[i] for i in rng.choice(len(leaves), size=n - 1, replace=replace)
        ]
        member_anc = set().union(*(branch_closure(l) for l in members))
        outlier_pool = [l for l in all_leaves if not branch_closure(l) & member_anc]
        if not outlier_pool:
            continue
        outlier_leaf = outlier_pool[rng.integers(len(outlier_pool))]
        video_ids = [
            corpus.ids_with_label(l, split)[
                rng.integers(len(corpus.ids_with_label(l, split)))
            ]
            for l in members
        ]
        outlier_vid = corpus.ids_with_label(outlier_leaf, split)[
            rng.integers(len(corpus.ids_with_label(outlier_leaf, split)))
        ]
        outlier_index = int(rng.integers(n))
        video_ids.insert(outlier_index, outlier_vid)
        sets.append(OddOneOutSet(video_ids, outlier_index, node_id))
    if len(sets) < count:
        raise ValueError("could not place enough disjoint-branch outliers")
    return sets


def model_ooo_representer(model: SamModel, corpus: Corpus):
    def single(video_id):
        return model.abstraction_representation([corpus.features_of(video_id)])

    def rest(video_ids):
        return model.abstraction_representation(
            [corpus.features_of(v) for v in video_ids]
        )

    return single, rest


def oracle_ooo_representer(corpus: Corpus, emb: EmbeddingTable):
    def single(video_id):
        return embed.video_embedding(corpus.records[video_id].labels, emb)

    def rest(video_ids):
        return np.mean([single(v) for v in video_ids], axis=0)

    return single, rest


def eval_odd_one_out(
    sets: list[OddOneOutSet], single_rep, rest_rep, name: str = "odd-one-out"
) -> EvalReport:
    """Score each member by distance to the abstraction of the rest;
    the largest distance is the predicted outlier."""
    records = []
    for s in sets:
        scores = []
        for i, vid in enumerate(s.video_ids):
            others = [v for j, v in enumerate(s.video_ids) if j != i]
            scores.append(cosine_distance(single_rep(vid), rest_rep(others)))
        order = list(np.argsort(-np.array(scores), kind="stable"))
        records.append(
            {
                "video_ids": s.video_ids,
                "outlier_index": s.outlier_index,
                "scores": scores,
                "probabilities": [float(p) for p in ad.softmax(scores)],
                "top1": bool(order[0] == s.outlier_index),
                "top2": bool(s.outlier_index in order[:2]),
            }
        )
    metrics = {
        "top1": float(np.mean([r["top1"] for r in records])),
        "top2": float(np.mean([r["top2"] for r in records])),
    }
    n = len(sets[0].video_ids) if sets else 0
    return EvalReport(name, n, metrics, records)
