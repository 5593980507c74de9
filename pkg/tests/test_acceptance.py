"""End-to-end acceptance checks, one test per criterion.

Each test prints a single [PASS]/[FAIL] line naming the criterion, then
asserts. The heavier runs (directional comparison, trained odd one out)
use module-scoped fixtures so their worlds are built once.
"""

import itertools
import time

import numpy as np
import pytest

from relsets import embed
from relsets import evalsuite as ev
from relsets.corpus import gen_synthetic_corpus
from relsets.graph import (
    NoCommonAncestorError,
    build_graph,
    lowest_common_abstractions,
)
from relsets.sam import (
    LabelVocab,
    SamConfig,
    backward,
    forward_set,
    init_params,
    loss,
    train,
)
from relsets.sampler import (
    SubsetTarget,
    build_ranking_task,
    example_to_doc,
    sample_training_examples,
    task_to_doc,
)

from conftest import (
    COOKING_SPECS,
    bf_lowest_common_abstractions,
    random_dag_specs,
)


@pytest.fixture
def verdict(capsys):
    def _verdict(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f" ({detail})"
        with capsys.disabled():
            print(line)
        assert ok, line

    return _verdict


def forty_leaf_specs():
    """Three abstraction levels over 40 leaves: root, 4 branches, 8 mids."""
    specs = [("root", "root", [])]
    for b in range(4):
        specs.append((f"b{b}", f"b{b}", ["root"]))
        for m in range(2):
            mid = f"b{b}_m{m}"
            specs.append((mid, mid, [f"b{b}"]))
            for l in range(5):
                specs.append((f"{mid}_l{l}", f"{mid}_l{l}", [mid]))
    return specs


@pytest.fixture(scope="module")
def world40():
    g = build_graph(forty_leaf_specs())
    rng = np.random.default_rng(0)
    dim = 16
    leaf_vectors = {}
    for leaf in g.leaf_ids:
        v = rng.standard_normal(dim)
        leaf_vectors[leaf] = v / np.linalg.norm(v)
    emb = embed.propagate(g, leaf_vectors)
    # noise calibrated so a leaf classifier lands near 70% top-1
    corpus = gen_synthetic_corpus(g, per_leaf=60, feature_dim=dim, noise=0.28, seed=1)
    return g, emb, corpus


@pytest.fixture(scope="module")
def ooo_world():
    """Orthogonal branch anchors, tiny leaf-specific offsets, noiseless videos."""
    specs = [("root", "root", [])]
    leaf_vectors = {}
    dim = 16
    k = 0
    for b in range(4):
        specs.append((f"b{b}", f"b{b}", ["root"]))
        for j in range(3):
            leaf = f"b{b}_l{j}"
            specs.append((leaf, leaf, [f"b{b}"]))
            vec = np.zeros(dim)
            vec[b] = 1.0
            vec[4 + k] = 0.1
            leaf_vectors[leaf] = vec
            k += 1
    g = build_graph(specs)
    emb = embed.propagate(g, leaf_vectors)
    corpus = gen_synthetic_corpus(g, per_leaf=20, feature_dim=8, noise=0.0, seed=3)
    return g, emb, corpus


def test_lca_oracle_equivalence(verdict):
    started = time.perf_counter()
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(1000):
        g = build_graph(random_dag_specs(rng, int(rng.integers(5, 201))))
        ids = sorted(g.nodes)
        for _ in range(3):
            k = int(rng.integers(2, 5))
            query = [ids[i] for i in rng.choice(len(ids), size=k, replace=False)]
            expected = bf_lowest_common_abstractions(g, query)
            try:
                got = lowest_common_abstractions(g, query)
            except NoCommonAncestorError:
                got = None
            assert got == expected, (query, got, expected)
            checked += 1

    cooking = build_graph(COOKING_SPECS)
    assert lowest_common_abstractions(
        cooking, ["making_a_cake", "baking_cookies"]
    ) == ["baking"]
    assert lowest_common_abstractions(cooking, ["baking_cookies", "frying"]) == [
        "cooking"
    ]
    elapsed = time.perf_counter() - started
    verdict(
        "LCA matches brute-force oracle on 1,000 random DAGs + named examples",
        elapsed < 60.0,
        f"{checked} queries in {elapsed:.1f}s",
    )


def test_propagation_matches_recursive_oracle(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        g = build_graph(random_dag_specs(rng, int(rng.integers(5, 80))))
        leaf_vectors = {l: rng.standard_normal(8) for l in g.leaf_ids}
        table = embed.propagate(g, leaf_vectors)

        memo = {}

        def oracle(node):
            if node in memo:
                return memo[node]
            if g.nodes[node].is_leaf:
                out = leaf_vectors[node]
            else:
                kids = sorted(g.nodes[node].children)
                out = np.mean([oracle(k) for k in kids], axis=0)
            memo[node] = out
            return out

        for node in g.nodes:
            expected = oracle(node)
            scale = max(np.abs(expected).max(), 1.0)
            worst = max(worst, np.abs(table[node] - expected).max() / scale)

        again = embed.propagate(g, leaf_vectors)
        for node in g.nodes:
            np.testing.assert_array_equal(again[node], table[node])
    verdict(
        "Propagation equals recursive averaging on 100 DAGs and re-runs bitwise",
        worst <= 1e-9,
        f"worst relative error {worst:.2e}",
    )


def test_permutation_invariance(verdict):
    cfg = SamConfig(
        feature_dim=6, num_classes=8, embed_dim=6, hidden=16, max_set_size=4, seed=0
    )
    params = init_params(cfg)
    rng = np.random.default_rng(11)
    worst = 0.0
    for case in range(100):
        n = 2 + case % 3
        feats = [rng.standard_normal(6) for _ in range(n)]
        base = forward_set(params, feats)
        for perm in itertools.permutations(range(n)):
            out = forward_set(params, [feats[i] for i in perm])
            for mask, rep in base.subset_reps.items():
                members = [i for i in range(n) if mask >> i & 1]
                pmask = sum(1 << perm.index(i) for i in members)
                diff = np.abs(out.subset_reps[pmask] - rep).max()
                worst = max(worst, diff / max(np.abs(rep).max(), 1.0))
            diff = np.abs(out.set_representation - base.set_representation).max()
            worst = max(worst, diff / max(np.abs(base.set_representation).max(), 1.0))
    verdict(
        "Subset outputs and set representation permutation-invariant on 100 inputs",
        worst <= 1e-6,
        f"worst relative deviation {worst:.2e}",
    )


def test_gradient_check(verdict):
    node_pool = tuple(f"c{i}" for i in range(6))
    worst = 0.0
    step = 1e-5  # small enough to keep relu kinks out of the stencil
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(1, 4))
        cfg = SamConfig(
            feature_dim=int(rng.integers(2, 5)),
            num_classes=6,
            embed_dim=int(rng.integers(2, 5)),
            hidden=int(rng.integers(3, 7)),
            max_set_size=max(n, int(rng.integers(1, 4))),
            seed=seed,
        )
        vocab = LabelVocab(node_pool)
        params = init_params(cfg)
        for name in params.tensors:
            params.tensors[name] = 1e-2 * rng.standard_normal(
                params.tensors[name].shape
            )
        feats = [rng.standard_normal(cfg.feature_dim) for _ in range(n)]
        targets = {}
        for mask in range(1, 1 << n):
            nodes = tuple(
                sorted(rng.choice(node_pool, size=int(rng.integers(1, 3)), replace=False))
            )
            targets[mask] = SubsetTarget(
                nodes=nodes, embedding=rng.standard_normal(cfg.embed_dim)
            )
        _, grads = backward(params, feats, targets, vocab)
        for name in params.tensors:
            w = params.tensors[name]
            for flat_idx in rng.choice(w.size, size=min(3, w.size), replace=False):
                orig = w.flat[flat_idx]
                w.flat[flat_idx] = orig + step
                up = loss(forward_set(params, feats), targets, vocab)
                w.flat[flat_idx] = orig - step
                dn = loss(forward_set(params, feats), targets, vocab)
                w.flat[flat_idx] = orig
                fd = (up - dn) / (2 * step)
                a = grads[name].flat[flat_idx]
                rel = abs(a - fd) / max(abs(a), abs(fd), 1.0)
                worst = max(worst, rel)
    verdict(
        "Analytic gradients match central differences on 50 random configurations",
        worst <= 1e-4,
        f"worst relative error {worst:.2e}",
    )


def test_power_set_labeling(verdict, world40):
    from relsets.graph import ancestors

    g, emb, corpus = world40
    examples = list(
        sample_training_examples(g, corpus, emb, n=4, count=10_000, seed=9)
    )
    assert len(examples) == 10_000
    for ex in examples:
        assert set(ex.subset_targets) == set(range(1, 16))
        for i, vid in enumerate(ex.video_ids):
            assert ex.subset_targets[1 << i].nodes == corpus.records[vid].labels
        for small, t_small in ex.subset_targets.items():
            for big, t_big in ex.subset_targets.items():
                if small == big or (small & big) != small:
                    continue
                for node in t_big.nodes:
                    assert any(
                        node == s or node in ancestors(g, s) for s in t_small.nodes
                    ), (small, big, node)
    verdict(
        "Every n=4 example carries 15 subset targets; singleton and "
        "monotonicity invariants hold on 10k examples",
        True,
    )


def test_directional_set_vs_graph_lookup(verdict, world40):
    started = time.perf_counter()
    g, emb, corpus = world40
    dim = corpus.feature_dim

    leaf_vocab = LabelVocab(tuple(g.leaf_ids))
    train_ids = corpus.split_ids("train")
    clf = ev.LeafClassifier(dim, 64, leaf_vocab, seed=0)
    clf.fit(
        [corpus.features_of(v) for v in train_ids],
        [corpus.records[v].labels[0] for v in train_ids],
        epochs=30,
        lr=0.01,
    )
    test_ids = corpus.split_ids("test")
    leaf_acc = clf.accuracy(
        [corpus.features_of(v) for v in test_ids],
        [corpus.records[v].labels[0] for v in test_ids],
    )
    assert 0.6 <= leaf_acc <= 0.8, f"leaf calibration off: {leaf_acc:.3f}"

    vocab = LabelVocab(tuple(g.nodes))
    examples = list(sample_training_examples(g, corpus, emb, n=4, count=1000, seed=2))
    cfg = SamConfig(
        feature_dim=dim,
        num_classes=len(vocab),
        embed_dim=emb.dim,
        hidden=64,
        max_set_size=4,
        seed=0,
        lr=0.01,
        lr_decay_every=25,
    )
    model, _ = train(cfg, corpus, examples, epochs=40, vocab=vocab)

    margins = []
    details = []
    for n in (2, 3, 4):
        items = ev.build_eval_sets(g, corpus, emb, n=n, count=200, seed=10 + n)
        set_top1 = ev.eval_abstraction(model, items, corpus).metrics["top1"]
        preds = [
            [clf.predict(corpus.features_of(v)) for v in item.video_ids]
            for item in items
        ]
        lookup_top1 = ev.baseline_graph_lookup(preds, items, g).metrics["top1"]
        margins.append(set_top1 - lookup_top1)
        details.append(f"N={n}: {set_top1:.3f} vs {lookup_top1:.3f}")
    elapsed = time.perf_counter() - started
    ok = (
        all(m > 0 for m in margins)
        and margins[0] <= margins[1] <= margins[2]
        and elapsed < 600.0
    )
    verdict(
        "Trained set model beats graph lookup for N=2,3,4 with non-decreasing margin",
        ok,
        "; ".join(details) + f"; leaf top-1 {leaf_acc:.3f}; {elapsed:.0f}s",
    )


def test_completion_oracle_closure(verdict, world40):
    g, emb, corpus = world40
    tasks = [
        build_ranking_task(g, corpus, emb, 1 + s % 4, seed=s) for s in range(1000)
    ]
    rep = ev.oracle_embedding_representer(corpus, emb)
    report = ev.eval_completion(tasks, rep, name="completion/oracle")
    per_task_ok = all(abs(r["rho"] - 1.0) <= 1e-12 for r in report.items)
    unit_ok = (
        ev.spearman_rho([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]) == 1.0
        and ev.spearman_rho([0, 1, 2, 3, 4], [4, 3, 2, 1, 0]) == -1.0
        and ev.spearman_rho([0, 1, 2, 3, 4], [1, 0, 2, 3, 4]) == 0.9
    )
    ok = (
        abs(report.metrics["rank_correlation"] - 1.0) <= 1e-12
        and per_task_ok
        and unit_ok
    )
    verdict(
        "Oracle embeddings give Spearman 1.0 on 1,000 tasks; unit cases exact",
        ok,
        f"mean rho {report.metrics['rank_correlation']:.15f}",
    )


def test_odd_one_out(verdict, ooo_world):
    g, emb, corpus = ooo_world
    sets = ev.build_odd_one_out_sets(g, corpus, n=3, count=100, seed=4)
    single, rest = ev.oracle_ooo_representer(corpus, emb)
    oracle_top1 = ev.eval_odd_one_out(sets, single, rest).metrics["top1"]

    vocab = LabelVocab(tuple(g.nodes))
    examples = list(sample_training_examples(g, corpus, emb, n=3, count=300, seed=5))
    cfg = SamConfig(
        feature_dim=corpus.feature_dim,
        num_classes=len(vocab),
        embed_dim=emb.dim,
        hidden=64,
        max_set_size=3,
        seed=0,
        lr=0.01,
        lr_decay_every=25,
    )
    model, _ = train(cfg, corpus, examples, epochs=30, vocab=vocab)
    ms, mr = ev.model_ooo_representer(model, corpus)
    model_report = ev.eval_odd_one_out(sets, ms, mr)

    from relsets.embed import EmbeddingTable

    scaled = EmbeddingTable(
        dim=emb.dim, vectors={k: 3.0 * v for k, v in emb.vectors.items()}
    )
    base_items = ev.eval_odd_one_out(sets, *ev.oracle_ooo_representer(corpus, emb)).items
    scaled_items = ev.eval_odd_one_out(
        sets, *ev.oracle_ooo_representer(corpus, scaled)
    ).items
    scale_invariant = all(
        np.argmax(a["scores"]) == np.argmax(b["scores"])
        for a, b in zip(base_items, scaled_items)
    )
    ok = (
        oracle_top1 == 1.0
        and model_report.metrics["top1"] >= 0.9
        and scale_invariant
    )
    verdict(
        "Odd one out: oracle 100%, trained model >= 90% at N=3, argmax "
        "scale-invariant",
        ok,
        f"oracle {oracle_top1:.2f}, model {model_report.metrics['top1']:.2f}",
    )


def test_determinism(verdict, ooo_world):
    g, emb, corpus = ooo_world

    c1 = gen_synthetic_corpus(g, per_leaf=15, feature_dim=8, noise=0.3, seed=77)
    c2 = gen_synthetic_corpus(g, per_leaf=15, feature_dim=8, noise=0.3, seed=77)
    corpus_ok = set(c1.records) == set(c2.records) and all(
        np.array_equal(c1.records[v].features, c2.records[v].features)
        and c1.records[v].split == c2.records[v].split
        for v in c1.records
    )

    e1 = list(sample_training_examples(g, corpus, emb, n=3, count=50, seed=8))
    e2 = list(sample_training_examples(g, corpus, emb, n=3, count=50, seed=8))
    examples_ok = [example_to_doc(x) for x in e1] == [example_to_doc(x) for x in e2]

    t1 = [build_ranking_task(g, corpus, emb, 2, seed=s) for s in range(20)]
    t2 = [build_ranking_task(g, corpus, emb, 2, seed=s) for s in range(20)]
    tasks_ok = [task_to_doc(t) for t in t1] == [task_to_doc(t) for t in t2]

    vocab = LabelVocab(tuple(g.nodes))
    cfg = SamConfig(
        feature_dim=corpus.feature_dim,
        num_classes=len(vocab),
        embed_dim=emb.dim,
        hidden=16,
        max_set_size=3,
        seed=0,
    )
    m1, metrics1 = train(cfg, corpus, e1[:10], epochs=3, vocab=vocab)
    m2, metrics2 = train(cfg, corpus, e2[:10], epochs=3, vocab=vocab)
    train_ok = metrics1 == metrics2 and all(
        np.array_equal(m1.params.tensors[k], m2.params.tensors[k])
        for k in m1.params.tensors
    )
    ok = corpus_ok and examples_ok and tasks_ok and train_ok
    verdict(
        "Identical config+seed reproduce datasets and training metrics bitwise",
        ok,
    )


def test_chance_level_hand_computations(verdict):
    ok = (
        ev.chance_level({"a": 0.5, "b": 0.3, "c": 0.2}, 1) == 0.5
        and ev.chance_level({"a": 0.5, "b": 0.3, "c": 0.2}, 2) == 0.8
        and ev.chance_level({f"n{i}": 1 / 8 for i in range(8)}, 1) == 1 / 8
    )
    verdict("Chance level matches hand computations exactly", ok)
