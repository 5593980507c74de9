import numpy as np
import pytest

from relsets import embed
from relsets.corpus import gen_synthetic_corpus
from relsets.graph import build_graph

# --- paper-fragment graphs ---------------------------------------------------

COOKING_SPECS = [
    ("cooking", "cooking", []),
    ("baking", "baking", ["cooking"]),
    ("frying", "frying", ["cooking"]),
    ("cooking_chicken", "cooking chicken", ["cooking"]),
    ("making_a_cake", "making a cake", ["baking"]),
    ("baking_cookies", "baking cookies", ["baking"]),
]

SCULPTING_SPECS = [
    ("crafting", "crafting", []),
    ("cutting", "cutting", []),
    ("making_art", "making art", ["crafting"]),
    ("carving", "carving", ["cutting"]),
    ("sculpting", "sculpting", ["carving", "making_art"]),
    ("drawing", "drawing", ["making_art"]),
    ("painting", "painting", ["making_art"]),
    ("peeling", "peeling", ["carving"]),
    ("shaving", "shaving", ["carving"]),
]


@pytest.fixture
def cooking_graph():
    return build_graph(COOKING_SPECS)


@pytest.fixture
def sculpting_graph():
    return build_graph(SCULPTING_SPECS)


# --- random DAG machinery ----------------------------------------------------


def random_dag_specs(rng, n_nodes, max_parents=3, root_count=1):
    """Nodes only point at earlier nodes, so the result is always acyclic."""
    specs = []
    for i in range(n_nodes):
        node_id = f"n{i:03d}"
        if i < root_count:
            parents = []
        else:
            k = int(rng.integers(1, max_parents + 1))
            k = min(k, i)
            parents = [f"n{j:03d}" for j in rng.choice(i, size=k, replace=False)]
        specs.append((node_id, node_id.replace("n", "node "), parents))
    return specs


def bf_ancestors(g, node_id):
    """Brute-force transitive closure via repeated parent expansion."""
    current = set(g.nodes[node_id].parents)
    while True:
        expanded = set(current)
        for n in current:
            expanded |= g.nodes[n].parents
        if expanded == current:
            return current
        current = expanded


def bf_lowest_common_abstractions(g, node_ids):
    """Independent oracle: intersect ancestors-or-self, filter non-minimal."""
    unique = sorted(set(node_ids))
    if len(unique) == 1:
        return [unique[0]]
    common = set.intersection(*({i} | bf_ancestors(g, i) for i in unique))
    candidates = common - set(unique)
    if not candidates:
        candidates = common & set(unique)
    if not candidates:
        return None
    minimal = [
        c
        for c in candidates
        if not any(c in bf_ancestors(g, o) for o in candidates if o != c)
    ]
    return sorted(minimal)


# --- shared synthetic setup ---------------------------------------------------

# Three-level taxonomy: root -> branches -> mids -> leaves. Branch count and
# fanouts give 2*2*3 = 12 leaves per branch pair; sized for fast tests.


def layered_specs(branches=2, mids_per_branch=2, leaves_per_mid=3):
    specs = [("root", "root", [])]
    for b in range(branches):
        bid = f"branch{b}"
        specs.append((bid, f"branch {b}", ["root"]))
        for m in range(mids_per_branch):
            mid = f"{bid}_mid{m}"
            specs.append((mid, f"branch {b} mid {m}", [bid]))
            for l in range(leaves_per_mid):
                specs.append((f"{mid}_leaf{l}", f"branch {b} mid {m} leaf {l}", [mid]))
    return specs


@pytest.fixture(scope="session")
def layered_graph():
    return build_graph(layered_specs())


@pytest.fixture(scope="session")
def layered_embeddings(layered_graph):
    g = layered_graph
    rng = np.random.default_rng(7)
    dim = 8
    leaf_vectors = {}
    for leaf in g.leaf_ids:
        v = rng.standard_normal(dim)
        leaf_vectors[leaf] = v / np.linalg.norm(v)
    return embed.propagate(g, leaf_vectors)


@pytest.fixture(scope="session")
def layered_corpus(layered_graph):
    return gen_synthetic_corpus(
        layered_graph, per_leaf=20, feature_dim=10, noise=0.0, seed=11
    )
