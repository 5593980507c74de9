"""Directed relational graph over event categories.

Leaves are concrete categories, internal nodes are abstractions. The graph
is a multi-parent DAG, not a strict hierarchy: a category may sit under
several abstractions at once (e.g. "sculpting" under both "carving" and
"making art").
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field


class GraphError(Exception):
    """Base class for relational-graph failures."""


class DuplicateNodeError(GraphError):
    pass


class DanglingParentError(GraphError):
    pass


class CycleError(GraphError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("cycle detected: " + " -> ".join(cycle + cycle[:1]))


class UnknownNodeError(GraphError):
    pass


class NoCommonAncestorError(GraphError):
    """The inputs share no ancestor (they live under disconnected roots)."""


@dataclass(frozen=True)
class GraphNode:
    id: str
    name: str
    parents: frozenset[str]
    children: frozenset[str]

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class RelationalGraph:
    nodes: dict[str, GraphNode]
    roots: tuple[str, ...]
    _ancestor_cache: dict[str, frozenset[str]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def node(self, node_id: str) -> GraphNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node id: {node_id!r}") from None

    @property
    def leaf_ids(self) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.is_leaf)

    @property
    def internal_ids(self) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if not n.is_leaf)


def build_graph(node_specs) -> RelationalGraph:
    """Build a validated graph from (id, name, parent_ids) triples.

    Leaves end up being exactly the ids never named as a parent.
    """
    specs = list(node_specs)
    ids = [s[0] for s in specs]
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise DuplicateNodeError(f"duplicate node id: {i!r}")
        seen.add(i)

    parents: dict[str, set[str]] = {}
    names: dict[str, str] = {}
    children: dict[str, set[str]] = {i: set() for i in seen}
    for node_id, name, parent_ids in specs:
        names[node_id] = name
        pset = set(parent_ids)
        for p in pset:
            if p not in seen:
                raise DanglingParentError(
                    f"node {node_id!r} references unknown parent {p!r}"
                )
            children[p].add(node_id)
        parents[node_id] = pset

    _check_acyclic(parents)

    nodes = {
        i: GraphNode(
            id=i,
            name=names[i],
            parents=frozenset(parents[i]),
            children=frozenset(children[i]),
        )
        for i in seen
    }
    roots = tuple(sorted(i for i in seen if not parents[i]))
    return RelationalGraph(nodes=nodes, roots=roots)


def _check_acyclic(parents: dict[str, set[str]]) -> None:
    """Kahn's algorithm over parent links; reports one offending cycle."""
    indeg = {i: len(ps) for i, ps in parents.items()}
    children: dict[str, list[str]] = {i: [] for i in parents}
    for i, ps in parents.items():
        for p in ps:
            children[p].append(i)
    queue = deque(sorted(i for i, d in indeg.items() if d == 0))
    done = 0
    while queue:
        cur = queue.popleft()
        done += 1
        for c in sorted(children[cur]):
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if done == len(parents):
        return
    # Walk parent links inside the residual set until a node repeats.
    residual = {i for i, d in indeg.items() if d > 0}
    start = min(residual)
    path, pos = [], {}
    cur = start
    while cur not in pos:
        pos[cur] = len(path)
        path.append(cur)
        cur = min(p for p in parents[cur] if p in residual)
    raise CycleError(path[pos[cur]:])


def ancestors(g: RelationalGraph, node_id: str) -> frozenset[str]:
    """All nodes reachable via parent links, excluding the node itself."""
    cached = g._ancestor_cache.get(node_id)
    if cached is not None:
        return cached
    node = g.node(node_id)
    out: set[str] = set()
    stack = list(node.parents)
    while stack:
        cur = stack.pop()
        if cur in out:
            continue
        out.add(cur)
        stack.extend(g.nodes[cur].parents)
    result = frozenset(out)
    g._ancestor_cache[node_id] = result
    return result


def descendant_leaves(g: RelationalGraph, node_id: str) -> list[str]:
    """Leaves reachable below a node (the node itself if it is a leaf)."""
    node = g.node(node_id)
    if node.is_leaf:
        return [node_id]
    out: set[str] = set()
    stack = list(node.children)
    visited: set[str] = set()
    while stack:
        cur = stack.pop()
        if cur in visited:
            continue
        visited.add(cur)
        n = g.nodes[cur]
        if n.is_leaf:
            out.add(cur)
        else:
            stack.extend(n.children)
    return sorted(out)


def lowest_common_abstractions(g: RelationalGraph, node_ids) -> list[str]:
    """Minimal common ancestors of a node set, sorted by id.

    A singleton input returns itself. For larger sets the inputs themselves
    are excluded from the candidates, unless one input is an ancestor of all
    the others and no external common ancestor survives, in which case that
    input is the abstraction (mixed-level label sets).
    """
    unique = sorted(set(node_ids))
    if not unique:
        raise ValueError("node set must be nonempty")
    for i in unique:
        g.node(i)
    if len(unique) == 1:
        return [unique[0]]

    common = None
    for i in unique:
        anc_or_self = set(ancestors(g, i)) | {i}
        common = anc_or_self if common is None else (common & anc_or_self)
    assert common is not None
    candidates = common - set(unique)
    if not candidates:
        # Fall back to inputs that are common ancestors of all the others.
        candidates = common & set(unique)
    if not candidates:
        raise NoCommonAncestorError(
            f"no common ancestor for {unique} (disconnected roots)"
        )
    minimal = [
        c
        for c in candidates
        if not any(c in ancestors(g, other) for other in candidates if other != c)
    ]
    return sorted(minimal)


@dataclass(frozen=True)
class Violation:
    kind: str  # cycle | orphan | asymmetric_link | missing_endpoint
    detail: str


def validate(g: RelationalGraph) -> list[Violation]:
    """Structural audit; an empty report means every invariant holds."""
    out: list[Violation] = []
    ids = set(g.nodes)
    for node in g.nodes.values():
        for p in node.parents:
            if p not in ids:
                out.append(Violation("missing_endpoint", f"{node.id} -> parent {p}"))
            elif node.id not in g.nodes[p].children:
                out.append(
                    Violation("asymmetric_link", f"{p} lacks child link to {node.id}")
                )
        for c in node.children:
            if c not in ids:
                out.append(Violation("missing_endpoint", f"{node.id} -> child {c}"))
            elif node.id not in g.nodes[c].parents:
                out.append(
                    Violation("asymmetric_link", f"{c} lacks parent link to {node.id}")
                )
    try:
        _check_acyclic({i: set(n.parents) & ids for i, n in g.nodes.items()})
    except CycleError as e:
        out.append(Violation("cycle", " -> ".join(e.cycle)))
        return out
    # Reachability from roots, following child links and reverse parent
    # links alike so an asymmetric link is not double-reported as an orphan.
    down: dict[str, set[str]] = {i: set() for i in ids}
    for node in g.nodes.values():
        down[node.id] |= node.children & ids
        for p in node.parents:
            if p in ids:
                down[p].add(node.id)
    reachable = set()
    stack = [r for r in g.roots if r in ids]
    while stack:
        cur = stack.pop()
        if cur in reachable:
            continue
        reachable.add(cur)
        stack.extend(down[cur])
    for i in sorted(ids - reachable):
        out.append(Violation("orphan", f"{i} unreachable from any root"))
    return out


# --- spec-file persistence -------------------------------------------------

_SPEC_KEYS = {"id", "name", "parents"}


def load_graph(path) -> RelationalGraph:
    """Load a graph from a JSON spec: a list of {id, name, parents}."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, list):
        raise GraphError("graph spec must be a top-level JSON list")
    specs = []
    for entry in doc:
        if not isinstance(entry, dict):
            raise GraphError(f"graph spec entry is not an object: {entry!r}")
        unknown = set(entry) - _SPEC_KEYS
        if unknown:
            raise GraphError(f"unknown fields in graph spec: {sorted(unknown)}")
        specs.append((entry["id"], entry["name"], entry.get("parents", [])))
    return build_graph(specs)


def save_graph(g: RelationalGraph, path) -> None:
    doc = [
        {"id": i, "name": g.nodes[i].name, "parents": sorted(g.nodes[i].parents)}
        for i in sorted(g.nodes)
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
