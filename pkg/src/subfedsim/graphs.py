"""Graph data model, synthetic generators, partitioners, splits and CSV ingestion."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

TRAIN = "train"
VAL = "val"
TEST = "test"

_TAGS = (TRAIN, VAL, TEST)


class GraphParseError(ValueError):
    """Raised when a graph directory fails to parse; message names file and line."""


@dataclass
class Graph:
    """Undirected simple graph with node features, labels and a sorted edge list."""

    num_nodes: int
    features: np.ndarray  # (num_nodes, d_x) float64
    labels: np.ndarray    # (num_nodes,) int
    edges: np.ndarray     # (num_edges, 2) int, u < v, lexicographically sorted
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def d_x(self) -> int:
        return self.features.shape[1]

    def validate(self):
        if self.num_nodes < 1:
            raise ValueError("graph must have at least one node")
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= self.num_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(self.edges[:, 0] >= self.edges[:, 1]):
                raise ValueError("edges must satisfy u < v (no self-loops)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.edges, other.edges))


@dataclass
class NodeSplit:
    """Per-node train/val/test tags."""

    tags: list  # length num_nodes, entries in {"train","val","test"}

    def mask(self, which: str) -> np.ndarray:
        if which not in _TAGS:
            raise ValueError(f"unknown split tag {which!r}")
        return np.array([t == which for t in self.tags], dtype=bool)


@dataclass
class Partition:
    """Assignment of global nodes to K clients.

    For overlapping partitions `assignment` is None and `client_node_lists`
    is the source of truth.
    """

    K: int
    overlapping: bool
    client_node_lists: list = field(default_factory=list)  # K lists of global node ids
    assignment: list | None = None  # per-node client id or None (non-overlapping only)


def _normalize_edges(raw: np.ndarray) -> np.ndarray:
    """Symmetrize, drop self-loops, dedupe and sort an edge array."""
    if raw.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    raw = np.asarray(raw, dtype=np.int64).reshape(-1, 2)
    keep = raw[:, 0] != raw[:, 1]
    raw = raw[keep]
    lo = np.minimum(raw[:, 0], raw[:, 1])
    hi = np.maximum(raw[:, 0], raw[:, 1])
    e = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return e


def _pairs_to_edges(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    e = np.stack([u, v], axis=1).astype(np.int64)
    order = np.lexsort((e[:, 1], e[:, 0]))
    return e[order]


def generate_sbm(num_blocks: int, block_size: int, p_in: float, p_cross: float,
                 d_x: int, num_classes: int, seed: int) -> Graph:
    """Stochastic block model with N(0,1) features and labels = block id mod num_classes."""
    if num_blocks < 1 or block_size < 1:
        raise ValueError("num_blocks and block_size must be >= 1")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_cross <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = num_blocks * block_size
    block = np.arange(n) // block_size
    iu, iv = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[iv], p_in, p_cross)
    keep = rng.random(iu.shape[0]) < p
    edges = _pairs_to_edges(iu[keep], iv[keep])
    features = rng.standard_normal((n, d_x))
    labels = block % num_classes
    g = Graph(n, features, labels, edges, num_classes)
    g.validate()
    return g


def generate_er(num_nodes: int, p: float, d_x: int, num_classes: int, seed: int) -> Graph:
    """Erdős–Rényi graph; labels drawn uniformly at random."""
    if num_nodes < 1:
        raise ValueError("num_nodes must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(num_nodes, k=1)
    keep = rng.random(iu.shape[0]) < p
    edges = _pairs_to_edges(iu[keep], iv[keep])
    features = rng.standard_normal((num_nodes, d_x))
    labels = rng.integers(0, num_classes, size=num_nodes)
    g = Graph(num_nodes, features, labels, edges, num_classes)
    g.validate()
    return g


def generate_ba(num_nodes: int, m: int, d_x: int, num_classes: int, seed: int) -> Graph:
    """Barabási–Albert preferential attachment starting from a complete (m+1)-seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if num_nodes <= m:
        raise ValueError("num_nodes must exceed m")
    rng = np.random.default_rng(seed)
    edges = []
    # complete seed graph on m+1 nodes
    for u in range(m + 1):
        for v in range(u + 1, m + 1):
            edges.append((u, v))
    # repeated-node list implements preferential attachment
    repeated = []
    for u, v in edges:
        repeated.extend((u, v))
    for new in range(m + 1, num_nodes):
        targets = set()
        while len(targets) < m:
            targets.add(repeated[rng.integers(0, len(repeated))])
        for t in sorted(targets):
            edges.append((t, new))
            repeated.extend((t, new))
    e = np.array(edges, dtype=np.int64)
    e = _pairs_to_edges(np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1]))
    features = rng.standard_normal((num_nodes, d_x))
    labels = rng.integers(0, num_classes, size=num_nodes)
    g = Graph(num_nodes, features, labels, e, num_classes)
    g.validate()
    return g


def _to_networkx(g: Graph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.num_nodes))
    G.add_edges_from(map(tuple, g.edges))
    return G


def _recursive_bisect(G: nx.Graph, nodes: list, K: int, rng: np.random.Generator) -> list:
    """Split `nodes` into K parts with proportional sizes via seeded KL bisection."""
    if K == 1:
        return [sorted(nodes)]
    k1 = K // 2
    k2 = K - k1
    n1 = round(len(nodes) * k1 / K)
    perm = list(rng.permutation(nodes))
    init = (set(perm[:n1]), set(perm[n1:]))
    sub = G.subgraph(nodes)
    a, b = nx.algorithms.community.kernighan_lin_bisection(
        sub, partition=init, max_iter=20, seed=int(rng.integers(0, 2**31)))
    if len(a) != n1:  # returned sides are not in input order
        a, b = b, a
    return (_recursive_bisect(G, list(a), k1, rng)
            + _recursive_bisect(G, list(b), k2, rng))


def partition_bisection(g: Graph, K: int, seed: int) -> Partition:
    """Non-overlapping recursive edge-cut bisection with greedy refinement."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > g.num_nodes:
        raise ValueError("K must not exceed the number of nodes")
    rng = np.random.default_rng(seed)
    parts = _recursive_bisect(_to_networkx(g), list(range(g.num_nodes)), K, rng)
    assignment = [None] * g.num_nodes
    for cid, nodes in enumerate(parts):
        for u in nodes:
            assignment[u] = cid
    return Partition(K=K, overlapping=False, client_node_lists=parts, assignment=assignment)


def partition_louvain_merge(g: Graph, K: int, seed: int) -> Partition:
    """Louvain communities randomly grouped down to exactly K parts."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > g.num_nodes:
        raise ValueError("K must not exceed the number of nodes")
    rng = np.random.default_rng(seed)
    G = _to_networkx(g)
    comms = [sorted(c) for c in nx.algorithms.community.louvain_communities(
        G, seed=int(rng.integers(0, 2**31)))]
    comms.sort()
    # fewer communities than K: split the largest by bisection until we have enough
    while len(comms) < K:
        comms.sort(key=len, reverse=True)
        big = comms.pop(0)
        halves = _recursive_bisect(G, big, 2, rng)
        comms.extend(halves)
        comms.sort()
    # random round-robin grouping into K parts
    order = rng.permutation(len(comms))
    groups = [[] for _ in range(K)]
    for i, ci in enumerate(order):
        groups[i % K].extend(comms[ci])
    parts = [sorted(p) for p in groups]
    assignment = [None] * g.num_nodes
    for cid, nodes in enumerate(parts):
        for u in nodes:
            assignment[u] = cid
    return Partition(K=K, overlapping=False, client_node_lists=parts, assignment=assignment)


def sample_overlap_clients(g: Graph, base_parts: int, copies_per_part: int,
                           frac: float, seed: int) -> Partition:
    """Bisection into base parts, then overlapping node samples from each part."""
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must lie in (0, 1]")
    if copies_per_part < 1:
        raise ValueError("copies_per_part must be >= 1")
    rng = np.random.default_rng(seed)
    base = partition_bisection(g, base_parts, int(rng.integers(0, 2**31)))
    lists = []
    for part in base.client_node_lists:
        size = int(np.ceil(frac * len(part)))
        for _ in range(copies_per_part):
            sample = rng.choice(len(part), size=size, replace=False)
            lists.append(sorted(part[i] for i in sample))
    return Partition(K=base_parts * copies_per_part, overlapping=True,
                     client_node_lists=lists, assignment=None)


def induced_subgraph(g: Graph, nodes: list) -> Graph:
    """Client subgraph over `nodes` (global ids), relabeled to 0..len(nodes)-1."""
    nodes = sorted(nodes)
    index = {u: i for i, u in enumerate(nodes)}
    kept = []
    for u, v in g.edges:
        if u in index and v in index:
            kept.append((index[u], index[v]))
    edges = np.array(kept, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
    return Graph(len(nodes), g.features[nodes], g.labels[nodes], edges, g.num_classes)


def make_splits(g: Graph, ratios: tuple, seed: int) -> NodeSplit:
    """Per-class stratified train/val/test split with largest-remainder rounding."""
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or r.sum() <= 0:
        raise ValueError("ratios must be three nonnegative numbers with positive sum")
    r = r / r.sum()
    rng = np.random.default_rng(seed)
    tags = [None] * g.num_nodes
    for cls in range(g.num_classes):
        members = np.flatnonzero(g.labels == cls)
        if members.size == 0:
            continue
        members = members[rng.permutation(members.size)]
        n = members.size
        if n < 3:
            warnings.warn(f"class {cls} has only {n} nodes; assigning train-first")
            tags[members[0]] = TRAIN
            for u in members[1:]:
                tags[u] = TEST
            continue
        exact = r * n
        counts = np.floor(exact).astype(int)
        remainder = exact - counts
        # distribute leftover by largest remainder, ties favoring train first
        for _ in range(n - counts.sum()):
            i = int(np.argmax(remainder))
            counts[i] += 1
            remainder[i] = -1.0
        if r[0] > 0 and counts[0] == 0:
            # keep at least one train node per class when training is requested
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[0] += 1
        pos = 0
        for tag, c in zip(_TAGS, counts):
            for u in members[pos:pos + c]:
                tags[u] = tag
            pos += c
    return NodeSplit(tags=tags)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_graph_dir(g: Graph, path: str):
    """Write nodes.csv and edges.csv with shortest round-trip decimals."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "nodes.csv"), "w", newline="\n") as f:
        header = "id,label," + ",".join(f"f{i}" for i in range(g.d_x))
        f.write(header + "\n")
        for i in range(g.num_nodes):
            feats = ",".join(_fmt(x) for x in g.features[i])
            f.write(f"{i},{g.labels[i]},{feats}\n")
    with open(os.path.join(path, "edges.csv"), "w", newline="\n") as f:
        f.write("src,dst\n")
        for u, v in g.edges:
            f.write(f"{u},{v}\n")


def load_graph_dir(path: str) -> Graph:
    """Load a graph directory; directed edge rows are symmetrized."""
    nodes_path = os.path.join(path, "nodes.csv")
    edges_path = os.path.join(path, "edges.csv")
    for p in (nodes_path, edges_path):
        if not os.path.isfile(p):
            raise GraphParseError(f"{p}: missing file")
    ids, labels, feats = [], [], []
    with open(nodes_path, newline="") as f:
        header = f.readline().rstrip("\n")
        cols = header.split(",")
        if cols[:2] != ["id", "label"]:
            raise GraphParseError(f"{nodes_path}:1: expected header 'id,label,f0..'")
        d = len(cols) - 2
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2 + d:
                raise GraphParseError(f"{nodes_path}:{lineno}: expected {2 + d} fields, got {len(parts)}")
            try:
                ids.append(int(parts[0]))
                labels.append(int(parts[1]))
                feats.append([float(x) for x in parts[2:]])
            except ValueError as exc:
                raise GraphParseError(f"{nodes_path}:{lineno}: {exc}") from exc
    n = len(ids)
    if sorted(ids) != list(range(n)):
        raise GraphParseError(f"{nodes_path}: node ids must be exactly 0..{n - 1}")
    order = np.argsort(ids)
    features = np.asarray(feats, dtype=np.float64)[order]
    labels_arr = np.asarray(labels, dtype=np.int64)[order]
    raw_edges = []
    with open(edges_path, newline="") as f:
        header = f.readline().rstrip("\n")
        if header.split(",") != ["src", "dst"]:
            raise GraphParseError(f"{edges_path}:1: expected header 'src,dst'")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise GraphParseError(f"{edges_path}:{lineno}: expected 2 fields")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphParseError(f"{edges_path}:{lineno}: {exc}") from exc
            if not (0 <= u < n and 0 <= v < n):
                raise GraphParseError(f"{edges_path}:{lineno}: endpoint out of range")
            raw_edges.append((u, v))
    edges = _normalize_edges(np.array(raw_edges, dtype=np.int64))
    num_classes = int(labels_arr.max()) + 1 if n else 0
    g = Graph(n, features, labels_arr, edges, num_classes)
    g.validate()
    return g


def load_partition_csv(path: str, num_nodes: int) -> Partition:
    """Read a `node,client` CSV (e.g. external METIS output) as a Partition."""
    if not os.path.isfile(path):
        raise GraphParseError(f"{path}: missing file")
    assignment = [None] * num_nodes
    with open(path, newline="") as f:
        header = f.readline().rstrip("\n")
        if header.split(",") != ["node", "client"]:
            raise GraphParseError(f"{path}:1: expected header 'node,client'")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise GraphParseError(f"{path}:{lineno}: expected 2 fields")
            try:
                u, c = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphParseError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= u < num_nodes:
                raise GraphParseError(f"{path}:{lineno}: node id out of range")
            assignment[u] = c
    K = max(c for c in assignment if c is not None) + 1
    lists = [[] for _ in range(K)]
    for u, c in enumerate(assignment):
        if c is not None:
            lists[c].append(u)
    return Partition(K=K, overlapping=False,
                     client_node_lists=[sorted(p) for p in lists], assignment=assignment)
