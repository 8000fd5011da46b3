"""Graphs, all-pairs shortest distances, hop partitions, and task generators.

Graphs are undirected, unweighted, and immutable once constructed. For every
target node v the nodes at shortest distance exactly k form the hop set
N_k(v); the partition over k = 0..K is what the model layers consume, and it
is computed once per graph during preprocessing.

Distances are exact BFS hop counts; pairs in different components get the
UNREACHABLE sentinel, which is strictly greater than any valid distance and
never reaches the model (unreachable nodes simply appear in no hop list).
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

UNREACHABLE = np.iinfo(np.int32).max


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected unweighted graph with per-node features and optional labels.

    Node features are either categorical ids (``node_ids`` with ``vocab_size``)
    or real vectors (``node_feat`` of shape (n, d)); a dataset uses one kind
    uniformly. ``graph_label`` is a scalar target (class id or regression
    value); ``node_labels`` are per-node class ids with -1 meaning unlabeled.
    """

    num_nodes: int
    edges: tuple
    node_ids: np.ndarray | None = None
    node_feat: np.ndarray | None = None
    vocab_size: int | None = None
    graph_label: float | int | None = None
    node_labels: np.ndarray | None = None
    _adj: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValidationError(f"edge ({u},{v}) out of range for {self.num_nodes} nodes")
            if u == v:
                raise ValidationError(f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValidationError(f"duplicate edge {key}")
            seen.add(key)
        if self.node_ids is not None and self.node_feat is not None:
            raise ValidationError("graph has both categorical and real features")
        adj = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(self, "_adj", adj)

    @property
    def adjacency(self) -> list:
        return self._adj

    def feature_dim(self) -> int:
        if self.node_feat is not None:
            return self.node_feat.shape[1]
        raise ValidationError("graph has categorical features, not vectors")


def permute_graph(g: Graph, perm: np.ndarray) -> Graph:
    """Relabel nodes by v -> perm[v]; features and labels move with the nodes."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    edges = tuple((int(perm[u]), int(perm[v])) for u, v in g.edges)
    return Graph(
        num_nodes=g.num_nodes,
        edges=edges,
        node_ids=None if g.node_ids is None else g.node_ids[inv].copy(),
        node_feat=None if g.node_feat is None else g.node_feat[inv].copy(),
        vocab_size=g.vocab_size,
        graph_label=g.graph_label,
        node_labels=None if g.node_labels is None else g.node_labels[inv].copy(),
    )


# ---------------------------------------------------------------------------
# distances and hop partitions


def _bfs_row(adj: list, source: int, n: int) -> np.ndarray:
    dist = np.full(n, UNREACHABLE, dtype=np.int32)
    dist[source] = 0
    q = deque([source])
    while q:
        v = q.popleft()
        dv = dist[v] + 1
        for u in adj[v]:
            if dist[u] == UNREACHABLE:
                dist[u] = dv
                q.append(u)
    return dist


def all_pairs_shortest_distances(g: Graph, threads: int = 1) -> np.ndarray:
    """Exact hop-count distance table via one BFS per source node.

    Sources are independent, so they may be computed by a thread pool; the
    result is assembled by source index and identical for any thread count.
    """
    n = g.num_nodes
    table = np.full((n, n), UNREACHABLE, dtype=np.int32)
    if n == 0:
        return table
    adj = g.adjacency
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda s: _bfs_row(adj, s, n), range(n)))
    else:
        rows = [_bfs_row(adj, s, n) for s in range(n)]
    for s, row in enumerate(rows):
        table[s] = row
    return table


def graph_diameter(dist: np.ndarray) -> int:
    """Largest finite entry of a distance table."""
    if dist.size == 0:
        raise ValidationError("empty distance table")
    finite = dist[dist != UNREACHABLE]
    return int(finite.max())


@dataclass
class HopPartition:
    """Per-node hop index lists: hops[v][k] lists nodes at distance exactly k.

    ``ecc[v]`` is the eccentricity of v (largest finite distance from v),
    capped at K. Hop lists beyond distance K are dropped entirely.
    """

    k_max: int
    hops: list  # hops[v][k] -> list[int]
    ecc: np.ndarray
    _flat: tuple = field(default=None, repr=False, compare=False)
    _valid: np.ndarray = field(default=None, repr=False, compare=False)

    def flat_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows, cols) for the (v*(K+1)+k, u) membership pairs; memoized."""
        if self._flat is None:
            rows, cols = [], []
            kk = self.k_max + 1
            for v, per_v in enumerate(self.hops):
                for k, members in enumerate(per_v):
                    rows.extend([v * kk + k] * len(members))
                    cols.extend(members)
            self._flat = (np.asarray(rows, dtype=np.int64),
                          np.asarray(cols, dtype=np.int64))
        return self._flat

    def valid_mask(self) -> np.ndarray:
        """(n, K+1) float mask with 1 where k <= ecc[v]; memoized."""
        if self._valid is None:
            ks = np.arange(self.k_max + 1)
            self._valid = (ks[None, :] <= self.ecc[:, None]).astype(np.float64)
        return self._valid


def hop_partition(dist: np.ndarray, k_max: int) -> HopPartition:
    """Group, for each target node, all nodes by their exact shortest distance.

    K = 0 is rejected: a layer would see only the target itself.
    """
    if k_max < 1:
        raise ValidationError(f"hop partition needs K >= 1, got {k_max}")
    n = dist.shape[0]
    hops = []
    ecc = np.zeros(n, dtype=np.int64)
    for v in range(n):
        row = dist[v]
        per_v = [[] for _ in range(k_max + 1)]
        for u in range(n):
            d = row[u]
            if d != UNREACHABLE and d <= k_max:
                per_v[d].append(u)
        hops.append(per_v)
        finite = row[row != UNREACHABLE]
        ecc[v] = min(int(finite.max()), k_max)
    return HopPartition(k_max=k_max, hops=hops, ecc=ecc)


# ---------------------------------------------------------------------------
# standard small graphs


def cycle_graph(n: int) -> tuple:
    return tuple((i, (i + 1) % n) for i in range(n))


def path_graph(n: int) -> tuple:
    return tuple((i, i + 1) for i in range(n - 1))


def complete_graph(n: int) -> tuple:
    return tuple((i, j) for i in range(n) for j in range(i + 1, n))


# ---------------------------------------------------------------------------
# task generators


def gen_wl_counterexample_pair() -> tuple[Graph, Graph]:
    """The canonical 1-WL-indistinguishable pair: C6 versus two disjoint C3.

    Both graphs have six nodes, all of degree 2, and identical constant
    features, so color refinement can never split them apart; their
    shortest-distance profiles differ (C6 has pairs at distance 3, the
    triangle pair has unreachable ones).
    """
    ids = np.zeros(6, dtype=np.int64)
    a = Graph(6, cycle_graph(6), node_ids=ids.copy(), vocab_size=1)
    b = Graph(6, ((0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)),
              node_ids=ids.copy(), vocab_size=1)
    return a, b


def tree_feature_dim(depth: int) -> int:
    return 2 ** (depth + 1)  # class one-hot plus count one-hot, L = 2**depth each


def gen_tree_neighbors_match(depth: int, seed: int, count: int = 1000) -> list[Graph]:
    """Leaf-to-root matching instances on complete binary trees.

    Each instance is a complete binary tree of the given depth in heap layout
    (node i has children 2i+1 and 2i+2; node 0 is the root). Every leaf
    carries a distinct count in 1..L and a class id; the root carries a query
    count, and the target is the class of the unique leaf whose count equals
    the query. Features are [class one-hot | count one-hot] per node; internal
    nodes are all-zero rows. The label is stored both as the graph label and
    as a node label on the root (all other nodes unlabeled).
    """
    if not 2 <= depth <= 8:
        raise ValidationError(f"tree depth must be in [2, 8], got {depth}")
    n = 2 ** (depth + 1) - 1
    leaves = list(range(2**depth - 1, n))
    n_leaves = len(leaves)
    edges = tuple((i, 2 * i + 1) for i in range(n_leaves - 1)) + tuple(
        (i, 2 * i + 2) for i in range(n_leaves - 1)
    )
    dim = tree_feature_dim(depth)
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(count):
        counts = rng.permutation(n_leaves) + 1
        classes = rng.permutation(n_leaves)
        query_leaf = int(rng.integers(n_leaves))
        feat = np.zeros((n, dim), dtype=np.float64)
        for i, leaf in enumerate(leaves):
            feat[leaf, classes[i]] = 1.0
            feat[leaf, n_leaves + counts[i] - 1] = 1.0
        feat[0, n_leaves + counts[query_leaf] - 1] = 1.0
        label = int(classes[query_leaf])
        node_labels = np.full(n, -1, dtype=np.int64)
        node_labels[0] = label
        graphs.append(
            Graph(n, edges, node_feat=feat, graph_label=label, node_labels=node_labels)
        )
    return graphs


def gen_random_connected(rng: np.random.Generator, n: int, extra_edges: int) -> Graph:
    """Random connected graph: a random attachment tree plus extra edges."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(v))
        edges.add((u, v))
    tries = 0
    while extra_edges > 0 and tries < 50 * extra_edges:
        u, v = rng.integers(n), rng.integers(n)
        u, v = int(min(u, v)), int(max(u, v))
        tries += 1
        if u != v and (u, v) not in edges:
            edges.add((u, v))
            extra_edges -= 1
    ids = np.zeros(n, dtype=np.int64)
    return Graph(n, tuple(sorted(edges)), node_ids=ids, vocab_size=1)


def gen_regression_dataset(count: int, seed: int) -> list[Graph]:
    """Synthetic structure-regression graphs: the target is the mean degree.

    Node features are constant, so the model can only solve the task from the
    hop structure itself.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(count):
        n = int(rng.integers(6, 13))
        g = gen_random_connected(rng, n, int(rng.integers(0, n)))
        target = 2.0 * len(g.edges) / n
        graphs.append(
            Graph(g.num_nodes, g.edges, node_ids=g.node_ids, vocab_size=1,
                  graph_label=float(target))
        )
    return graphs


def gen_molecule_like(rng: np.random.Generator, n: int, vocab: int) -> Graph:
    """Small random connected graph with categorical node ids."""
    base = gen_random_connected(rng, n, int(rng.integers(0, max(1, n // 2))))
    ids = rng.integers(vocab, size=n)
    return Graph(n, base.edges, node_ids=ids, vocab_size=vocab)
