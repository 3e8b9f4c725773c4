"""Undirected attributed graphs in CSR form, plus edge splitting and deletion.

Edge sets are ``(m, 2)`` int64 arrays of canonical pairs (``u < v``) sorted
lexicographically.  Node sets are sorted, unique int64 arrays.  The CSR stores
both directions of every edge, neighbor lists sorted ascending.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    InsufficientCandidatesError,
    MissingEdgeError,
    ParseError,
)

IN = "IN"
OUT = "OUT"

_EMPTY_EDGES = np.empty((0, 2), dtype=np.int64)


def canonical_edges(edges, drop_self_loops: bool = True) -> np.ndarray:
    """Return ``edges`` as a sorted, de-duplicated ``(m, 2)`` array with ``u < v``."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) == 0:
        return _EMPTY_EDGES.copy()
    e = np.sort(e, axis=1)
    if drop_self_loops:
        e = e[e[:, 0] != e[:, 1]]
    if len(e) == 0:
        return _EMPTY_EDGES.copy()
    return np.unique(e, axis=0)


def edge_keys(edges: np.ndarray, num_nodes: int) -> np.ndarray:
    """Integer key ``u * n + v`` per canonical edge; sorted input gives sorted keys."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return e[:, 0] * num_nodes + e[:, 1]


def _keys_to_edges(keys: np.ndarray, num_nodes: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1)


def _isin_sorted(keys: np.ndarray, sorted_pool: np.ndarray) -> np.ndarray:
    if len(sorted_pool) == 0:
        return np.zeros(len(keys), dtype=bool)
    pos = np.searchsorted(sorted_pool, keys)
    pos = np.minimum(pos, len(sorted_pool) - 1)
    return sorted_pool[pos] == keys


def as_node_set(nodes, num_nodes: int | None = None) -> np.ndarray:
    """Sorted unique int64 array; validates ids when ``num_nodes`` is given."""
    arr = np.unique(np.asarray(nodes, dtype=np.int64).ravel())
    if num_nodes is not None and len(arr) and (arr[0] < 0 or arr[-1] >= num_nodes):
        bad = arr[0] if arr[0] < 0 else arr[-1]
        raise IndexError(f"node id {bad} out of range for graph with {num_nodes} nodes")
    return arr


def degree_bucket_features(degrees: np.ndarray, n_f: int = 16) -> np.ndarray:
    """One-hot encode ``min(degree, n_f - 1)``."""
    degrees = np.asarray(degrees, dtype=np.int64)
    x = np.zeros((len(degrees), n_f))
    x[np.arange(len(degrees)), np.minimum(degrees, n_f - 1)] = 1.0
    return x


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with node features and optional labels."""

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.features, self.labels):
            if arr is not None:
                arr.flags.writeable = False
        if self.features.shape[0] != self.num_nodes:
            raise DimensionError(
                f"features have {self.features.shape[0]} rows, graph has {self.num_nodes} nodes"
            )
        if self.labels is not None and len(self.labels) != self.num_nodes:
            raise DimensionError(
                f"labels have length {len(self.labels)}, graph has {self.num_nodes} nodes"
            )

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features=None, labels=None) -> Graph:
        """Build a graph from any pair list; self-loops and duplicates are dropped."""
        e = canonical_edges(edges)
        if len(e) and e.max() >= num_nodes:
            raise IndexError(f"node id {int(e.max())} out of range for {num_nodes} nodes")
        if len(e) and e.min() < 0:
            raise IndexError(f"negative node id {int(e.min())}")
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
        if features is None:
            features = np.zeros((num_nodes, 0))
        features = np.array(features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features[:, None]
        if labels is not None:
            labels = np.array(labels, dtype=np.int64, copy=True)
        return cls(num_nodes, indptr, dst.astype(np.int64), features, labels)

    # -- queries ---------------------------------------------------------

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def edges(self) -> np.ndarray:
        """Canonical edge array (sorted, ``u < v``)."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def active_nodes(self) -> np.ndarray:
        """Nodes with positive degree (the remaining node set after deletion)."""
        return np.flatnonzero(self.degrees() > 0)

    def with_edges(self, edges) -> Graph:
        """Same nodes, features and labels over a different edge set."""
        return Graph.from_edges(self.num_nodes, edges, self.features, self.labels)

    def with_features(self, features) -> Graph:
        return Graph(self.num_nodes, self.indptr, self.indices,
                     np.array(features, dtype=np.float64), self.labels)

    def validate(self) -> None:
        """Full-scan check of the CSR invariants; raises ``AssertionError``."""
        ip, ix = self.indptr, self.indices
        assert len(ip) == self.num_nodes + 1 and ip[0] == 0
        assert np.all(np.diff(ip) >= 0) and ip[-1] == len(ix)
        assert len(ix) == 0 or (ix.min() >= 0 and ix.max() < self.num_nodes)
        src = np.repeat(np.arange(self.num_nodes), np.diff(ip))
        assert not np.any(src == ix), "self-loop stored"
        fwd = src * self.num_nodes + ix
        assert len(np.unique(fwd)) == len(fwd), "duplicate neighbor"
        rev = np.sort(ix * self.num_nodes + src)
        assert np.array_equal(np.sort(fwd), rev), "adjacency not symmetric"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.features, other.features)
            and same_labels
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EdgeSplit:
    """Disjoint train / validation / test edges plus the deletion bookkeeping."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    deleted: np.ndarray = field(default_factory=lambda: _EMPTY_EDGES.copy())
    remaining: np.ndarray | None = None

    def __post_init__(self):
        for name in ("train", "validation", "test", "deleted"):
            object.__setattr__(self, name, canonical_edges(getattr(self, name)))
        if self.remaining is None:
            rem = _set_difference(self.train, self.deleted)
        else:
            rem = canonical_edges(self.remaining)
        object.__setattr__(self, "remaining", rem)

    def with_deleted(self, deleted) -> EdgeSplit:
        return EdgeSplit(self.train, self.validation, self.test, deleted)

    def all_edges(self) -> np.ndarray:
        return canonical_edges(np.concatenate([self.train, self.validation, self.test]))

    @property
    def total(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    def validate(self) -> None:
        """Check disjointness and ``E_d ⊆ train``, ``E_r = train \\ E_d``."""
        n = int(max((a.max() for a in (self.train, self.validation, self.test) if len(a)),
                    default=0)) + 1
        tr, va, te, de, re_ = (edge_keys(a, n) for a in
                               (self.train, self.validation, self.test, self.deleted,
                                self.remaining))
        assert not np.intersect1d(tr, va).size, "train ∩ validation non-empty"
        assert not np.intersect1d(tr, te).size, "train ∩ test non-empty"
        assert not np.intersect1d(va, te).size, "validation ∩ test non-empty"
        assert np.all(np.isin(de, tr)), "deleted edges outside train"
        assert np.array_equal(np.setdiff1d(tr, de), re_), "remaining != train \\ deleted"


def _set_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(b) == 0 or len(a) == 0:
        return a.copy()
    n = int(max(a.max(), b.max())) + 1
    keep = ~_isin_sorted(edge_keys(a, n), np.sort(edge_keys(b, n)))
    return a[keep]


# -- loading -----------------------------------------------------------


def _read_features(path) -> np.ndarray:
    x = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    return x


def _read_labels(path, num_nodes: int) -> np.ndarray:
    labels = np.full(num_nodes, -1, dtype=np.int64)
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                node, label = (int(t) for t in line.split(","))
            except ValueError:
                raise ParseError(path, line_no, f"expected 'node_id,label', got {line!r}")
            if not 0 <= node < num_nodes:
                raise ParseError(path, line_no, f"node id {node} out of range")
            labels[node] = label
    return labels


def load_edge_list(
    path,
    n_f: int = 16,
    features_path=None,
    labels_path=None,
    num_nodes: int | None = None,
) -> Graph:
    """Read a whitespace/TAB separated edge list into a :class:`Graph`.

    Lines starting with ``#`` are comments.  Without ``features_path`` the
    features are degree one-hot buckets of width ``n_f``.  The node count is
    taken from ``num_nodes``, else the feature row count, else ``max id + 1``.
    Self-loops and duplicate pairs are dropped with a ``UserWarning``.
    """
    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) != 2:
                raise ParseError(path, line_no, f"expected two node ids, got {line!r}")
            try:
                u, v = int(toks[0]), int(toks[1])
            except ValueError:
                raise ParseError(path, line_no, f"non-integer node id in {line!r}")
            if u < 0 or v < 0:
                raise ParseError(path, line_no, "negative node id")
            pairs.append((u, v))
    raw = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    features = _read_features(features_path) if features_path is not None else None
    if num_nodes is None:
        if features is not None:
            num_nodes = features.shape[0]
        else:
            num_nodes = int(raw.max()) + 1 if len(raw) else 0
    if features is not None and features.shape[0] != num_nodes:
        raise DimensionError(
            f"{features_path}: {features.shape[0]} feature rows for {num_nodes} nodes"
        )
    if len(raw) and raw.max() >= num_nodes:
        raise DimensionError(f"{path}: node id {int(raw.max())} >= node count {num_nodes}")

    edges = canonical_edges(raw)
    dropped = len(raw) - len(edges)
    if dropped:
        n_loops = int(np.sum(raw[:, 0] == raw[:, 1]))
        warnings.warn(
            f"{path}: dropped {dropped} rows ({n_loops} self-loops, "
            f"{dropped - n_loops} duplicates)",
            stacklevel=2,
        )
    if features is None:
        deg = np.bincount(edges.ravel(), minlength=num_nodes)
        features = degree_bucket_features(deg, n_f)
    labels = _read_labels(labels_path, num_nodes) if labels_path is not None else None
    return Graph.from_edges(num_nodes, edges, features, labels)


def save_edge_list(g: Graph, path, features_path=None, labels_path=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in g.edges():
            fh.write(f"{u}\t{v}\n")
    if features_path is not None:
        np.savetxt(features_path, g.features, delimiter=",", fmt="%.17g")
    if labels_path is not None and g.labels is not None:
        with open(labels_path, "w") as fh:
            for i, y in enumerate(g.labels):
                fh.write(f"{i},{y}\n")


# -- neighborhoods -----------------------------------------------------


def _gather_neighbors(g: Graph, nodes: np.ndarray) -> np.ndarray:
    starts = g.indptr[nodes]
    lens = g.indptr[nodes + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(starts - np.cumsum(lens) + lens, lens)
    return g.indices[offsets + np.arange(total)]


def hop_distances(g: Graph, seeds, k: int) -> np.ndarray:
    """Multi-source BFS distance (``-1`` beyond ``k`` hops or unreachable)."""
    if k < 0:
        raise ValueError("hop count must be non-negative")
    seeds = as_node_set(seeds, g.num_nodes)
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[seeds] = 0
    frontier = seeds
    for hop in range(1, k + 1):
        if len(frontier) == 0:
            break
        nb = np.unique(_gather_neighbors(g, frontier))
        frontier = nb[dist[nb] < 0]
        dist[frontier] = hop
    return dist


def khop_nodes(g: Graph, seeds, k: int) -> np.ndarray:
    """All nodes within ``k`` hops of any seed, seeds included."""
    return np.flatnonzero(hop_distances(g, seeds, k) >= 0)


# -- splitting and sampling -------------------------------------------


def split_edges(g: Graph, test_frac: float, val_frac: float, seed: int) -> EdgeSplit:
    """Uniformly partition the canonical edges into train / validation / test."""
    if not (0 <= test_frac < 1 and 0 <= val_frac < 1 and test_frac + val_frac < 1):
        raise ValueError(f"invalid fractions test={test_frac}, val={val_frac}")
    edges = g.edges()
    m = len(edges)
    n_test = int(np.floor(test_frac * m + 1e-9))
    n_val = int(np.floor(val_frac * m + 1e-9))
    perm = np.random.default_rng(seed).permutation(m)
    test = edges[perm[:n_test]]
    val = edges[perm[n_test : n_test + n_val]]
    train = edges[perm[n_test + n_val :]]
    return EdgeSplit(train, val, test)


def deletion_pools(g: Graph, split: EdgeSplit) -> tuple[np.ndarray, np.ndarray]:
    """Train edges inside / outside the 2-hop neighborhood of the test endpoints.

    IN edges have at least one endpoint in the neighborhood, OUT edges none.
    """
    near = np.zeros(g.num_nodes, dtype=bool)
    near[khop_nodes(g, split.test.ravel(), 2)] = True
    train = split.train
    inside = near[train[:, 0]] | near[train[:, 1]]
    return train[inside], train[~inside]


def sample_deletion(
    g: Graph, split: EdgeSplit, ratio: float, locality: str, seed: int
) -> EdgeSplit:
    """Draw ``floor(ratio * total edges)`` train edges to delete, IN or OUT of E_t's 2-hop area."""
    locality = locality.upper()
    if locality not in (IN, OUT):
        raise ValueError(f"locality must be IN or OUT, got {locality!r}")
    if not ratio > 0:
        raise ValueError("deletion ratio must be positive")
    if ratio > 0.05:
        warnings.warn(f"deletion ratio {ratio} exceeds the usual 5% ceiling", stacklevel=2)
    if len(split.test) == 0:
        raise ValueError("sample_deletion needs a non-empty test set")
    n_req = int(np.floor(ratio * split.total + 1e-9))
    pool_in, pool_out = deletion_pools(g, split)
    pool = pool_in if locality == IN else pool_out
    if n_req > len(pool):
        raise InsufficientCandidatesError(n_req, len(pool), f"{locality} edges")
    idx = np.random.default_rng(seed).choice(len(pool), size=n_req, replace=False)
    return split.with_deleted(pool[idx])


def delete_edges(g: Graph, e_d) -> Graph:
    """Remove ``e_d`` from ``g`` (both CSR directions); node rows are kept."""
    e_d = canonical_edges(e_d, drop_self_loops=False)
    if len(e_d) == 0:
        return g
    n = g.num_nodes
    if e_d.min() < 0 or e_d.max() >= n:
        raise IndexError(f"edge endpoint out of range for {n} nodes")
    edges = g.edges()
    keys = edge_keys(edges, n)
    del_keys = edge_keys(e_d, n)
    present = _isin_sorted(del_keys, keys)
    if not present.all():
        u, v = e_d[np.argmin(present)]
        raise MissingEdgeError(int(u), int(v))
    keep = ~_isin_sorted(keys, del_keys)
    return g.with_edges(edges[keep])


def incident_edges(g: Graph, nodes) -> np.ndarray:
    nodes = as_node_set(nodes, g.num_nodes)
    flag = np.zeros(g.num_nodes, dtype=bool)
    flag[nodes] = True
    edges = g.edges()
    return edges[flag[edges[:, 0]] | flag[edges[:, 1]]]


def delete_nodes(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Drop every edge touching ``nodes``; returns the new graph and the removed edges."""
    removed = incident_edges(g, nodes)
    return delete_edges(g, removed), removed


def zero_features(g: Graph, nodes) -> Graph:
    nodes = as_node_set(nodes, g.num_nodes)
    x = g.features.copy()
    x[nodes] = 0.0
    return g.with_features(x)


def negative_sample(g: Graph, m: int, exclude=None, seed: int = 0) -> np.ndarray:
    """Uniformly sample ``m`` distinct canonical non-edges not listed in ``exclude``.

    Pairs come back in sampling order, not sorted.
    """
    n = g.num_nodes
    forbidden = g.edges()
    if exclude is not None and len(exclude):
        forbidden = canonical_edges(np.concatenate([forbidden, canonical_edges(exclude)]))
    forbidden_keys = edge_keys(forbidden, n)
    total_pairs = n * (n - 1) // 2
    available = total_pairs - len(forbidden_keys)
    if m > available:
        raise InsufficientCandidatesError(m, available, "non-edges")
    if m <= 0:
        return _EMPTY_EDGES.copy()
    rng = np.random.default_rng(seed)

    if total_pairs <= 200_000 or m * 4 > available:
        iu, iv = np.triu_indices(n, k=1)
        keys = iu.astype(np.int64) * n + iv
        keys = keys[~_isin_sorted(keys, forbidden_keys)]
        picked = keys[rng.choice(len(keys), size=m, replace=False)]
        return _keys_to_edges(picked, n)

    out = np.empty(0, dtype=np.int64)
    while len(out) < m:
        need = m - len(out)
        draw = rng.integers(0, n, size=(2 * need + 16, 2))
        draw = draw[draw[:, 0] != draw[:, 1]]
        draw.sort(axis=1)
        keys = draw[:, 0] * n + draw[:, 1]
        keys = keys[~_isin_sorted(keys, forbidden_keys)]
        keys = np.concatenate([out, keys])
        _, first = np.unique(keys, return_index=True)
        out = keys[np.sort(first)][:m]
    return _keys_to_edges(out, n)
