"""Seeded synthetic graphs for tests and desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import Graph, canonical_edges, degree_bucket_features

KINDS = ("erdos_renyi", "barabasi_albert", "two_cliques", "planted_partition")
FEATURE_KINDS = ("degree", "random")


@dataclass
class SyntheticSpec:
    """Generator name plus its parameters.

    ``params`` by kind:

    * ``erdos_renyi``: ``n``, ``p``
    * ``barabasi_albert``: ``n``, ``m``
    * ``two_cliques``: ``n_per``, ``bridges``
    * ``planted_partition``: ``n``, ``blocks``, ``p_in``, ``p_out``
    """

    kind: str
    params: dict = field(default_factory=dict)
    features: str = "degree"
    n_f: int = 16

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown synthetic graph kind {self.kind!r}")
        if self.features not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.features!r}")


def erdos_renyi_edges(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ConfigError("p must lie in [0, 1]")
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)


def barabasi_albert_edges(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Preferential attachment: each new node links to ``m`` distinct existing nodes."""
    if m < 1 or m >= n:
        raise ConfigError("barabasi_albert needs 1 <= m < n")
    edges = []
    # endpoint multiset; sampling from it is degree-proportional
    targets = list(range(m))
    pool: list[int] = []
    for new in range(m, n):
        for t in targets:
            edges.append((t, new))
        pool.extend(targets)
        pool.extend([new] * m)
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(pool[rng.integers(len(pool))])
        targets = sorted(chosen)
    return canonical_edges(edges)


def two_cliques_edges(n_per: int, bridges: int, rng: np.random.Generator) -> np.ndarray:
    """Two ``n_per``-cliques joined by ``bridges`` distinct cross edges.

    The first bridge always joins node 0 to node ``n_per``; the rest are drawn
    at random.
    """
    if bridges > n_per * n_per:
        raise ConfigError("more bridges than cross pairs")
    a = np.arange(n_per)
    iu, ju = np.triu_indices(n_per, k=1)
    inside = np.concatenate([np.stack([a[iu], a[ju]], 1), np.stack([a[iu], a[ju]], 1) + n_per])
    cross = []
    if bridges:
        cross.append(0)
        rest = rng.permutation(np.arange(1, n_per * n_per))[: bridges - 1]
        cross.extend(rest.tolist())
    cross = np.asarray(cross, dtype=np.int64)
    bridge = np.stack([cross // n_per, n_per + cross % n_per], axis=1)
    return canonical_edges(np.concatenate([inside, bridge.reshape(-1, 2)]))


def planted_partition_edges(n: int, blocks: int, p_in: float, p_out: float,
                            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stochastic block model with equal-sized blocks; returns ``(edges, block_of_node)``."""
    block = np.arange(n) * blocks // n
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64), block


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Graph:
    """Build the graph described by ``spec``; identical seeds give identical graphs."""
    rng = np.random.default_rng(seed)
    p = spec.params
    labels = None
    try:
        if spec.kind == "erdos_renyi":
            n = int(p["n"])
            edges = erdos_renyi_edges(n, float(p["p"]), rng)
        elif spec.kind == "barabasi_albert":
            n = int(p["n"])
            edges = barabasi_albert_edges(n, int(p["m"]), rng)
        elif spec.kind == "two_cliques":
            n_per = int(p["n_per"])
            n = 2 * n_per
            edges = two_cliques_edges(n_per, int(p.get("bridges", 1)), rng)
            labels = (np.arange(n) >= n_per).astype(np.int64)
        else:
            n = int(p["n"])
            edges, labels = planted_partition_edges(
                n, int(p["blocks"]), float(p["p_in"]), float(p["p_out"]), rng)
    except KeyError as exc:
        raise ConfigError(f"{spec.kind} needs parameter {exc.args[0]!r}") from None
    g = Graph.from_edges(n, edges, labels=labels)
    if spec.features == "random":
        feats = rng.normal(size=(n, spec.n_f))
    else:
        feats = degree_bucket_features(g.degrees(), spec.n_f)
    return g.with_features(feats)


def parse_spec(text: str, features: str = "degree", n_f: int = 16) -> SyntheticSpec:
    """Parse ``"kind:key=value,key=value"``, e.g. ``"two_cliques:n_per=20,bridges=1"``."""
    kind, _, rest = text.strip().partition(":")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"malformed synthetic parameter {item!r}")
        params[key.strip()] = float(value) if any(c in value for c in ".eE") else int(value)
    return SyntheticSpec(kind.strip(), params, features, n_f)
