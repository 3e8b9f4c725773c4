"""GCN encoder, dot-product edge decoder, node-classification head and base training."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError, ShapeError
from .graph import EdgeSplit, Graph, canonical_edges, negative_sample

log = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def normalized_adjacency(g: Graph) -> ad.SparseMatrix:
    """``D̃^{-1/2} (A + I) D̃^{-1/2}`` as a constant CSR matrix (cached per graph)."""
    cached = g._cache.get("norm_adj")
    if cached is not None:
        return cached
    n = g.num_nodes
    deg = g.degrees().astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    # merge self-loops into the sorted neighbor lists
    src = np.concatenate([np.repeat(np.arange(n), g.degrees()), np.arange(n)])
    dst = np.concatenate([g.indices, np.arange(n)])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    vals = inv_sqrt[src] * inv_sqrt[dst]
    adj = ad.SparseMatrix(n, n, indptr, dst.astype(np.int64), vals)
    g._cache["norm_adj"] = adj
    return adj


@dataclass
class NodeEmbeddings:
    """Per-layer node representations ``H^0 .. H^L`` (``H^0`` is the feature matrix)."""

    layers: list[np.ndarray]

    @property
    def final(self) -> np.ndarray:
        return self.layers[-1]

    def __getitem__(self, l: int) -> np.ndarray:
        return self.layers[l]

    def __len__(self) -> int:
        return len(self.layers)


@dataclass
class GnnModel:
    """Stack of GCN weights ``W^1..W^L`` with a dot-product decoder."""

    layer_weights: list[np.ndarray]
    cls_head: np.ndarray | None = None
    decoder: str = "dot"

    def __post_init__(self):
        if not self.layer_weights:
            raise ConfigError("a model needs at least one layer")
        self.layer_weights = [np.asarray(w, dtype=np.float64) for w in self.layer_weights]
        for a, b in zip(self.layer_weights, self.layer_weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"layer dims do not chain: {a.shape} then {b.shape}")
        if self.cls_head is not None and self.cls_head.shape[0] != self.layer_dims[-1]:
            raise ShapeError("classification head does not match the embedding width")
        if self.decoder != "dot":
            raise ConfigError(f"unsupported decoder {self.decoder!r}")

    @classmethod
    def init(cls, dims: list[int], seed: int = 0) -> GnnModel:
        """Glorot-uniform weights for ``dims = [n_f, d_1, ..., d_L]``."""
        if len(dims) < 2:
            raise ConfigError("dims must list the input width and at least one layer width")
        rng = np.random.default_rng(seed)
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        return cls(weights)

    @property
    def num_layers(self) -> int:
        return len(self.layer_weights)

    @property
    def layer_dims(self) -> list[int]:
        return [self.layer_weights[0].shape[0]] + [w.shape[1] for w in self.layer_weights]

    def num_params(self) -> int:
        n = sum(w.size for w in self.layer_weights)
        return n + (self.cls_head.size if self.cls_head is not None else 0)

    def copy(self) -> GnnModel:
        return copy.deepcopy(self)

    def embed(self, g: Graph) -> np.ndarray:
        return forward(g, self).final


def _layer(adj: ad.SparseMatrix, h: np.ndarray, w: np.ndarray, last: bool) -> np.ndarray:
    out = adj.dot(h @ w)
    return out if last else np.maximum(out, 0.0)


def forward(g: Graph, model: GnnModel) -> NodeEmbeddings:
    """``H^l = ReLU(Â H^{l-1} W^l)`` for hidden layers, no activation on the last."""
    if g.num_features != model.layer_dims[0]:
        raise ShapeError(
            f"graph has {g.num_features} features, model expects {model.layer_dims[0]}"
        )
    adj = normalized_adjacency(g)
    layers = [g.features]
    L = model.num_layers
    for l, w in enumerate(model.layer_weights, 1):
        layers.append(_layer(adj, layers[-1], w, l == L))
    return NodeEmbeddings(layers)


def forward_tape(adj: ad.SparseMatrix, x, weights: list[ad.Tensor]) -> ad.Tensor:
    """Differentiable forward returning ``z``; records onto the active tape."""
    h = ad.as_tensor(x)
    for l, w in enumerate(weights, 1):
        h = ad.spmm(adj, ad.matmul(h, w))
        if l < len(weights):
            h = ad.relu(h)
    return h


def decode_edge(emb, u, v):
    """``σ(⟨z_u, z_v⟩)``; ``u`` and ``v`` may be ints or index arrays."""
    z = emb.final if isinstance(emb, NodeEmbeddings) else np.asarray(emb)
    n = z.shape[0]
    u_arr, v_arr = np.asarray(u), np.asarray(v)
    for arr in (u_arr, v_arr):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise IndexError(f"node id out of range for {n} nodes")
    logits = np.einsum("...i,...i->...", z[u_arr], z[v_arr])
    p = ad._sigmoid(np.atleast_1d(np.asarray(logits, dtype=np.float64)))
    return float(p[0]) if np.ndim(logits) == 0 else p


def edge_probs(z: np.ndarray, edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return decode_edge(z, e[:, 0], e[:, 1]) if len(e) else np.empty(0)


def classify_nodes(emb, model: GnnModel) -> tuple[np.ndarray, np.ndarray]:
    """Class scores ``z · head`` and argmax predictions (ties go to the lowest class id)."""
    if model.cls_head is None:
        raise ConfigError("model has no classification head")
    z = emb.final if isinstance(emb, NodeEmbeddings) else np.asarray(emb)
    scores = z @ model.cls_head
    return scores, np.argmax(scores, axis=1)


@dataclass
class TrainConfig:
    hidden_dims: list[int] = field(default_factory=lambda: [128, 64])
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")


def _auroc(pos: np.ndarray, neg: np.ndarray) -> float:
    from .metrics import auroc

    return auroc(np.concatenate([pos, neg]),
                 np.concatenate([np.ones(len(pos)), np.zeros(len(neg))]))


def train_base(g: Graph, split: EdgeSplit, cfg: TrainConfig) -> GnnModel:
    """Train a GCN link predictor on ``split.remaining``.

    Message passing uses only ``split.remaining`` edges.  Each epoch draws
    fresh negatives (one per positive) that avoid every known edge.  The
    returned weights are those with the best validation AUROC (ties go to the
    later epoch); without a
    validation set the final weights are returned.
    """
    g_msg = g.with_edges(split.remaining)
    adj = normalized_adjacency(g_msg)
    model = GnnModel.init([g.num_features, *cfg.hidden_dims], cfg.seed)
    weights = [ad.Tensor(w.copy(), requires_grad=True) for w in model.layer_weights]
    opt = ad.Optimizer(weights, "adam", cfg.lr, cfg.weight_decay)
    known = canonical_edges(np.concatenate([g.edges(), split.all_edges()]))
    pos = split.remaining
    val = split.validation
    val_neg = negative_sample(g, len(val), known, derive_seed(cfg.seed, 1)) if len(val) else None
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(pos))])

    best_auc, best = -np.inf, [w.data.copy() for w in weights]
    tape = ad.Tape()
    for epoch in range(cfg.epochs):
        neg = negative_sample(g, len(pos), known, derive_seed(cfg.seed, 2, epoch))
        pairs = np.concatenate([pos, neg])
        tape.reset()
        opt.zero_grad()
        try:
            with tape:
                z = forward_tape(adj, g_msg.features, weights)
                logits = ad.rowwise_dot(ad.gather_rows(z, pairs[:, 0]),
                                        ad.gather_rows(z, pairs[:, 1]))
                loss = ad.bce_with_logits(logits, labels)
        except NumericError as exc:
            raise NumericError(f"base training diverged at epoch {epoch}: {exc}") from exc
        if val_neg is not None:
            auc = _auroc(edge_probs(z.data, val), edge_probs(z.data, val_neg))
            if auc >= best_auc:
                best_auc, best = auc, [w.data.copy() for w in weights]
        tape.backward(loss)
        opt.step()
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.4f best val auc %.4f", epoch, loss.item(), best_auc)
    if val_neg is None:
        best = [w.data.copy() for w in weights]
    return GnnModel(best)


def train_node_head(model: GnnModel, g: Graph, nodes, labels=None, epochs: int = 200,
                    lr: float = 0.05, seed: int = 0) -> GnnModel:
    """Fit a softmax head on frozen embeddings of ``nodes``; returns a new model."""
    labels = g.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise ConfigError("node labels required to train a classification head")
    nodes = np.asarray(nodes, dtype=np.int64)
    z = model.embed(g)[nodes]
    y = labels[nodes]
    n_cls = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    head = ad.Tensor(rng.normal(0.0, 0.01, size=(z.shape[1], n_cls)), requires_grad=True)
    opt = ad.Optimizer([head], "adam", lr)
    tape = ad.Tape()
    for _ in range(epochs):
        tape.reset()
        opt.zero_grad()
        with tape:
            loss = ad.cross_entropy(ad.matmul(ad.Tensor(z), head), y)
        tape.backward(loss)
        opt.step()
    out = model.copy()
    out.cls_head = head.data.copy()
    return out
