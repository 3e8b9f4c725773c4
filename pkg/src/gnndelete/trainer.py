"""Training the deletion operator, task drivers, and baseline unlearners."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .deletion import (
    ACTIVATIONS,
    LAYER_WISE,
    MODES,
    DeletionOperator,
    UnlearnedModel,
    active_layers,
    build_masks,
    del_forward,
    masks_from_seeds,
)
from .errors import ConfigError, NumericError
from .graph import (
    EdgeSplit,
    Graph,
    as_node_set,
    canonical_edges,
    delete_edges,
    hop_distances,
    incident_edges,
    negative_sample,
    zero_features,
)
from .model import (
    GnnModel,
    NodeEmbeddings,
    TrainConfig,
    _layer,
    derive_seed,
    forward,
    forward_tape,
    normalized_adjacency,
    train_base,
)

log = logging.getLogger(__name__)


@dataclass
class UnlearnConfig:
    """Settings for one operator-training run.

    ``lam`` weights the deleted-edge-consistency term against neighborhood
    influence (``lam * dec + (1 - lam) * ni``).
    """

    lam: float = 0.5
    epochs: int = 200
    lr: float = 1e-3
    optimizer: str = "adam"
    random_pair_seed: int = 0
    pairs_per_deleted_edge: int = 1
    mode: str = LAYER_WISE
    activation: str = "linear"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.pairs_per_deleted_edge < 1:
            raise ConfigError("pairs_per_deleted_edge must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class LossReport:
    """Per-layer loss series, one value per epoch."""

    layers: list[int]
    dec: dict[int, list[float]] = field(default_factory=dict)
    ni: dict[int, list[float]] = field(default_factory=dict)
    total: dict[int, list[float]] = field(default_factory=dict)

    def append(self, layer: int, dec: float, ni: float, total: float) -> None:
        self.dec.setdefault(layer, []).append(dec)
        self.ni.setdefault(layer, []).append(ni)
        self.total.setdefault(layer, []).append(total)


# -- loss terms ----------------------------------------------------------


def dec_term(h: ad.Tensor, target: np.ndarray, e_d: np.ndarray, pairs: np.ndarray) -> ad.Tensor:
    """MSE between ``[h'_u; h'_v]`` over deleted edges and ``[h_p; h_q]`` over random pairs.

    With ``k`` pairs per deleted edge, each edge row is repeated ``k`` times.
    """
    if len(e_d) == 0:
        return ad.Tensor(0.0)
    k = len(pairs) // len(e_d)
    if k * len(e_d) != len(pairs) or k < 1:
        raise ValueError(f"{len(pairs)} random pairs for {len(e_d)} deleted edges")
    rows = np.repeat(e_d, k, axis=0)
    pred = ad.concat_cols(ad.gather_rows(h, rows[:, 0]), ad.gather_rows(h, rows[:, 1]))
    tgt = np.concatenate([target[pairs[:, 0]], target[pairs[:, 1]]], axis=1)
    return ad.mse(pred, tgt)


def ni_term(h: ad.Tensor, target: np.ndarray, subgraph_ids: np.ndarray) -> ad.Tensor:
    """MSE between ``h'_w`` and ``h_w`` over the concatenated, id-sorted subgraph node lists."""
    if len(subgraph_ids) == 0:
        return ad.Tensor(0.0)
    return ad.mse(ad.gather_rows(h, subgraph_ids), target[subgraph_ids])


def subgraph_ids(g: Graph, anchors: list[np.ndarray], hops: int) -> np.ndarray:
    """Concatenate, anchor by anchor, the sorted nodes within ``hops`` of each anchor set."""
    parts = [np.flatnonzero(hop_distances(g, a, hops) >= 0) for a in anchors]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


# -- the unlearned forward pass with per-layer gradient isolation -------


class _LayerCache:
    """Constant pre-operator layer outputs that do not depend on any ``W_D``."""

    def __init__(self):
        self.pre: dict[int, np.ndarray] = {}


def operator_layers(base: GnnModel, op: DeletionOperator, g_r: Graph,
                    weights: list[ad.Tensor] | None = None,
                    cache: _LayerCache | None = None) -> list[ad.Tensor]:
    """Unlearned layer outputs ``H'^1..H'^L`` on ``g_r``.

    The input of every layer is detached, so an operator at layer ``l``
    receives gradient only from losses on ``H'^l``.  ``weights`` defaults to
    constant tensors built from ``op.w_d``.
    """
    if weights is None:
        weights = [ad.Tensor(w) for w in op.w_d]
    adj = normalized_adjacency(g_r)
    L = base.num_layers
    outs: list[ad.Tensor] = []
    prev = g_r.features
    untouched = True
    for l, w in enumerate(base.layer_weights, 1):
        if untouched and cache is not None and l in cache.pre:
            pre = cache.pre[l]
        else:
            pre = _layer(adj, prev, w, l == L)
            if untouched and cache is not None:
                cache.pre[l] = pre
        i = op.slot(l)
        if i is None:
            out = ad.Tensor(pre)
        else:
            out = del_forward(ad.Tensor(pre), op.masks[i], weights[i], op.activation)
            untouched = False
        outs.append(out)
        prev = out.data
    return outs


def unlearning_objective(base: GnnModel, op: DeletionOperator, g_r: Graph,
                         base_emb: NodeEmbeddings, e_d: np.ndarray, pairs: np.ndarray,
                         ni_ids: dict[int, np.ndarray], lam: float,
                         weights: list[ad.Tensor] | None = None,
                         cache: _LayerCache | None = None):
    """Sum over active layers of ``lam * dec^l + (1 - lam) * ni^l``.

    Returns ``(total, parts)`` where ``parts`` maps layer -> (dec, ni, layer_total).
    """
    outs = operator_layers(base, op, g_r, weights, cache)
    total = None
    parts = {}
    for l in op.layers:
        h = outs[l - 1]
        dec = dec_term(h, base_emb[l], e_d, pairs)
        ni = ni_term(h, base_emb[l], ni_ids[l])
        layer_total = ad.add(ad.scale(dec, lam), ad.scale(ni, 1.0 - lam))
        parts[l] = (dec, ni, layer_total)
        total = layer_total if total is None else ad.add(total, layer_total)
    return total, parts


def dec_loss(l: int, um: UnlearnedModel, base_emb: NodeEmbeddings, e_d, pairs,
             weights: list[ad.Tensor] | None = None) -> ad.Tensor:
    """Deleted-edge-consistency loss at layer ``l`` of the unlearned model."""
    e_d = canonical_edges(e_d)
    if len(e_d) == 0:
        return ad.Tensor(0.0)
    h = operator_layers(um.base, um.op, um.graph_r, weights)[l - 1]
    return dec_term(h, base_emb[l], e_d, np.asarray(pairs, dtype=np.int64).reshape(-1, 2))


def ni_loss(l: int, um: UnlearnedModel, base_emb: NodeEmbeddings, e_d, g: Graph | None = None,
            weights: list[ad.Tensor] | None = None) -> ad.Tensor:
    """Neighborhood-influence loss at layer ``l``.

    Subgraphs are taken on the pre-deletion graph ``g``, which defaults to
    ``graph_r`` with ``e_d`` restored.
    """
    e_d = canonical_edges(e_d)
    if len(e_d) == 0:
        return ad.Tensor(0.0)
    if g is None:
        g = um.graph_r.with_edges(np.concatenate([um.graph_r.edges(), e_d]))
    ids = subgraph_ids(g, list(e_d), l)
    h = operator_layers(um.base, um.op, um.graph_r, weights)[l - 1]
    return ni_term(h, base_emb[l], ids)


# -- training drivers ----------------------------------------------------


def _fit(base: GnnModel, g: Graph, g_r: Graph, e_d: np.ndarray, anchors: list[np.ndarray],
         op: DeletionOperator, cfg: UnlearnConfig, seed_offset: int = 0) -> LossReport:
    """Optimize ``op.w_d`` in place against the frozen ``base``."""
    base_emb = forward(g, base)
    ni_ids = {l: subgraph_ids(g, anchors, l) for l in op.layers}
    params = [ad.Tensor(w.copy(), requires_grad=True) for w in op.w_d]
    opt = ad.Optimizer(params, cfg.optimizer, cfg.lr)
    report = LossReport(op.layers)
    cache = _LayerCache()
    n_pairs = len(e_d) * cfg.pairs_per_deleted_edge
    tape = ad.Tape()
    for epoch in range(cfg.epochs):
        pairs = negative_sample(g, n_pairs, None, cfg.random_pair_seed + seed_offset + epoch)
        tape.reset()
        opt.zero_grad()
        try:
            with tape:
                total, parts = unlearning_objective(base, op, g_r, base_emb, e_d, pairs,
                                                    ni_ids, cfg.lam, params, cache)
        except NumericError as exc:
            raise NumericError(f"unlearning diverged at epoch {epoch}: {exc}") from exc
        for l, (dec, ni, tot) in parts.items():
            report.append(l, dec.item(), ni.item(), tot.item())
        if total.requires_grad:
            tape.backward(total)
        opt.step()
    op.w_d = [p.data.copy() for p in params]
    return report


def unlearn(base: GnnModel, g: Graph, e_d, cfg: UnlearnConfig) -> tuple[DeletionOperator, LossReport]:
    """Train a deletion operator that forgets ``e_d`` (edges of ``g``)."""
    e_d = canonical_edges(e_d)
    g_r = delete_edges(g, e_d)
    masks = build_masks(g, e_d, base.num_layers, cfg.mode)
    op = DeletionOperator.identity(base.layer_dims, masks, cfg.mode, cfg.activation)
    report = _fit(base, g, g_r, e_d, list(e_d), op, cfg)
    return op, report


def unlearn_nodes(base: GnnModel, g: Graph, nodes, cfg: UnlearnConfig):
    """Node deletion: drop incident edges, then unlearn them.  Returns ``(op, report, e_d)``."""
    e_d = incident_edges(g, nodes)
    if len(e_d) == 0:
        masks = masks_from_seeds(g, nodes, base.num_layers, cfg.mode)
        op = DeletionOperator.identity(base.layer_dims, masks, cfg.mode, cfg.activation)
        return op, LossReport(op.layers), e_d
    op, report = unlearn(base, g, e_d, cfg)
    return op, report, e_d


def sequential_unlearn(base: GnnModel, g: Graph, batches: list, cfg: UnlearnConfig) -> DeletionOperator:
    """Forget ``batches`` one after another with a single, continuously trained operator."""
    batches = [canonical_edges(b) for b in batches]
    seen = np.concatenate(batches) if batches else np.empty((0, 2), dtype=np.int64)
    if len(canonical_edges(seen)) != len(seen):
        raise ValueError("deletion batches overlap")
    L = base.num_layers
    empty = [np.zeros(g.num_nodes, dtype=bool) for _ in active_layers(L, cfg.mode)]
    op = DeletionOperator.identity(base.layer_dims, empty, cfg.mode, cfg.activation)
    done = np.empty((0, 2), dtype=np.int64)
    for i, batch in enumerate(batches):
        done = canonical_edges(np.concatenate([done, batch]))
        if len(done) == 0:
            continue
        g_r = delete_edges(g, done)
        op.masks = build_masks(g, done, L, cfg.mode)
        _fit(base, g, g_r, done, list(done), op, cfg, seed_offset=i * cfg.epochs)
    return op


def unlearn_node_features(base: GnnModel, g: Graph, nodes, cfg: UnlearnConfig) -> DeletionOperator:
    """Forget the features of ``nodes``: zero them and train on their neighborhoods.

    The objective is the usual one with ``E_d`` = edges incident to ``nodes``;
    each listed node also anchors its own neighborhood term, so isolated nodes
    are still covered.
    """
    nodes = as_node_set(nodes, g.num_nodes)
    g_r = zero_features(g, nodes)
    e_d = incident_edges(g, nodes)
    masks = masks_from_seeds(g, nodes, base.num_layers, cfg.mode)
    op = DeletionOperator.identity(base.layer_dims, masks, cfg.mode, cfg.activation)
    anchors = list(e_d) + [np.array([w]) for w in nodes]
    _fit(base, g, g_r, e_d, anchors, op, cfg)
    return op


# -- baselines ---------------------------------------------------------------


def baseline_retrain(g_r: Graph, split: EdgeSplit, cfg: TrainConfig) -> GnnModel:
    """Retrain from scratch on the remaining edges."""
    return train_base(g_r, split, cfg)


def baseline_grad_ascent(base: GnnModel, g: Graph, e_d, steps: int, lr: float = 0.01,
                         optimizer: str = "sgd") -> GnnModel:
    """Gradient ascent on the BCE of ``e_d`` treated as positives, all weights trainable."""
    e_d = canonical_edges(e_d)
    model = base.copy()
    if steps <= 0 or len(e_d) == 0:
        return model
    adj = normalized_adjacency(g)
    weights = [ad.Tensor(w.copy(), requires_grad=True) for w in model.layer_weights]
    opt = ad.Optimizer(weights, optimizer, lr)
    ones = np.ones(len(e_d))
    tape = ad.Tape()
    for step in range(steps):
        tape.reset()
        opt.zero_grad()
        with tape:
            z = forward_tape(adj, g.features, weights)
            logits = ad.rowwise_dot(ad.gather_rows(z, e_d[:, 0]), ad.gather_rows(z, e_d[:, 1]))
            loss = ad.scale(ad.bce_with_logits(logits, ones), -1.0)
        tape.backward(loss)
        opt.step()
    model.layer_weights = [w.data.copy() for w in weights]
    return model


def baseline_noisy_finetune(base: GnnModel, g_r: Graph, split: EdgeSplit, steps: int,
                            noise_sigma: float, lr: float = 0.01, seed: int = 0) -> GnnModel:
    """Descend BCE on the remaining edges for ``steps`` updates, then add Gaussian weight noise."""
    model = base.copy()
    weights = [ad.Tensor(w.copy(), requires_grad=True) for w in model.layer_weights]
    if steps > 0:
        g_msg = g_r.with_edges(split.remaining)
        adj = normalized_adjacency(g_msg)
        pos = split.remaining
        known = canonical_edges(np.concatenate([g_r.edges(), split.all_edges()]))
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(pos))])
        opt = ad.Optimizer(weights, "sgd", lr)
        tape = ad.Tape()
        for step in range(steps):
            neg = negative_sample(g_r, len(pos), known, derive_seed(seed, 3, step))
            pairs = np.concatenate([pos, neg])
            tape.reset()
            opt.zero_grad()
            with tape:
                z = forward_tape(adj, g_msg.features, weights)
                logits = ad.rowwise_dot(ad.gather_rows(z, pairs[:, 0]),
                                        ad.gather_rows(z, pairs[:, 1]))
                loss = ad.bce_with_logits(logits, labels)
            tape.backward(loss)
            opt.step()
    rng = np.random.default_rng(derive_seed(seed, 4))
    model.layer_weights = [w.data + rng.normal(0.0, noise_sigma, size=w.data.shape)
                           if noise_sigma > 0 else w.data.copy() for w in weights]
    return model
