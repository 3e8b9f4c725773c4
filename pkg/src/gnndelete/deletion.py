"""The deletion operator: per-layer shared maps applied only inside masked neighborhoods."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .graph import Graph, as_node_set, canonical_edges, hop_distances
from .model import GnnModel, NodeEmbeddings, _layer, normalized_adjacency

LAYER_WISE = "layer-wise"
LAST_LAYER = "last-layer-only"
MODES = (LAYER_WISE, LAST_LAYER)
ACTIVATIONS = ("linear", "sigmoid")


def active_layers(num_layers: int, mode: str) -> list[int]:
    """1-based indices of the layers that carry an operator."""
    if mode == LAYER_WISE:
        return list(range(1, num_layers + 1))
    if mode == LAST_LAYER:
        return [num_layers]
    raise ConfigError(f"unknown operator mode {mode!r}")


def masks_from_seeds(g: Graph, seeds, num_layers: int, mode: str = LAYER_WISE) -> list[np.ndarray]:
    """Layer-``l`` mask = nodes within ``l`` hops of any seed."""
    dist = hop_distances(g, as_node_set(seeds, g.num_nodes), num_layers)
    return [(dist >= 0) & (dist <= l) for l in active_layers(num_layers, mode)]


def build_masks(g: Graph, e_d, num_layers: int, mode: str = LAYER_WISE) -> list[np.ndarray]:
    """Masks around the endpoints of ``e_d``, computed on the pre-deletion graph ``g``."""
    e_d = canonical_edges(e_d)
    if len(e_d) == 0:
        raise ValueError("build_masks needs at least one deleted edge")
    return masks_from_seeds(g, e_d.ravel(), num_layers, mode)


@dataclass
class DeletionOperator:
    """Trainable square maps ``W_D^l`` plus the node masks that switch them on."""

    w_d: list[np.ndarray]
    masks: list[np.ndarray]
    num_layers: int
    mode: str = LAYER_WISE
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        layers = active_layers(self.num_layers, self.mode)
        if len(self.w_d) != len(layers) or len(self.masks) != len(layers):
            raise ConfigError(
                f"{self.mode} operator over {self.num_layers} layers needs {len(layers)} "
                f"matrices and masks, got {len(self.w_d)} and {len(self.masks)}"
            )
        self.w_d = [np.asarray(w, dtype=np.float64) for w in self.w_d]
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        for w in self.w_d:
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ShapeError(f"deletion weights must be square, got {w.shape}")

    @classmethod
    def identity(cls, dims: list[int], masks: list[np.ndarray], mode: str = LAYER_WISE,
                 activation: str = "linear") -> DeletionOperator:
        """Identity-initialized operator for a model with ``dims = [n_f, d_1, ..., d_L]``."""
        L = len(dims) - 1
        ws = [np.eye(dims[l]) for l in active_layers(L, mode)]
        return cls(ws, masks, L, mode, activation)

    @property
    def layers(self) -> list[int]:
        return active_layers(self.num_layers, self.mode)

    @property
    def num_nodes(self) -> int:
        return len(self.masks[0])

    def slot(self, layer: int) -> int | None:
        """Index into ``w_d``/``masks`` for 1-based ``layer`` (None when inactive)."""
        layers = self.layers
        return layers.index(layer) if layer in layers else None

    def with_masks(self, masks: list[np.ndarray]) -> DeletionOperator:
        return DeletionOperator([w.copy() for w in self.w_d], masks, self.num_layers,
                                self.mode, self.activation)


def param_count(op: DeletionOperator) -> int:
    """Trainable parameters: sum of ``d_l²`` over the active layers."""
    return int(sum(w.shape[0] * w.shape[1] for w in op.w_d))


def del_forward(h, mask, w_d, activation: str = "linear"):
    """Masked rows become ``act(h_row · w_d)``; other rows pass through unchanged.

    Works on plain arrays, or on tensors (recorded on the active tape).
    """
    mask = np.asarray(mask, dtype=bool)
    if isinstance(h, ad.Tensor) or isinstance(w_d, ad.Tensor):
        h, w_d = ad.as_tensor(h), ad.as_tensor(w_d)
        if h.shape[1] != w_d.shape[0]:
            raise ShapeError(f"operator of shape {w_d.shape} for {h.shape[1]}-wide input")
        t = ad.matmul(h, w_d)
        if activation == "sigmoid":
            t = ad.sigmoid(t)
        return ad.where_rows(mask, t, h)
    h = np.asarray(h, dtype=np.float64)
    w_d = np.asarray(w_d, dtype=np.float64)
    if h.shape[1] != w_d.shape[0]:
        raise ShapeError(f"operator of shape {w_d.shape} for {h.shape[1]}-wide input")
    if mask.shape != (h.shape[0],):
        raise ShapeError(f"mask of shape {mask.shape} for {h.shape[0]} rows")
    out = h.copy()
    if mask.any():
        t = h[mask] @ w_d
        out[mask] = ad._sigmoid(t) if activation == "sigmoid" else t
    return out


def unlearned_embeddings(base: GnnModel, op: DeletionOperator, g: Graph) -> NodeEmbeddings:
    """Base layers on ``g`` with each active layer's output passed through the operator."""
    if op.num_layers != base.num_layers:
        raise ShapeError("operator and base model disagree on layer count")
    if op.num_nodes != g.num_nodes:
        raise ShapeError(f"masks cover {op.num_nodes} nodes, graph has {g.num_nodes}")
    if g.num_features != base.layer_dims[0]:
        raise ShapeError("feature width does not match the base model")
    adj = normalized_adjacency(g)
    layers = [g.features]
    L = base.num_layers
    for l, w in enumerate(base.layer_weights, 1):
        h = _layer(adj, layers[-1], w, l == L)
        i = op.slot(l)
        if i is not None:
            h = del_forward(h, op.masks[i], op.w_d[i], op.activation)
        layers.append(h)
    return NodeEmbeddings(layers)


@dataclass
class UnlearnedModel:
    """Frozen base model composed with a deletion operator, evaluated on ``graph_r``."""

    base: GnnModel
    op: DeletionOperator
    graph_r: Graph
    _emb: NodeEmbeddings | None = field(default=None, init=False, repr=False)

    def forward(self) -> NodeEmbeddings:
        if self._emb is None:
            self._emb = unlearned_embeddings(self.base, self.op, self.graph_r)
        return self._emb

    def embed(self, g: Graph | None = None) -> np.ndarray:
        if g is None or g is self.graph_r:
            return self.forward().final
        return unlearned_embeddings(self.base, self.op, g).final


def unlearned_forward(um: UnlearnedModel) -> NodeEmbeddings:
    return unlearned_embeddings(um.base, um.op, um.graph_r)
