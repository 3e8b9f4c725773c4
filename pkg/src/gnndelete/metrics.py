"""Ranking metrics, deleted-edge evaluation, MI ratio and the embedding-bound check."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import rankdata

from .autodiff import _sigmoid
from .errors import UndefinedMetricError
from .graph import Graph, canonical_edges, negative_sample
from .model import edge_probs


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores for {len(y)} labels")
    if y.all() or not y.any():
        raise UndefinedMetricError("metric needs both positive and negative labels")
    return s, y


def auroc(scores, labels) -> float:
    """P(random positive outranks random negative), ties count one half."""
    s, y = _check_binary(scores, labels)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: step-wise area under the precision-recall curve.

    Tied scores form a single threshold.
    """
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def link_scores(model, g: Graph, pos, neg) -> tuple[float, float]:
    """AUROC/AUPRC of ``model`` separating ``pos`` from ``neg`` with embeddings on ``g``."""
    z = model.embed(g)
    p, q = edge_probs(z, pos), edge_probs(z, neg)
    scores = np.concatenate([p, q])
    labels = np.concatenate([np.ones(len(p)), np.zeros(len(q))])
    return auroc(scores, labels), auprc(scores, labels)


def eval_deleted(model, g_r: Graph, e_d, seed: int, e_r=None) -> tuple[float, float]:
    """Separate deleted edges (label 0) from an equal sample of remaining edges (label 1).

    ``e_r`` defaults to the edges of ``g_r``.
    """
    e_d = canonical_edges(e_d)
    if len(e_d) == 0:
        raise UndefinedMetricError("no deleted edges to evaluate")
    e_r = g_r.edges() if e_r is None else canonical_edges(e_r)
    if len(e_r) < len(e_d):
        raise UndefinedMetricError(f"only {len(e_r)} remaining edges for {len(e_d)} deleted")
    idx = np.random.default_rng(seed).choice(len(e_r), size=len(e_d), replace=False)
    return link_scores(model, g_r, e_r[idx], e_d)


def mi_ratio(model_before, model_after, g: Graph, g_r: Graph, e_d, eps: float = 1e-9) -> float:
    """Mean presence probability of ``e_d`` before (on ``g``) over after (on ``g_r``)."""
    e_d = canonical_edges(e_d)
    if len(e_d) == 0:
        raise UndefinedMetricError("no deleted edges for the MI ratio")
    before = edge_probs(model_before.embed(g), e_d).mean()
    after = edge_probs(model_after.embed(g_r), e_d).mean()
    return float(before / max(after, eps))


def sample_test_negatives(g: Graph, split, seed: int) -> np.ndarray:
    """Fixed negatives for the test edges, avoiding every known edge."""
    known = canonical_edges(np.concatenate([g.edges(), split.all_edges()]))
    return negative_sample(g, len(split.test), known, seed)


def spectral_norm(w, iters: int = 50, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest singular value of ``w`` by power iteration on ``wᵀw``."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or not np.any(w):
        return 0.0
    v = np.random.default_rng(seed).normal(size=w.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        u = w @ v
        new = float(np.linalg.norm(u))
        v = w.T @ u
        nv = np.linalg.norm(v)
        if nv == 0:
            break
        v /= nv
        if abs(new - sigma) <= tol * max(new, 1.0):
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(w @ v))


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return x / norm


def theorem1_check(z_u, z_v, w_d, tol: float = 1e-9):
    """Check ``<z_u,z_v> - <z'_u,z'_v> >= -(1 + ||W||²)/2 · ||z_u - z_v||²``.

    Inputs are normalized to unit length and ``z' = unit(σ(W z))``.  Returns
    ``(lhs, rhs, holds)``.
    """
    z_u, z_v = _unit(np.asarray(z_u, float)), _unit(np.asarray(z_v, float))
    w_d = np.asarray(w_d, dtype=np.float64)
    zu_p, zv_p = _unit(_sigmoid(w_d @ z_u)), _unit(_sigmoid(w_d @ z_v))
    lhs = float(z_u @ z_v - zu_p @ zv_p)
    norm = spectral_norm(w_d)
    rhs = float(-(1.0 + norm**2) / 2.0 * np.sum((z_u - z_v) ** 2))
    return lhs, rhs, lhs >= rhs - tol


def node_scores(preds, truth) -> tuple[float, float]:
    """Accuracy and macro-F1 over the classes present in either array."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.size == 0:
        raise ValueError("preds and truth must be equal-length and non-empty")
    acc = float(np.mean(preds == truth))
    f1s = []
    for c in np.union1d(preds, truth):
        tp = np.sum((preds == c) & (truth == c))
        fp = np.sum((preds == c) & (truth != c))
        fn = np.sum((preds != c) & (truth == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1s))


@dataclass
class EvalReport:
    auroc_test: float | None = None
    auprc_test: float | None = None
    auroc_deleted: float | None = None
    auprc_deleted: float | None = None
    mi_ratio: float | None = None
    node_accuracy: float | None = None
    node_f1: float | None = None
    wall_time_seconds: float = 0.0
    delop_params: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
