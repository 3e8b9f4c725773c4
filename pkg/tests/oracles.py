"""Independent reference implementations shared by unit and acceptance tests."""

import numpy as np

from gnndelete import autodiff as ad
from gnndelete.deletion import DeletionOperator, build_masks
from gnndelete.graph import Graph, delete_edges, negative_sample
from gnndelete.model import GnnModel, forward
from gnndelete.trainer import dec_term, ni_term, operator_layers, subgraph_ids

# -- metrics -----------------------------------------------------------------


def brute_auroc(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties count one half."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def brute_auprc(scores, labels) -> float:
    """Sum over distinct thresholds t (descending) of (R(t) - R(prev)) * P(t)."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    total = 0.0
    prev_recall = 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        pred = s >= t
        tp = np.sum(pred & y)
        precision = tp / np.sum(pred)
        recall = tp / np.sum(y)
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return float(total)


# -- gradient cases ----------------------------------------------------------


def _random_sparse(rng, rows, cols, density=0.3) -> ad.SparseMatrix:
    import scipy.sparse as sp

    m = sp.random(rows, cols, density=density, random_state=int(rng.integers(1 << 30)),
                  data_rvs=rng.standard_normal, format="csr")
    return ad.SparseMatrix.from_scipy(m)


def op_cases(rng):
    """``name -> (f, x)`` with ``f`` scalar-valued in the tensor ``x``.

    Each op's output is reduced through an MSE against a fixed random target,
    so the check covers the op's backward rule for a generic upstream gradient.
    """
    def reduce(t):
        target = rng.normal(size=t.shape)
        return lambda out: ad.mse(out, target)

    cases = {}
    b = rng.normal(size=(4, 3))
    red = reduce(np.zeros((5, 3)))
    cases["matmul_left"] = (lambda x: red(ad.matmul(x, ad.Tensor(b))), rng.normal(size=(5, 4)))
    a = rng.normal(size=(5, 4))
    cases["matmul_right"] = (lambda x: red(ad.matmul(ad.Tensor(a), x)), rng.normal(size=(4, 3)))
    s = _random_sparse(rng, 6, 5)
    red_s = reduce(np.zeros((6, 3)))
    cases["spmm"] = (lambda x: red_s(ad.spmm(s, x)), rng.normal(size=(5, 3)))
    red4 = reduce(np.zeros((4, 3)))
    cases["sigmoid"] = (lambda x: red4(ad.sigmoid(x)), rng.normal(size=(4, 3)))
    # keep inputs away from the kink
    xr = rng.normal(size=(4, 3))
    xr = np.where(np.abs(xr) < 0.05, 0.3, xr)
    cases["relu"] = (lambda x: red4(ad.relu(x)), xr)
    c = rng.normal(size=(4, 3))
    cases["add"] = (lambda x: red4(ad.add(x, ad.Tensor(c))), rng.normal(size=(4, 3)))
    cases["sub"] = (lambda x: red4(ad.sub(ad.Tensor(c), x)), rng.normal(size=(4, 3)))
    cases["scale"] = (lambda x: red4(ad.scale(x, -1.7)), rng.normal(size=(4, 3)))
    d = rng.normal(size=(4, 2))
    red45 = reduce(np.zeros((4, 5)))
    cases["concat_cols"] = (lambda x: red45(ad.concat_cols(x, ad.Tensor(d))),
                            rng.normal(size=(4, 3)))
    ids = rng.integers(0, 6, size=9)
    red9 = reduce(np.zeros((9, 3)))
    cases["gather_rows"] = (lambda x: red9(ad.gather_rows(x, ids)), rng.normal(size=(6, 3)))
    e = rng.normal(size=(4, 3))
    red_v = reduce(np.zeros(4))
    cases["rowwise_dot"] = (lambda x: red_v(ad.rowwise_dot(x, ad.Tensor(e))),
                            rng.normal(size=(4, 3)))
    mask = rng.random(4) < 0.5
    cases["where_rows"] = (lambda x: red4(ad.where_rows(mask, x, ad.Tensor(c))),
                           rng.normal(size=(4, 3)))
    t = rng.normal(size=(4, 3))
    cases["mse"] = (lambda x: ad.mse(x, t), rng.normal(size=(4, 3)))
    y = (rng.random(7) < 0.5).astype(float)
    cases["bce_with_logits"] = (lambda x: ad.bce_with_logits(x, y), rng.normal(size=7) * 3)
    cls = rng.integers(0, 4, size=5)
    cases["cross_entropy"] = (lambda x: ad.cross_entropy(x, cls), rng.normal(size=(5, 4)))
    return cases


def _loss_fixture(rng, n=20, dims=(6, 5, 4)):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < 0.2
    edges = np.stack([iu[keep], ju[keep]], 1)
    g = Graph.from_edges(n, edges, features=rng.normal(size=(n, dims[0])))
    if g.num_edges < 4:
        return _loss_fixture(rng, n, dims)
    base = GnnModel.init(list(dims), seed=int(rng.integers(1 << 30)))
    e_d = g.edges()[rng.choice(g.num_edges, 3, replace=False)]
    g_r = delete_edges(g, e_d)
    masks = build_masks(g, e_d, len(dims) - 1)
    # perturbed operator so gradients are generic, not the identity point
    w_d = [np.eye(d) + 0.1 * rng.normal(size=(d, d)) for d in dims[1:]]
    op = DeletionOperator(w_d, masks, len(dims) - 1)
    emb = forward(g, base)
    pairs = negative_sample(g, len(e_d), None, seed=int(rng.integers(1 << 30)))
    return g, g_r, base, op, emb, e_d, pairs


def loss_cases(rng):
    """Both unlearning losses as functions of one layer's ``W_D`` on a 20-node graph."""
    g, g_r, base, op, emb, e_d, pairs = _loss_fixture(rng)
    layer = int(rng.integers(1, base.num_layers + 1))
    i = op.slot(layer)

    def weights_with(x):
        return [x if j == i else ad.Tensor(w) for j, w in enumerate(op.w_d)]

    def dec(x):
        h = operator_layers(base, op, g_r, weights_with(x))[layer - 1]
        return dec_term(h, emb[layer], e_d, pairs)

    ids = subgraph_ids(g, list(e_d), layer)

    def ni(x):
        h = operator_layers(base, op, g_r, weights_with(x))[layer - 1]
        return ni_term(h, emb[layer], ids)

    return {"dec_loss": (dec, op.w_d[i].copy()), "ni_loss": (ni, op.w_d[i].copy())}
