import numpy as np
import pytest

from conftest import random_graph, shortest_paths, two_clique_setup
from gnndelete import autodiff as ad
from gnndelete.deletion import LAST_LAYER, DeletionOperator, UnlearnedModel, build_masks
from gnndelete.errors import ConfigError, NumericError
from gnndelete.graph import (
    EdgeSplit,
    Graph,
    canonical_edges,
    delete_edges,
    negative_sample,
    split_edges,
    zero_features,
)
from gnndelete.metrics import link_scores, mi_ratio, node_scores, sample_test_negatives
from gnndelete.model import (
    GnnModel,
    TrainConfig,
    classify_nodes,
    edge_probs,
    forward,
    train_base,
    train_node_head,
)
from gnndelete.synthetic import SyntheticSpec, generate_synthetic
from gnndelete.trainer import (
    UnlearnConfig,
    baseline_grad_ascent,
    baseline_noisy_finetune,
    baseline_retrain,
    dec_loss,
    dec_term,
    ni_loss,
    sequential_unlearn,
    subgraph_ids,
    unlearn,
    unlearn_node_features,
    unlearn_nodes,
    unlearning_objective,
)
from oracles import _loss_fixture, loss_cases


@pytest.fixture(scope="module")
def cliques():
    return two_clique_setup(0)


def small_setup(seed=0, n=40, p=0.1, dims=(5, 6, 4), n_del=3):
    g = random_graph(n, p, seed, n_f=dims[0])
    rng = np.random.default_rng(seed)
    e_d = g.edges()[rng.choice(g.num_edges, n_del, replace=False)]
    return g, e_d, GnnModel.init(list(dims), seed=seed)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"lam": 1.5}, {"lam": -0.1}, {"lr": 0.0}, {"optimizer": "rms"},
                                    {"pairs_per_deleted_edge": 0}, {"mode": "x"},
                                    {"activation": "tanh"}, {"epochs": -1}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            UnlearnConfig(**kw)

    def test_defaults(self):
        cfg = UnlearnConfig()
        assert (cfg.lam, cfg.epochs, cfg.lr, cfg.optimizer) == (0.5, 200, 1e-3, "adam")


class TestLossExamples:
    def test_dec_zero_when_reps_match_targets(self):
        h = np.random.default_rng(0).normal(size=(6, 3))
        pairs = np.array([[0, 1], [2, 3]])
        assert dec_term(ad.Tensor(h), h, pairs, pairs).item() == 0.0

    def test_dec_zero_for_self_target(self):
        g, e_d, base = small_setup(1)
        e_d = canonical_edges(e_d)
        g_r = delete_edges(g, e_d)
        op = DeletionOperator.identity(base.layer_dims, build_masks(g, e_d, 2))
        um = UnlearnedModel(base, op, g_r)
        own = forward(g_r, base)
        assert dec_loss(2, um, own, e_d, e_d).item() == 0.0

    def test_empty_deletion_is_zero(self):
        g, _, base = small_setup(0)
        op = DeletionOperator.identity(base.layer_dims, [np.zeros(40, bool)] * 2)
        um = UnlearnedModel(base, op, g)
        emb = forward(g, base)
        empty = np.empty((0, 2), dtype=np.int64)
        assert dec_loss(1, um, emb, empty, empty).item() == 0.0
        assert ni_loss(1, um, emb, empty).item() == 0.0

    def test_ni_zero_at_identity_without_deletion(self):
        g, e_d, base = small_setup(2)
        op = DeletionOperator.identity(base.layer_dims, build_masks(g, e_d, 2))
        um = UnlearnedModel(base, op, g)
        for l in (1, 2):
            assert ni_loss(l, um, forward(g, base), e_d, g=g).item() == 0.0

    def test_ni_six_node_hand_oracle(self):
        rng = np.random.default_rng(3)
        g = Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)],
                             features=rng.normal(size=(6, 3)))
        base = GnnModel.init([3, 4, 2], seed=1)
        e_d = np.array([[1, 2], [4, 5]])
        g_r = delete_edges(g, e_d)
        w = [np.eye(4) + 0.3 * rng.normal(size=(4, 4)), np.eye(2) + 0.3 * rng.normal(size=(2, 2))]
        op = DeletionOperator(w, build_masks(g, e_d, 2), 2)
        um = UnlearnedModel(base, op, g_r)
        before, after = forward(g, base), um.forward()
        dist = shortest_paths(g)
        for l in (1, 2):
            sq, count = 0.0, 0
            for u, v in e_d:
                for node in range(6):
                    if min(dist[u, node], dist[v, node]) <= l:
                        for k in range(before[l].shape[1]):
                            sq += (after[l][node, k] - before[l][node, k]) ** 2
                            count += 1
            assert ni_loss(l, um, before, e_d).item() == pytest.approx(sq / count, rel=1e-12)

    def test_subgraph_ids_sorted_per_anchor(self):
        g = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        np.testing.assert_array_equal(subgraph_ids(g, [np.array([0, 1]), np.array([4])], 1),
                                      [0, 1, 2, 3, 4])

    def test_pair_count_must_divide(self):
        with pytest.raises(ValueError):
            dec_term(ad.Tensor(np.zeros((4, 2))), np.zeros((4, 2)), np.array([[0, 1], [1, 2]]),
                     np.array([[0, 3], [1, 3], [2, 3]]))


class TestLossGradients:
    @pytest.mark.parametrize("name", ["dec_loss", "ni_loss"])
    def test_finite_differences(self, name):
        for trial in range(10):
            f, x = loss_cases(np.random.default_rng(trial))[name]
            assert ad.finite_diff_check(f, x, eps=1e-5) < 1e-4

    def _grads(self, lam, pair_seed, restrict=None):
        g, g_r, base, op, emb, e_d, _ = _loss_fixture(np.random.default_rng(7))
        pairs = negative_sample(g, len(e_d), None, pair_seed)
        ids = {l: subgraph_ids(g, list(e_d), l) for l in op.layers}
        params = [ad.Tensor(w.copy(), requires_grad=True) for w in op.w_d]
        with ad.Tape() as tape:
            total, parts = unlearning_objective(base, op, g_r, emb, e_d, pairs, ids, lam, params)
            tape.backward(total if restrict is None else parts[restrict][2])
        return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def test_lambda_zero_ignores_dec(self):
        a, b = self._grads(0.0, 1), self._grads(0.0, 2)
        for ga, gb in zip(a, b):
            np.testing.assert_array_equal(ga, gb)

    def test_isolation_layer_loss_only_reaches_its_operator(self):
        full = self._grads(1.0, 3)
        for l in (1, 2):
            alone = self._grads(1.0, 3, restrict=l)
            np.testing.assert_array_equal(full[l - 1], alone[l - 1])
            np.testing.assert_array_equal(alone[2 - l], 0.0)


class TestUnlearn:
    def test_deterministic(self):
        g, e_d, base = small_setup(0)
        cfg = UnlearnConfig(epochs=15, lr=0.01, random_pair_seed=4)
        a, _ = unlearn(base, g, e_d, cfg)
        b, _ = unlearn(base, g, e_d, cfg)
        for wa, wb in zip(a.w_d, b.w_d):
            np.testing.assert_array_equal(wa, wb)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_loss_decomposition(self, lam):
        g, e_d, base = small_setup(1)
        _, rep = unlearn(base, g, e_d, UnlearnConfig(lam=lam, epochs=10, lr=0.01))
        for l in rep.layers:
            d, n, t = map(np.asarray, (rep.dec[l], rep.ni[l], rep.total[l]))
            assert len(t) == 10
            np.testing.assert_allclose(t, lam * d + (1 - lam) * n, rtol=0, atol=1e-12)

    def test_zero_epochs_is_identity(self):
        g, e_d, base = small_setup(0)
        op, _ = unlearn(base, g, e_d, UnlearnConfig(epochs=0))
        for w in op.w_d:
            np.testing.assert_array_equal(w, np.eye(len(w)))

    def test_last_layer_mode(self):
        g, e_d, base = small_setup(0)
        op, rep = unlearn(base, g, e_d, UnlearnConfig(epochs=3, mode=LAST_LAYER))
        assert op.layers == [2] and rep.layers == [2] and op.w_d[0].shape == (4, 4)

    def test_sgd_optimizer_runs(self):
        g, e_d, base = small_setup(0)
        op, rep = unlearn(base, g, e_d, UnlearnConfig(epochs=3, lr=0.01, optimizer="sgd"))
        assert len(rep.total[1]) == 3

    def test_divergence_names_epoch(self):
        g, e_d, base = small_setup(0)
        base = GnnModel([w * 1e80 for w in base.layer_weights])
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="epoch"):
            unlearn(base, g, e_d, UnlearnConfig(epochs=3, lr=1.0, optimizer="sgd"))

    def test_bridge_deletion(self, cliques):
        g, split, base, G, e_d = cliques
        g_r = delete_edges(G, e_d)
        op, _ = unlearn(base, G, e_d, UnlearnConfig(pairs_per_deleted_edge=16))
        um = UnlearnedModel(base, op, g_r)
        held_out = split.test[:20]
        assert len(held_out) == 20
        assert edge_probs(um.embed(), e_d)[0] < edge_probs(base.embed(G), e_d)[0]
        shift = edge_probs(um.embed(), held_out).mean() - edge_probs(base.embed(G), held_out).mean()
        assert abs(shift) < 0.1
        assert mi_ratio(base, um, G, g_r, e_d) > 1.0

    def test_bridge_gap_to_non_edges_shrinks(self, cliques):
        g, split, base, G, e_d = cliques
        g_r = delete_edges(G, e_d)
        op, _ = unlearn(base, G, e_d, UnlearnConfig(pairs_per_deleted_edge=16))
        um = UnlearnedModel(base, op, g_r)
        non = negative_sample(G, 200, canonical_edges(np.concatenate([G.edges(), split.all_edges()])), 9)
        before = abs(edge_probs(base.embed(G), e_d).mean() - edge_probs(base.embed(G), non).mean())
        after = abs(edge_probs(um.embed(), e_d).mean() - edge_probs(um.embed(), non).mean())
        assert after < before


class TestSequential:
    def test_single_batch_equals_unlearn(self):
        g, e_d, base = small_setup(2)
        cfg = UnlearnConfig(epochs=10, lr=0.01)
        op, _ = unlearn(base, g, e_d, cfg)
        seq = sequential_unlearn(base, g, [e_d], cfg)
        for a, b in zip(op.w_d, seq.w_d):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(op.masks, seq.masks):
            np.testing.assert_array_equal(a, b)

    def test_empty_list_is_identity(self):
        g, _, base = small_setup(0)
        op = sequential_unlearn(base, g, [], UnlearnConfig())
        for w, m in zip(op.w_d, op.masks):
            np.testing.assert_array_equal(w, np.eye(len(w)))
            assert not m.any()

    def test_overlap_rejected(self):
        g, e_d, base = small_setup(0)
        with pytest.raises(ValueError):
            sequential_unlearn(base, g, [e_d, e_d[:1, ::-1]], UnlearnConfig(epochs=1))

    def test_masks_grow_cumulatively(self):
        g, e_d, base = small_setup(3)
        op = sequential_unlearn(base, g, [e_d[:1], e_d[1:]], UnlearnConfig(epochs=2))
        for got, want in zip(op.masks, build_masks(g, e_d, 2)):
            np.testing.assert_array_equal(got, want)

    @pytest.mark.slow
    def test_five_small_batches_on_community_graph(self):
        g = generate_synthetic(SyntheticSpec("planted_partition", {"n": 500, "blocks": 5,
                                                                   "p_in": 0.06, "p_out": 0.002},
                                             features="random"), 0)
        split = split_edges(g, 0.05, 0.05, 0)
        base = train_base(g, split, TrainConfig(hidden_dims=[64, 32], epochs=100, seed=0))
        G = g.with_edges(split.train)
        neg = sample_test_negatives(g, split, 0)
        n_b = max(1, round(0.005 * g.num_edges))
        pick = G.edges()[np.random.default_rng(0).choice(G.num_edges, 5 * n_b, replace=False)]
        batches = [pick[i * n_b:(i + 1) * n_b] for i in range(5)]
        scores = [link_scores(base, G, split.test, neg)[0]]
        cfg = UnlearnConfig(epochs=100)
        for i in range(5):
            op = sequential_unlearn(base, G, batches[: i + 1], cfg)
            g_r = delete_edges(G, np.concatenate(batches[: i + 1]))
            scores.append(link_scores(UnlearnedModel(base, op, g_r), g_r, split.test, neg)[0])
        drops = -np.diff(scores)
        assert np.all(drops < 0.03), scores
        assert scores[-1] < scores[0]


class TestNodeDrivers:
    def test_isolated_node_masks(self):
        g = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3)],
                             features=np.random.default_rng(0).normal(size=(5, 3)))
        base = GnnModel.init([3, 4, 2], seed=0)
        op = unlearn_node_features(base, g, [4], UnlearnConfig(epochs=5, lr=0.01))
        for m in op.masks:
            np.testing.assert_array_equal(np.flatnonzero(m), [4])

    def test_zeroed_rows(self):
        g = random_graph(10, 0.3, 0, n_f=4)
        z = zero_features(g, [1, 7])
        np.testing.assert_array_equal(z.features[[1, 7]], 0.0)
        np.testing.assert_array_equal(np.delete(z.features, [1, 7], 0), np.delete(g.features, [1, 7], 0))

    def test_feature_unlearning_keeps_classification(self):
        g = generate_synthetic(SyntheticSpec("planted_partition", {"n": 200, "blocks": 4,
                                                                   "p_in": 0.15, "p_out": 0.01},
                                             features="random"), 1)
        split = split_edges(g, 0.1, 0.1, 1)
        base = train_base(g, split, TrainConfig(hidden_dims=[32, 16], epochs=100, seed=1))
        base = train_node_head(base, g, np.arange(0, 200, 2), epochs=200)
        forgotten = np.arange(1, 200, 20)
        op = unlearn_node_features(base, g, forgotten, UnlearnConfig(epochs=100))
        um = UnlearnedModel(base, op, zero_features(g, forgotten))
        keep = np.setdiff1d(np.arange(1, 200, 2), forgotten)
        acc0, _ = node_scores(classify_nodes(forward(g, base), base)[1][keep], g.labels[keep])
        acc1, _ = node_scores(classify_nodes(um.embed(), base)[1][keep], g.labels[keep])
        assert abs(acc1 - acc0) < 0.05

    def test_unlearn_nodes_uses_incident_edges(self):
        g, _, base = small_setup(0)
        node = int(np.argmax(g.degrees()))
        op, _, e_d = unlearn_nodes(base, g, [node], UnlearnConfig(epochs=2))
        assert len(e_d) == g.degrees()[node] and np.all((e_d == node).any(1))

    def test_unlearn_isolated_node_is_identity(self):
        g = Graph.from_edges(4, [(0, 1)], features=np.ones((4, 2)))
        op, rep, e_d = unlearn_nodes(GnnModel.init([2, 2]), g, [3], UnlearnConfig())
        assert len(e_d) == 0 and np.array_equal(op.w_d[0], np.eye(2))


class TestBaselines:
    def two_node(self):
        g = Graph.from_edges(2, [(0, 1)], features=np.array([[1.0, 0.2], [0.3, 1.0]]))
        return g, GnnModel([np.array([[0.8, 0.1], [0.2, 0.9]])])

    def test_grad_ascent_zero_steps(self):
        g, m = self.two_node()
        out = baseline_grad_ascent(m, g, [(0, 1)], 0)
        np.testing.assert_array_equal(out.layer_weights[0], m.layer_weights[0])

    def test_grad_ascent_one_step_lowers_probability(self):
        g, m = self.two_node()
        out = baseline_grad_ascent(m, g, [(0, 1)], 1, lr=0.01)
        assert not np.array_equal(out.layer_weights[0], m.layer_weights[0])
        assert edge_probs(out.embed(g), [(0, 1)])[0] <= edge_probs(m.embed(g), [(0, 1)])[0]
        np.testing.assert_array_equal(m.layer_weights[0], [[0.8, 0.1], [0.2, 0.9]])

    def test_noisy_no_op(self):
        g, e_d, base = small_setup(0)
        split = split_edges(g, 0.1, 0.1, 0)
        out = baseline_noisy_finetune(base, g, split, 0, 0.0)
        for a, b in zip(out.layer_weights, base.layer_weights):
            np.testing.assert_array_equal(a, b)

    def test_noisy_seed_deterministic(self):
        g, e_d, base = small_setup(0)
        split = split_edges(g, 0.1, 0.1, 0)
        a = baseline_noisy_finetune(base, g, split, 2, 0.1, seed=3)
        b = baseline_noisy_finetune(base, g, split, 2, 0.1, seed=3)
        c = baseline_noisy_finetune(base, g, split, 2, 0.1, seed=4)
        np.testing.assert_array_equal(a.layer_weights[0], b.layer_weights[0])
        assert not np.array_equal(a.layer_weights[0], c.layer_weights[0])

    def test_huge_noise_collapses_ranking(self):
        g = generate_synthetic(SyntheticSpec("planted_partition", {"n": 300, "blocks": 4,
                                                                   "p_in": 0.1, "p_out": 0.005},
                                             features="random"), 0)
        split = split_edges(g, 0.1, 0.05, 0)
        base = train_base(g, split, TrainConfig(hidden_dims=[32, 16], epochs=100, seed=0))
        G = g.with_edges(split.train)
        neg = sample_test_negatives(g, split, 0)
        assert link_scores(base, G, split.test, neg)[0] > 0.65
        for seed in range(3):
            noisy = baseline_noisy_finetune(base, G, split, 0, 10.0, seed=seed)
            assert abs(link_scores(noisy, G, split.test, neg)[0] - 0.5) <= 0.1

    def test_noise_cannot_erase_clique_structure(self, cliques):
        # aggregation inside a clique makes members nearly collinear for any weights
        g, split, base, G, _ = cliques
        neg = sample_test_negatives(g, split, 0)
        noisy = baseline_noisy_finetune(base, G, split, 0, 10.0, seed=0)
        assert link_scores(noisy, G, split.test, neg)[0] > 0.9

    def test_retrain_treats_bridge_as_cross_community_pair(self, cliques):
        g, split, base, G, e_d = cliques
        g_r = delete_edges(g, e_d)
        train = canonical_edges([e for e in split.train if tuple(e) != (0, 20)])
        m = baseline_retrain(g_r, EdgeSplit(train, split.validation, split.test),
                             TrainConfig(hidden_dims=[32, 16], epochs=200, seed=0))
        z = m.embed(g_r.with_edges(train))
        cross = np.array([(u, v) for u in range(20) for v in range(20, 40) if (u, v) != (0, 20)])
        p_cross = edge_probs(z, cross)
        p_bridge = edge_probs(z, e_d)[0]
        assert p_cross.min() <= p_bridge <= p_cross.max()
        assert p_bridge < edge_probs(z, split.test).mean() - 0.5

    def test_retrain_deterministic(self, cliques):
        g, split, _, _, _ = cliques
        cfg = TrainConfig(hidden_dims=[8], epochs=5, seed=2)
        a, b = baseline_retrain(g, split, cfg), baseline_retrain(g, split, cfg)
        np.testing.assert_array_equal(a.layer_weights[0], b.layer_weights[0])
