import numpy as np
import pytest
import scipy.sparse as sp

from subfedsim import gcn


def random_instance(seed, n=5, d_x=3, hidden=4, C=2, p_edge=0.5):
    rng = np.random.default_rng(seed)
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = np.array([e for e in pairs if rng.random() < p_edge],
                     dtype=np.int64).reshape(-1, 2)
    mask_w = rng.random(edges.shape[0])
    X = rng.standard_normal((n, d_x))
    y = rng.integers(0, C, size=n)
    train = rng.random(n) < 0.6
    if not train.any():
        train[0] = True
    params = gcn.init_params(d_x, hidden, C, seed)
    anchor = gcn.init_params(d_x, hidden, C, seed + 1)
    adj = gcn.normalize_masked_adjacency(edges, mask_w, n)
    return params, adj, X, y, train, anchor


class TestNormalizeAdjacency:
    def test_isolated_node_self_loop(self):
        adj = gcn.normalize_masked_adjacency(np.zeros((0, 2)), np.zeros(0), 3)
        assert np.allclose(adj.toarray(), np.eye(3))

    def test_two_node_edge(self):
        adj = gcn.normalize_masked_adjacency(np.array([(0, 1)]), np.array([1.0]), 2)
        assert np.allclose(adj.toarray(), np.full((2, 2), 0.5))

    def test_zero_mask_is_identity(self):
        edges = np.array([(0, 1), (1, 2)])
        adj = gcn.normalize_masked_adjacency(edges, np.zeros(2), 3)
        assert np.allclose(adj.toarray(), np.eye(3))

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        edges = np.array([(0, 1), (0, 2), (2, 3)])
        adj = gcn.normalize_masked_adjacency(edges, rng.random(3), 4)
        assert np.allclose(adj.toarray(), adj.toarray().T)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            gcn.normalize_masked_adjacency(np.array([(0, 1)]), np.array([-0.1]), 2)


class TestForward:
    def test_zero_features_zero_logits(self):
        params = gcn.init_params(3, 4, 2, seed=0)
        adj = gcn.normalize_masked_adjacency(np.array([(0, 1)]), np.ones(1), 2)
        emb = gcn.forward(params, adj, np.zeros((2, 3)))
        assert np.allclose(emb.H2, 0.0)

    def test_isolated_identity_passthrough(self):
        params = gcn.GcnParams(W1=np.eye(3), b1=np.zeros(3),
                               W2=np.zeros((3, 2)), b2=np.zeros(2))
        adj = gcn.normalize_masked_adjacency(np.zeros((0, 2)), np.zeros(0), 1)
        x = np.array([[0.3, 1.2, 0.0]])
        emb = gcn.forward(params, adj, x)
        assert np.allclose(emb.H1, x)

    def test_matches_dense_oracle(self):
        params, adj, X, _, _, _ = random_instance(7)
        A = adj.toarray()
        H1 = np.maximum(A @ X @ params.W1 + params.b1, 0.0)
        H2 = A @ H1 @ params.W2 + params.b2
        emb = gcn.forward(params, adj, X)
        assert np.allclose(emb.H1, H1, atol=1e-12)
        assert np.allclose(emb.H2, H2, atol=1e-12)

    def test_shape_mismatch(self):
        params = gcn.init_params(3, 4, 2, seed=0)
        adj = sp.eye(2, format="csr")
        with pytest.raises(ValueError):
            gcn.forward(params, adj, np.zeros((2, 5)))


class TestLossAndGrads:
    def test_proximal_zero_at_anchor(self):
        params, adj, X, y, train, _ = random_instance(1)
        l0, g0 = gcn.loss_and_grads(params, adj, X, y, train, params.copy(), 0.0)
        l1, g1 = gcn.loss_and_grads(params, adj, X, y, train, params.copy(), 10.0)
        assert l0 == pytest.approx(l1, abs=1e-15)
        for (_, a), (_, b) in zip(g0.tensors(), g1.tensors()):
            assert np.allclose(a, b, atol=1e-15)

    def test_uniform_logits_give_ln_c(self):
        n, C = 4, 3
        params = gcn.GcnParams(W1=np.zeros((2, 4)), b1=np.zeros(4),
                               W2=np.zeros((4, C)), b2=np.zeros(C))
        adj = sp.eye(n, format="csr")
        loss, _ = gcn.loss_and_grads(params, adj, np.ones((n, 2)),
                                     np.zeros(n, dtype=int), np.ones(n, dtype=bool),
                                     params.copy(), 0.0)
        assert loss == pytest.approx(np.log(C), abs=1e-12)

    def test_no_train_nodes_rejected(self):
        params, adj, X, y, _, anchor = random_instance(2)
        with pytest.raises(ValueError):
            gcn.loss_and_grads(params, adj, X, y, np.zeros(5, dtype=bool), anchor, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference_oracle(self, seed):
        params, adj, X, y, train, anchor = random_instance(seed, n=5, d_x=3,
                                                           hidden=4, C=2)
        beta = 0.01
        _, grads = gcn.loss_and_grads(params, adj, X, y, train, anchor, beta)
        h = 1e-5
        for name, t in params.tensors():
            g = dict(grads.tensors())[name]
            flat = t.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = gcn.loss_and_grads(params, adj, X, y, train, anchor, beta)
                flat[i] = orig - h
                lm, _ = gcn.loss_and_grads(params, adj, X, y, train, anchor, beta)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                denom = max(abs(fd), abs(g.ravel()[i]), 1e-8)
                assert abs(g.ravel()[i] - fd) / denom < 1e-4, (name, i)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = gcn.init_params(2, 3, 2, seed=0)
        zeros = gcn.GcnParams(*(np.zeros_like(t) for _, t in params.tensors()))
        state = gcn.init_adam(params)
        new_p, new_s = gcn.adam_step(params, zeros, state, lr=0.1)
        for (_, a), (_, b) in zip(params.tensors(), new_p.tensors()):
            assert np.array_equal(a, b)
        assert new_s.step == 1

    def test_first_step_closed_form(self):
        g = 0.37
        params = gcn.GcnParams(W1=np.array([[1.0]]), b1=np.zeros(1),
                               W2=np.zeros((1, 1)), b2=np.zeros(1))
        grads = gcn.GcnParams(W1=np.array([[g]]), b1=np.zeros(1),
                              W2=np.zeros((1, 1)), b2=np.zeros(1))
        state = gcn.init_adam(params)
        lr = 0.01
        new_p, _ = gcn.adam_step(params, grads, state, lr)
        expected = 1.0 - lr * g / (abs(g) + state.eps * np.sqrt(1 - state.beta2)
                                   / (1 - state.beta1))
        # epsilon placement differs by O(eps) across Adam conventions
        assert new_p.W1[0, 0] == pytest.approx(expected, abs=1e-9)
        assert new_p.W1[0, 0] == pytest.approx(1.0 - lr * np.sign(g), abs=1e-7)

    def test_two_steps_match_scalar_oracle(self):
        g = -0.8
        lr = 0.05
        b1, b2, eps = 0.9, 0.999, 1e-8
        # scalar recomputation of two identical Adam steps
        m = v = 0.0
        x = 2.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        params = gcn.GcnParams(W1=np.array([[2.0]]), b1=np.zeros(1),
                               W2=np.zeros((1, 1)), b2=np.zeros(1))
        grads = gcn.GcnParams(W1=np.array([[g]]), b1=np.zeros(1),
                              W2=np.zeros((1, 1)), b2=np.zeros(1))
        state = gcn.init_adam(params)
        p, state = gcn.adam_step(params, grads, state, lr)
        p, state = gcn.adam_step(p, grads, state, lr)
        assert p.W1[0, 0] == pytest.approx(x, abs=1e-12)

    def test_nonfinite_gradient_names_tensor(self):
        params = gcn.init_params(2, 3, 2, seed=0)
        grads = gcn.GcnParams(*(np.zeros_like(t) for _, t in params.tensors()))
        grads.b2[0] = np.nan
        with pytest.raises(ValueError, match="b2"):
            gcn.adam_step(params, grads, gcn.init_adam(params), 0.1)


class TestAccuracy:
    def test_one_hot_perfect(self):
        y = np.array([0, 1, 2])
        emb = gcn.Embeddings(H1=np.zeros((3, 1)), H2=np.eye(3))
        assert gcn.accuracy(emb, y, np.ones(3, dtype=bool)) == 1.0

    def test_shifted_one_hot_zero(self):
        y = np.array([0, 1, 2])
        emb = gcn.Embeddings(H1=np.zeros((3, 1)), H2=np.eye(3)[(y + 1) % 3])
        assert gcn.accuracy(emb, y, np.ones(3, dtype=bool)) == 0.0

    def test_random_logits_near_half(self):
        rng = np.random.default_rng(0)
        accs = []
        for _ in range(20):
            y = rng.integers(0, 2, size=1000)
            emb = gcn.Embeddings(H1=np.zeros((1000, 1)),
                                 H2=rng.standard_normal((1000, 2)))
            accs.append(gcn.accuracy(emb, y, np.ones(1000, dtype=bool)))
        assert abs(np.mean(accs) - 0.5) < 0.05

    def test_empty_split_rejected(self):
        emb = gcn.Embeddings(H1=np.zeros((2, 1)), H2=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            gcn.accuracy(emb, np.zeros(2, dtype=int), np.zeros(2, dtype=bool))


class TestProperties:
    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        params, adj, X, y, train, anchor = random_instance(3, n=6)
        edges = np.array([(0, 1), (1, 2), (2, 3), (3, 4), (0, 5)])
        w = rng.random(5)
        adj = gcn.normalize_masked_adjacency(edges, w, 6)
        X = rng.standard_normal((6, 3))
        emb = gcn.forward(params, adj, X)
        loss, _ = gcn.loss_and_grads(params, adj, X, y[:6] if len(y) >= 6
                                     else np.resize(y, 6), train[:6] if len(train) >= 6
                                     else np.resize(train, 6), anchor, 0.0)
        pi = rng.permutation(6)
        inv = np.argsort(pi)
        pedges = np.sort(pi[edges], axis=1)
        padj = gcn.normalize_masked_adjacency(pedges, w, 6)
        pemb = gcn.forward(params, padj, X[inv])
        assert np.allclose(pemb.H2[pi], emb.H2, atol=1e-12)
        ploss, _ = gcn.loss_and_grads(params, padj, X[inv],
                                      np.resize(y, 6)[inv], np.resize(train, 6)[inv],
                                      anchor, 0.0)
        assert ploss == pytest.approx(loss, abs=1e-12)

    def test_proximal_pull(self):
        for seed in range(3):
            params0, adj, X, y, train, _ = random_instance(seed + 20, n=8, d_x=3,
                                                           hidden=4, C=2)
            dists = []
            for beta in (0.0, 0.1, 10.0):
                p = params0.copy()
                anchor = params0.copy()
                state = gcn.init_adam(p)
                for _ in range(20):
                    _, grads = gcn.loss_and_grads(p, adj, X, y, train, anchor, beta)
                    p, state = gcn.adam_step(p, grads, state, 0.01)
                dists.append(np.sqrt(p.sq_distance(anchor)))
            assert dists[0] >= dists[1] - 1e-9 >= dists[2] - 2e-9

    def test_zero_mask_equals_mlp(self):
        params, _, X, y, train, anchor = random_instance(5)
        edges = np.array([(0, 1), (2, 3)])
        adj = gcn.normalize_masked_adjacency(edges, np.zeros(2), 5)
        emb = gcn.forward(params, adj, X)
        # no-graph oracle: per-node MLP
        H1 = np.maximum(X @ params.W1 + params.b1, 0.0)
        H2 = H1 @ params.W2 + params.b2
        assert np.array_equal(emb.H2, H2)


def test_params_csv_dump(tmp_path):
    params = gcn.init_params(2, 3, 2, seed=1)
    path = tmp_path / "params.csv"
    gcn.save_params_csv(params, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "tensor,row,col,value"
    assert len(lines) == 1 + 2 * 3 + 3 + 3 * 2 + 2
