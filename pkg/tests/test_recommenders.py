import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from hyperdp.dataset import Dataset, fold_view
from hyperdp.errors import ConfigError, TrainingDivergedError
from hyperdp.recommenders import (HyperConfig, KnnModel, MfModel, _sgd_pass, _sgd_pass_py,
                                  bpr_triple_gradient, bpr_triple_objective, knn_score,
                                  load_model, mf_score, recommend_many, recommend_top_n,
                                  save_model, train, train_bpr_mf, train_item_knn,
                                  train_user_knn)


def from_matrix(M):
    """Dataset from a dense user x item matrix (0 = unrated); ids follow row/column order."""
    recs = [(f"u{u}", f"i{i}", M[u, i], 0) for u in range(M.shape[0]) for i in range(M.shape[1]) if M[u, i]]
    d = Dataset.from_records(recs)
    # ids are first-appearance; keep a mapping back to matrix coordinates
    return d


def toy_matrix(n_users, n_items, density, seed):
    rng = np.random.default_rng(seed)
    M = rng.integers(1, 6, size=(n_users, n_items)).astype(float)
    M[rng.random((n_users, n_items)) > density] = 0
    for u in range(n_users):  # every user rates column 0 or something, keep ids aligned
        if not M[u].any():
            M[u, u % n_items] = 3
    for i in range(n_items):
        if not M[:, i].any():
            M[i % n_users, i] = 2
    return M


def aligned(M):
    """Dataset with internal ids equal to matrix coordinates."""
    d = from_matrix(M)
    u_perm = np.array([int(lab[1:]) for lab in d.user_labels])
    i_perm = np.array([int(lab[1:]) for lab in d.item_labels])
    labels_u = np.empty(len(u_perm), dtype=object)
    labels_u[u_perm] = d.user_labels
    labels_i = np.empty(len(i_perm), dtype=object)
    labels_i[i_perm] = d.item_labels
    return Dataset(u_perm[d.user], i_perm[d.item], d.rating.copy(), d.timestamp.copy(), labels_u, labels_i)


def brute_neighbors(M, k):
    """Exhaustive cosine neighbour lists over the rows of M.

    Ratings are integers, so the ordering uses the exact rational square of
    the (non-negative) cosine and ties are decided by id without float noise.
    """
    n = M.shape[0]
    R = [[int(x) for x in row] for row in M]
    sq = [sum(x * x for x in row) for row in R]
    out = []
    for a in range(n):
        if sq[a] == 0:
            out.append([])
            continue
        cands = []
        for b in range(n):
            if b == a or sq[b] == 0:
                continue
            dot = sum(x * y for x, y in zip(R[a], R[b]))
            cands.append((-Fraction(dot * dot, sq[a] * sq[b]), b, dot / math.sqrt(sq[a] * sq[b])))
        cands.sort()
        out.append([(b, s) for _, b, s in cands[:k]])
    return out


def assert_lists_equal(model, oracle):
    for e, expected in enumerate(oracle):
        ids, sims = model.neighbors(e)
        assert ids.tolist() == [b for b, _ in expected]
        np.testing.assert_allclose(sims, [s for _, s in expected], rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- config


def test_hyperconfig_validation():
    HyperConfig.bpr_mf(10, 1, 0.1)
    with pytest.raises(ConfigError):
        HyperConfig.bpr_mf(10, 0, 0.1)
    with pytest.raises(ConfigError):
        HyperConfig.bpr_mf(10, 1, 0.0)
    with pytest.raises(ConfigError):
        HyperConfig.user_knn(0)
    with pytest.raises(ConfigError):
        HyperConfig("UserKnn", neighbors=5, factors=3)
    with pytest.raises(ConfigError):
        HyperConfig("Popularity", neighbors=5)


def test_config_id_is_content_hash():
    a = HyperConfig.bpr_mf(10, 2, 0.05)
    assert a.config_id == HyperConfig.bpr_mf(10, 2, 0.05).config_id
    assert a.config_id != HyperConfig.bpr_mf(10, 3, 0.05).config_id
    assert a.config_id.startswith("bprmf-")
    assert HyperConfig.from_dict(a.to_dict()) == a


# ---------------------------------------------------------------- kNN


def test_identical_users_have_similarity_one():
    M = np.array([[5, 3, 0, 1], [5, 3, 0, 1], [0, 0, 4, 0]], dtype=float)
    m = train_user_knn(aligned(M), 2)
    ids, sims = m.neighbors(0)
    assert ids[0] == 1
    assert sims[0] == pytest.approx(1.0, abs=1e-15)


def test_disjoint_users_excluded_when_saturated():
    M = np.array([[5, 3, 0, 0], [4, 1, 0, 0], [0, 0, 4, 2]], dtype=float)
    m = train_user_knn(aligned(M), 1)
    assert m.neighbors(0)[0].tolist() == [1]
    assert m.neighbors(2)[1].tolist() == [0.0]
    m2 = train_user_knn(aligned(M), 5)
    ids, sims = m2.neighbors(0)
    assert ids.tolist() == [1, 2] and sims[1] == 0.0


def test_user_knn_matches_brute_force():
    M = toy_matrix(8, 12, 0.5, seed=1)
    assert_lists_equal(train_user_knn(aligned(M), 3), brute_neighbors(M, 3))


def test_item_knn_matches_brute_force():
    M = toy_matrix(9, 10, 0.5, seed=2)
    assert_lists_equal(train_item_knn(aligned(M), 4), brute_neighbors(M.T, 4))


def test_identical_items_and_single_rater():
    M = np.array([[5, 5, 0], [2, 2, 0], [0, 0, 3]], dtype=float)
    m = train_item_knn(aligned(M), 2)
    ids, sims = m.neighbors(0)
    assert ids[0] == 1 and sims[0] == pytest.approx(1.0)
    # item 2 is rated by one user who rated nothing else: zero to every other item
    ids, sims = m.neighbors(2)
    assert sims.tolist() == [0.0, 0.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.floats(0.1, 0.9), st.integers(0, 10**6), st.integers(1, 8))
def test_knn_lists_equal_brute_force_property(nu, ni, density, seed, k):
    M = toy_matrix(nu, ni, density, seed)
    d = aligned(M)
    assert_lists_equal(train_user_knn(d, k), brute_neighbors(M, k))
    assert_lists_equal(train_item_knn(d, k), brute_neighbors(M.T, k))


def test_knn_score_examples():
    R = sparse.csr_matrix(np.array([[0, 0], [4, 0]], dtype=float))
    m = KnnModel("user", 1, np.array([0, 1, 1]), np.array([1]), np.array([0.5]), R)
    assert knn_score(m, 0, 0) == 2.0
    assert knn_score(m, 0, 1) == 0.0


def test_knn_scores_match_hand_expansion():
    M = toy_matrix(7, 9, 0.5, seed=4)
    d = aligned(M)
    for trainer, orient in ((train_user_knn, "user"), (train_item_knn, "item")):
        m = trainer(d, 3)
        S = m.score_matrix(np.arange(7))
        for u in range(7):
            for i in range(9):
                if orient == "user":
                    ids, sims = m.neighbors(u)
                    expected = sum(s * M[v, i] for v, s in zip(ids, sims) if M[v, i])
                else:
                    ids, sims = m.neighbors(i)
                    expected = sum(s * M[u, j] for j, s in zip(ids, sims) if M[u, j])
                assert knn_score(m, u, i) == pytest.approx(expected, abs=1e-12)
                assert S[u, i] == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------- BPR-MF


def test_zero_learning_rate_keeps_initialisation(corpus):
    cfg = HyperConfig.bpr_mf(4, 2, 1e-14)
    m = train_bpr_mf(corpus, cfg, seed=3)
    rng = np.random.default_rng(3)
    P0 = rng.normal(0, 0.1, size=(corpus.n_users, 4))
    Q0 = rng.normal(0, 0.1, size=(corpus.n_items, 4))
    np.testing.assert_allclose(m.P, P0, atol=1e-12)
    np.testing.assert_allclose(m.Q, Q0, atol=1e-12)


def test_single_step_closed_form():
    P = np.array([[0.1, -0.2], [0.3, 0.05]])
    Q = np.array([[0.2, 0.1], [-0.1, 0.4], [0.05, -0.3]])
    lr = 0.1
    ru, ri = lr / 20, lr / 200
    u, i, j = 0, 2, 1
    # hand-evaluated update with the old vectors on every right-hand side
    x = P[u] @ Q[i] - P[u] @ Q[j]
    g = 1 / (1 + math.exp(x))
    pu = P[u] + lr * (g * (Q[i] - Q[j]) - ru * P[u])
    qi = Q[i] + lr * (g * P[u] - ri * Q[i])
    qj = Q[j] + lr * (-g * P[u] - ri * Q[j])
    for step in (_sgd_pass_py, _sgd_pass):
        P2, Q2 = P.copy(), Q.copy()
        step(P2, Q2, np.array([u]), np.array([i]), np.array([j]), lr, ru, ri)
        np.testing.assert_allclose(P2[u], pu, rtol=1e-14)
        np.testing.assert_allclose(Q2[i], qi, rtol=1e-14)
        np.testing.assert_allclose(Q2[j], qj, rtol=1e-14)
        np.testing.assert_array_equal(P2[1], P[1])
        np.testing.assert_array_equal(Q2[0], Q[0])


def test_sgd_step_is_gradient_ascent():
    rng = np.random.default_rng(0)
    p, qi, qj = rng.normal(0, 0.3, (3, 5))
    gp, gi, gj = bpr_triple_gradient(p, qi, qj, 0.01, 0.001)
    P, Q = p[None].copy(), np.vstack([qi, qj])
    _sgd_pass_py(P, Q, np.array([0]), np.array([0]), np.array([1]), 0.5, 0.01, 0.001)
    np.testing.assert_allclose(P[0], p + 0.5 * gp, rtol=1e-14)
    np.testing.assert_allclose(Q[0], qi + 0.5 * gi, rtol=1e-14)
    np.testing.assert_allclose(Q[1], qj + 0.5 * gj, rtol=1e-14)


def central_difference(f, x, h=1e-5):
    g = np.empty_like(x)
    for n in range(len(x)):
        e = np.zeros_like(x)
        e[n] = h
        g[n] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        F = 8
        p, qi, qj = rng.normal(0, 0.5, (3, F))
        lr = float(rng.choice([0.2, 0.05, 0.01]))
        ru, ri = lr / 20, lr / 200
        gp, gi, gj = bpr_triple_gradient(p, qi, qj, ru, ri)
        fp = central_difference(lambda v: bpr_triple_objective(v, qi, qj, ru, ri), p)
        fi = central_difference(lambda v: bpr_triple_objective(p, v, qj, ru, ri), qi)
        fj = central_difference(lambda v: bpr_triple_objective(p, qi, v, ru, ri), qj)
        assert rel_err(gp, fp) <= 1e-4
        assert rel_err(gi, fi) <= 1e-4
        assert rel_err(gj, fj) <= 1e-4


def test_jit_and_python_kernels_agree(corpus):
    cfg = HyperConfig.bpr_mf(6, 2, 0.05)
    a = train_bpr_mf(corpus, cfg, seed=5, jit=True)
    b = train_bpr_mf(corpus, cfg, seed=5, jit=False)
    np.testing.assert_allclose(a.P, b.P, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(a.Q, b.Q, rtol=1e-12, atol=1e-15)


def test_bpr_deterministic(corpus):
    cfg = HyperConfig.bpr_mf(6, 2, 0.05)
    a = train_bpr_mf(corpus, cfg, seed=5)
    b = train_bpr_mf(corpus, cfg, seed=5)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)
    c = train_bpr_mf(corpus, cfg, seed=6)
    assert not np.array_equal(a.P, c.P)


def test_negative_samples_are_unrated(corpus):
    from hyperdp.recommenders import _TripleSampler
    s = _TripleSampler(corpus)
    u, i, j = s.draw(np.random.default_rng(0), 5000)
    rated = set(zip(corpus.user.tolist(), corpus.item.tolist()))
    assert all((a, b) in rated for a, b in zip(u.tolist(), i.tolist()))
    assert not any((a, b) in rated for a, b in zip(u.tolist(), j.tolist()))


def test_divergence_raises(corpus):
    with pytest.raises(TrainingDivergedError) as exc:
        train_bpr_mf(corpus, HyperConfig.bpr_mf(4, 3, 1e200), seed=0)
    assert exc.value.iteration == 1


def test_train_rejects_knn_config(corpus):
    with pytest.raises(ConfigError):
        train_bpr_mf(corpus, HyperConfig.user_knn(3), 0)


def test_mf_score():
    cfg = HyperConfig.bpr_mf(1, 1, 0.1)
    m = MfModel(np.array([[2.0], [0.0]]), np.array([[3.0], [7.0]]), cfg, 0)
    assert mf_score(m, 0, 0) == 6.0
    assert mf_score(m, 1, 0) == 0.0 and mf_score(m, 1, 1) == 0.0
    rng = np.random.default_rng(1)
    P, Q = rng.normal(size=(3, 8)), rng.normal(size=(4, 8))
    m = MfModel(P, Q, HyperConfig.bpr_mf(8, 1, 0.1), 0)
    for u in range(3):
        for i in range(4):
            assert mf_score(m, u, i) == pytest.approx(sum(P[u, f] * Q[i, f] for f in range(8)), rel=1e-13)


# ---------------------------------------------------------------- ranking


def fixed_model(P, Q):
    return MfModel(np.asarray(P, float), np.asarray(Q, float), HyperConfig.bpr_mf(len(P[0]), 1, 0.1), 0)


def test_pool_exhaustion():
    M = np.ones((2, 8))
    M[0, [2, 5, 7]] = 0
    d = aligned(M)
    rng = np.random.default_rng(0)
    m = fixed_model(rng.normal(size=(2, 3)), rng.normal(size=(8, 3)))
    lst = recommend_top_n(m, 0, d, 10)
    assert sorted(lst.items.tolist()) == [2, 5, 7]


def test_ties_by_item_id():
    M = np.array([[1, 0, 0, 0], [1, 1, 1, 1]], dtype=float)
    m = fixed_model([[1.0], [1.0]], [[0.0], [2.0], [5.0], [2.0]])
    lst = recommend_top_n(m, 0, aligned(M), 3)
    assert lst.items.tolist() == [2, 1, 3]
    assert lst.scores.tolist() == [5.0, 2.0, 2.0]


def test_unknown_user_gets_empty_list(corpus):
    m = train_user_knn(corpus, 5)
    assert len(recommend_top_n(m, corpus.n_users + 3, corpus, 10)) == 0
    assert len(recommend_top_n(m, -1, corpus, 10)) == 0


def test_list_equals_full_sort_oracle(corpus):
    m = train_bpr_mf(corpus, HyperConfig.bpr_mf(5, 2, 0.05), seed=1)
    profiles = {u: set(corpus.item[corpus.user == u].tolist()) for u in range(corpus.n_users)}
    lists = recommend_many(m, np.arange(corpus.n_users), corpus, 10)
    for u in range(0, corpus.n_users, 7):
        cands = [(-(m.P[u] @ m.Q[i]), i) for i in range(corpus.n_items) if i not in profiles[u]]
        cands.sort()
        assert lists[u].items.tolist() == [i for _, i in cands[:10]]
        assert recommend_top_n(m, u, corpus, 10).items.tolist() == lists[u].items.tolist()


def test_lists_never_contain_training_items(corpus_split):
    train_set, fa = corpus_split
    cv_train, _ = fold_view(train_set, fa, 0)
    for cfg in (HyperConfig.user_knn(10), HyperConfig.item_knn(10), HyperConfig.bpr_mf(4, 1, 0.05)):
        m = train(cv_train, cfg, 0)
        lists = recommend_many(m, np.arange(cv_train.n_users), cv_train, 10)
        profiles = cv_train.user_items()
        for u, lst in lists.items():
            assert not set(lst.items.tolist()) & set(profiles[u].tolist())
            assert np.all(np.diff(lst.scores) <= 0)


def test_scaling_factors_scales_scores_by_c_squared(corpus):
    m = train_bpr_mf(corpus, HyperConfig.bpr_mf(5, 2, 0.05), seed=2)
    c = 3.0
    m2 = MfModel(m.P * c, m.Q * c, m.config, m.seed)
    np.testing.assert_allclose(m2.score_matrix([0, 1]), c * c * m.score_matrix([0, 1]), rtol=1e-12)
    for u in range(0, corpus.n_users, 11):
        assert (recommend_top_n(m, u, corpus, 10).items.tolist()
                == recommend_top_n(m2, u, corpus, 10).items.tolist())


def test_recommend_rejects_bad_n(corpus):
    with pytest.raises(ConfigError):
        recommend_top_n(train_user_knn(corpus, 3), 0, corpus, 0)


# ---------------------------------------------------------------- persistence


def test_model_roundtrip(tmp_path, corpus):
    for cfg in (HyperConfig.user_knn(7), HyperConfig.item_knn(7), HyperConfig.bpr_mf(4, 1, 0.05)):
        m = train(corpus, cfg, 0)
        p = tmp_path / f"{cfg.config_id}.npz"
        save_model(m, p)
        back = load_model(p)
        np.testing.assert_array_equal(back.score_matrix([0, 5]), m.score_matrix([0, 5]))
        assert (recommend_top_n(back, 3, corpus, 10).items.tolist()
                == recommend_top_n(m, 3, corpus, 10).items.tolist())
