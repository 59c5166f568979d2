import numpy as np
import pytest

from fkgelab.graph import Triple
from fkgelab.models import (
    EmbeddingStore,
    LossParams,
    batch_entity_gradient,
    grad_negative,
    grad_positive,
    init_store,
    load_checkpoint,
    loss_negative,
    loss_positive,
    save_checkpoint,
    score,
    score_rows,
)

MODELS = ("transe", "rotate", "distmult", "complex")
TRIPLE = Triple(0, 0, 1)


def make_store(model, dim, rng, n_entities=3, n_relations=2):
    d_real = 2 * dim if model in ("rotate", "complex") else dim
    d_param = dim if model in ("transe", "distmult", "rotate") else 2 * dim
    ent = rng.uniform(-1.0, 1.0, size=(n_entities, d_real))
    if model == "rotate":
        rel = rng.uniform(-np.pi, np.pi, size=(n_relations, d_param))
    else:
        rel = rng.uniform(-1.0, 1.0, size=(n_relations, d_param))
    return EmbeddingStore(model, dim, ent, rel)


def total_loss(store, params, negatives=None):
    if negatives is None:
        return loss_positive(store, TRIPLE, params)
    return loss_negative(store, None, negatives, params, mode="uniform")


def fd_gradient(store, params, negatives=None, step=1e-5):
    """Central finite differences over the head row, tail row and relation
    parameters (and, for negatives, every touched row)."""
    grads = {}
    arrays = [("e", store.entity_mat), ("r", store.rel_params)]
    for tag, arr in arrays:
        g = np.zeros_like(arr)
        for i in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                orig = arr[i, j]
                arr[i, j] = orig + step
                up = total_loss(store, params, negatives)
                arr[i, j] = orig - step
                down = total_loss(store, params, negatives)
                arr[i, j] = orig
                g[i, j] = (up - down) / (2 * step)
        grads[tag] = g
    return grads


def analytic_dense(store, g):
    ge = np.zeros_like(store.entity_mat)
    gr = np.zeros_like(store.rel_params)
    for eid, vec in g.rows.items():
        ge[eid] += vec
    for rid, vec in g.rel_rows.items():
        gr[rid] += vec
    return {"e": ge, "r": gr}


def rel_err(a, b):
    num = np.linalg.norm(a - b)
    return num / max(np.linalg.norm(b), 1e-12)


def nonsingular(store):
    if store.model == "transe":
        u = store.entity_mat[0] + store.rel_params[0] - store.entity_mat[1]
        return np.linalg.norm(u) > 1e-3
    if store.model == "rotate":
        d = store.dim
        h = store.entity_mat[0][:d] + 1j * store.entity_mat[0][d:]
        t = store.entity_mat[1][:d] + 1j * store.entity_mat[1][d:]
        return np.abs(h * np.exp(1j * store.rel_params[0]) - t).sum() > 1e-3
    return True


class TestGradientOracle:
    @pytest.mark.parametrize("model", MODELS)
    def test_positive_gradient_matches_finite_differences(self, model):
        rng = np.random.default_rng(42)
        params = LossParams(gamma=2.0, n_neg=4, adv_temp=1.0)
        checked = 0
        while checked < 100:
            dim = [2, 4, 8][checked % 3]
            store = make_store(model, dim, rng)
            if not nonsingular(store):
                continue
            fd = fd_gradient(store, params)
            an = analytic_dense(store, grad_positive(store, TRIPLE, params))
            assert rel_err(an["e"], fd["e"]) < 1e-4
            assert rel_err(an["r"], fd["r"]) < 1e-4
            checked += 1

    @pytest.mark.parametrize("model", MODELS)
    def test_uniform_negative_gradient_matches_finite_differences(self, model):
        rng = np.random.default_rng(7)
        params = LossParams(gamma=2.0, n_neg=4, adv_temp=1.0)
        negatives = [Triple(0, 0, 2), Triple(2, 1, 1)]
        for _ in range(5):
            store = make_store(model, 4, rng)
            fd = fd_gradient(store, params, negatives)
            an = analytic_dense(
                store, grad_negative(store, None, negatives, params, mode="uniform"))
            assert rel_err(an["e"], fd["e"]) < 1e-4
            assert rel_err(an["r"], fd["r"]) < 1e-4


class TestPinnedScores:
    def test_transe(self):
        assert score_rows("transe", 2, np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                          np.array([1.0, 1.0])) == pytest.approx(0.0)
        assert score_rows("transe", 2, np.zeros(2), np.array([3.0, 4.0]),
                          np.zeros(2)) == pytest.approx(-5.0)

    def test_distmult(self):
        assert score_rows("distmult", 2, np.array([1.0, 2.0]), np.array([2.0, 0.5]),
                          np.array([3.0, 1.0])) == pytest.approx(7.0)

    def test_rotate(self):
        # h = 1, relation phase pi/2 (i.e. r = i), t = i  ->  h*r = t
        assert score_rows("rotate", 1, np.array([1.0, 0.0]), np.array([np.pi / 2]),
                          np.array([0.0, 1.0])) == pytest.approx(0.0, abs=1e-12)

    def test_complex(self):
        one = np.array([1.0, 0.0])
        assert score_rows("complex", 1, one, one, one) == pytest.approx(1.0)


class TestLoss:
    def test_loss_at_margin_is_log_two(self):
        store = EmbeddingStore("distmult", 1, np.ones((2, 1)), np.ones((1, 1)))
        params = LossParams(gamma=1.0, n_neg=1, adv_temp=1.0)
        assert loss_positive(store, TRIPLE, params) == pytest.approx(np.log(2.0))

    def test_loss_saturation_value(self):
        store = EmbeddingStore("distmult", 1, np.ones((2, 1)), np.ones((1, 1)))
        params = LossParams(gamma=11.0, n_neg=1, adv_temp=1.0)
        assert loss_positive(store, TRIPLE, params) == pytest.approx(10.0000454, abs=1e-6)

    def test_monotone_in_score(self):
        params = LossParams(gamma=1.0, n_neg=1, adv_temp=1.0)
        losses = []
        for v in np.linspace(-5.0, 5.0, 21):
            store = EmbeddingStore("distmult", 1,
                                   np.array([[1.0], [v]]), np.ones((1, 1)))
            losses.append(loss_positive(store, TRIPLE, params))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_uniform_negative_loss_pinned(self):
        # all negative scores equal to gamma, 4 negatives, uniform weights
        store = EmbeddingStore("distmult", 1, np.ones((2, 1)), np.ones((1, 1)))
        params = LossParams(gamma=1.0, n_neg=4, adv_temp=1.0)
        negs = [TRIPLE] * 4
        assert loss_negative(store, None, negs, params, mode="uniform") \
            == pytest.approx(np.log(2.0))

    def test_self_adv_singleton_weight(self):
        store = EmbeddingStore("distmult", 1, np.ones((2, 1)), np.ones((1, 1)))
        params = LossParams(gamma=1.0, n_neg=1, adv_temp=1.0)
        uni = loss_negative(store, None, [TRIPLE], params, mode="uniform")
        adv = loss_negative(store, None, [TRIPLE], params, mode="self_adv")
        assert uni == pytest.approx(adv)


class TestSparsity:
    @pytest.mark.parametrize("model", MODELS)
    def test_per_example_rows(self, model, rng):
        store = make_store(model, 4, rng, n_entities=6)
        g = grad_positive(store, Triple(0, 0, 3), LossParams(gamma=2.0, n_neg=1))
        assert len(g.rows) <= 2
        assert len(g.rel_rows) <= 1

    def test_self_loop_collapses_rows(self, rng):
        store = make_store("distmult", 4, rng, n_entities=6)
        g = grad_positive(store, Triple(2, 0, 2), LossParams(gamma=2.0, n_neg=1))
        assert set(g.rows) == {2}

    def test_batch_union_bounded(self, rng):
        store = make_store("transe", 4, rng, n_entities=20)
        batch = [Triple(int(rng.integers(20)), 0, int(rng.integers(20)))
                 for _ in range(16)]
        _, active = batch_entity_gradient(store, batch, LossParams(gamma=2.0, n_neg=1))
        assert len(active) <= 2 * len(batch)


class TestRotatePhases:
    def test_unit_modulus_preserved_under_updates(self, rng):
        store = init_store("rotate", 5, 3, 8, rng)
        for _ in range(50):
            store.rel_params += rng.normal(0, 0.5, size=store.rel_params.shape)
            rows = store.relation_rows()
            mod = rows[:, :8] ** 2 + rows[:, 8:] ** 2
            assert np.all(np.abs(mod - 1.0) <= 1e-9)


class TestCheckpoint:
    @pytest.mark.parametrize("model", MODELS)
    def test_round_trip(self, model, tmp_path, rng):
        store = init_store(model, 7, 3, 4, rng)
        path = tmp_path / "store.ckpt"
        save_checkpoint(store, path)
        back = load_checkpoint(path)
        assert back.model == store.model and back.dim == store.dim
        np.testing.assert_array_equal(back.entity_mat, store.entity_mat)
        np.testing.assert_array_equal(back.rel_params, store.rel_params)

    def test_score_matches_store(self, rng):
        store = init_store("complex", 5, 2, 4, rng)
        t = Triple(1, 0, 3)
        assert score(store, t) == pytest.approx(score_rows(
            "complex", 4, store.entity_mat[1], store.rel_params[0],
            store.entity_mat[3]))
