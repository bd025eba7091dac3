import math

import numpy as np
import pytest

from kinrec.debias import (DebiasModel, LabeledFeature, MLPProbe, backward, forward,
                           gradient_parts, init_model, kfold_ids, leakage_probe, losses,
                           mapping_objective, nll, planted_features, train_debias, transform)
from kinrec.errors import DimensionMismatch, InvalidHyperparameters

SMALL_PROBE = {"hidden": (64, 64, 32), "epochs": 20}


def random_batch(rng, n=12, d=8, n_id=4, n_att=3):
    return rng.normal(size=(n, d)), rng.integers(0, n_id, n), rng.integers(0, n_att, n)


class TestForward:
    def test_shapes_and_normalization(self, rng):
        m = init_model(10, 4, 3, 1.0, head_scale=1.0)
        f, pid, patt = forward(m, rng.normal(size=(7, 10)))
        assert f.shape == (7, 5) and pid.shape == (7, 4) and patt.shape == (7, 3)
        np.testing.assert_allclose(pid.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(patt.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_input_uniform(self):
        m = init_model(6, 5, 2, 1.0)
        _, pid, patt = forward(m, np.zeros(6))
        np.testing.assert_allclose(pid, 0.2, atol=1e-15)
        np.testing.assert_allclose(patt, 0.5, atol=1e-15)

    def test_reproducible(self, rng):
        x = rng.normal(size=8)
        a = forward(init_model(8, 3, 2, 1.0, seed=4, head_scale=1.0), x)
        b = forward(init_model(8, 3, 2, 1.0, seed=4, head_scale=1.0), x)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            forward(init_model(8, 3, 2, 1.0), np.zeros(6))

    def test_transform_halves(self, rng):
        assert transform(init_model(12, 2, 2, 1.0), rng.normal(size=(3, 12))).shape == (3, 6)


class TestLosses:
    def test_perfect(self):
        assert nll(np.eye(3), [0, 1, 2]) == 0.0

    def test_uniform(self):
        assert nll(np.full((4, 5), 0.2), [0, 1, 2, 3]) == pytest.approx(math.log(5), abs=1e-12)
        m = init_model(6, 7, 3, 1.0)
        l_id, l_att, total = losses(m, (np.zeros((2, 6)), [0, 1], [2, 0]))
        assert l_id == pytest.approx(math.log(7)) and l_att == pytest.approx(math.log(3))
        assert total == pytest.approx(math.log(21))

    def test_oracle(self, rng):
        m = init_model(8, 4, 3, 0.7, head_scale=1.0)
        X, yi, ya = random_batch(rng)
        f = np.tanh(X @ m.params["M.W"].T + m.params["M.b"])

        def ref(W, b, y):
            total = 0.0
            for k in range(len(y)):
                z = W @ f[k] + b
                total += -(z[y[k]] - math.log(sum(math.exp(v) for v in z)))
            return total / len(y)

        l_id, l_att, _ = losses(m, (X, yi, ya))
        assert abs(l_id - ref(m.params["ID.W"], m.params["ID.b"], yi)) < 1e-10
        assert abs(l_att - ref(m.params["ATT.W"], m.params["ATT.b"], ya)) < 1e-10
        assert mapping_objective(m, (X, yi, ya)) == pytest.approx(l_id - 0.7 * l_att)

    def test_labeled_feature_batches(self, rng):
        X, yi, ya = random_batch(rng)
        m = init_model(8, 4, 3, 1.0, head_scale=1.0)
        items = [LabeledFeature(X[k], int(yi[k]), int(ya[k])) for k in range(len(yi))]
        assert losses(m, items) == losses(m, (X, yi, ya))


def central_difference(fn, model, key, idx, h=1e-6):
    up, down = model.copy(), model.copy()
    up.params[key][idx] += h
    down.params[key][idx] -= h
    return (fn(up) - fn(down)) / (2 * h)


class TestBackward:
    def test_lambda_zero(self, rng):
        batch = random_batch(rng)
        m = init_model(8, 4, 3, 0.0, head_scale=1.0)
        g, parts = backward(m, batch), gradient_parts(m, batch)
        for k in ("M.W", "M.b"):
            np.testing.assert_array_equal(g[k], parts["ID"][k])

    def test_finite_differences(self, rng):
        batch = random_batch(rng)
        m = init_model(8, 4, 3, 0.8, seed=3, head_scale=1.0)
        g = backward(m, batch)
        objectives = {"M": lambda mm: mapping_objective(mm, batch),
                      "ID": lambda mm: losses(mm, batch)[0],
                      "ATT": lambda mm: losses(mm, batch)[1]}
        picks = [("M.W", (0, 1)), ("M.W", (2, 5)), ("M.W", (3, 7)), ("M.b", (1,)), ("M.b", (3,)),
                 ("ID.W", (1, 2)), ("ID.b", (0,)), ("ATT.W", (2, 0)), ("ATT.W", (0, 3)),
                 ("ATT.b", (1,))]
        for key, idx in picks:
            fd = central_difference(objectives[key.split(".")[0]], m, key, idx)
            assert abs(fd - g[key][idx]) <= 1e-4 * max(abs(fd), 1e-6)

    def test_lambda_scaling(self, rng):
        batch = random_batch(rng)
        m1 = init_model(8, 4, 3, 1.0, head_scale=1.0)
        m2 = m1.copy()
        m2.lam = 2.0
        g1, g2 = backward(m1, batch), backward(m2, batch)
        id_part = gradient_parts(m1, batch)["ID"]
        for k in ("M.W", "M.b"):
            np.testing.assert_allclose(g2[k] - id_part[k], 2 * (g1[k] - id_part[k]), atol=1e-14)
        for k in ("ID.W", "ID.b", "ATT.W", "ATT.b"):
            np.testing.assert_array_equal(g1[k], g2[k])

    def test_decomposition_identity(self, rng):
        for lam in (0.3, 1.0, 5.0):
            batch = random_batch(rng)
            m = init_model(8, 4, 3, lam, seed=int(lam * 10), head_scale=1.0)
            g, parts = backward(m, batch), gradient_parts(m, batch)
            for k in ("M.W", "M.b"):
                np.testing.assert_allclose(g[k] + lam * parts["ATT"][k], parts["ID"][k],
                                           atol=1e-10)


class TestTraining:
    def test_zero_epochs(self):
        X, yi, ya = planted_features(n_id=3, per_cell=4, d=8)
        model, hist = train_debias((X, yi, ya), lam=1.0, epochs=0, seed=2)
        init = init_model(8, 3, 2, 1.0, seed=2)
        for k in init.params:
            np.testing.assert_array_equal(model.params[k], init.params[k])
        assert hist.l_id == []

    def test_deterministic_and_finite(self):
        data = planted_features(n_id=4, per_cell=5, d=8)
        a, ha = train_debias(data, lam=0.5, epochs=5, lr=0.01, seed=1)
        b, hb = train_debias(data, lam=0.5, epochs=5, lr=0.01, seed=1)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])
        assert ha.l_id == hb.l_id and np.all(np.isfinite(ha.l_id + ha.l_att))
        assert len(ha.l_id) == 5

    @pytest.mark.parametrize("kw", [{"lam": -1.0}, {"lr": 0.0}, {"epochs": -1},
                                    {"lam": float("nan")}])
    def test_bad_hyperparameters(self, kw):
        data = planted_features(n_id=2, per_cell=2, d=4)
        with pytest.raises(InvalidHyperparameters):
            train_debias(data, **kw)

    def test_checkpoint_roundtrip(self, tmp_path):
        model, _ = train_debias(planted_features(n_id=3, per_cell=3, d=6), epochs=2, seed=5)
        model.save(tmp_path / "ck.json")
        back = DebiasModel.load(tmp_path / "ck.json")
        assert (back.lam, back.n_id, back.n_att) == (model.lam, model.n_id, model.n_att)
        for k in model.params:
            np.testing.assert_array_equal(back.params[k], model.params[k])

    def test_planted_leakage_drop(self):
        X, yi, ya = planted_features(n_id=10, n_att=2, per_cell=30, d=32, att_scale=1.5, seed=0)
        pre_id = leakage_probe(X, yi, **SMALL_PROBE)["accuracy"]
        deb, _ = train_debias((X, yi, ya), lam=0.5, epochs=300, lr=0.01, head_lr=0.2, seed=0)
        F = transform(deb, X)
        att = leakage_probe(F, ya, **SMALL_PROBE)
        assert att["accuracy"] <= att["chance"] + 0.10
        assert leakage_probe(F, yi, **SMALL_PROBE)["accuracy"] >= 0.9 * pre_id


class TestProbe:
    def test_one_hot_codes(self):
        y = np.arange(200) % 4
        res = leakage_probe(np.eye(4)[y], y, **SMALL_PROBE)
        assert res["accuracy"] >= 0.99
        assert res["confusion"].sum() == 200

    def test_random_labels(self, rng):
        n, k = 600, 3
        y = rng.integers(0, k, n)
        res = leakage_probe(rng.normal(size=(n, 8)), y, **SMALL_PROBE)
        sigma = math.sqrt((1 / k) * (1 - 1 / k) / n)
        assert abs(res["accuracy"] - 1 / k) <= 3 * sigma + 0.02

    def test_folds_balanced(self):
        f = kfold_ids(103, 5, seed=1)
        counts = np.bincount(f)
        assert counts.max() - counts.min() <= 1

    def test_dropout_deterministic_predict(self, rng):
        X = rng.normal(size=(40, 4))
        y = (X[:, 0] > 0).astype(int)
        p = MLPProbe(hidden=(8,), epochs=5, dropout=0.5, seed=0).fit(X, y)
        np.testing.assert_array_equal(p.predict(X), p.predict(X))
