import numpy as np
import pytest

from ntkadv import ntk
from ntkadv.datasets import generate_gaussian_blobs, label_matrix, split_dataset, SplitSpec
from ntkadv.errors import NumericalError, ParameterError
from ntkadv.regression import (
    INF_TIME,
    EigenSystem,
    Predictor,
    eigendecompose,
    predict_at_time,
    predict_batch,
    predict_infinite_time,
    prediction_input_gradient,
    solve_gram_direct,
)


def make_gram(values):
    return ntk.GramMatrix(np.asarray(values, dtype=float),
                          ntk.two_layer_kernel(), 0.0)


def blob_predictor(seed=0, n=40, d=6, sep=4.0, lr=1.0, jitter=1e-8):
    ds = generate_gaussian_blobs(n, d, 2, sep, seed)
    train, val = split_dataset(ds, SplitSpec(0.5, seed=seed + 1))
    p = Predictor.fit(ntk.two_layer_kernel(), train.inputs,
                      label_matrix(train), learning_rate=lr,
                      jitter_scale=jitter)
    return p, train, val


class TestEigendecompose:
    def test_identity(self):
        es = eigendecompose(make_gram(np.eye(3)))
        np.testing.assert_allclose(es.eigenvalues, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(es.eigenvectors.T @ es.eigenvectors,
                                   np.eye(3), atol=1e-8)

    def test_diagonal_ordering(self):
        es = eigendecompose(make_gram(np.diag([3.0, 1.0, 2.0])))
        np.testing.assert_allclose(es.eigenvalues, [3.0, 2.0, 1.0])
        # Eigenvectors are signed canonical basis vectors, largest entry positive.
        np.testing.assert_allclose(np.abs(es.eigenvectors),
                                   np.eye(3)[:, [0, 2, 1]], atol=1e-12)
        assert es.eigenvectors.max() > 0

    def test_reconstruction_random_psd(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((50, 60))
        G = make_gram(A @ A.T)
        es = eigendecompose(G)
        rebuilt = es.eigenvectors @ np.diag(es.eigenvalues) @ es.eigenvectors.T
        rel = np.linalg.norm(rebuilt - G.values) / np.linalg.norm(G.values)
        assert rel <= 1e-8

    def test_sign_convention(self):
        es = eigendecompose(make_gram([[2.0, 0.5], [0.5, 1.0]]))
        for j in range(2):
            v = es.eigenvectors[:, j]
            assert v[np.argmax(np.abs(v))] > 0

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((8, 8))
        G = make_gram(A @ A.T)
        e1, e2 = eigendecompose(G), eigendecompose(G)
        np.testing.assert_array_equal(e1.eigenvectors, e2.eigenvectors)

    def test_rejects_nonfinite(self):
        bad = np.eye(2)
        bad[0, 1] = np.inf
        g = ntk.GramMatrix.__new__(ntk.GramMatrix)
        object.__setattr__(g, "values", bad)
        object.__setattr__(g, "kernel", ntk.two_layer_kernel())
        object.__setattr__(g, "jitter", 0.0)
        with pytest.raises(ParameterError):
            eigendecompose(g)

    def test_descending_required(self):
        with pytest.raises(ParameterError):
            EigenSystem(np.array([1.0, 2.0]), np.eye(2))


class TestInfiniteTime:
    def test_interpolates_training_rows(self):
        p, train, _ = blob_predictor()
        y = label_matrix(train)
        for j in (0, 3, 7):
            pred = predict_infinite_time(p, train.inputs[j])
            assert abs(pred - y[j]) <= 1e-5 * abs(y[j])

    def test_zero_labels_zero_prediction(self):
        p, train, _ = blob_predictor()
        p0 = p.with_labels(np.zeros(p.n))
        assert predict_infinite_time(p0, train.inputs[0]) == 0.0

    def test_separable_blobs_reach_full_accuracy(self):
        ds = generate_gaussian_blobs(200, 16, 2, 8.0, seed=1)
        train, val = split_dataset(ds, SplitSpec(0.5, seed=2))
        p = Predictor.fit(ntk.two_layer_kernel(), train.inputs,
                          label_matrix(train))
        preds = predict_batch(p, val.inputs)
        acc = np.mean(np.sign(preds) == label_matrix(val))
        assert acc == 1.0


class TestFiniteTime:
    def test_time_zero_is_zero(self):
        p, train, _ = blob_predictor()
        assert predict_at_time(p, train.inputs[0], 0.0) == 0.0

    def test_large_time_matches_infinite(self):
        p, train, val = blob_predictor()
        lam_min = p.gram_eigen.eigenvalues[-1]
        t = 50.0 / (p.learning_rate * lam_min)
        for x in val.inputs[:5]:
            f_t = predict_at_time(p, x, t)
            f_inf = predict_infinite_time(p, x)
            assert abs(f_t - f_inf) <= 1e-10 * abs(f_inf)

    def test_monotone_approach_to_limit(self):
        # Norm over a fixed batch of 10 test points, on an instance where the
        # approach is monotone; pointwise gaps can wiggle when spectral modes
        # cancel, so this is an instance check, not a theorem.
        p, _, val = blob_predictor(seed=2)
        lam_min = p.gram_eigen.eigenvalues[-1]
        grid = np.geomspace(1e-3, 60.0 / lam_min, 25)
        X10 = val.inputs[:10]
        f_inf = predict_batch(p, X10)
        gaps = [np.linalg.norm(predict_batch(p, X10, t) - f_inf) for t in grid]
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))

    def test_negative_time_rejected(self):
        p, train, _ = blob_predictor()
        with pytest.raises(ParameterError):
            predict_at_time(p, train.inputs[0], -1.0)


class TestGradient:
    def test_matches_finite_differences(self):
        p, _, val = blob_predictor()
        h = 1e-6
        for t in (0.5, INF_TIME):
            for x in val.inputs[:10]:
                g = prediction_input_gradient(p, x, t)
                fd = np.zeros_like(g)
                for j in range(x.size):
                    e = np.zeros_like(x)
                    e[j] = h
                    fd[j] = (predict_at_time(p, x + e, t)
                             - predict_at_time(p, x - e, t)) / (2 * h)
                assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)

    def test_zero_labels_zero_gradient(self):
        p, _, val = blob_predictor()
        p0 = p.with_labels(np.zeros(p.n))
        g = prediction_input_gradient(p0, val.inputs[0], INF_TIME)
        np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_label_negation_negates_gradient(self):
        p, _, val = blob_predictor()
        pneg = p.with_labels(-p.labels)
        g = prediction_input_gradient(p, val.inputs[0], INF_TIME)
        gneg = prediction_input_gradient(pneg, val.inputs[0], INF_TIME)
        np.testing.assert_array_equal(gneg, -g)


class TestInvariants:
    def test_spectral_matches_direct_solve(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((30, 5))
            y = rng.standard_normal(30)
            g = ntk.gram(ntk.two_layer_kernel(), X)
            p = Predictor(ntk.two_layer_kernel(), X, y, eigendecompose(g))
            direct = solve_gram_direct(g, y)
            spectral = p.coefficients(INF_TIME)
            rel = np.linalg.norm(spectral - direct) / np.linalg.norm(direct)
            assert rel <= 1e-8

    def test_linear_in_labels(self):
        p, train, val = blob_predictor()
        rng = np.random.default_rng(4)
        y1, y2 = rng.standard_normal((2, p.n))
        x = val.inputs[0]
        combo = predict_infinite_time(p.with_labels(2.0 * y1 - 3.0 * y2), x)
        parts = (2.0 * predict_infinite_time(p.with_labels(y1), x)
                 - 3.0 * predict_infinite_time(p.with_labels(y2), x))
        assert abs(combo - parts) <= 1e-10 * max(1.0, abs(parts))

    def test_continuity_under_jitter_change(self):
        # Duplicated rows make the Gram singular up to jitter; finite-time
        # predictions must barely depend on which jitter resolved it.
        ds = generate_gaussian_blobs(20, 4, 2, 3.0, seed=5)
        X = np.vstack([ds.inputs, ds.inputs[:5]])
        y = np.concatenate([label_matrix(ds), label_matrix(ds)[:5]])
        preds = {}
        for js in (1e-8, 1e-10):
            p = Predictor.fit(ntk.two_layer_kernel(), X, y, jitter_scale=js)
            preds[js] = np.array([predict_at_time(p, x, 2.0)
                                  for x in ds.inputs[5:10]])
        rel = np.abs(preds[1e-8] - preds[1e-10]) / np.abs(preds[1e-10])
        assert rel.max() <= 1e-4

    def test_multiclass_shares_factorization(self):
        ds = generate_gaussian_blobs(30, 6, 3, 5.0, seed=6)
        p = Predictor.fit(ntk.two_layer_kernel(), ds.inputs, label_matrix(ds))
        out = predict_infinite_time(p, ds.inputs[0])
        assert out.shape == (3,)
        cols = [predict_infinite_time(p.with_labels(label_matrix(ds)[:, c]),
                                      ds.inputs[0]) for c in range(3)]
        np.testing.assert_allclose(out, cols, rtol=1e-12, atol=1e-12)

    def test_eigen_floor_raises_without_jitter(self):
        X = np.vstack([np.eye(3), np.eye(3)])  # exact duplicates
        g = ntk.gram(ntk.two_layer_kernel(), X, jitter_scale=0.0)
        p = Predictor(ntk.two_layer_kernel(), X, np.ones(6), eigendecompose(g))
        with pytest.raises(NumericalError):
            p.coefficients(INF_TIME)

    def test_retained_subspace_ignores_excluded_zero_modes(self):
        # The invertibility floor only applies to eigenvalues actually used.
        X = np.vstack([np.eye(3), np.eye(3)])
        g = ntk.gram(ntk.two_layer_kernel(), X, jitter_scale=0.0)
        p = Predictor(ntk.two_layer_kernel(), X, np.ones(6), eigendecompose(g),
                      retained=np.arange(3))
        out = predict_infinite_time(p, np.array([0.7, 0.7, 0.1]))
        assert np.isfinite(out)
