import numpy as np
import pytest

from asyncfl.core import ModelVector, RngStream, rng_derive
from asyncfl.tasks import (
    LINEAR,
    SOFTMAX,
    Dataset,
    EmptyDataset,
    EmptyLabels,
    InvalidConcentration,
    NonPositiveLearningRate,
    PartitionSpec,
    TrainResult,
    dirichlet_partition,
    flip_labels,
    local_sgd,
    loss_statistic,
    make_synthetic_task,
    per_sample_losses,
)


def lstsq_optimum(X, y):
    """Closed-form normal-equations oracle."""
    return np.linalg.lstsq(X, y, rcond=None)[0]


def half_mse(w, X, y):
    r = X @ w - y
    return 0.5 * float(np.mean(r * r))


def analytic_grad(w, X, y):
    r = X @ w - y
    return X.T @ r / X.shape[0]


class TestMakeSyntheticTask:
    def test_noiseless_recovery(self):
        data, w_star = make_synthetic_task(LINEAR, 0, 4, 200, 0.0, RngStream(3))
        np.testing.assert_allclose(
            lstsq_optimum(data.X, data.y), w_star, atol=1e-8
        )

    def test_deterministic(self):
        a, _ = make_synthetic_task(SOFTMAX, 5, 3, 100, 0.3, RngStream(1))
        b, _ = make_synthetic_task(SOFTMAX, 5, 3, 100, 0.3, RngStream(1))
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    def test_gradient_descent_reaches_optimum(self):
        # oracle: closed-form least squares; full-batch GD must approach it
        data, _ = make_synthetic_task(LINEAR, 0, 5, 1000, 0.1, RngStream(9))
        w_opt = lstsq_optimum(data.X, data.y)
        target = half_mse(w_opt, data.X, data.y)
        w = np.zeros(5)
        L = np.linalg.eigvalsh(data.X.T @ data.X / len(data)).max()
        for _ in range(400):
            w -= (1.0 / L) * analytic_grad(w, data.X, data.y)
        assert half_mse(w, data.X, data.y) - target < 1e-4


class TestDirichletPartition:
    def test_single_client_gets_all(self):
        labels = np.repeat(np.arange(4), 25)
        spec = PartitionSpec(1, np.ones(4), RngStream(0))
        out = dirichlet_partition(labels, spec)
        assert len(out[0]) == 100

    def test_true_partition(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 7, size=500)
        spec = PartitionSpec(9, np.ones(7) * 0.5, RngStream(5))
        out = dirichlet_partition(labels, spec)
        allidx = np.concatenate([out[i] for i in range(9)])
        assert len(allidx) == 500
        assert len(np.unique(allidx)) == 500

    def test_non_iid_skew(self):
        # statistical check: with concentration 1.0 the within-client
        # class shares are markedly non-uniform for nearly all clients
        rng = np.random.default_rng(11)
        labels = rng.integers(0, 10, size=10_000)
        spec = PartitionSpec(20, np.ones(10), RngStream(11))
        out = dirichlet_partition(labels, spec)
        skewed = 0
        for i in range(20):
            counts = np.bincount(labels[out[i]], minlength=10).astype(float)
            share = counts / counts.sum()
            lo = share[share > 0].min()
            if share.max() / max(lo, 1e-12) > 2:
                skewed += 1
        assert skewed >= 18

    def test_empty_labels(self):
        with pytest.raises(EmptyLabels):
            dirichlet_partition([], PartitionSpec(2, np.ones(3)))

    def test_invalid_concentration(self):
        with pytest.raises(InvalidConcentration):
            dirichlet_partition([0, 1], PartitionSpec(2, np.array([1.0, 0.0])))

    def test_client_weights_bias_volume(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 5, size=5000)
        spec = PartitionSpec(4, np.ones(5), RngStream(2))
        out = dirichlet_partition(labels, spec, client_weights=[8.0, 1.0, 1.0, 1.0])
        sizes = [len(out[i]) for i in range(4)]
        assert sizes[0] > max(sizes[1:])


class TestLocalSgd:
    def _task(self, seed=4, n=200, dim=3, noise=0.0):
        data, _ = make_synthetic_task(LINEAR, 0, dim, n, noise, RngStream(seed))
        return data

    def test_rejects_zero_eta(self):
        data = self._task()
        base = ModelVector(np.zeros(3))
        rng = RngStream(0, "t").generator()
        with pytest.raises(NonPositiveLearningRate):
            local_sgd(base, data, 2, 0.0, 8, rng)

    def test_vanishing_step(self):
        data = self._task()
        base = ModelVector(np.zeros(3))
        rng = RngStream(0, "t").generator()
        out = local_sgd(base, data, 3, 1e-12, 8, rng)
        assert np.linalg.norm(out.delta) <= 1e-6

    def test_full_batch_step_matches_analytic_gradient(self):
        data = self._task(noise=0.1)
        w0 = RngStream(1, "w").generator().normal(size=3)
        base = ModelVector(w0)
        eta = 0.05
        out = local_sgd(base, data, 1, eta, len(data), RngStream(0, "t").generator())
        # a full-dataset batch samples with replacement; build the same batch
        idx = RngStream(0, "t").generator().integers(0, len(data), size=(1, len(data)))
        Xb, yb = data.X[idx[0]], data.y[idx[0]]
        expected = -eta * analytic_grad(w0, Xb, yb)
        np.testing.assert_allclose(out.delta, expected, atol=1e-9)

    def test_losses_evaluated_at_base(self):
        data = self._task()
        w0 = np.ones(3)
        out = local_sgd(ModelVector(w0), data, 5, 0.1, 16,
                        RngStream(0, "t").generator())
        np.testing.assert_allclose(
            out.per_sample_losses, 0.5 * (data.X @ w0 - data.y) ** 2,
            rtol=1e-12,
        )
        assert out.sample_count == len(data)
        assert out.q_steps == 5

    def test_finite_difference_gradient_check(self):
        # central-difference oracle for both task kinds
        rng = np.random.default_rng(8)
        for kind, n_classes, dim in [(LINEAR, 0, 4), (SOFTMAX, 3, 4)]:
            data, _ = make_synthetic_task(kind, n_classes, dim, 50, 0.2,
                                          RngStream(8))
            wdim = dim if kind == LINEAR else n_classes * dim
            w = rng.normal(size=wdim) * 0.5
            h = 1e-5

            # implementation gradient recovered from one tiny full-batch step
            eta = 1e-7
            out = local_sgd(ModelVector(w), data, 1, eta, len(data),
                            RngStream(99, "t").generator())
            idx = RngStream(99, "t").generator().integers(
                0, len(data), size=(1, len(data))
            )[0]
            sub = data.subset(idx)

            def mean_loss_sub(wv):
                return float(np.mean(per_sample_losses(wv, sub)))

            grad_fd_sub = np.empty(wdim)
            for k in range(wdim):
                e = np.zeros(wdim)
                e[k] = h
                grad_fd_sub[k] = (
                    mean_loss_sub(w + e) - mean_loss_sub(w - e)
                ) / (2 * h)
            grad_impl = -out.delta / eta
            denom = max(np.linalg.norm(grad_fd_sub), 1e-12)
            assert np.linalg.norm(grad_impl - grad_fd_sub) / denom <= 1e-4

    def test_loss_non_increasing_when_step_within_curvature(self):
        data = self._task(seed=21, n=400, dim=4)
        L = np.linalg.eigvalsh(data.X.T @ data.X / len(data)).max()
        q = 5
        eta = 1.0 / (L * q)
        w = ModelVector(np.zeros(4))
        prev = half_mse(w.weights, data.X, data.y)
        rng = RngStream(3, "t").generator()
        for _ in range(10):
            out = local_sgd(w, data, q, eta, len(data), rng)
            w = ModelVector(w.weights + out.delta, w.version)
            cur = half_mse(w.weights, data.X, data.y)
            assert cur <= prev + 1e-9
            prev = cur

    def test_empty_dataset(self):
        empty = Dataset(np.zeros((0, 2)), np.zeros(0))
        with pytest.raises(EmptyDataset):
            local_sgd(ModelVector(np.zeros(2)), empty, 1, 0.1, 1,
                      RngStream(0).generator())


class TestLossStatistic:
    def _result(self, losses):
        return TrainResult(np.zeros(1), np.asarray(losses, float),
                           len(losses), 1)

    def test_all_equal(self):
        agg, mean = loss_statistic(self._result([1, 1, 1, 1]))
        assert agg == pytest.approx(4.0)
        assert mean == pytest.approx(1.0)

    def test_hand_value(self):
        # 2 * sqrt((9 + 16) / 2) = 2 * sqrt(12.5)
        agg, mean = loss_statistic(self._result([3, 4]))
        assert agg == pytest.approx(2 * np.sqrt(12.5))
        assert agg == pytest.approx(7.0710678, abs=1e-6)
        assert mean == pytest.approx(3.5)

    def test_zero(self):
        agg, mean = loss_statistic(self._result([0]))
        assert (agg, mean) == (0.0, 0.0)

    def test_scales_linearly_with_duplication(self):
        losses = [0.5, 1.5, 2.5]
        a1, _ = loss_statistic(self._result(losses))
        a2, _ = loss_statistic(self._result(losses * 2))
        assert a2 == pytest.approx(2 * a1)


class TestFlipLabels:
    def test_softmax_flip_changes_every_label(self):
        data, _ = make_synthetic_task(SOFTMAX, 4, 2, 100, 0.3, RngStream(0))
        flipped = flip_labels(data, RngStream(0, "flip").generator())
        assert np.all(flipped.y != data.y)
        assert flipped.y.min() >= 0 and flipped.y.max() < 4
