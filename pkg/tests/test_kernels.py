"""Layer kernels: hand-worked values, invariants, finite-difference grads."""

import numpy as np
import pytest

from gatenet import nn
from gatenet.errors import EmptyContextError
from gatenet.nn import BatchNormState, Tensor

from helpers import check_grads


class TestPointwiseConv1d:
    def test_hand_example(self):
        # out[o, l] = b[o] + sum_i w[o, i] x[i, l]
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        w = Tensor([[1.0, 1.0]])
        b = Tensor([0.0])
        out = nn.pointwise_conv1d(x, w, b)
        assert np.array_equal(out.data, [[4.0, 6.0]])

    def test_bias_and_mixing(self):
        x = Tensor([[1.0], [10.0]])
        w = Tensor([[2.0, 0.5], [0.0, 1.0]])
        b = Tensor([1.0, -1.0])
        assert np.array_equal(nn.pointwise_conv1d(x, w, b).data, [[8.0], [9.0]])

    def test_shape_mismatch_message(self):
        with pytest.raises(ValueError, match="channels"):
            nn.pointwise_conv1d(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))), Tensor(np.zeros(4)))

    def test_grads(self):
        rng = np.random.default_rng(10)
        check_grads(
            lambda t: nn.mean_all(nn.pointwise_conv1d(t["x"], t["w"], t["b"])),
            {
                "x": rng.normal(size=(3, 5)),
                "w": rng.normal(size=(4, 3)),
                "b": rng.normal(size=(4,)),
            },
        )


class TestDense:
    def test_hand_example(self):
        x = Tensor([[1.0, 2.0]])
        w = Tensor([[3.0, 4.0], [0.5, 0.0]])
        b = Tensor([1.0, 1.0])
        assert np.array_equal(nn.dense(x, w, b).data, [[12.0, 1.5]])

    def test_grads(self):
        rng = np.random.default_rng(11)
        check_grads(
            lambda t: nn.mean_all(nn.dense(t["x"], t["w"], t["b"])),
            {
                "x": rng.normal(size=(4, 3)),
                "w": rng.normal(size=(2, 3)),
                "b": rng.normal(size=(2,)),
            },
        )


class TestRelu:
    def test_values(self):
        out = nn.relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_grads_away_from_kink(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        check_grads(lambda t: nn.mean_all(nn.relu(t["x"])), {"x": x})


class TestBatchNorm:
    def test_constant_channel_maps_to_beta(self):
        state = BatchNormState.for_channels(1)
        out = nn.batchnorm(Tensor([[5.0], [5.0]]), Tensor([1.0]), Tensor([3.0]), state, "train")
        assert np.array_equal(out.data, [[3.0], [3.0]])

    def test_two_point_batch(self):
        state = BatchNormState.for_channels(1)
        out = nn.batchnorm(Tensor([[0.0], [2.0]]), Tensor([1.0]), Tensor([0.0]), state, "train")
        # mean 1, biased var 1; eps pulls the scale just below 1
        expected = np.array([[-1.0], [1.0]]) / np.sqrt(1.0 + 1e-5)
        assert np.allclose(out.data, expected, rtol=0, atol=1e-15)

    def test_running_stats_update(self):
        state = BatchNormState.for_channels(1)
        nn.batchnorm(Tensor([[0.0], [2.0]]), Tensor([1.0]), Tensor([0.0]), state, "train")
        # momentum 0.1, unbiased variance 2 for this two-point batch
        assert np.allclose(state.running_mean, [0.1], atol=1e-15)
        assert np.allclose(state.running_var, [0.9 * 1.0 + 0.1 * 2.0], atol=1e-15)

    def test_eval_uses_running_stats(self):
        state = BatchNormState(running_mean=np.array([1.0]), running_var=np.array([4.0]))
        out = nn.batchnorm(Tensor([[3.0]]), Tensor([2.0]), Tensor([0.5]), state, "eval")
        expected = 2.0 * (3.0 - 1.0) / np.sqrt(4.0 + 1e-5) + 0.5
        assert np.allclose(out.data, [[expected]], atol=1e-15)

    def test_train_needs_two_rows(self):
        state = BatchNormState.for_channels(2)
        with pytest.raises(ValueError, match="N >= 2"):
            nn.batchnorm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), state, "train")

    def test_bad_mode_rejected(self):
        state = BatchNormState.for_channels(1)
        with pytest.raises(ValueError, match="mode"):
            nn.batchnorm(Tensor([[1.0], [2.0]]), Tensor([1.0]), Tensor([0.0]), state, "test")

    def test_train_output_is_standardized(self):
        rng = np.random.default_rng(13)
        x = rng.normal(loc=3.0, scale=2.5, size=(64, 5))
        state = BatchNormState.for_channels(5)
        out = nn.batchnorm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)), state, "train")
        assert np.allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(out.data.var(axis=0), 1.0, atol=1e-4)

    def test_grads_train_mode(self):
        rng = np.random.default_rng(14)
        proj = rng.normal(size=(6, 3))

        def loss(t):
            state = BatchNormState.for_channels(3)
            out = nn.batchnorm(t["x"], t["g"], t["b"], state, "train")
            return nn.sum_all(nn.mul(out, proj))

        check_grads(
            loss,
            {
                "x": rng.normal(size=(6, 3)),
                "g": rng.uniform(0.5, 1.5, size=(3,)),
                "b": rng.normal(size=(3,)),
            },
        )

    def test_grads_eval_mode(self):
        rng = np.random.default_rng(15)
        state = BatchNormState(
            running_mean=rng.normal(size=3),
            running_var=rng.uniform(0.5, 2.0, size=3),
        )
        proj = rng.normal(size=(4, 3))
        check_grads(
            lambda t: nn.sum_all(
                nn.mul(nn.batchnorm(t["x"], t["g"], t["b"], state, "eval"), proj)
            ),
            {
                "x": rng.normal(size=(4, 3)),
                "g": rng.uniform(0.5, 1.5, size=(3,)),
                "b": rng.normal(size=(3,)),
            },
        )


class TestPooling:
    def test_avgpool_values(self):
        out = nn.avgpool_last_axis(Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        assert np.array_equal(out.data, [2.0, 5.0])

    def test_avgpool_empty_context(self):
        with pytest.raises(EmptyContextError):
            nn.avgpool_last_axis(Tensor(np.zeros((3, 0))))

    def test_exact_mode_matches_fast_mode_closely(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(4, 257))
        fast = nn.avgpool_last_axis(Tensor(x)).data
        exact = nn.avgpool_last_axis(Tensor(x), exact=True).data
        assert np.allclose(fast, exact, rtol=1e-13, atol=0)

    def test_exact_mode_is_permutation_invariant_bitwise(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(4, 257))
        perm = rng.permutation(257)
        a = nn.avgpool_last_axis(Tensor(x), exact=True).data
        b = nn.avgpool_last_axis(Tensor(x[:, perm]), exact=True).data
        assert np.array_equal(a, b)

    def test_avgpool_grads(self):
        rng = np.random.default_rng(18)
        proj = rng.normal(size=4)
        for exact in (False, True):
            check_grads(
                lambda t, e=exact: nn.sum_all(
                    nn.mul(nn.avgpool_last_axis(t["x"], exact=e), proj)
                ),
                {"x": rng.normal(size=(4, 7))},
            )

    def test_segment_mean_matches_per_segment_avgpool(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(3, 12))
        out = nn.segment_mean(Tensor(x), n_segments=4).data
        for s in range(4):
            seg = nn.avgpool_last_axis(Tensor(x[:, 3 * s : 3 * s + 3])).data
            assert np.allclose(out[:, s], seg, atol=1e-15)

    def test_segment_mean_rejects_ragged(self):
        with pytest.raises(ValueError, match="does not split"):
            nn.segment_mean(Tensor(np.ones((2, 7))), n_segments=3)

    def test_segment_mean_grads(self):
        rng = np.random.default_rng(20)
        proj = rng.normal(size=(3, 4))
        for exact in (False, True):
            check_grads(
                lambda t, e=exact: nn.sum_all(
                    nn.mul(nn.segment_mean(t["x"], 4, exact=e), proj)
                ),
                {"x": rng.normal(size=(3, 8))},
            )


class TestSoftmax:
    def test_hand_example(self):
        out = nn.softmax(Tensor([[np.log(2.0), 0.0]]))
        assert np.allclose(out.data, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(21)
        x = rng.normal(scale=8.0, size=(50, 7))
        p = nn.softmax(Tensor(x)).data
        assert np.all(p > 0.0) and np.all(p < 1.0)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(5, 4))
        a = nn.softmax(Tensor(x)).data
        b = nn.softmax(Tensor(x + 123.456)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_grads(self):
        rng = np.random.default_rng(23)
        proj = rng.normal(size=(4, 5))
        check_grads(
            lambda t: nn.sum_all(nn.mul(nn.softmax(t["x"]), proj)),
            {"x": rng.normal(size=(4, 5))},
        )
