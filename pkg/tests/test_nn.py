import math

import numpy as np
import pytest

from gradcases import cases, loss_cases, run_case, run_loss_case
from hdrforensics.nn import (Adam, AvgPool, BatchNorm, Conv2d, Dense, GlobalAvgPool, MaxPool, NumericalError,
                             ReLU, ResidualBlock, count_params, grad_check)
from hdrforensics.nn import functional as F
from hdrforensics.nn.checkpoint import decode_checkpoint, encode_checkpoint
from hdrforensics.nn.gradcheck import relative_error
from hdrforensics.hdr_io import FormatError

ALL_CASES = list(cases())


class TestConv:
    def test_ones(self):
        out, _ = F.conv2d(np.ones((1, 1, 3, 3), np.float32), np.ones((1, 1, 3, 3), np.float32), None, 1, 0)
        assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9.0

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 1, 6, 5)).astype(np.float32)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1
        out, _ = F.conv2d(x, k, None, 1, 1)
        np.testing.assert_array_equal(out, x)

    def test_against_direct_sum(self, rng):
        x = rng.standard_normal((2, 3, 7, 6))
        k = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out, _ = F.conv2d(x, k, b, 2, 1)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        assert out.shape == (2, 4, 4, 3)
        for n in range(2):
            for o in range(4):
                for i in range(4):
                    for j in range(3):
                        ref = b[o] + np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * k[o])
                        assert out[n, o, i, j] == pytest.approx(ref, abs=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            F.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestBatchNorm:
    def test_train_standardizes(self, rng):
        x = (rng.standard_normal((16, 3, 5, 5)) * 4 + 7).astype(np.float32)
        bn = BatchNorm(3)
        out = bn.forward(x, train=True)
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)

    def test_running_stats_momentum(self, rng):
        x = rng.standard_normal((10, 2)) + 3
        bn = BatchNorm(2).astype(np.float64)
        bn.forward(x, train=True)
        np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var(axis=0, ddof=1))

    def test_eval_uses_running_stats(self, rng):
        bn = BatchNorm(2)
        bn.buffers["running_mean"][:] = [1.0, -1.0]
        bn.buffers["running_var"][:] = [4.0, 1.0]
        out = bn.forward(np.array([[3.0, 0.0]], np.float32))
        np.testing.assert_allclose(out, [[2 / math.sqrt(4 + 1e-5), 1 / math.sqrt(1 + 1e-5)]], rtol=1e-6)

    def test_standardized_input_passes_through(self, rng):
        x = rng.standard_normal((200, 3))
        x = (x - x.mean(0)) / x.std(0)
        out = BatchNorm(3).astype(np.float64).forward(x, train=True)
        np.testing.assert_allclose(out, x, atol=1e-4)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            BatchNorm(2).forward(np.zeros((1, 2), np.float32), train=True)


class TestSimpleLayers:
    def test_relu(self):
        out = ReLU().forward(np.array([-1.0, 2.0, 0.0]))
        np.testing.assert_array_equal(out, [0, 2, 0])

    def test_maxpool_window(self):
        x = np.array([[1, 3], [2, 0]], np.float32)[None, None]
        assert MaxPool().forward(x)[0, 0, 0, 0] == 3

    def test_maxpool_tie_routes_to_first(self):
        pool = MaxPool()
        pool.forward(np.full((1, 1, 2, 2), 5.0))
        np.testing.assert_array_equal(pool.backward(np.ones((1, 1, 1, 1)))[0, 0], [[1, 0], [0, 0]])

    def test_avgpool_constant_and_border_divisor(self):
        out = AvgPool(3, 2, 1).forward(np.full((1, 2, 7, 7), 2.5))
        np.testing.assert_allclose(out, 2.5)
        assert AvgPool(3, 2, 1).forward(np.ones((1, 1, 3, 3)))[0, 0, 0, 0] == 1.0

    def test_global_avg_pool(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        gap = GlobalAvgPool()
        assert gap.forward(x)[0, 0] == 7.5
        np.testing.assert_allclose(gap.backward(np.ones((1, 1))), 1 / 16)

    def test_dense_identity_and_zero(self, rng):
        d = Dense(4, 4)
        d.params["weight"] = np.eye(4, dtype=np.float32)
        x = rng.standard_normal((3, 4)).astype(np.float32)
        np.testing.assert_array_equal(d.forward(x), x)
        d.params["weight"][:] = 0
        d.params["bias"][:] = [1, 2, 3, 4]
        np.testing.assert_array_equal(d.forward(x), np.tile([1, 2, 3, 4], (3, 1)))


class TestDropout:
    def test_identity_cases(self, rng):
        x = rng.standard_normal((4, 5))
        assert F.dropout(x, 0.0, True, rng)[0] is x
        assert F.dropout(x, 0.5, False)[0] is x

    @pytest.mark.parametrize("p", [-0.1, 1.0])
    def test_bad_p(self, p):
        with pytest.raises(ValueError):
            F.dropout(np.ones(3), p, True, np.random.default_rng(0))

    def test_survivor_mean_monte_carlo(self):
        x = np.full((10_000,), 3.0)
        out, _ = F.dropout(x, 0.5, True, np.random.default_rng(0))
        assert abs(out.mean() - 3.0) / 3.0 < 0.02
        assert set(np.unique(out)) <= {0.0, 6.0}


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, grad = F.softmax_cross_entropy(np.zeros((1, 2)), np.array([0]))
        assert loss == pytest.approx(math.log(2))
        np.testing.assert_allclose(grad, [[-0.5, 0.5]])

    def test_confident(self):
        loss, _ = F.softmax_cross_entropy(np.array([[20.0, -20.0]]), np.array([0]))
        assert 0 <= loss < 1e-15

    def test_bad_label(self):
        with pytest.raises(ValueError):
            F.softmax_cross_entropy(np.zeros((1, 2)), np.array([2]))

    def test_softmax_rows(self, rng):
        p = F.softmax(rng.standard_normal((50, 2)) * 30)
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)


class TestResidualBlock:
    def test_zero_main_path_is_relu(self, rng):
        blk = ResidualBlock(3, 3)
        for conv in (blk.conv1, blk.conv2):
            conv.params["weight"][:] = 0
        blk.bn2.params["gamma"][:] = 0
        x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
        np.testing.assert_array_equal(blk.forward(x, train=True), np.maximum(x, 0))

    def test_stride_two_halves(self):
        blk = ResidualBlock(2, 4, 2)
        assert blk.forward(np.zeros((2, 2, 8, 8), np.float32), train=True).shape == (2, 4, 4, 4)
        assert blk.output_shape((2, 8, 8)) == (4, 4, 4)


class TestGradients:
    @pytest.mark.parametrize("name,make,shape,transform", ALL_CASES, ids=[c[0] for c in ALL_CASES])
    def test_layer(self, name, make, shape, transform):
        report = run_case(name, make, shape, transform, seed=7)
        assert report.passed, str(report)

    @pytest.mark.parametrize("name,n", list(loss_cases()))
    def test_loss(self, name, n):
        report = run_loss_case(n, seed=7)
        assert report.passed, str(report)

    def test_linear_op_is_exact(self, rng):
        d = Dense(5, 3)
        d.params["weight"] = rng.standard_normal((3, 5))
        report = grad_check(d, rng.standard_normal((4, 5)))
        assert report.max_error <= 1e-8

    def test_corrupted_gradient_fails(self, rng):
        conv = Conv2d(2, 3)
        conv.params["weight"] = rng.standard_normal((3, 2, 3, 3))
        report = grad_check(conv, rng.standard_normal((2, 2, 5, 5)),
                            corrupt=lambda name, g: g * 1.01 if name == "weight" else g)
        assert not report.passed
        assert report.errors["weight"] > 1e-4 and report.errors["input"] <= 1e-4

    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-17]), np.array([3e-13])) < 1e-6
        assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


class TestAdam:
    def test_zero_gradient(self):
        w = {"w": np.array([1.0, -2.0])}
        Adam().step(w, {"w": np.zeros(2)})
        np.testing.assert_array_equal(w["w"], [1.0, -2.0])

    def test_first_step(self):
        g = np.array([0.5, -3.0])
        w = {"w": np.zeros(2)}
        Adam(lr=1e-3).step(w, {"w": g})
        # bias-corrected moments equal g and g^2 after one step
        np.testing.assert_allclose(w["w"], -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(w["w"], -1e-3 * g / (np.abs(g) + 1e-8 * math.sqrt(1 - 0.999)), rtol=1e-7)

    def test_quadratic_descent(self):
        w = {"w": np.array([1.0])}
        opt = Adam(lr=0.05)
        for _ in range(50):
            opt.step(w, {"w": 2 * w["w"]})
        assert abs(w["w"][0]) < 0.5

    def test_non_finite_aborts(self):
        with pytest.raises(NumericalError, match="non-finite gradient for w"):
            Adam().step({"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])})

    def test_state_round_trip(self, rng):
        a, b = Adam(), Adam()
        wa, wb = {"w": np.ones(3)}, {"w": np.ones(3)}
        for _ in range(3):
            g = {"w": rng.standard_normal(3)}
            a.step(wa, g)
        b.load_state(a.state())
        wb["w"] = wa["w"].copy()
        g = {"w": rng.standard_normal(3)}
        a.step(wa, g)
        b.step(wb, g)
        np.testing.assert_array_equal(wa["w"], wb["w"])


class TestCheckpoint:
    def test_round_trip(self, rng):
        tensors = [("a", "conv", rng.standard_normal((2, 3)).astype(np.float32)),
                   ("b", "bias", np.zeros(0, np.float32))]
        meta, out = decode_checkpoint(encode_checkpoint({"k": 1}, tensors))
        assert meta == {"k": 1}
        for (n1, k1, a1), (n2, k2, a2) in zip(tensors, out):
            assert (n1, k1) == (n2, k2)
            np.testing.assert_array_equal(a1, a2)

    def test_little_endian_layout(self):
        buf = encode_checkpoint({}, [("x", "t", np.array([1.0], np.float32))])
        assert buf[:8] == b"HDRFCKPT" and buf[-4:] == b"\x00\x00\x80\x3f"

    def test_rejects(self):
        good = encode_checkpoint({}, [("x", "t", np.ones(4, np.float32))])
        with pytest.raises(FormatError):
            decode_checkpoint(b"XXXXXXXX" + good[8:])
        with pytest.raises(FormatError):
            decode_checkpoint(good[:-2])
        with pytest.raises(FormatError):
            decode_checkpoint(good + b"\0")
        with pytest.raises(ValueError):
            encode_checkpoint({}, [("x", "t", np.array([np.inf], np.float32))])


def test_count_params():
    assert count_params(Conv2d(2, 3)) == 3 * 2 * 9 + 3
    assert count_params(ResidualBlock(2, 4, 2)) == (4 * 2 * 9 + 4) + 8 + (4 * 4 * 9 + 4) + 8 + (4 * 2 + 4)
