"""Forward oracles and reverse-pass contracts for the autodiff core."""

import numpy as np
import pytest

from xview import autodiff as ad
from xview.autodiff import Tensor, reverse_accumulate
from xview.errors import DimensionError, NumericError, ParameterError, StateError
from xview.params import ParamStore


def naive_matmul(x, w, b):
    n, din = x.shape
    dout = w.shape[1]
    out = np.zeros((n, dout))
    for i in range(n):
        for j in range(dout):
            acc = b[j]
            for k in range(din):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


def naive_conv2d(x, k, b, stride):
    n, c, h, w = x.shape
    ko, _, kh, kw = k.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((n, ko, ho, wo))
    for ni in range(n):
        for oi in range(ko):
            for i in range(ho):
                for j in range(wo):
                    patch = x[ni, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[ni, oi, i, j] = (patch * k[oi]).sum() + b[oi]
    return out


class TestLinear:
    def test_identity_weights(self):
        out = ad.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]),
                        Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_small_affine(self):
        out = ad.linear(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
        np.testing.assert_array_equal(out.data, [[6.0]])

    def test_matches_naive_matmul(self, rng):
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        out = ad.linear(Tensor(x), Tensor(w), Tensor(b))
        assert np.abs(out.data - naive_matmul(x, w, b)).max() < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 2\).*\(3, 4\)"):
            ad.linear(Tensor([[1.0, 2.0]]), Tensor(np.zeros((3, 4))), Tensor(np.zeros(4)))


class TestConv2d:
    def test_ones_kernel_sums_window(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = ad.conv2d(x, k, Tensor([0.5]), stride=1)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == pytest.approx(9.5)

    def test_identity_1x1_kernel(self, rng):
        x = rng.uniform(size=(2, 1, 4, 5))
        out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
        np.testing.assert_array_equal(out.data, x)

    def test_matches_naive_conv(self, rng):
        x = rng.normal(size=(1, 2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        for stride in (1, 2):
            out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride)
            assert np.abs(out.data - naive_conv2d(x, k, b, stride)).max() < 1e-12

    def test_output_spatial_size(self):
        out = ad.conv2d(Tensor(np.zeros((1, 1, 10, 7))), Tensor(np.zeros((2, 1, 3, 3))),
                        Tensor(np.zeros(2)), stride=2)
        assert out.shape == (1, 2, 4, 3)

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError, match="kernel"):
            ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))),
                      Tensor(np.zeros(1)))

    def test_padding_matches_padded_naive(self, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        k = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=2)
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        assert np.abs(out.data - naive_conv2d(xp, k, b, 2)).max() < 1e-12


class TestMisc:
    def test_relu(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        out = ad.dropout(x, 0.5, "eval")
        assert out is x

    def test_dropout_train_scales_survivors(self, rng):
        x = Tensor(np.ones((100, 100)))
        out = ad.dropout(x, 0.5, "train", rng=np.random.default_rng(0))
        vals = np.unique(out.data)
        assert set(vals.tolist()) <= {0.0, 2.0}

    def test_dropout_bad_p(self):
        with pytest.raises(ParameterError):
            ad.dropout(Tensor([1.0]), 1.0, "train", rng=np.random.default_rng(0))

    def test_dropout_preserves_expectation(self):
        # inverted dropout: mean over many masks stays within 2% at p=0.5
        x = Tensor(np.full((4, 4), 3.0))
        total = np.zeros((4, 4))
        n = 10_000
        for i in range(n):
            total += ad.dropout(x, 0.5, "train", rng=np.random.default_rng(i)).data
        np.testing.assert_allclose(total / n, 3.0, rtol=0.02)

    def test_gap_mean(self):
        x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = ad.gap(x)
        np.testing.assert_array_equal(out.data, [[2.5]])

    def test_gap_then_flatten_degenerate(self, rng):
        x = rng.normal(size=(3, 5, 1, 1))
        gap_flat = ad.gap(Tensor(x))
        plain_flat = ad.flatten(Tensor(x))
        np.testing.assert_array_equal(gap_flat.data, plain_flat.data)

    def test_concat_and_split_gradients(self, rng):
        store = ParamStore()
        a = store.add("a", rng.normal(size=(2, 3)))
        b = store.add("b", rng.normal(size=(2, 2)))
        out = ad.concat([a, b], axis=1)
        assert out.shape == (2, 5)
        reverse_accumulate(ad.sum_all(ad.mul(out, out)))
        np.testing.assert_allclose(a.grad, 2 * a.data)
        np.testing.assert_allclose(b.grad, 2 * b.data)

    def test_concat_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)

    def test_gather_rows_scatter_adds(self):
        store = ParamStore()
        x = store.add("x", [[1.0, 2.0], [3.0, 4.0]])
        picked = ad.gather_rows(x, [0, 0, 1])
        reverse_accumulate(ad.sum_all(picked))
        np.testing.assert_array_equal(x.grad, [[2.0, 2.0], [1.0, 1.0]])

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            Tensor([np.nan])
        with pytest.raises(NumericError):
            Tensor([np.inf])


class TestReversePass:
    def test_linear_gradient_pattern(self):
        # loss = sum(x @ W): each weight's grad equals its paired input entry
        store = ParamStore()
        w = store.add("w", np.zeros((2, 1)))
        x = Tensor([[1.0, 2.0]])
        loss = ad.sum_all(ad.linear(x, w, Tensor([0.0])))
        reverse_accumulate(loss)
        np.testing.assert_array_equal(w.grad, [[1.0], [2.0]])

    def test_two_passes_double_grads(self):
        store = ParamStore()
        w = store.add("w", np.zeros((2, 1)))
        x = Tensor([[1.0, 2.0]])
        loss = ad.sum_all(ad.linear(x, w, Tensor([0.0])))
        reverse_accumulate(loss)
        once = w.grad.copy()
        reverse_accumulate(loss)
        np.testing.assert_array_equal(w.grad, 2 * once)

    def test_reused_node_accumulates(self):
        store = ParamStore()
        x = store.add("x", [3.0])
        loss = ad.sum_all(ad.mul(x, x))  # x used twice
        reverse_accumulate(loss)
        np.testing.assert_allclose(x.grad, [6.0])

    def test_reverse_on_non_scalar_is_state_error(self):
        with pytest.raises(StateError):
            reverse_accumulate(Tensor([1.0, 2.0]))

    def test_reverse_on_non_tensor_is_state_error(self):
        with pytest.raises(StateError):
            reverse_accumulate(3.0)

    def test_softplus_asymptotes(self):
        assert ad.softplus(Tensor([0.0])).data[0] == pytest.approx(np.log(2), abs=1e-12)
        assert ad.softplus(Tensor([100.0])).data[0] == pytest.approx(100.0, abs=1e-10)
        assert ad.softplus(Tensor([-100.0])).data[0] < 1e-40

    def test_determinism_same_seed_bit_identical(self, rng):
        def run():
            store = ParamStore()
            w = store.add("w", np.arange(6, dtype=float).reshape(2, 3))
            x = Tensor(np.ones((4, 2)))
            loss = ad.mean_all(ad.relu(ad.linear(x, w, Tensor(np.zeros(3)))))
            reverse_accumulate(loss)
            return loss.item(), w.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert (g1 == g2).all()
