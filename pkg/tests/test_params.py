"""Initializer statistics and the Adam recurrence."""

import numpy as np
import pytest

from xview import autodiff as ad
from xview.errors import ParameterError
from xview.params import InitSpec, ParamStore, adam_step, draw_init, seed_for


def reference_adam(w0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Plain-float Adam recurrence, written independently of the library."""
    w, m, v = w0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w -= lr * (m / (1 - beta1 ** t)) / ((v / (1 - beta2 ** t)) ** 0.5 + eps)
    return w


class TestInit:
    def test_xavier_bound(self):
        spec = InitSpec("xavier-uniform", seed=7)
        w = draw_init(spec, (20, 30))
        bound = np.sqrt(6.0 / 50.0)
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.5 * bound  # actually fills the support

    def test_xavier_conv_fans(self):
        w = draw_init(InitSpec("xavier-uniform", seed=7), (8, 4, 3, 3))
        bound = np.sqrt(6.0 / (4 * 9 + 8 * 9))
        assert np.abs(w).max() <= bound

    def test_deterministic_per_seed_and_shape(self):
        spec = InitSpec("gaussian", seed=11, std=0.3)
        a = draw_init(spec, (5, 5))
        b = draw_init(spec, (5, 5))
        assert (a == b).all()
        c = draw_init(InitSpec("gaussian", seed=12, std=0.3), (5, 5))
        assert (a != c).any()

    def test_uniform_std_support(self):
        w = draw_init(InitSpec("uniform-std", seed=3, std=0.005), (300, 300))
        assert np.abs(w).max() <= 0.005 * np.sqrt(3.0)

    def test_zeros(self):
        assert not draw_init(InitSpec("zeros"), (4, 4)).any()

    def test_seed_for_is_stable(self):
        assert seed_for(5, "conv0.weight") == seed_for(5, "conv0.weight")
        assert seed_for(5, "conv0.weight") != seed_for(5, "conv1.weight")
        assert seed_for(5, "conv0.weight") != seed_for(6, "conv0.weight")


class TestAdam:
    def test_first_step_magnitude(self):
        # bias-corrected first step with grad 1 moves by lr/(1+eps)
        store = ParamStore()
        w = store.add("w", [0.0])
        w.grad[...] = 1.0
        adam_step(store, lr=1e-3)
        assert w.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
        assert store.step_count == 1

    def test_zero_grad_is_fixed_point(self):
        store = ParamStore()
        w = store.add("w", [1.5, -2.0])
        for _ in range(5):
            adam_step(store, lr=0.1)
        np.testing.assert_array_equal(w.data, [1.5, -2.0])
        assert store.step_count == 5

    def test_grads_left_untouched(self):
        store = ParamStore()
        w = store.add("w", [1.0])
        w.grad[...] = 0.25
        adam_step(store, lr=1e-2)
        assert w.grad[0] == 0.25

    def test_quadratic_convergence_matches_reference(self):
        # minimize w^2 from w0=1 with lr=0.1 for 100 steps
        store = ParamStore()
        w = store.add("w", [1.0])
        for _ in range(100):
            w.zero_grad()
            loss = ad.mul(w, w)
            ad.reverse_accumulate(ad.sum_all(loss))
            adam_step(store, lr=0.1)
        expected = reference_adam(1.0, lambda x: 2 * x, lr=0.1, steps=100)
        assert abs(w.data[0]) < 0.05
        assert w.data[0] == pytest.approx(expected, abs=1e-12)

    def test_nonpositive_lr_rejected(self):
        store = ParamStore()
        store.add("w", [1.0])
        with pytest.raises(ParameterError):
            adam_step(store, lr=0.0)
