"""The finite-difference checker against known-correct fragments."""

import numpy as np
import pytest

from xview import autodiff as ad
from xview.autodiff import Tensor
from xview.errors import ContractError
from xview.gradcheck import finite_diff_check
from xview.losses import LossConfig, batch_loss, enumerate_exhaustive_triplets
from xview.params import ParamStore


def test_linear_relu_sum(rng):
    store = ParamStore()
    w = store.add("w", rng.normal(size=(3, 4)))
    b = store.add("b", rng.normal(size=4))
    x = Tensor(rng.normal(size=(5, 3)))

    def fragment():
        return ad.sum_all(ad.relu(ad.linear(x, w, b)))

    assert finite_diff_check(fragment, store) < 1e-6


def test_weighted_soft_margin_batch(rng):
    store = ParamStore()
    fq = store.add("fq", rng.normal(size=(4, 6)))
    fr = store.add("fr", rng.normal(size=(4, 6)))
    triplets = enumerate_exhaustive_triplets(4)
    cfg = LossConfig(alpha=10.0)

    def fragment():
        return batch_loss(fq, fr, triplets, cfg)

    assert finite_diff_check(fragment, store) < 1e-4


def test_constant_loss_has_zero_error():
    store = ParamStore()
    store.add("unused", [1.0, 2.0])

    def fragment():
        return Tensor(5.0)

    assert finite_diff_check(fragment, store) == 0.0


def test_nondeterministic_fragment_rejected(rng):
    store = ParamStore()
    w = store.add("w", rng.normal(size=(2, 2)))
    counter = {"n": 0}

    def fragment():
        counter["n"] += 1
        return ad.sum_all(ad.scale(w, float(counter["n"])))

    with pytest.raises(ContractError):
        finite_diff_check(fragment, store)


def test_fixed_dropout_mask_passes(rng):
    store = ParamStore()
    w = store.add("w", rng.normal(size=(3, 3)))
    x = Tensor(rng.normal(size=(2, 3)))
    mask = rng.random((2, 3)) >= 0.5

    def fragment():
        h = ad.dropout(ad.linear(x, w, Tensor(np.zeros(3))), 0.5, "train", mask=mask)
        return ad.sum_all(ad.mul(h, h))

    assert finite_diff_check(fragment, store) < 1e-6
