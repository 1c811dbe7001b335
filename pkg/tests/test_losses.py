"""Loss identities, triplet enumeration and mining oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xview import autodiff as ad
from xview.autodiff import Tensor
from xview.errors import DimensionError, ParameterError
from xview.losses import (DIST_EPS, QUERY_TO_REF, REF_TO_QUERY, LossConfig,
                          batch_loss, enumerate_exhaustive_triplets, joint_loss,
                          mine_hard_negatives, pair_distance, soft_margin_loss,
                          triplet_loss, weighted_soft_margin_loss)

finite_floats = st.floats(min_value=0.0, max_value=50.0, allow_nan=False)


class TestPairDistance:
    def test_zero_distance_smoothing(self):
        f = np.array([1.0, 2.0, 3.0])
        d = pair_distance(f, f, "euclidean")
        assert d.item() == pytest.approx(math.sqrt(DIST_EPS))
        assert pair_distance(f, f, "squared-euclidean").item() == 0.0

    def test_three_four_five(self):
        d = pair_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
        assert d.item() == pytest.approx(5.0, abs=1e-9)

    def test_matches_naive_loop(self, rng):
        f1 = rng.normal(size=1000)
        f2 = rng.normal(size=1000)
        acc = 0.0
        for a, b in zip(f1, f2):
            acc += (a - b) ** 2
        expected = math.sqrt(acc + DIST_EPS)
        assert abs(pair_distance(f1, f2).item() - expected) < 1e-10

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            pair_distance(np.zeros(3), np.zeros(4))


class TestLossFamily:
    def test_hinge_inactive(self):
        assert triplet_loss(0.3, 1.0, 0.5) == 0.0

    def test_hinge_zero_margin_equal_distances(self):
        assert triplet_loss(0.7, 0.7, 0.0) == 0.0

    def test_hinge_active(self):
        assert triplet_loss(1.0, 0.2, 0.5) == pytest.approx(1.3)

    def test_hinge_zero_iff_separated(self, rng):
        dp = rng.uniform(0, 5, size=10_000)
        dn = rng.uniform(0, 5, size=10_000)
        m = rng.uniform(0, 1, size=10_000)
        loss = triplet_loss(dp, dn, m)
        np.testing.assert_array_equal(loss == 0.0, dn >= dp + m)

    def test_soft_margin_at_equality(self):
        assert soft_margin_loss(1.0, 1.0) == pytest.approx(math.log(2), abs=1e-12)

    def test_soft_margin_overflow_safe(self):
        assert soft_margin_loss(100.0, 0.0) == pytest.approx(100.0, abs=1e-10)
        assert soft_margin_loss(0.0, 100.0) < 1e-40

    def test_weighted_reduces_to_soft_at_alpha_one(self, rng):
        dp = rng.uniform(0, 10, size=10_000)
        dn = rng.uniform(0, 10, size=10_000)
        np.testing.assert_array_equal(weighted_soft_margin_loss(dp, dn, 1.0),
                                      soft_margin_loss(dp, dn))

    def test_weighted_at_equality(self):
        for alpha in (0.5, 1.0, 10.0, 40.0):
            assert weighted_soft_margin_loss(2.0, 2.0, alpha) == pytest.approx(
                math.log(2), abs=1e-12)

    def test_weighted_alpha_ten_tenth_gap(self):
        # alpha*(dp-dn) = 1 -> ln(1 + e)
        expected = math.log(1.0 + math.e)
        assert weighted_soft_margin_loss(0.6, 0.5, 10.0) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(1.313262, abs=1e-6)

    def test_weighted_rejects_bad_alpha(self):
        with pytest.raises(ParameterError):
            weighted_soft_margin_loss(1.0, 1.0, 0.0)

    @given(dp=finite_floats, dn=finite_floats, alpha=st.floats(0.1, 20.0))
    @settings(max_examples=200, deadline=None)
    def test_scale_identity(self, dp, dn, alpha):
        # weighted(dp, dn, a) == soft(a*dp, a*dn) exactly
        assert weighted_soft_margin_loss(dp, dn, alpha) == soft_margin_loss(
            alpha * dp, alpha * dn)

    @given(dp=finite_floats, dn=finite_floats, delta=st.floats(1e-3, 5.0))
    @settings(max_examples=200, deadline=None)
    def test_strict_monotonicity(self, dp, dn, delta):
        base = weighted_soft_margin_loss(dp, dn, 10.0)
        assert weighted_soft_margin_loss(dp + delta, dn, 10.0) > base
        assert weighted_soft_margin_loss(dp, dn + delta, 10.0) < base

    @given(dp=finite_floats, dn=finite_floats)
    @settings(max_examples=200, deadline=None)
    def test_positivity(self, dp, dn):
        assert soft_margin_loss(dp, dn) > 0.0
        assert weighted_soft_margin_loss(dp, dn, 10.0) > 0.0


class TestExhaustiveEnumeration:
    @pytest.mark.parametrize("b,total", [(30, 1740), (24, 1104), (2, 4)])
    def test_counts(self, b, total):
        batch = enumerate_exhaustive_triplets(b)
        assert len(batch) == total == 2 * b * (b - 1)

    def test_structure_and_order(self):
        batch = enumerate_exhaustive_triplets(3)
        q2r = [t for t in batch.triples if t.direction == QUERY_TO_REF]
        r2q = [t for t in batch.triples if t.direction == REF_TO_QUERY]
        assert len(q2r) == len(r2q) == 6
        assert batch.triples[:6] == q2r  # query-anchored first
        assert [t.anchor for t in q2r] == [0, 0, 1, 1, 2, 2]
        for t in batch.triples:
            assert t.positive == t.anchor  # identity pairing
            assert t.negative != t.positive

    def test_rejects_singleton_batch(self):
        with pytest.raises(ParameterError):
            enumerate_exhaustive_triplets(1)

    def test_custom_pairing(self):
        batch = enumerate_exhaustive_triplets(3, pairing=[1, 2, 0])
        q2r = [t for t in batch.triples if t.direction == QUERY_TO_REF]
        assert all(t.positive == [1, 2, 0][t.anchor] for t in q2r)
        assert len(batch) == 12


class TestHardNegativeMining:
    def test_two_by_two_forced_choice(self):
        batch = mine_hard_negatives(np.array([[0.1, 5.0], [5.0, 0.1]]))
        q2r = [t for t in batch.triples if t.direction == QUERY_TO_REF]
        assert (q2r[0].anchor, q2r[0].negative) == (0, 1)
        assert (q2r[1].anchor, q2r[1].negative) == (1, 0)

    def test_row_argmin_excludes_diagonal(self):
        dist = np.full((4, 4), 10.0)
        np.fill_diagonal(dist, 0.01)
        dist[0] = [0.5, 2.0, 1.0, 3.0]
        batch = mine_hard_negatives(dist)
        assert batch.triples[0].negative == 2

    def test_matches_bruteforce_scan(self, rng):
        dist = rng.uniform(0.0, 4.0, size=(30, 30))
        batch = mine_hard_negatives(dist)
        q2r = [t for t in batch.triples if t.direction == QUERY_TO_REF]
        r2q = [t for t in batch.triples if t.direction == REF_TO_QUERY]
        for i in range(30):
            best_j, best_d = None, np.inf
            for j in range(30):
                if j != i and dist[i, j] < best_d:
                    best_j, best_d = j, dist[i, j]
            assert q2r[i].negative == best_j
            best_i, best_d = None, np.inf
            for j in range(30):
                if j != i and dist[j, i] < best_d:
                    best_i, best_d = j, dist[j, i]
            assert r2q[i].negative == best_i

    def test_tie_breaks_to_lowest_index(self):
        dist = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        batch = mine_hard_negatives(dist)
        assert batch.triples[0].negative == 1  # anchors 0: ties at j=1,2
        assert batch.triples[1].negative == 0
        assert len(batch) == 6

    def test_rejects_tiny_batch(self):
        with pytest.raises(ParameterError):
            mine_hard_negatives(np.array([[0.0]]))


class TestBatchLoss:
    def test_identical_embeddings_give_ln2(self, rng):
        f = np.tile(rng.normal(size=4), (3, 1))
        loss = batch_loss(Tensor(f), Tensor(f), enumerate_exhaustive_triplets(3),
                          LossConfig())
        assert loss.item() == pytest.approx(math.log(2), abs=1e-9)

    def test_perfect_separation_vanishes(self):
        fq = np.eye(4) * 100.0
        loss = batch_loss(Tensor(fq), Tensor(fq), enumerate_exhaustive_triplets(4),
                          LossConfig(alpha=10.0))
        assert loss.item() < 1e-8

    def test_matches_scalar_loop_oracle(self, rng):
        b, e = 4, 6
        fq = rng.normal(size=(b, e))
        fr = rng.normal(size=(b, e))
        triplets = enumerate_exhaustive_triplets(b)
        cfg = LossConfig(alpha=10.0)
        loss = batch_loss(Tensor(fq), Tensor(fr), triplets, cfg)

        def dist(a, b_):
            return math.sqrt(((a - b_) ** 2).sum() + DIST_EPS)

        acc = 0.0
        for t in triplets.triples:
            if t.direction == QUERY_TO_REF:
                dp = dist(fq[t.anchor], fr[t.positive])
                dn = dist(fq[t.anchor], fr[t.negative])
            else:
                dp = dist(fr[t.anchor], fq[t.positive])
                dn = dist(fr[t.anchor], fq[t.negative])
            acc += float(weighted_soft_margin_loss(dp, dn, cfg.alpha))
        assert abs(loss.item() - acc / len(triplets)) < 1e-10

    def test_empty_triplets_rejected(self):
        from xview.losses import TripletBatch
        with pytest.raises(ParameterError):
            batch_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))),
                       TripletBatch([], 2), LossConfig())

    def test_gradient_pulls_positive_and_pushes_negative(self, rng):
        # moving the positive toward the anchor strictly lowers the loss
        fq = rng.normal(size=(3, 5))
        fr = rng.normal(size=(3, 5))
        cfg = LossConfig(alpha=10.0)
        triplets = enumerate_exhaustive_triplets(3)
        base = batch_loss(Tensor(fq), Tensor(fr), triplets, cfg).item()
        pulled = fr.copy()
        pulled[0] += 0.05 * (fq[0] - fr[0])
        closer = batch_loss(Tensor(fq), Tensor(pulled), triplets, cfg).item()
        assert closer < base


class TestJointLoss:
    def test_lambda2_zero_reduces_to_scaled_two_stream(self, rng):
        fq = Tensor(rng.normal(size=(3, 4)))
        fs = Tensor(rng.normal(size=(3, 4)))
        fr = Tensor(rng.normal(size=(3, 4)))
        cfg = LossConfig(lambda1=10.0, lambda2=0.0)
        jl = joint_loss(fq, fs, fr, cfg)
        bl = batch_loss(fq, fr, enumerate_exhaustive_triplets(3), cfg)
        assert jl.item() == 10.0 * bl.item()

    def test_synth_equal_query_doubles_weighted_terms(self, rng):
        fq = Tensor(rng.normal(size=(3, 4)))
        fr = Tensor(rng.normal(size=(3, 4)))
        cfg = LossConfig(lambda1=10.0, lambda2=1.0)
        jl = joint_loss(fq, fq, fr, cfg)
        bl = batch_loss(fq, fr, enumerate_exhaustive_triplets(3), cfg)
        assert jl.item() == pytest.approx(11.0 * bl.item(), rel=1e-12)

    def test_identical_embeddings_eleven_ln2(self, rng):
        f = np.tile(rng.normal(size=4), (3, 1))
        cfg = LossConfig(lambda1=10.0, lambda2=1.0)
        loss = joint_loss(Tensor(f), Tensor(f), Tensor(f), cfg)
        assert loss.item() == pytest.approx(11.0 * math.log(2), abs=1e-8)
