"""Ranking losses, triplet enumeration and in-batch hard-negative mining.

The loss family:
  hinge       max(0, m + dp - dn)
  soft        ln(1 + e^(dp - dn))
  weighted    ln(1 + e^(alpha * (dp - dn))), alpha > 0

``triplet_loss`` / ``soft_margin_loss`` / ``weighted_soft_margin_loss``
are plain numpy functions over distances; ``batch_loss`` and
``joint_loss`` are the differentiable batch-level forms used in training.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, ParameterError

# smoothing inside the euclidean sqrt so the distance is differentiable
# at zero separation
DIST_EPS = 1e-12

QUERY_TO_REF = "query_to_ref"
REF_TO_QUERY = "ref_to_query"

DISTANCE_MODES = ("euclidean", "squared-euclidean")


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.0
    alpha: float = 10.0
    lambda1: float = 10.0
    lambda2: float = 1.0
    distance: str = "euclidean"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.margin < 0:
            raise ParameterError(f"margin must be non-negative, got {self.margin}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ConfigError(
                f"loss weights must be non-negative with a positive sum, "
                f"got lambda1={self.lambda1}, lambda2={self.lambda2}")
        if self.distance not in DISTANCE_MODES:
            raise ConfigError(f"distance must be one of {DISTANCE_MODES}, got {self.distance!r}")


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int
    direction: str


@dataclass
class TripletBatch:
    triples: list[Triplet]
    batch_size: int

    def __len__(self):
        return len(self.triples)


def pair_distance(f1, f2, mode: str = "euclidean") -> Tensor:
    """Distance between two embedding vectors, differentiable.

    Euclidean mode returns sqrt(sum((f1-f2)^2) + eps) with a tiny eps so
    the gradient exists at zero; squared mode omits both sqrt and eps.
    """
    if mode not in DISTANCE_MODES:
        raise ConfigError(f"distance must be one of {DISTANCE_MODES}, got {mode!r}")
    t1 = f1 if isinstance(f1, Tensor) else Tensor(f1)
    t2 = f2 if isinstance(f2, Tensor) else Tensor(f2)
    if t1.shape != t2.shape or t1.data.ndim != 1:
        raise DimensionError(
            f"pair_distance expects two equal-length vectors, got {t1.shape} and {t2.shape}")
    d = ad.sub(t1, t2)
    ss = ad.sum_all(ad.mul(d, d))
    if mode == "squared-euclidean":
        return ss
    return ad.sqrt(ad.add_const(ss, DIST_EPS))


def triplet_loss(dp, dn, margin: float):
    """Hinge ranking loss max(0, margin + dp - dn)."""
    return np.maximum(0.0, margin + np.asarray(dp) - np.asarray(dn))


def soft_margin_loss(dp, dn):
    """Margin-free smooth ranking loss ln(1 + e^(dp - dn))."""
    return np.logaddexp(0.0, np.asarray(dp) - np.asarray(dn))


def weighted_soft_margin_loss(dp, dn, alpha: float):
    """Sharpened soft ranking loss ln(1 + e^(alpha (dp - dn))).

    Computed as soft_margin_loss(alpha*dp, alpha*dn) so that scaling the
    distances and weighting the margin are the same operation bit for bit.
    """
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    return np.logaddexp(0.0, alpha * np.asarray(dp) - alpha * np.asarray(dn))


def enumerate_exhaustive_triplets(batch_size: int,
                                  pairing: Sequence[int] | None = None) -> TripletBatch:
    """All in-batch triplets in both retrieval directions.

    Row i of the query batch pairs with reference row pairing[i]
    (identity when omitted). Query-anchored triples come first, ordered
    by ascending anchor then negative index, then reference-anchored
    ones; the total is exactly 2*B*(B-1).
    """
    b = int(batch_size)
    if b < 2:
        raise ParameterError(f"need at least 2 pairs to form negatives, got batch size {b}")
    if pairing is None:
        pairing = list(range(b))
    else:
        pairing = [int(p) for p in pairing]
        if sorted(pairing) != list(range(b)):
            raise ParameterError("pairing must be a permutation of 0..B-1")
    inverse = [0] * b
    for i, p in enumerate(pairing):
        inverse[p] = i

    triples = []
    for i in range(b):
        pos = pairing[i]
        for j in range(b):
            if j != pos:
                triples.append(Triplet(i, pos, j, QUERY_TO_REF))
    for j in range(b):
        pos = inverse[j]
        for i in range(b):
            if i != pos:
                triples.append(Triplet(j, pos, i, REF_TO_QUERY))
    return TripletBatch(triples, b)


def mine_hard_negatives(dist_matrix: np.ndarray) -> TripletBatch:
    """One hardest (smallest-distance) negative per anchor, both directions.

    ``dist_matrix[i, j]`` holds distance(query_i, ref_j) with positives on
    the diagonal. Ties resolve to the lowest index. Returns 2*B triples:
    query-anchored (row argmins) first, then reference-anchored (column
    argmins).
    """
    dist = np.asarray(dist_matrix, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise DimensionError(f"distance matrix must be square, got {dist.shape}")
    b = dist.shape[0]
    if b < 2:
        raise ParameterError(f"need at least 2 pairs to mine negatives, got batch size {b}")
    masked = dist.copy()
    np.fill_diagonal(masked, np.inf)
    row_neg = masked.argmin(axis=1)   # argmin takes the first (lowest) index on ties
    col_neg = masked.argmin(axis=0)

    triples = [Triplet(i, i, int(row_neg[i]), QUERY_TO_REF) for i in range(b)]
    triples += [Triplet(j, j, int(col_neg[j]), REF_TO_QUERY) for j in range(b)]
    return TripletBatch(triples, b)


def _row_distances(a: Tensor, b: Tensor, mode: str) -> Tensor:
    d = ad.sub(a, b)
    ss = ad.sum_axis(ad.mul(d, d), axis=1)
    if mode == "squared-euclidean":
        return ss
    return ad.sqrt(ad.add_const(ss, DIST_EPS))


def batch_loss(f_query: Tensor, f_ref: Tensor, triplets: TripletBatch,
               cfg: LossConfig) -> Tensor:
    """Mean weighted soft-margin loss over a triplet set (differentiable).

    Row i of ``f_query`` is the true pair of row i of ``f_ref``; triple
    indices select anchor/positive/negative rows in the direction each
    triple names.
    """
    if not triplets.triples:
        raise ParameterError("empty triplet set")
    if f_query.shape[1] != f_ref.shape[1]:
        raise DimensionError(
            f"embedding dims differ: {f_query.shape} vs {f_ref.shape}")

    losses = []
    for direction, side_a, side_b in ((QUERY_TO_REF, f_query, f_ref),
                                      (REF_TO_QUERY, f_ref, f_query)):
        group = [t for t in triplets.triples if t.direction == direction]
        if not group:
            continue
        a_idx = np.array([t.anchor for t in group])
        p_idx = np.array([t.positive for t in group])
        n_idx = np.array([t.negative for t in group])
        anchors = ad.gather_rows(side_a, a_idx)
        positives = ad.gather_rows(side_b, p_idx)
        negatives = ad.gather_rows(side_b, n_idx)
        dp = _row_distances(anchors, positives, cfg.distance)
        dn = _row_distances(anchors, negatives, cfg.distance)
        losses.append(ad.softplus(ad.scale(ad.sub(dp, dn), cfg.alpha)))
    per_triple = losses[0] if len(losses) == 1 else ad.concat(losses, axis=0)
    return ad.mean_all(per_triple)


def joint_loss(f_query: Tensor, f_synth: Tensor, f_ref: Tensor,
               cfg: LossConfig,
               triplets_main: TripletBatch | None = None,
               triplets_aux: TripletBatch | None = None) -> Tensor:
    """Weighted two-term loss: lambda1 * loss(query, ref) plus
    lambda2 * loss(synth, ref), each over its own triplet set (exhaustive
    when not supplied)."""
    if f_query.shape != f_synth.shape or f_query.shape[0] != f_ref.shape[0]:
        raise DimensionError(
            f"batch shapes differ: {f_query.shape}, {f_synth.shape}, {f_ref.shape}")
    b = f_query.shape[0]
    terms = []
    if cfg.lambda1 > 0:
        main = triplets_main or enumerate_exhaustive_triplets(b)
        terms.append(ad.scale(batch_loss(f_query, f_ref, main, cfg), cfg.lambda1))
    if cfg.lambda2 > 0:
        aux = triplets_aux or enumerate_exhaustive_triplets(b)
        terms.append(ad.scale(batch_loss(f_synth, f_ref, aux, cfg), cfg.lambda2))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total
