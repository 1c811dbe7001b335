"""Central finite-difference verification of analytic gradients."""

from typing import Callable, Iterable

import numpy as np

from .autodiff import Tensor, reverse_accumulate
from .errors import ContractError
from .params import ParamStore


def _leaf_list(params) -> list[Tensor]:
    if isinstance(params, ParamStore):
        return params.tensors()
    return list(params)


def finite_diff_check(fragment: Callable[[], Tensor],
                      params: ParamStore | Iterable[Tensor],
                      eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``fragment`` against central
    differences at the current parameter values.

    ``fragment`` must map the parameters to a scalar loss tensor and be
    deterministic (eval-mode or fixed dropout masks); non-determinism is
    detected by evaluating it twice and raises ContractError. Returns the
    max over all parameter entries of
    |analytic - central| / max(|analytic|, |central|, 1e-8).
    """
    leaves = _leaf_list(params)
    v0 = fragment().item()
    if fragment().item() != v0:
        raise ContractError(
            "fragment is not deterministic: two evaluations at the same "
            "point returned different losses")

    saved = [leaf.grad.copy() for leaf in leaves]
    for leaf in leaves:
        leaf.zero_grad()
    reverse_accumulate(fragment())
    analytic = [leaf.grad.copy() for leaf in leaves]
    for leaf, old in zip(leaves, saved):
        leaf.grad[...] = old

    worst = 0.0
    for leaf, grad in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fragment().item()
            flat[i] = orig - eps
            down = fragment().item()
            flat[i] = orig
            central = (up - down) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - central) / max(abs(a), abs(central), 1e-8)
            worst = max(worst, err)
    return worst
