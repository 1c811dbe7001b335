"""Feature-fusion head trained on top of a frozen joint model.

The query side concatenates query-view and synthesized-view embeddings
(query first) and passes them through one fully-connected layer; the
reference side projects reference embeddings through its own layer. Both
heads are linear, no activation.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError
from .params import InitSpec, ParamStore, adam_step, draw_init, seed_for

FUSION_INIT_STD = 0.005  # zero-mean uniform with this standard deviation


@dataclass
class FusionModel:
    store: ParamStore
    embed_dim: int

    @property
    def fc_query(self) -> tuple[Tensor, Tensor]:
        return self.store.get("fusion.query.weight"), self.store.get("fusion.query.bias")

    @property
    def fc_reference(self) -> tuple[Tensor, Tensor]:
        return (self.store.get("fusion.reference.weight"),
                self.store.get("fusion.reference.bias"))

    def named_values(self) -> dict[str, np.ndarray]:
        return self.store.state_dict()


def init_fusion(embed_dim: int, seed: int = 0) -> FusionModel:
    """Fusion head with weights drawn from the zero-mean uniform whose
    standard deviation is 0.005 (support +/- 0.005*sqrt(3)); biases zero."""
    if embed_dim < 1:
        raise ParameterError(f"embed_dim must be >= 1, got {embed_dim}")
    spec = InitSpec("uniform-std", seed=seed, std=FUSION_INIT_STD)
    store = ParamStore()
    store.add("fusion.query.weight",
              draw_init(spec, (2 * embed_dim, embed_dim),
                        seed=seed_for(seed, "fusion.query.weight")))
    store.add("fusion.query.bias", np.zeros(embed_dim))
    store.add("fusion.reference.weight",
              draw_init(spec, (embed_dim, embed_dim),
                        seed=seed_for(seed, "fusion.reference.weight")))
    store.add("fusion.reference.bias", np.zeros(embed_dim))
    return FusionModel(store, embed_dim)


def fuse_query(f_query, f_synth, model: FusionModel) -> Tensor:
    """Fused query representation: FC(concat(query, synth))."""
    fq = f_query if isinstance(f_query, Tensor) else Tensor(f_query)
    fs = f_synth if isinstance(f_synth, Tensor) else Tensor(f_synth)
    e = model.embed_dim
    if fq.data.ndim != 2 or fq.shape[1] != e:
        raise DimensionError(f"query embeddings must be Nx{e}, got {fq.shape}")
    if fs.shape != fq.shape:
        raise DimensionError(
            f"synth embeddings {fs.shape} do not align with query {fq.shape}")
    w, b = model.fc_query
    return ad.linear(ad.concat([fq, fs], axis=1), w, b)


def project_reference(f_reference, model: FusionModel) -> Tensor:
    """Projected reference representation: FC(reference)."""
    fr = f_reference if isinstance(f_reference, Tensor) else Tensor(f_reference)
    e = model.embed_dim
    if fr.data.ndim != 2 or fr.shape[1] != e:
        raise DimensionError(f"reference embeddings must be Nx{e}, got {fr.shape}")
    w, b = model.fc_reference
    return ad.linear(fr, w, b)
