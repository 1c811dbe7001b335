"""Convolutional embedding encoders with multi-scale feature aggregation.

An encoder is a stack of conv+ReLU blocks with inverted dropout after the
final three blocks. Features tapped from configured blocks (after their
dropout) are flattened, or average-pooled when ``use_gap`` is set,
concatenated, and projected by one fully-connected layer to the embedding
dimension.

Two-stream models hold one encoder per view; the cross-view encoders keep
disjoint parameters unless weight sharing is explicitly enabled. The
joint model applies its reference-view encoder to both real and
synthesized reference images, so those two inputs always see identical
weights.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, DimensionError
from .params import InitSpec, ParamStore, draw_init, seed_for

N_DROPOUT_BLOCKS = 3  # dropout follows the final three ReLU blocks


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: int
    stride: int
    padding: int = 0


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int
    in_h: int
    in_w: int
    blocks: tuple[ConvBlock, ...]
    embed_dim: int = 64
    tap_layers: tuple[int, ...] | None = None  # None: final three blocks
    dropout_p: float = 0.5
    multiscale: bool = True
    use_gap: bool = False
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not self.blocks:
            raise ConfigError("encoder needs at least one conv block")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def taps(self) -> tuple[int, ...]:
        n = len(self.blocks)
        if not self.multiscale:
            taps = self.tap_layers if self.tap_layers is not None else (n - 1,)
            if tuple(taps) != (n - 1,):
                raise ConfigError(
                    f"single-scale config must tap only the last block, got {taps}")
            return (n - 1,)
        if self.tap_layers is None:
            return tuple(range(max(0, n - 3), n))
        taps = tuple(sorted(int(t) for t in self.tap_layers))
        if any(t < 0 or t >= n for t in taps):
            raise ConfigError(f"tap layers {taps} out of range for {n} blocks")
        return taps

    def spatial_plan(self) -> list[tuple[int, int]]:
        """Output (h, w) after each block; raises at the first block whose
        padded input is smaller than its kernel."""
        h, w = self.in_h, self.in_w
        sizes = []
        for i, blk in enumerate(self.blocks):
            hp, wp = h + 2 * blk.padding, w + 2 * blk.padding
            if hp < blk.kernel or wp < blk.kernel:
                raise DimensionError(
                    f"block {i}: kernel {blk.kernel} exceeds padded input "
                    f"{hp}x{wp} (input {self.in_h}x{self.in_w})")
            h = (hp - blk.kernel) // blk.stride + 1
            w = (wp - blk.kernel) // blk.stride + 1
            sizes.append((h, w))
        return sizes

    def tap_feature_sizes(self) -> list[int]:
        sizes = self.spatial_plan()
        out = []
        for t in self.taps():
            c = self.blocks[t].out_channels
            h, w = sizes[t]
            out.append(c if self.use_gap else c * h * w)
        return out

    def fc_input_dim(self) -> int:
        return sum(self.tap_feature_sizes())

    def param_shapes(self, prefix: str) -> dict[str, tuple]:
        shapes: dict[str, tuple] = {}
        c_in = self.in_channels
        for i, blk in enumerate(self.blocks):
            shapes[f"{prefix}.conv{i}.weight"] = (blk.out_channels, c_in, blk.kernel, blk.kernel)
            shapes[f"{prefix}.conv{i}.bias"] = (blk.out_channels,)
            c_in = blk.out_channels
        shapes[f"{prefix}.fc.weight"] = (self.fc_input_dim(), self.embed_dim)
        shapes[f"{prefix}.fc.bias"] = (self.embed_dim,)
        return shapes


def toy_encoder_config(in_channels: int = 3, in_h: int = 32, in_w: int = 32,
                       embed_dim: int = 64, seed: int = 0, **overrides) -> EncoderConfig:
    """Small 4-block stack sized for 16..64 pixel inputs."""
    blocks = tuple(ConvBlock(c, kernel=3, stride=2, padding=1) for c in (16, 32, 32, 64))
    return EncoderConfig(in_channels, in_h, in_w, blocks, embed_dim=embed_dim,
                         init=InitSpec("xavier-uniform", seed=seed), **overrides)


def full_encoder_config(in_channels: int = 3, in_h: int = 256, in_w: int = 256,
                        embed_dim: int = 1000, seed: int = 0, **overrides) -> EncoderConfig:
    """Fidelity preset: 8 blocks of 4x4 stride-2 convolutions."""
    widths = (32, 64, 128, 128, 256, 256, 512, 512)
    blocks = tuple(ConvBlock(c, kernel=4, stride=2, padding=1) for c in widths)
    return EncoderConfig(in_channels, in_h, in_w, blocks, embed_dim=embed_dim,
                         init=InitSpec("xavier-uniform", seed=seed), **overrides)


class Encoder:
    """One view's encoder: parameters live in ``store`` under ``prefix``.

    Building against a store that already holds the prefixed parameters
    attaches to them instead of re-initializing, which is how two
    encoders alias one parameter set.
    """

    def __init__(self, cfg: EncoderConfig, store: ParamStore | None = None,
                 prefix: str = "enc"):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        self.prefix = prefix
        self._taps = cfg.taps()
        self._dropout_sites = self._site_indices()
        self._dropout_counters = {i: 0 for i in self._dropout_sites}
        self._dropout_seeds = {
            i: seed_for(cfg.init.seed, f"{prefix}.dropout{i}") for i in self._dropout_sites}
        self._params: dict[str, Tensor] = {}
        for name, shape in cfg.param_shapes(prefix).items():
            if name in self.store:
                t = self.store.get(name)
                if t.shape != shape:
                    raise ConfigError(
                        f"existing parameter {name!r} has shape {t.shape}, expected {shape}")
            else:
                t = self.store.add(name, draw_init(cfg.init, shape,
                                                   seed=seed_for(cfg.init.seed, name)))
            self._params[name] = t

    def _site_indices(self) -> tuple[int, ...]:
        n = len(self.cfg.blocks)
        return tuple(range(max(0, n - N_DROPOUT_BLOCKS), n))

    def param(self, name: str) -> Tensor:
        return self._params[f"{self.prefix}.{name}"]

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def _dropout_rng(self, site: int) -> np.random.Generator:
        counter = self._dropout_counters[site]
        self._dropout_counters[site] = counter + 1
        ss = np.random.SeedSequence((self._dropout_seeds[site], counter))
        return np.random.Generator(np.random.PCG64(ss))

    def encode(self, images, mode: str = "eval") -> Tensor:
        """Embed a batch of NCHW images. Eval mode is a pure function of
        (weights, input); train mode consumes the per-site dropout streams."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.data.ndim != 4:
            raise DimensionError(f"expected NCHW images, got shape {x.shape}")
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"input has {x.shape[1]} channels, encoder expects {self.cfg.in_channels}")
        if x.shape[2] != self.cfg.in_h or x.shape[3] != self.cfg.in_w:
            raise DimensionError(
                f"input is {x.shape[2]}x{x.shape[3]}, encoder expects "
                f"{self.cfg.in_h}x{self.cfg.in_w}")

        taps: list[Tensor] = []
        for i, blk in enumerate(self.cfg.blocks):
            x = ad.conv2d(x, self.param(f"conv{i}.weight"), self.param(f"conv{i}.bias"),
                          stride=blk.stride, padding=blk.padding)
            x = ad.relu(x)
            if i in self._dropout_sites and self.cfg.dropout_p > 0:
                rng = self._dropout_rng(i) if mode == "train" else None
                x = ad.dropout(x, self.cfg.dropout_p, mode, rng=rng)
            if i in self._taps:
                taps.append(ad.gap(x) if self.cfg.use_gap else ad.flatten(x))
        agg = taps[0] if len(taps) == 1 else ad.concat(taps, axis=1)
        return ad.linear(agg, self.param("fc.weight"), self.param("fc.bias"))


@dataclass
class TwoStreamModel:
    """Query-view and reference-view encoders (ground and aerial in the
    forward task). With ``share_cross_view_weights`` both attach to one
    parameter set; otherwise stores are disjoint."""

    query_encoder: Encoder
    reference_encoder: Encoder
    share_cross_view_weights: bool = False

    def stores(self) -> list[ParamStore]:
        if self.query_encoder.store is self.reference_encoder.store:
            return [self.query_encoder.store]
        return [self.query_encoder.store, self.reference_encoder.store]

    def num_values(self) -> int:
        return sum(s.num_values() for s in self.stores())

    def named_values(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for s in self.stores():
            out.update(s.state_dict())
        return out


@dataclass
class JointModel:
    """Joint feature learner: the reference encoder embeds both real and
    synthesized reference images, so they always share weights."""

    query_encoder: Encoder
    reference_encoder: Encoder

    def encode_synth(self, images, mode: str = "eval") -> Tensor:
        return self.reference_encoder.encode(images, mode)

    def stores(self) -> list[ParamStore]:
        return [self.query_encoder.store, self.reference_encoder.store]

    def named_values(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for s in self.stores():
            out.update(s.state_dict())
        return out


QUERY_PREFIX = "query"
REFERENCE_PREFIX = "reference"
SHARED_PREFIX = "shared"


def _structural_mismatch(cfg_q: EncoderConfig, cfg_r: EncoderConfig) -> str | None:
    for name in ("in_channels", "in_h", "in_w", "blocks", "embed_dim",
                 "dropout_p", "multiscale", "use_gap"):
        a, b = getattr(cfg_q, name), getattr(cfg_r, name)
        if a != b:
            return f"{name}: {a} != {b}"
    if cfg_q.taps() != cfg_r.taps():
        return f"tap_layers: {cfg_q.taps()} != {cfg_r.taps()}"
    return None


def build_two_stream(cfg_query: EncoderConfig, cfg_reference: EncoderConfig,
                     share: bool = False) -> TwoStreamModel:
    if share:
        mismatch = _structural_mismatch(cfg_query, cfg_reference)
        if mismatch is not None:
            raise ConfigError(f"cannot share weights across different structures ({mismatch})")
        store = ParamStore()
        q = Encoder(cfg_query, store, SHARED_PREFIX)
        r = Encoder(cfg_reference, store, SHARED_PREFIX)
        return TwoStreamModel(q, r, share_cross_view_weights=True)
    q = Encoder(cfg_query, ParamStore(), QUERY_PREFIX)
    r = Encoder(cfg_reference, ParamStore(), REFERENCE_PREFIX)
    return TwoStreamModel(q, r, share_cross_view_weights=False)


def build_joint(cfg_query: EncoderConfig, cfg_reference: EncoderConfig) -> JointModel:
    q = Encoder(cfg_query, ParamStore(), QUERY_PREFIX)
    r = Encoder(cfg_reference, ParamStore(), REFERENCE_PREFIX)
    return JointModel(q, r)


def load_encoder_values(model: TwoStreamModel | JointModel,
                        values: dict[str, np.ndarray]) -> None:
    """Copy checkpointed tensors into a model's encoders by name.

    Every model parameter must be present with a matching shape; the
    first mismatch aborts the load. Extra entries (fusion heads and the
    like) are ignored. Optimizer state is reset.
    """
    encoders = [model.query_encoder, model.reference_encoder]
    seen_stores = []
    for enc in encoders:
        for name, tensor in enc._params.items():
            if name not in values:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise CheckpointError(
                    f"checkpoint parameter {name!r} has shape {arr.shape}, "
                    f"model expects {tensor.shape}")
        if enc.store not in seen_stores:
            seen_stores.append(enc.store)
    for enc in encoders:
        for name, tensor in enc._params.items():
            tensor.data[...] = np.asarray(values[name], dtype=np.float64)
    for store in seen_stores:
        store.reset_optimizer()


def warm_start_joint(checkpoint_values: dict[str, np.ndarray],
                     cfg_query: EncoderConfig,
                     cfg_reference: EncoderConfig) -> JointModel:
    """Build a joint model initialized from a two-stream checkpoint: the
    query encoder copies the query weights, the shared reference encoder
    copies the reference weights, and the optimizer starts fresh."""
    model = build_joint(cfg_query, cfg_reference)
    load_encoder_values(model, checkpoint_values)
    return model
